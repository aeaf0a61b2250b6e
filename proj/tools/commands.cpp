#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "dfd/baseline.hpp"
#include "dfd/errors.hpp"
#include "dfd/io.hpp"
#include "dfd/metrics.hpp"
#include "dfd/prior.hpp"
#include "dfd/samplers.hpp"
#include "dfd/scene.hpp"
#include "dfd/tiny_denoiser.hpp"
#include "figures.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dfd::cli {

namespace {

// Seed streams
constexpr std::uint64_t kSceneStream = 1, kNoiseStream = 2, kSamplerStream = 3, kCropStream = 4,
                        kTrainSceneStream = 5;

std::string scene_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03d", i);
  return buf;
}

fs::path make_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out + ": " + ec.message());
  return out;
}

fs::path make_sub_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

CodedPsf load_psf(const RunConfig& cfg) {
  if (!cfg.psf.file.empty()) return read_psf(cfg.psf.file);
  return synthetic_coded_psf(cfg.psf.size, cfg.camera.pixel_pitch, cfg.camera.d_max);
}

Rgb to_float32(const Rgb& x) {
  Rgb out = x;
  for (auto& c : out.ch) c = c.cast<float>().cast<double>();
  return out;
}

Rgb rgb_of(const FloatMap& m) {
  if (m.channels.size() < 3) throw FormatError("map holds fewer than 3 channels");
  Rgb out;
  for (int c = 0; c < 3; ++c) out[c] = m.channels[c] * m.scale;
  return out;
}

RgbdState state_of(const FloatMap& m) {
  if (m.channels.size() != 4) throw FormatError("RGBD map must hold 4 channels");
  return {rgb_of(m), m.channels[3] * m.scale};
}

FloatMap map_of(const RgbdState& x) { return {{x.rgb[0], x.rgb[1], x.rgb[2], x.depth}, 1.0}; }

void write_state_images(const fs::path& dir, const std::string& stem, const RgbdState& x, const CameraParams& cam) {
  write_png(dir / (stem + ".png"), x.rgb);
  write_png(dir / (stem + "_depth.png"), depth_to_rgb(x.depth, cam.d_min, cam.d_max));
}

struct Prior {
  std::unique_ptr<ScoreModel> model;
  NoiseSchedule schedule;
  std::string source;
};

Prior make_prior(const RunConfig& cfg, Eigen::Index rows, Eigen::Index cols) {
  Prior p;
  if (cfg.prior.kind == "gaussian") {
    const Eigen::Index n = rows * cols;
    Eigen::VectorXd mean(kStateChannels * n), var(kStateChannels * n);
    for (int c = 0; c < kStateChannels; ++c) {
      mean.segment(c * n, n).setConstant(cfg.prior.mean[c]);
      var.segment(c * n, n).setConstant(cfg.prior.variance[c]);
    }
    p.model = std::make_unique<GaussianPrior>(mean, var);
    p.schedule = cfg.schedule.build();
    p.source = "gaussian";
    return p;
  }
  if (cfg.prior.checkpoint.empty()) throw ParameterError("prior.checkpoint is required for a checkpoint prior");
  TrainState st = load_checkpoint(cfg.prior.checkpoint, &p.schedule);
  auto net = std::make_unique<TinyDenoiser>(st.model);
  net->set_image_shape(rows, cols);
  p.model = std::move(net);
  p.source = file_hash(cfg.prior.checkpoint);
  return p;
}

double observation_sigma(const json& sim_manifest) {
  return sim_manifest.at("config").at("sigma").get<double>();
}

}  // namespace

void run_simulate(const RunConfig& cfg) {
  const fs::path out = make_out_dir(cfg.out);
  const CodedPsf psf = load_psf(cfg);
  write_psf(out / "psf.bin", psf);
  json scenes = json::array();
  for (int i = 0; i < cfg.n_scenes; ++i) {
    SceneSpec spec = cfg.scene;
    spec.seed = derive_seed(cfg.seed, kSceneStream, i);
    Scene scene = generate_scene(spec);
    RgbdState truth{to_float32(scene.state.rgb), scene.state.depth.cast<float>().cast<double>()};
    const Rgb clean = render(truth, cfg.camera, psf);
    const std::uint64_t noise_seed = derive_seed(cfg.seed, kNoiseStream, i);
    const Rgb y = to_float32(add_observation_noise(clean, cfg.sigma, noise_seed));

    const std::string name = scene_name(i);
    const fs::path dir = make_sub_dir(out / name);
    write_float_map(dir / "truth.map", map_of(truth));
    write_state_images(dir, "truth", truth, cfg.camera);
    write_float_map(dir / "observation.map", {{y[0], y[1], y[2]}, 1.0});
    write_png(dir / "observation.png", y, 16);
    scenes.push_back({{"name", name},
                      {"scene_seed", spec.seed},
                      {"noise_seed", noise_seed},
                      {"observation_hash", file_hash(dir / "observation.map")}});
  }
  write_manifest(out / "manifest.json", {{"command", "simulate"},
                                         {"config", cfg.to_json()},
                                         {"config_hash", hex64(fnv1a(cfg.to_json().dump()))},
                                         {"psf_hash", file_hash(out / "psf.bin")},
                                         {"scenes", scenes}});
}

void run_reconstruct(const RunConfig& cfg) {
  if (cfg.input.empty()) throw ParameterError("reconstruct needs --input <simulate output directory>");
  const fs::path in = cfg.input;
  const json sim = read_manifest(in);
  if (sim.value("command", "") != "simulate") throw ParameterError(in.string() + " is not a simulate output");
  const RunConfig sim_cfg = parse_config(sim.at("config"));
  const CameraParams& cam = sim_cfg.camera;
  const CodedPsf psf = read_psf(in / "psf.bin");
  const double sigma = observation_sigma(sim);
  const fs::path out = make_out_dir(cfg.out);

  json scenes = json::array();
  std::unique_ptr<Prior> prior;
  for (std::size_t i = 0; i < sim.at("scenes").size(); ++i) {
    const std::string name = sim["scenes"][i].at("name").get<std::string>();
    const fs::path sdir = in / name;
    const Rgb y_img = rgb_of(read_float_map(sdir / "observation.map"));
    const Eigen::Index rows = y_img.rows(), cols = y_img.cols();
    const Observation y{y_img, sigma, cam, psf};
    const fs::path dir = make_sub_dir(out / name);

    SamplerConfig sc = cfg.sampler;
    sc.seed = derive_seed(cfg.seed, kSamplerStream, i);
    RgbdState x;
    Trajectory traj;
    json extra = json::object();
    if (cfg.method == Method::baseline) {
      const BaselineResult r = depth_sweep_reconstruct(y_img, build_psf_bank(psf, cam, cfg.baseline.n_depths), cfg.baseline);
      x = r.state;
      write_png_gray(dir / "confidence.png", Plane::Ones(rows, cols) - r.low_confidence);
      extra["low_confidence_fraction"] = r.low_confidence.mean();
    } else {
      if (!prior) {
        prior = std::make_unique<Prior>(make_prior(cfg, rows, cols));
        sc.validate(prior->schedule.n_steps);
      }
      if (auto* net = dynamic_cast<TinyDenoiser*>(prior->model.get())) net->set_image_shape(rows, cols);
      if (cfg.method == Method::ddpm_prior_only) {
        const Eigen::VectorXd z = sample_ddpm(*prior->model, prior->schedule, kStateChannels * rows * cols, sc);
        x = decode_state(z, rows, cols, cam);
      } else {
        Reconstruction r = cfg.method == Method::dfd_dps ? reconstruct_dfd_dps(*prior->model, prior->schedule, y, sc)
                                                         : reconstruct_dps(*prior->model, prior->schedule, y, sc);
        x = std::move(r.state);
        traj = std::move(r.trajectory);
      }
      extra["prior"] = prior->source;
    }
    x.rgb = to_float32(x.rgb);
    x.depth = x.depth.cast<float>().cast<double>();
    write_float_map(dir / "recon.map", map_of(x));
    write_state_images(dir, "recon", x, cam);

    std::vector<Rgb> panels{y_img, x.rgb};
    const fs::path truth_path = sdir / "truth.map";
    if (fs::exists(truth_path)) {
      const RgbdState truth = state_of(read_float_map(truth_path));
      const Plane err = (x.depth - truth.depth).cwiseAbs();
      panels.push_back(truth.rgb);
      panels.push_back(depth_to_rgb(x.depth, cam.d_min, cam.d_max));
      panels.push_back(depth_to_rgb(truth.depth, cam.d_min, cam.d_max));
      // bright = large depth error, full scale at the whole depth range
      panels.push_back(depth_to_rgb((cam.d_max - err.array()).matrix(), cam.d_min, cam.d_max));
    } else {
      panels.push_back(depth_to_rgb(x.depth, cam.d_min, cam.d_max));
    }
    write_png(dir / "comparison.png", tile(panels, 3));

    if (!traj.records.empty()) {
      log_trajectory(traj, dir / "trajectory", rows, cols);
      const CsvTable t = read_csv(dir / "trajectory.csv");
      plot_series(dir / "fidelity.png", t.column("step"), t.column("fidelity"), true);
      extra["final_fidelity"] = traj.records.back().fidelity;
    }
    scenes.push_back({{"name", name},
                      {"sampler_seed", sc.seed},
                      {"observation_hash", sim["scenes"][i].at("observation_hash")},
                      {"details", extra}});
  }
  json body{{"command", "reconstruct"},
            {"method", to_string(cfg.method)},
            {"observation_sigma", sigma},
            {"input", fs::absolute(in).lexically_normal().string()},
            {"config", cfg.to_json()},
            {"config_hash", hex64(fnv1a(cfg.to_json().dump()))},
            {"psf_hash", file_hash(in / "psf.bin")},
            {"scenes", scenes}};
  if (cfg.method != Method::baseline && !cfg.prior.checkpoint.empty() && cfg.prior.kind == "checkpoint") {
    body["checkpoint_hash"] = file_hash(cfg.prior.checkpoint);
  }
  write_manifest(out / "manifest.json", body);
}

void run_eval(const RunConfig& cfg) {
  if (cfg.eval.truth.empty()) throw ParameterError("eval needs a truth directory (eval.truth or --truth)");
  if (cfg.eval.runs.empty()) throw ParameterError("eval needs at least one run directory");
  const fs::path truth_dir = cfg.eval.truth;
  const json truth = read_manifest(truth_dir);
  if (truth.value("command", "") != "simulate") throw ParameterError(truth_dir.string() + " is not a simulate output");
  const double sigma = observation_sigma(truth);
  std::map<std::string, json> truth_scenes;
  for (const auto& s : truth.at("scenes")) truth_scenes[s.at("name").get<std::string>()] = s;

  EvalReport report;
  std::vector<std::string> methods;
  std::map<std::string, std::map<std::string, std::pair<double, double>>> paired;  // scene -> method -> (mae, psnr)
  for (const auto& run : cfg.eval.runs) {
    const json m = read_manifest(run);
    const std::string command = m.value("command", "");
    std::string method, file;
    if (command == "simulate") {
      method = "truth";
      file = "truth.map";
    } else if (command == "reconstruct") {
      method = m.at("method").get<std::string>();
      file = "recon.map";
    } else {
      throw ParameterError(run + " is neither a simulate nor a reconstruct output");
    }
    methods.push_back(method);
    for (const auto& s : m.at("scenes")) {
      const std::string name = s.at("name").get<std::string>();
      auto it = truth_scenes.find(name);
      if (it == truth_scenes.end()) throw ParameterError(run + ": scene " + name + " not in " + truth_dir.string());
      if (s.at("observation_hash") != it->second.at("observation_hash")) {
        throw ParameterError(run + ": scene " + name + " was reconstructed from a different observation");
      }
      const RgbdState gt = state_of(read_float_map(truth_dir / name / "truth.map"));
      const RgbdState x = state_of(read_float_map(fs::path(run) / name / file));
      EvalRow row;
      row.scene = name;
      row.method = method;
      row.sigma = sigma;
      row.seed = s.contains("sampler_seed") ? s["sampler_seed"].get<std::uint64_t>() : s.at("scene_seed").get<std::uint64_t>();
      row.depth_mae = depth_mae(x.depth, gt.depth, cfg.eval.boundary_band);
      row.psnr = psnr(x.rgb, gt.rgb);
      report.rows.push_back(row);
      paired[name][method] = {row.depth_mae, row.psnr};
    }
  }

  const fs::path out = make_out_dir(cfg.out);
  report.write_csv(out / "eval.csv");

  std::ostringstream table, summary, pair;
  table << "method,sigma,scenes,mean_depth_mae,mean_psnr\n";
  summary << "truth " << truth_dir.string() << "\nsigma " << num(sigma) << "\n";
  std::vector<std::string> unique;
  for (const auto& m : methods) {
    if (std::find(unique.begin(), unique.end(), m) == unique.end()) unique.push_back(m);
  }
  for (const auto& m : unique) {
    EvalReport sub;
    for (const auto& r : report.rows) {
      if (r.method == m) sub.rows.push_back(r);
    }
    table << m << "," << num(sigma) << "," << sub.rows.size() << "," << num(sub.mean_depth_mae()) << ","
          << num(sub.mean_psnr()) << "\n";
    summary << "\n[" << m << "]\n" << sub.summary();
  }
  pair << "scene";
  for (const auto& m : unique) pair << "," << m << "_depth_mae," << m << "_psnr";
  pair << "\n";
  for (const auto& [scene, by_method] : paired) {
    pair << scene;
    for (const auto& m : unique) {
      auto it = by_method.find(m);
      if (it == by_method.end()) pair << ",,";
      else pair << "," << num(it->second.first) << "," << num(it->second.second);
    }
    pair << "\n";
  }
  write_text(out / "table.csv", table.str());
  write_text(out / "summary.txt", summary.str());
  write_text(out / "paired.csv", pair.str());
}

void run_train_prior(const RunConfig& cfg) {
  const fs::path out = make_out_dir(cfg.out);
  std::vector<Eigen::VectorXd> states;
  std::vector<std::uint64_t> scene_seeds;
  for (int i = 0; i < cfg.n_scenes; ++i) {
    SceneSpec spec = cfg.scene;
    spec.seed = derive_seed(cfg.seed, kTrainSceneStream, i);
    scene_seeds.push_back(spec.seed);
    states.push_back(encode_state(generate_scene(spec).state, cfg.camera));
  }
  const std::uint64_t crop_seed = derive_seed(cfg.seed, kCropStream, 0);
  const PatchSet data =
      random_crops(states, cfg.scene.rows, cfg.scene.cols, cfg.train.patch, cfg.train.crops_per_scene, crop_seed);

  NoiseSchedule schedule = cfg.schedule.build();
  TrainState state;
  json resumed = nullptr;
  if (!cfg.train.resume.empty()) {
    state = load_checkpoint(cfg.train.resume, &schedule);
    resumed = {{"path", cfg.train.resume}, {"step", state.step}, {"hash", file_hash(cfg.train.resume)}};
  } else {
    state = init_training(cfg.train.arch, cfg.train.config);
  }
  if (state.step < cfg.train.config.steps) continue_training(state, data, schedule, cfg.train.config, cfg.train.config.steps);

  save_checkpoint(state, schedule, out / "prior.ckpt");
  std::vector<std::vector<double>> rows;
  std::vector<double> xs, ys;
  for (std::size_t k = 0; k < state.loss_curve.size(); ++k) {
    rows.push_back({static_cast<double>(k), state.loss_curve[k]});
    xs.push_back(static_cast<double>(k));
    ys.push_back(state.loss_curve[k]);
  }
  write_csv(out / "loss.csv", {"step", "loss"}, rows);
  plot_series(out / "loss.png", xs, ys, true);
  write_manifest(out / "manifest.json", {{"command", "train-prior"},
                                         {"config", cfg.to_json()},
                                         {"config_hash", hex64(fnv1a(cfg.to_json().dump()))},
                                         {"scene_seeds", scene_seeds},
                                         {"crop_seed", crop_seed},
                                         {"patches", data.patches.size()},
                                         {"steps", state.step},
                                         {"final_loss", ys.empty() ? 0.0 : ys.back()},
                                         {"resumed_from", resumed},
                                         {"checkpoint_hash", file_hash(out / "prior.ckpt")}});
}

void run_psf_inspect(const RunConfig& cfg, std::ostream& os) {
  const CodedPsf psf = load_psf(cfg);
  os << "size " << psf.size() << "\npixel_pitch " << psf.pixel_pitch << "\nreference_depth " << psf.reference_depth
     << "\n";
  static const char* names[3] = {"R", "G", "B"};
  for (int c = 0; c < 3; ++c) {
    const Plane& k = psf.kernels[c];
    double sr = 0.0, sc = 0.0;
    Eigen::Index r0 = k.rows(), r1 = -1, c0 = k.cols(), c1 = -1;
    for (Eigen::Index r = 0; r < k.rows(); ++r) {
      for (Eigen::Index q = 0; q < k.cols(); ++q) {
        if (k(r, q) <= 0.0) continue;
        sr += k(r, q) * r;
        sc += k(r, q) * q;
        r0 = std::min(r0, r), r1 = std::max(r1, r);
        c0 = std::min(c0, q), c1 = std::max(c1, q);
      }
    }
    const double sum = k.sum();
    os << names[c] << " sum " << num(sum) << " support " << (r1 - r0 + 1) << "x" << (c1 - c0 + 1) << " centroid "
       << num(sr / sum - psf.radius()) << " " << num(sc / sum - psf.radius()) << "\n";
  }
}

void run_psf_rescale(const RunConfig& cfg) {
  const fs::path out = make_out_dir(cfg.out);
  write_psf(out / "psf_rescaled.bin", rescale_psf(load_psf(cfg), cfg.psf.scale, cfg.psf.flip));
}

void run_psf_calibrate(const RunConfig& cfg) {
  if (cfg.psf.pinhole.empty() || cfg.psf.background.empty()) {
    throw ParameterError("psf calibrate needs psf.pinhole and psf.background images");
  }
  const Rgb pin = read_png(cfg.psf.pinhole), bg = read_png(cfg.psf.background);
  CalibrationOptions opt = cfg.psf.calibration;
  opt.pixel_pitch = cfg.camera.pixel_pitch;
  opt.reference_depth = cfg.camera.d_max;
  const CodedPsf psf = calibrate_reference_psf(pin.ch, bg.ch, opt);
  const fs::path out = make_out_dir(cfg.out);
  write_psf(out / "psf_calibrated.bin", psf);

  const int up = 16, k = psf.size();
  std::vector<Rgb> panels;
  for (int c = 0; c < 3; ++c) {
    const double peak = psf.kernels[c].maxCoeff();
    Rgb p = Rgb::Zero(k * up, k * up);
    for (int r = 0; r < k * up; ++r) {
      for (int q = 0; q < k * up; ++q) p[c](r, q) = psf.kernels[c](r / up, q / up) / peak;
    }
    panels.push_back(p);
  }
  write_png(out / "psf_preview.png", tile(panels, 3));
  write_manifest(out / "manifest.json", {{"command", "psf calibrate"},
                                         {"pinhole_hash", file_hash(cfg.psf.pinhole)},
                                         {"background_hash", file_hash(cfg.psf.background)},
                                         {"config", cfg.to_json()},
                                         {"psf_hash", file_hash(out / "psf_calibrated.bin")}});
}

}  // namespace dfd::cli
