#include "run_config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "dfd/errors.hpp"

namespace dfd::cli {

using nlohmann::json;

std::string to_string(Method m) {
  switch (m) {
    case Method::dfd_dps: return "dfd_dps";
    case Method::dps: return "dps";
    case Method::ddpm_prior_only: return "ddpm_prior_only";
    case Method::baseline: return "baseline";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "dfd_dps") return Method::dfd_dps;
  if (s == "dps") return Method::dps;
  if (s == "ddpm_prior_only") return Method::ddpm_prior_only;
  if (s == "baseline") return Method::baseline;
  throw ParameterError("unknown method '" + s + "' (expected dfd_dps, dps, ddpm_prior_only or baseline)");
}

NoiseSchedule ScheduleSpec::build() const {
  if (beta_min == 0.0 && beta_max == 0.0) {
    if (kind == ScheduleKind::linear) return default_schedule(steps);
    return build_schedule(kind, steps, 1e-5, 0.999);
  }
  return build_schedule(kind, steps, beta_min, beta_max);
}

namespace {

// Object reader that remembers which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ParameterError(where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ParameterError(where(key) + " has the wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ParameterError("unknown config key '" + where(item.key().c_str()) + "'");
    }
  }

  std::string where(const char* key = nullptr) const {
    if (!key) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ParameterError(what);
}

bool finite_positive(double v) { return std::isfinite(v) && v > 0.0; }

void read_camera(Section s, CameraParams& c) {
  s.get("focal_length", c.focal_length);
  s.get("f_number", c.f_number);
  s.get("pixel_pitch", c.pixel_pitch);
  s.get("focus_distance", c.focus_distance);
  s.get("aperture_width", c.aperture_width);
  s.get("d_min", c.d_min);
  s.get("d_max", c.d_max);
  s.get("scale_floor", c.scale_floor);
  s.get("flip_near_side", c.flip_near_side);
  s.finish();
  c.validate();
}

void read_psf(Section s, PsfSpec& p) {
  s.get("file", p.file);
  s.get("size", p.size);
  s.get("scale", p.scale);
  s.get("flip", p.flip);
  s.get("pinhole", p.pinhole);
  s.get("background", p.background);
  s.get("kernel_size", p.calibration.kernel_size);
  s.get("min_contrast", p.calibration.min_contrast);
  s.finish();
  require(p.size >= 3 && p.size % 2 == 1 && p.size <= 63, "psf.size must be odd and in [3, 63]");
  require(finite_positive(p.scale) && p.scale <= 16.0, "psf.scale must lie in (0, 16]");
  require(p.calibration.kernel_size >= 1 && p.calibration.kernel_size % 2 == 1, "psf.kernel_size must be odd");
  require(p.calibration.min_contrast >= 0.0, "psf.min_contrast must be >= 0");
}

void read_schedule(Section s, ScheduleSpec& sc) {
  std::string kind = to_string(sc.kind);
  s.get("kind", kind);
  sc.kind = schedule_kind_from_string(kind);
  s.get("steps", sc.steps);
  s.get("beta_min", sc.beta_min);
  s.get("beta_max", sc.beta_max);
  s.finish();
  require(sc.steps >= 2 && sc.steps <= 10000, "schedule.steps must lie in [2, 10000]");
  const bool defaults = sc.beta_min == 0.0 && sc.beta_max == 0.0;
  require(defaults || (sc.beta_min > 0.0 && sc.beta_max >= sc.beta_min && sc.beta_max < 1.0),
          "schedule betas must satisfy 0 < beta_min <= beta_max < 1");
}

void read_scene(Section s, SceneSpec& sp, int& n_scenes) {
  s.get("rows", sp.rows);
  s.get("cols", sp.cols);
  s.get("n_objects", sp.n_objects);
  std::string texture = to_string(sp.texture);
  s.get("texture", texture);
  sp.texture = texture_kind_from_string(texture);
  s.get("floor", sp.floor);
  s.get("floor_slope_min", sp.floor_slope_min);
  s.get("floor_slope_max", sp.floor_slope_max);
  s.get("d_min", sp.d_min);
  s.get("d_max", sp.d_max);
  s.get("count", n_scenes);
  s.finish();
  require(sp.rows <= 4096 && sp.cols <= 4096, "scene rows and cols must be <= 4096");
  require(n_scenes >= 1 && n_scenes <= 100000, "scene.count must lie in [1, 100000]");
  sp.validate();
}

void read_sampler(Section s, SamplerConfig& c) {
  s.get("steps", c.n_steps);
  std::string variant = to_string(c.variant), tau_mode = to_string(c.tau_mode), zeta_mode = to_string(c.zeta_mode);
  s.get("variant", variant);
  c.variant = posterior_variant_from_string(variant);
  s.get("tau", c.tau);
  s.get("tau_mode", tau_mode);
  c.tau_mode = step_mode_from_string(tau_mode);
  s.get("tau_schedule", c.tau_schedule);
  s.get("channel_weights", c.channel_weights);
  s.get("inner_grad_steps", c.inner_grad_steps);
  s.get("zeta", c.zeta);
  s.get("zeta_mode", zeta_mode);
  c.zeta_mode = step_mode_from_string(zeta_mode);
  s.get("zeta_schedule", c.zeta_schedule);
  s.get("snapshot_stride", c.snapshot_stride);
  s.finish();
  require(c.snapshot_stride >= 0, "sampler.snapshot_stride must be >= 0");
  require(c.inner_grad_steps <= 100, "sampler.inner_grad_steps must be <= 100");
}

void read_prior(Section s, PriorSpec& p) {
  s.get("kind", p.kind);
  s.get("checkpoint", p.checkpoint);
  s.get("mean", p.mean);
  s.get("variance", p.variance);
  s.finish();
  require(p.kind == "checkpoint" || p.kind == "gaussian", "prior.kind must be checkpoint or gaussian");
  for (double v : p.variance) require(finite_positive(v), "prior.variance entries must be > 0");
  for (double m : p.mean) require(std::isfinite(m), "prior.mean entries must be finite");
}

void read_baseline(Section s, BaselineConfig& b) {
  s.get("lambda1", b.lambda1);
  s.get("lambda2", b.lambda2);
  s.get("window", b.window);
  s.get("n_depths", b.n_depths);
  s.get("pad", b.pad);
  s.get("energy_floor", b.energy_floor);
  s.get("residual_floor", b.residual_floor);
  s.get("confidence_threshold", b.confidence_threshold);
  s.finish();
  b.validate();
}

void read_eval(Section s, EvalSpec& e) {
  s.get("truth", e.truth);
  s.get("runs", e.runs);
  s.get("boundary_band", e.boundary_band);
  s.finish();
  require(e.boundary_band >= 0, "eval.boundary_band must be >= 0");
}

void read_train(Section s, TrainSpec& t) {
  s.get("steps", t.config.steps);
  s.get("batch_size", t.config.batch_size);
  s.get("learning_rate", t.config.learning_rate);
  s.get("momentum", t.config.momentum);
  s.get("grad_clip", t.config.grad_clip);
  s.get("width", t.arch.width);
  s.get("time_features", t.arch.time_features);
  s.get("data_variance", t.arch.data_variance);
  s.get("patch", t.patch);
  s.get("crops_per_scene", t.crops_per_scene);
  s.get("resume", t.resume);
  s.finish();
  t.config.validate();
  t.arch.validate();
  require(t.patch >= 3, "train.patch must be >= 3");
  require(t.crops_per_scene >= 1, "train.crops_per_scene must be >= 1");
}

}  // namespace

RunConfig parse_config(const json& j) {
  RunConfig c;
  c.scene.rows = c.scene.cols = 64;
  c.sampler.n_steps = 50;
  c.sampler.tau_mode = StepMode::constant;
  c.sampler.tau = 2.0;
  c.sampler.inner_grad_steps = 2;
  c.sampler.snapshot_stride = 10;

  Section root(j, "");
  root.get("seed", c.seed);
  root.get("out", c.out);
  root.get("input", c.input);
  root.get("sigma", c.sigma);
  std::string method = to_string(c.method);
  root.get("method", method);
  c.method = method_from_string(method);

  read_camera(root.sub("camera"), c.camera);
  c.scene.d_min = c.camera.d_min;
  c.scene.d_max = c.camera.d_max;
  read_psf(root.sub("psf"), c.psf);
  read_schedule(root.sub("schedule"), c.schedule);
  read_scene(root.sub("scene"), c.scene, c.n_scenes);
  read_sampler(root.sub("sampler"), c.sampler);
  read_prior(root.sub("prior"), c.prior);
  read_baseline(root.sub("baseline"), c.baseline);
  read_eval(root.sub("eval"), c.eval);
  read_train(root.sub("train"), c.train);
  root.finish();

  require(std::isfinite(c.sigma) && c.sigma >= 0.0 && c.sigma <= 1.0, "sigma must lie in [0, 1]");
  require(!c.out.empty(), "out must not be empty");
  require(c.scene.d_min >= c.camera.d_min && c.scene.d_max <= c.camera.d_max,
          "scene depth range must lie inside the camera depth range");
  c.sampler.seed = c.seed;
  c.sampler.validate(c.schedule.steps);
  c.train.config.seed = c.seed;
  return c;
}

RunConfig load_config(const Overrides& o, StepsTarget steps_target) {
  json j = json::object();
  if (!o.config_path.empty()) {
    std::ifstream is(o.config_path);
    if (!is) throw IoError("cannot open config file: " + o.config_path);
    try {
      j = json::parse(is);
    } catch (const json::parse_error& e) {
      throw FormatError(o.config_path + ": invalid JSON at byte " + std::to_string(e.byte) + ": " + e.what());
    }
  }
  if (!j.is_object()) throw ParameterError("config file must hold a JSON object");
  if (o.seed) j["seed"] = *o.seed;
  if (o.sigma) j["sigma"] = *o.sigma;
  if (o.method) j["method"] = *o.method;
  if (o.out) j["out"] = *o.out;
  if (o.input) j["input"] = *o.input;
  if (o.steps) j[steps_target == StepsTarget::sampler ? "sampler" : "train"]["steps"] = *o.steps;
  if (o.tau) j["sampler"]["tau"] = *o.tau;
  if (o.variant) j["sampler"]["variant"] = *o.variant;
  j.merge_patch(o.patch);
  return parse_config(j);
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["out"] = out;
  j["input"] = input;
  j["sigma"] = sigma;
  j["method"] = to_string(method);
  j["camera"] = {{"focal_length", camera.focal_length},     {"f_number", camera.f_number},
                 {"pixel_pitch", camera.pixel_pitch},       {"focus_distance", camera.focus_distance},
                 {"aperture_width", camera.aperture_width}, {"d_min", camera.d_min},
                 {"d_max", camera.d_max},                   {"scale_floor", camera.scale_floor},
                 {"flip_near_side", camera.flip_near_side}};
  j["psf"] = {{"file", psf.file},
              {"size", psf.size},
              {"scale", psf.scale},
              {"flip", psf.flip},
              {"pinhole", psf.pinhole},
              {"background", psf.background},
              {"kernel_size", psf.calibration.kernel_size},
              {"min_contrast", psf.calibration.min_contrast}};
  j["schedule"] = {{"kind", to_string(schedule.kind)},
                   {"steps", schedule.steps},
                   {"beta_min", schedule.beta_min},
                   {"beta_max", schedule.beta_max}};
  j["scene"] = {{"rows", scene.rows},
                {"cols", scene.cols},
                {"n_objects", scene.n_objects},
                {"texture", to_string(scene.texture)},
                {"floor", scene.floor},
                {"floor_slope_min", scene.floor_slope_min},
                {"floor_slope_max", scene.floor_slope_max},
                {"d_min", scene.d_min},
                {"d_max", scene.d_max},
                {"count", n_scenes}};
  j["sampler"] = {{"steps", sampler.n_steps},
                  {"variant", to_string(sampler.variant)},
                  {"tau", sampler.tau},
                  {"tau_mode", to_string(sampler.tau_mode)},
                  {"tau_schedule", sampler.tau_schedule},
                  {"channel_weights", sampler.channel_weights},
                  {"inner_grad_steps", sampler.inner_grad_steps},
                  {"zeta", sampler.zeta},
                  {"zeta_mode", to_string(sampler.zeta_mode)},
                  {"zeta_schedule", sampler.zeta_schedule},
                  {"snapshot_stride", sampler.snapshot_stride}};
  j["prior"] = {{"kind", prior.kind}, {"checkpoint", prior.checkpoint}, {"mean", prior.mean}, {"variance", prior.variance}};
  j["baseline"] = {{"lambda1", baseline.lambda1},
                   {"lambda2", baseline.lambda2},
                   {"window", baseline.window},
                   {"n_depths", baseline.n_depths},
                   {"pad", baseline.pad},
                   {"energy_floor", baseline.energy_floor},
                   {"residual_floor", baseline.residual_floor},
                   {"confidence_threshold", baseline.confidence_threshold}};
  j["eval"] = {{"truth", eval.truth}, {"runs", eval.runs}, {"boundary_band", eval.boundary_band}};
  j["train"] = {{"steps", train.config.steps},
                {"batch_size", train.config.batch_size},
                {"learning_rate", train.config.learning_rate},
                {"momentum", train.config.momentum},
                {"grad_clip", train.config.grad_clip},
                {"width", train.arch.width},
                {"time_features", train.arch.time_features},
                {"data_variance", train.arch.data_variance},
                {"patch", train.patch},
                {"crops_per_scene", train.crops_per_scene},
                {"resume", train.resume}};
  return j;
}

}  // namespace dfd::cli
