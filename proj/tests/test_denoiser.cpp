#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "dfd/errors.hpp"
#include "dfd/tiny_denoiser.hpp"
#include "oracles.hpp"

using namespace dfd;

namespace {

DenoiserArch small_arch() {
  DenoiserArch a;
  a.width = 6;
  a.time_features = 4;
  return a;
}

// Random weights everywhere, including the zero-initialized output layer.
TinyDenoiser perturbed(std::uint64_t seed) {
  TinyDenoiser m(small_arch(), seed);
  std::mt19937_64 rng(seed + 1);
  m.parameters() += oracle::random_vector(rng, m.parameter_count(), 0.2);
  return m;
}

PatchSet smooth_patches(int n, Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  PatchSet set;
  set.rows = rows;
  set.cols = cols;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd p(4 * rows * cols);
    for (int c = 0; c < 4; ++c) {
      const double a = u(rng), g = 0.1 * u(rng);
      for (Eigen::Index y = 0; y < rows; ++y) {
        for (Eigen::Index x = 0; x < cols; ++x) p[(c * rows + y) * cols + x] = std::clamp(a + g * (x - y), -1.0, 1.0);
      }
    }
    set.patches.push_back(p);
  }
  return set;
}

std::filesystem::path temp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("untrained denoiser predicts zero noise") {
  const TinyDenoiser m(small_arch(), 3);
  const NoiseSchedule s = default_schedule(50);
  std::mt19937_64 rng(1);
  const Eigen::VectorXd x = oracle::random_vector(rng, 4 * 5 * 6);
  TinyDenoiser shaped = m;
  shaped.set_image_shape(5, 6);
  CHECK(shaped.eps_predict(x, 17, s).norm() == 0.0);

  // Expected loss of a zero predictor is E||eps||^2 = dim.
  const PatchSet data = smooth_patches(4, 8, 8, 2);
  const double loss = evaluate_eps_loss(m, data, s, 400, 9);
  const double dim = 4 * 8 * 8;
  CHECK(std::abs(loss - dim) < 4.0 * std::sqrt(2.0 * dim / 400));
}

TEST_CASE("input and tweedie VJPs match finite differences") {
  const TinyDenoiser m = perturbed(5);
  const NoiseSchedule s = default_schedule(50);
  std::mt19937_64 rng(2);
  const Eigen::Index rows = 4, cols = 5, dim = 4 * rows * cols;
  const Eigen::VectorXd x = oracle::random_vector(rng, dim);
  const Eigen::VectorXd v = oracle::random_vector(rng, dim);
  for (int t : {2, 30}) {
    Eigen::VectorXd input_grad = Eigen::VectorXd::Zero(dim);
    m.forward_backward(x, rows, cols, t, s, &v, nullptr, &input_grad);
    TinyDenoiser shaped = m;
    shaped.set_image_shape(rows, cols);
    const Eigen::VectorXd tv = shaped.tweedie_vjp(x, t, v, s);
    for (int k = 0; k < 12; ++k) {
      const Eigen::Index i = static_cast<Eigen::Index>(rng() % dim);
      const double h = 1e-5;
      Eigen::VectorXd p = x, q = x;
      p[i] += h;
      q[i] -= h;
      const double fd_eps = v.dot(shaped.eps_predict(p, t, s) - shaped.eps_predict(q, t, s)) / (2 * h);
      const double fd_x0 = v.dot(shaped.denoise(p, t, s) - shaped.denoise(q, t, s)) / (2 * h);
      CHECK(oracle::rel_err(input_grad[i], fd_eps, 1e-6) < 1e-5);
      CHECK(oracle::rel_err(tv[i], fd_x0, 1e-6) < 1e-5);
    }
  }
}

TEST_CASE("parameter gradient matches finite differences") {
  TinyDenoiser m = perturbed(7);
  const NoiseSchedule s = default_schedule(50);
  std::mt19937_64 rng(3);
  const Eigen::Index rows = 3, cols = 4, dim = 4 * rows * cols;
  const Eigen::VectorXd x = oracle::random_vector(rng, dim);
  const Eigen::VectorXd v = oracle::random_vector(rng, dim);
  const int t = 12;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(m.parameter_count());
  m.forward_backward(x, rows, cols, t, s, &v, &grad, nullptr);
  for (int k = 0; k < 40; ++k) {
    const Eigen::Index i = static_cast<Eigen::Index>(rng() % m.parameter_count());
    const double h = 1e-5, keep = m.parameters()[i];
    m.parameters()[i] = keep + h;
    const double up = v.dot(m.forward_backward(x, rows, cols, t, s, nullptr, nullptr, nullptr));
    m.parameters()[i] = keep - h;
    const double down = v.dot(m.forward_backward(x, rows, cols, t, s, nullptr, nullptr, nullptr));
    m.parameters()[i] = keep;
    REQUIRE(oracle::rel_err(grad[i], (up - down) / (2 * h), 1e-6) < 1e-5);
  }
}

TEST_CASE("training: zero steps, resume, divergence") {
  const NoiseSchedule s = default_schedule(50);
  const PatchSet data = smooth_patches(6, 6, 6, 4);
  TrainConfig cfg;
  cfg.steps = 0;
  cfg.batch_size = 2;
  cfg.seed = 11;
  const TrainState none = train_denoiser(data, s, cfg, small_arch());
  CHECK((none.model.parameters() - TinyDenoiser(small_arch(), 11).parameters()).norm() == 0.0);
  CHECK(none.loss_curve.empty());

  cfg.steps = 30;
  const TrainState full = train_denoiser(data, s, cfg, small_arch());
  TrainState part = init_training(small_arch(), cfg);
  continue_training(part, data, s, cfg, 13);
  const auto path = temp("dfd_resume.ckpt");
  save_checkpoint(part, s, path);
  NoiseSchedule loaded_schedule;
  TrainState resumed = load_checkpoint(path, &loaded_schedule);
  CHECK((loaded_schedule.alpha_bars - s.alpha_bars).norm() == 0.0);
  CHECK(resumed.step == 13);
  continue_training(resumed, data, s, cfg, 30);
  CHECK((resumed.model.parameters() - full.model.parameters()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(resumed.loss_curve == full.loss_curve);
  std::filesystem::remove(path);

  TrainConfig wild = cfg;
  wild.learning_rate = 50.0;
  wild.grad_clip = 0.0;
  wild.momentum = 0.0;
  wild.steps = 60;
  CHECK_THROWS_AS(train_denoiser(data, s, wild, small_arch()), TrainingError);

  PatchSet bad = data;
  bad.patches[0][0] = 3.0;
  CHECK_THROWS_AS(train_denoiser(bad, s, cfg, small_arch()), ParameterError);
}

TEST_CASE("training lowers the noise-prediction loss") {
  const NoiseSchedule s = default_schedule(50);
  const PatchSet data = smooth_patches(16, 6, 6, 5);
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.batch_size = 4;
  cfg.seed = 2;
  const TrainState st = train_denoiser(data, s, cfg, small_arch());
  const double before = evaluate_eps_loss(TinyDenoiser(small_arch(), 2), data, s, 300, 1);
  const double after = evaluate_eps_loss(st.model, data, s, 300, 1);
  CHECK(after < 0.8 * before);
}

TEST_CASE("checkpoint round trip and corruption") {
  const NoiseSchedule s = default_schedule(20);
  TrainState st = init_training(small_arch(), TrainConfig{});
  st.model = perturbed(9);
  st.velocity = Eigen::VectorXd::Constant(st.model.parameter_count(), 0.5);
  st.loss_curve = {3.0, 2.0};
  st.step = 2;
  const auto path = temp("dfd_ckpt.bin");
  save_checkpoint(st, s, path);
  const TrainState back = load_checkpoint(path);
  CHECK((back.model.parameters() - st.model.parameters()).norm() == 0.0);
  CHECK((back.velocity - st.velocity).norm() == 0.0);
  CHECK(back.loss_curve == st.loss_curve);
  CHECK(back.model.arch().width == 6);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTANET\n{}";
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(temp("dfd_missing.ckpt")), IoError);
}

TEST_CASE("random crops are aligned windows of every channel") {
  const Eigen::Index rows = 13, cols = 17;
  const int size = 5;
  // Each value encodes (state, channel, y, x).
  std::vector<Eigen::VectorXd> states;
  for (int s = 0; s < 3; ++s) {
    Eigen::VectorXd z(4 * rows * cols);
    for (int c = 0; c < 4; ++c) {
      for (Eigen::Index y = 0; y < rows; ++y) {
        for (Eigen::Index x = 0; x < cols; ++x) z((c * rows + y) * cols + x) = s * 1e6 + c * 1e4 + y * 100 + x;
      }
    }
    states.push_back(z);
  }
  const PatchSet set = random_crops(states, rows, cols, size, 6, 42);
  REQUIRE(set.patches.size() == 18);
  CHECK(set.rows == size);
  CHECK(set.cols == size);
  for (std::size_t k = 0; k < set.patches.size(); ++k) {
    const Eigen::VectorXd& p = set.patches[k];
    REQUIRE(p.size() == 4 * size * size);
    const double origin = p(0);
    const int s = static_cast<int>(k / 6);
    const auto y0 = static_cast<Eigen::Index>(std::lround(origin - s * 1e6) / 100);
    const auto x0 = static_cast<Eigen::Index>(std::lround(origin - s * 1e6) % 100);
    CHECK(y0 + size <= rows);
    CHECK(x0 + size <= cols);
    for (int c = 0; c < 4; ++c) {
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          CHECK(p((c * size + y) * size + x) == s * 1e6 + c * 1e4 + (y0 + y) * 100 + (x0 + x));
        }
      }
    }
  }
  const PatchSet again = random_crops(states, rows, cols, size, 6, 42);
  const PatchSet other = random_crops(states, rows, cols, size, 6, 43);
  bool all_same = true;
  for (std::size_t k = 0; k < set.patches.size(); ++k) {
    CHECK(again.patches[k] == set.patches[k]);
    all_same = all_same && other.patches[k] == set.patches[k];
  }
  CHECK(!all_same);
  CHECK(random_crops(states, rows, cols, rows, 1, 0).patches.size() == 3);
  CHECK_THROWS_AS(random_crops(states, rows, cols, rows + 1, 1, 0), ParameterError);
  CHECK_THROWS_AS(random_crops(states, rows + 1, cols, size, 1, 0), ParameterError);
}
