#include "dfd/tiny_denoiser.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "dfd/errors.hpp"

namespace dfd {

namespace {

using ColMat = Eigen::MatrixXd;
using MapMat = Eigen::Map<Eigen::MatrixXd>;
using ConstMapMat = Eigen::Map<const Eigen::MatrixXd>;

constexpr int kIn = 4;

// 3x3 zero-padded im2col: (n x c) -> (n x 9c), tap-major columns.
ColMat im2col(const ColMat& x, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::Index n = rows * cols, c = x.cols();
  ColMat out = ColMat::Zero(n, 9 * c);
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const Eigen::Index tap = (dy + 1) * 3 + (dx + 1);
      for (Eigen::Index ch = 0; ch < c; ++ch) {
        double* dst = out.col(tap * c + ch).data();
        const double* src = x.col(ch).data();
        for (Eigen::Index y = 0; y < rows; ++y) {
          const Eigen::Index sy = y + dy;
          if (sy < 0 || sy >= rows) continue;
          const Eigen::Index x0 = std::max<Eigen::Index>(0, -dx), x1 = std::min(cols, cols - dx);
          for (Eigen::Index xx = x0; xx < x1; ++xx) dst[y * cols + xx] = src[sy * cols + xx + dx];
        }
      }
    }
  }
  return out;
}

// Adjoint of im2col.
ColMat col2im(const ColMat& g, Eigen::Index rows, Eigen::Index cols, Eigen::Index c) {
  const Eigen::Index n = rows * cols;
  ColMat out = ColMat::Zero(n, c);
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const Eigen::Index tap = (dy + 1) * 3 + (dx + 1);
      for (Eigen::Index ch = 0; ch < c; ++ch) {
        const double* src = g.col(tap * c + ch).data();
        double* dst = out.col(ch).data();
        for (Eigen::Index y = 0; y < rows; ++y) {
          const Eigen::Index sy = y + dy;
          if (sy < 0 || sy >= rows) continue;
          const Eigen::Index x0 = std::max<Eigen::Index>(0, -dx), x1 = std::min(cols, cols - dx);
          for (Eigen::Index xx = x0; xx < x1; ++xx) dst[sy * cols + xx + dx] += src[y * cols + xx];
        }
      }
    }
  }
  return out;
}

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

ColMat silu(const ColMat& a) {
  return a.unaryExpr([](double v) { return v * sigmoid(v); });
}
ColMat silu_grad(const ColMat& a) {
  return a.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

Eigen::VectorXd time_embedding(int t, const NoiseSchedule& schedule, int features) {
  const double tau = static_cast<double>(t) / schedule.n_steps;
  Eigen::VectorXd e(features);
  for (int k = 0; k < features / 2; ++k) {
    const double w = 0.5 * std::numbers::pi * std::pow(2.0, k);
    e[2 * k] = std::sin(w * tau);
    e[2 * k + 1] = std::cos(w * tau);
  }
  return e;
}

}  // namespace

struct TinyDenoiser::Layout {
  Eigen::Index w1, b1, t1, w2, b2, t2, w3, b3, g, total;
};

TinyDenoiser::Layout TinyDenoiser::layout() const {
  const Eigen::Index C = arch_.width, F = arch_.time_features;
  Layout l{};
  Eigen::Index o = 0;
  l.w1 = o, o += 9 * kIn * C;
  l.b1 = o, o += C;
  l.t1 = o, o += F * C;
  l.w2 = o, o += 9 * C * C;
  l.b2 = o, o += C;
  l.t2 = o, o += F * C;
  l.w3 = o, o += 9 * C * kIn;
  l.b3 = o, o += kIn;
  l.g = o, o += (F + 1) * kIn;
  l.total = o;
  return l;
}

void DenoiserArch::validate() const {
  if (width < 1 || time_features < 2 || time_features % 2 != 0 || !(data_variance > 0.0)) {
    throw ParameterError("denoiser architecture needs width >= 1, an even time_features >= 2 and data_variance > 0");
  }
}

void TrainConfig::validate() const {
  if (steps < 0) throw ParameterError("training steps must be >= 0");
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ParameterError("learning_rate must be > 0");
  if (!(momentum >= 0.0) || momentum >= 1.0) throw ParameterError("momentum must lie in [0, 1)");
  if (std::isnan(grad_clip)) throw ParameterError("grad_clip must be a number");
}

TinyDenoiser::TinyDenoiser(const DenoiserArch& arch, std::uint64_t seed) : arch_(arch) {
  arch.validate();
  const Layout l = layout();
  params_ = Eigen::VectorXd::Zero(l.total);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Eigen::Index off, Eigen::Index count, double sd) {
    for (Eigen::Index i = 0; i < count; ++i) params_[off + i] = sd * normal(rng);
  };
  const Eigen::Index C = arch.width, F = arch.time_features;
  fill(l.w1, 9 * kIn * C, std::sqrt(2.0 / (9 * kIn)));
  fill(l.t1, F * C, std::sqrt(1.0 / F));
  fill(l.w2, 9 * C * C, std::sqrt(2.0 / (9 * C)));
  fill(l.t2, F * C, std::sqrt(1.0 / F));
  // w3, b3, g stay zero.
}

void TinyDenoiser::set_image_shape(Eigen::Index rows, Eigen::Index cols) {
  if (rows < 1 || cols < 1) throw ParameterError("image shape must be positive");
  rows_ = rows;
  cols_ = cols;
}

std::pair<Eigen::Index, Eigen::Index> TinyDenoiser::shape_for(Eigen::Index size) const {
  if (size % kIn != 0) throw ParameterError("denoiser state length must be a multiple of 4");
  const Eigen::Index n = size / kIn;
  if (rows_ > 0) {
    if (rows_ * cols_ != n) throw ParameterError("denoiser state length does not match the configured image shape");
    return {rows_, cols_};
  }
  const auto side = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) throw ParameterError("non-square state: call set_image_shape first");
  return {side, side};
}

Eigen::VectorXd TinyDenoiser::forward_backward(const Eigen::VectorXd& x_t, Eigen::Index rows, Eigen::Index cols,
                                               int t, const NoiseSchedule& schedule, const Eigen::VectorXd* d_out,
                                               Eigen::VectorXd* param_grad, Eigen::VectorXd* input_grad) const {
  if (params_.size() == 0) throw ParameterError("denoiser has no parameters");
  const Eigen::Index n = rows * cols;
  if (x_t.size() != kIn * n) throw ParameterError("denoiser input length mismatch");
  const Layout l = layout();
  const Eigen::Index C = arch_.width, F = arch_.time_features;
  const double* p = params_.data();
  const ConstMapMat W1(p + l.w1, 9 * kIn, C), T1(p + l.t1, F, C), W2(p + l.w2, 9 * C, C), T2(p + l.t2, F, C),
      W3(p + l.w3, 9 * C, kIn), G(p + l.g, F + 1, kIn);
  const Eigen::Map<const Eigen::VectorXd> b1(p + l.b1, C), b2(p + l.b2, C), b3(p + l.b3, kIn);

  const double ab = schedule.alpha_bar(t);
  const double c_in = 1.0 / std::sqrt(ab * arch_.data_variance + 1.0 - ab);
  const Eigen::VectorXd emb = time_embedding(t, schedule, static_cast<int>(F));
  Eigen::VectorXd emb1(F + 1);
  emb1 << emb, 1.0;

  const ConstMapMat X(x_t.data(), n, kIn);
  const ColMat cols0 = im2col(c_in * X, rows, cols);
  const Eigen::RowVectorXd bias1 = (b1 + T1.transpose() * emb).transpose();
  const ColMat a1 = (cols0 * W1).rowwise() + bias1;
  const ColMat h1 = silu(a1);
  const ColMat cols1 = im2col(h1, rows, cols);
  const Eigen::RowVectorXd bias2 = (b2 + T2.transpose() * emb).transpose();
  const ColMat a2 = (cols1 * W2).rowwise() + bias2;
  const ColMat h2 = silu(a2);
  const ColMat cols2 = im2col(h2, rows, cols);
  const Eigen::RowVectorXd gain = (G.transpose() * emb1).transpose();
  ColMat out = (cols2 * W3).rowwise() + b3.transpose();
  out += (X.array().rowwise() * gain.array()).matrix();

  if (d_out) {
    if (d_out->size() != kIn * n) throw ParameterError("denoiser cotangent length mismatch");
    const ConstMapMat dO(d_out->data(), n, kIn);
    const ColMat da2 = col2im(dO * W3.transpose(), rows, cols, C).cwiseProduct(silu_grad(a2));
    const ColMat da1 = col2im(da2 * W2.transpose(), rows, cols, C).cwiseProduct(silu_grad(a1));
    if (param_grad) {
      if (param_grad->size() != l.total) *param_grad = Eigen::VectorXd::Zero(l.total);
      double* g = param_grad->data();
      MapMat(g + l.w3, 9 * C, kIn) += cols2.transpose() * dO;
      Eigen::Map<Eigen::VectorXd>(g + l.b3, kIn) += dO.colwise().sum().transpose();
      const Eigen::VectorXd dgain = (X.array() * dO.array()).colwise().sum().transpose();
      MapMat(g + l.g, F + 1, kIn) += emb1 * dgain.transpose();
      MapMat(g + l.w2, 9 * C, C) += cols1.transpose() * da2;
      const Eigen::VectorXd db2 = da2.colwise().sum().transpose();
      Eigen::Map<Eigen::VectorXd>(g + l.b2, C) += db2;
      MapMat(g + l.t2, F, C) += emb * db2.transpose();
      MapMat(g + l.w1, 9 * kIn, C) += cols0.transpose() * da1;
      const Eigen::VectorXd db1 = da1.colwise().sum().transpose();
      Eigen::Map<Eigen::VectorXd>(g + l.b1, C) += db1;
      MapMat(g + l.t1, F, C) += emb * db1.transpose();
    }
    if (input_grad) {
      ColMat dX = c_in * col2im(da1 * W1.transpose(), rows, cols, kIn);
      dX += (dO.array().rowwise() * gain.array()).matrix();
      *input_grad = Eigen::Map<const Eigen::VectorXd>(dX.data(), dX.size());
    }
  }
  return Eigen::Map<const Eigen::VectorXd>(out.data(), out.size());
}

Eigen::VectorXd TinyDenoiser::eps_predict(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule) const {
  const auto [rows, cols] = shape_for(x_t.size());
  return forward_backward(x_t, rows, cols, t, schedule, nullptr, nullptr, nullptr);
}

Eigen::VectorXd TinyDenoiser::tweedie_vjp(const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd& cotangent,
                                          const NoiseSchedule& schedule) const {
  const auto [rows, cols] = shape_for(x_t.size());
  const double ab = schedule.alpha_bar(t);
  require_nonsingular(ab);
  Eigen::VectorXd eps_vjp;
  forward_backward(x_t, rows, cols, t, schedule, &cotangent, nullptr, &eps_vjp);
  return (cotangent - std::sqrt(1.0 - ab) * eps_vjp) / std::sqrt(ab);
}

// ---------------------------------------------------------------------------

namespace {

std::mt19937_64 step_rng(std::uint64_t seed, int step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), 0x5eedu};
  return std::mt19937_64(seq);
}

void validate(const PatchSet& data) {
  if (data.patches.empty()) throw ParameterError("training set is empty");
  for (const auto& p : data.patches) {
    if (p.size() != kIn * data.rows * data.cols) throw ParameterError("patch size does not match the patch shape");
    if (p.cwiseAbs().maxCoeff() > 1.0 + 1e-9) throw ParameterError("patches must lie in [-1, 1]");
  }
}

}  // namespace

TrainState init_training(const DenoiserArch& arch, const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.model = TinyDenoiser(arch, config.seed);
  s.velocity = Eigen::VectorXd::Zero(s.model.parameter_count());
  s.seed = config.seed;
  return s;
}

void continue_training(TrainState& state, const PatchSet& data, const NoiseSchedule& schedule,
                       const TrainConfig& config, int until_step) {
  config.validate();
  validate(data);
  const Eigen::Index dim = kIn * data.rows * data.cols;
  Eigen::VectorXd grad;
  for (; state.step < until_step; ++state.step) {
    auto rng = step_rng(state.seed, state.step);
    std::uniform_int_distribution<std::size_t> pick(0, data.patches.size() - 1);
    std::uniform_int_distribution<int> pick_t(1, schedule.n_steps);
    std::normal_distribution<double> normal(0.0, 1.0);
    grad = Eigen::VectorXd::Zero(state.model.parameter_count());
    double loss = 0.0;
    for (int b = 0; b < config.batch_size; ++b) {
      const Eigen::VectorXd& x0 = data.patches[pick(rng)];
      const int t = pick_t(rng);
      Eigen::VectorXd eps(dim);
      for (Eigen::Index i = 0; i < dim; ++i) eps[i] = normal(rng);
      const Eigen::VectorXd x_t = forward_marginal_sample(x0, t, eps, schedule);
      const Eigen::VectorXd pred =
          state.model.forward_backward(x_t, data.rows, data.cols, t, schedule, nullptr, nullptr, nullptr);
      const Eigen::VectorXd diff = pred - eps;
      loss += diff.squaredNorm();
      const Eigen::VectorXd d_out = 2.0 * diff / config.batch_size;
      state.model.forward_backward(x_t, data.rows, data.cols, t, schedule, &d_out, &grad, nullptr);
    }
    loss /= config.batch_size;
    if (!std::isfinite(loss) || !grad.allFinite()) {
      throw TrainingError("non-finite loss or gradient at step " + std::to_string(state.step));
    }
    if (!state.loss_curve.empty() && loss > 10.0 * state.loss_curve.front()) {
      throw TrainingError("training diverged at step " + std::to_string(state.step) + ": loss " +
                          std::to_string(loss) + " > 10 x initial " + std::to_string(state.loss_curve.front()));
    }
    state.loss_curve.push_back(loss);
    if (config.grad_clip > 0.0) {
      const double norm = grad.norm();
      if (norm > config.grad_clip) grad *= config.grad_clip / norm;
    }
    state.velocity = config.momentum * state.velocity - config.learning_rate * grad;
    state.model.parameters() += state.velocity;
  }
}

TrainState train_denoiser(const PatchSet& data, const NoiseSchedule& schedule, const TrainConfig& config,
                          const DenoiserArch& arch) {
  validate(data);
  TrainState state = init_training(arch, config);
  continue_training(state, data, schedule, config, config.steps);
  return state;
}

PatchSet random_crops(const std::vector<Eigen::VectorXd>& states, Eigen::Index rows, Eigen::Index cols, int size,
                      int per_state, std::uint64_t seed) {
  if (size < 1 || size > rows || size > cols) throw ParameterError("crop size must fit inside the state");
  if (per_state < 0) throw ParameterError("crops per state must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick_y(0, rows - size), pick_x(0, cols - size);
  PatchSet out;
  out.rows = out.cols = size;
  for (const auto& z : states) {
    if (z.size() != kIn * rows * cols) throw ParameterError("state length does not match rows x cols");
    for (int k = 0; k < per_state; ++k) {
      const Eigen::Index y0 = pick_y(rng), x0 = pick_x(rng);
      Eigen::VectorXd patch(kIn * size * size);
      for (int c = 0; c < kIn; ++c) {
        for (int y = 0; y < size; ++y) {
          patch.segment((c * size + y) * size, size) = z.segment((c * rows + y0 + y) * cols + x0, size);
        }
      }
      out.patches.push_back(std::move(patch));
    }
  }
  return out;
}

double evaluate_eps_loss(const TinyDenoiser& model, const PatchSet& data, const NoiseSchedule& schedule, int draws,
                         std::uint64_t seed) {
  validate(data);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.patches.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, schedule.n_steps);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index dim = kIn * data.rows * data.cols;
  double total = 0.0;
  for (int i = 0; i < draws; ++i) {
    const Eigen::VectorXd& x0 = data.patches[pick(rng)];
    const int t = pick_t(rng);
    Eigen::VectorXd eps(dim);
    for (Eigen::Index k = 0; k < dim; ++k) eps[k] = normal(rng);
    const Eigen::VectorXd x_t = forward_marginal_sample(x0, t, eps, schedule);
    total += (model.forward_backward(x_t, data.rows, data.cols, t, schedule, nullptr, nullptr, nullptr) - eps)
                 .squaredNorm();
  }
  return total / draws;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const TrainState& state, const NoiseSchedule& schedule, const std::filesystem::path& path) {
  nlohmann::json h;
  h["width"] = state.model.arch().width;
  h["time_features"] = state.model.arch().time_features;
  h["data_variance"] = state.model.arch().data_variance;
  h["parameter_count"] = state.model.parameter_count();
  h["dtype"] = "float64";
  h["step"] = state.step;
  h["seed"] = state.seed;
  h["schedule"] = nlohmann::json::parse(schedule_to_json(schedule));
  h["loss_curve_length"] = state.loss_curve.size();
  auto os = detail::open_out(path.string());
  os << "DFDNET1\n" << h.dump() << "\n";
  for (Eigen::Index i = 0; i < state.model.parameter_count(); ++i) detail::write_le<double>(os, state.model.parameters()[i]);
  for (Eigen::Index i = 0; i < state.velocity.size(); ++i) detail::write_le<double>(os, state.velocity[i]);
  for (double v : state.loss_curve) detail::write_le<double>(os, v);
  if (!os) throw IoError("write failed: " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path, NoiseSchedule* schedule_out) {
  auto is = detail::open_in(path.string());
  std::string magic, header;
  if (!std::getline(is, magic) || magic != "DFDNET1") throw FormatError(path.string() + ": bad magic at byte offset 0");
  if (!std::getline(is, header)) throw FormatError(path.string() + ": missing header at byte offset 8");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed header at byte offset 8: " + e.what());
  }
  TrainState s;
  try {
    DenoiserArch arch;
    arch.width = h.at("width").get<int>();
    arch.time_features = h.at("time_features").get<int>();
    arch.data_variance = h.at("data_variance").get<double>();
    if (h.at("dtype").get<std::string>() != "float64") throw FormatError(path.string() + ": unsupported dtype");
    s.model = TinyDenoiser(arch, 0);
    if (h.at("parameter_count").get<Eigen::Index>() != s.model.parameter_count()) {
      throw FormatError(path.string() + ": parameter count does not match the architecture");
    }
    s.step = h.at("step").get<int>();
    s.seed = h.at("seed").get<std::uint64_t>();
    if (schedule_out) *schedule_out = schedule_from_json(h.at("schedule").dump());
    const auto n_loss = h.at("loss_curve_length").get<std::size_t>();
    for (Eigen::Index i = 0; i < s.model.parameter_count(); ++i) {
      s.model.parameters()[i] = detail::read_le<double>(is, path.string());
    }
    s.velocity.resize(s.model.parameter_count());
    for (Eigen::Index i = 0; i < s.velocity.size(); ++i) s.velocity[i] = detail::read_le<double>(is, path.string());
    s.loss_curve.resize(n_loss);
    for (auto& v : s.loss_curve) v = detail::read_le<double>(is, path.string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return s;
}

}  // namespace dfd
