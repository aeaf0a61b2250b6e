#include "dfd/forward_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "dfd/errors.hpp"

namespace dfd {

namespace {

void check_state(const RgbdState& x, const CameraParams& camera) {
  if (x.depth.size() == 0) throw ParameterError("empty state");
  for (const auto& ch : x.rgb.ch) {
    if (ch.rows() != x.depth.rows() || ch.cols() != x.depth.cols()) {
      throw ParameterError("rgb and depth shapes differ");
    }
  }
  if (!x.depth.allFinite()) throw ParameterError("depth contains non-finite values");
  const double lo = x.depth.minCoeff(), hi = x.depth.maxCoeff();
  if (lo < camera.d_min || hi > camera.d_max) {
    throw ParameterError("depth outside the camera range [" + std::to_string(camera.d_min) + ", " +
                         std::to_string(camera.d_max) + "]");
  }
}

}  // namespace

Eigen::VectorXd encode_state(const RgbdState& x, const CameraParams& camera) {
  const Eigen::Index n = x.depth.size();
  Eigen::VectorXd z(kStateChannels * n);
  for (int c = 0; c < 3; ++c) {
    z.segment(c * n, n) = (2.0 * x.rgb[c].reshaped<Eigen::RowMajor>().array() - 1.0).matrix();
  }
  const double span = camera.d_max - camera.d_min;
  z.segment(3 * n, n) =
      (2.0 * (x.depth.reshaped<Eigen::RowMajor>().array() - camera.d_min) / span - 1.0).matrix();
  return z;
}

RgbdState decode_state(const Eigen::VectorXd& z, Eigen::Index rows, Eigen::Index cols, const CameraParams& camera) {
  const Eigen::Index n = rows * cols;
  if (z.size() != kStateChannels * n) throw ParameterError("decode_state: vector length does not match 4 x H x W");
  RgbdState x;
  x.rgb = Rgb(rows, cols);
  for (int c = 0; c < 3; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      x.rgb[c].data()[i] = std::clamp(0.5 * (z[c * n + i] + 1.0), 0.0, 1.0);
    }
  }
  x.depth.resize(rows, cols);
  const double span = camera.d_max - camera.d_min;
  for (Eigen::Index i = 0; i < n; ++i) {
    x.depth.data()[i] = std::clamp(camera.d_min + 0.5 * (z[3 * n + i] + 1.0) * span, camera.d_min, camera.d_max);
  }
  return x;
}

Eigen::VectorXd decode_derivative(const Eigen::VectorXd& z, const CameraParams& camera) {
  const Eigen::Index n = z.size() / kStateChannels;
  const double span = camera.d_max - camera.d_min;
  Eigen::VectorXd d(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const bool inside = z[i] >= -1.0 && z[i] <= 1.0;
    d[i] = inside ? (i < 3 * n ? 0.5 : 0.5 * span) : 0.0;
  }
  return d;
}

Eigen::VectorXd flatten(const Rgb& image) {
  const Eigen::Index n = image.pixels();
  Eigen::VectorXd v(3 * n);
  for (int c = 0; c < 3; ++c) v.segment(c * n, n) = image[c].reshaped<Eigen::RowMajor>();
  return v;
}

Rgb unflatten_rgb(const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::Index n = rows * cols;
  if (v.size() != 3 * n) throw ParameterError("unflatten_rgb: length mismatch");
  Rgb out(rows, cols);
  for (int c = 0; c < 3; ++c) std::copy(v.data() + c * n, v.data() + (c + 1) * n, out[c].data());
  return out;
}

int reflect_index(int i, int n) {
  // Period 2n: ... 1 0 | 0 1 ... n-1 | n-1 n-2 ...
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

void RenderWorkspace::prepare(const Plane& depth, const CameraParams& camera, const CodedPsf& psf,
                              bool with_derivative) {
  rows_ = depth.rows();
  cols_ = depth.cols();
  has_derivative_ = with_derivative;
  const Eigen::Index n = rows_ * cols_;
  radius_.assign(n, 0);
  offset_.assign(n, 0);
  kernels_.clear();
  dkernels_.clear();
  dscale_ddepth_.assign(with_derivative ? n : 0, 0.0);

  const double ref = psf.reference_depth;
  const bool flip_allowed = camera.flip_near_side;
  int max_radius = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double d = depth.data()[j];
    const double s = depth_to_scale(d, camera, ref);
    const bool flip = flip_allowed && d < camera.focus_distance;
    const CodedPsf k = rescale_psf(psf, s, flip);
    const int size = k.size();
    radius_[j] = (size - 1) / 2;
    max_radius = std::max(max_radius, radius_[j]);
    offset_[j] = kernels_.size();
    for (int c = 0; c < 3; ++c) kernels_.insert(kernels_.end(), k.kernels[c].data(), k.kernels[c].data() + size * size);
    if (with_derivative) {
      const auto dk = rescale_psf_dscale(psf, s, camera.scale_floor, flip);
      for (int c = 0; c < 3; ++c) {
        if (dk[c].rows() != size) throw NumericalError("kernel derivative support mismatch");
        dkernels_.insert(dkernels_.end(), dk[c].data(), dk[c].data() + size * size);
      }
      dscale_ddepth_[j] = depth_to_scale_derivative(d, camera, ref);
    }
  }
  if (max_radius >= rows_ || max_radius >= cols_) {
    throw ParameterError("image smaller than the largest kernel support");
  }
  pad_ = max_radius;
  const Eigen::Index prow = rows_ + 2 * pad_, pcol = cols_ + 2 * pad_;
  padded_source_.resize(prow * pcol);
  for (Eigen::Index py = 0; py < prow; ++py) {
    const int sy = reflect_index(static_cast<int>(py) - pad_, static_cast<int>(rows_));
    for (Eigen::Index px = 0; px < pcol; ++px) {
      const int sx = reflect_index(static_cast<int>(px) - pad_, static_cast<int>(cols_));
      padded_source_[py * pcol + px] = sy * static_cast<int>(cols_) + sx;
    }
  }
}

Rgb RenderWorkspace::scatter(const Rgb& rgb) const {
  if (rgb.rows() != rows_ || rgb.cols() != cols_) throw ParameterError("scatter: rgb shape mismatch");
  Rgb out(rows_, cols_);
  const int H = static_cast<int>(rows_), W = static_cast<int>(cols_);
  const int pcol = W + 2 * pad_;
  for (int py = 0; py < H + 2 * pad_; ++py) {
    const int qy = py - pad_;
    for (int px = 0; px < pcol; ++px) {
      const int qx = px - pad_;
      const int j = padded_source_[py * pcol + px];
      const int r = radius_[j];
      const int size = 2 * r + 1;
      const int a0 = std::max(0, -(qy - r)), a1 = std::min(size, H - (qy - r));
      const int b0 = std::max(0, -(qx - r)), b1 = std::min(size, W - (qx - r));
      if (a0 >= a1 || b0 >= b1) continue;
      for (int c = 0; c < 3; ++c) {
        const double v = rgb[c].data()[j];
        if (v == 0.0) continue;
        const double* k = kernels_.data() + offset_[j] + static_cast<std::size_t>(c) * size * size;
        double* o = out[c].data();
        for (int a = a0; a < a1; ++a) {
          double* orow = o + (qy - r + a) * W + (qx - r);
          const double* krow = k + a * size;
          for (int b = b0; b < b1; ++b) orow[b] += krow[b] * v;
        }
      }
    }
  }
  return out;
}

void RenderWorkspace::gather(const Rgb& rgb, const Rgb& cotangent, Rgb& grad_rgb, Plane* grad_depth) const {
  if (cotangent.rows() != rows_ || cotangent.cols() != cols_) throw ParameterError("gather: cotangent shape mismatch");
  if (grad_depth && !has_derivative_) throw ParameterError("gather: workspace prepared without derivatives");
  const int H = static_cast<int>(rows_), W = static_cast<int>(cols_);
  const int pcol = W + 2 * pad_;
  grad_rgb = Rgb(rows_, cols_);
  std::vector<double> grad_scale(grad_depth ? rows_ * cols_ : 0, 0.0);
  for (int py = 0; py < H + 2 * pad_; ++py) {
    const int qy = py - pad_;
    for (int px = 0; px < pcol; ++px) {
      const int qx = px - pad_;
      const int j = padded_source_[py * pcol + px];
      const int r = radius_[j];
      const int size = 2 * r + 1;
      const int a0 = std::max(0, -(qy - r)), a1 = std::min(size, H - (qy - r));
      const int b0 = std::max(0, -(qx - r)), b1 = std::min(size, W - (qx - r));
      if (a0 >= a1 || b0 >= b1) continue;
      for (int c = 0; c < 3; ++c) {
        const std::size_t koff = offset_[j] + static_cast<std::size_t>(c) * size * size;
        const double* k = kernels_.data() + koff;
        const double* dk = grad_depth ? dkernels_.data() + koff : nullptr;
        const double* g = cotangent[c].data();
        double acc = 0.0, dacc = 0.0;
        for (int a = a0; a < a1; ++a) {
          const double* grow = g + (qy - r + a) * W + (qx - r);
          const double* krow = k + a * size;
          for (int b = b0; b < b1; ++b) acc += krow[b] * grow[b];
          if (dk) {
            const double* dkrow = dk + a * size;
            for (int b = b0; b < b1; ++b) dacc += dkrow[b] * grow[b];
          }
        }
        grad_rgb[c].data()[j] += acc;
        if (dk) grad_scale[j] += dacc * rgb[c].data()[j];
      }
    }
  }
  if (grad_depth) {
    grad_depth->resize(rows_, cols_);
    for (Eigen::Index j = 0; j < rows_ * cols_; ++j) grad_depth->data()[j] = grad_scale[j] * dscale_ddepth_[j];
  }
}

Rgb render(const RgbdState& x, const CameraParams& camera, const CodedPsf& psf, RenderWorkspace* ws) {
  check_state(x, camera);
  RenderWorkspace local;
  RenderWorkspace& w = ws ? *ws : local;
  w.prepare(x.depth, camera, psf, false);
  return w.scatter(x.rgb);
}

RenderGradients render_vjp(const RgbdState& x, const Rgb& cotangent, const CameraParams& camera,
                           const CodedPsf& psf, RenderWorkspace* ws) {
  check_state(x, camera);
  if (!cotangent.sameShape(x.rgb)) throw ParameterError("render_vjp: cotangent shape mismatch");
  RenderWorkspace local;
  RenderWorkspace& w = ws ? *ws : local;
  w.prepare(x.depth, camera, psf, true);
  RenderGradients g;
  w.gather(x.rgb, cotangent, g.grad_rgb, &g.grad_depth);
  return g;
}

double data_fidelity(const RgbdState& x, const Observation& y) {
  const Rgb r = render(x, y.camera, y.psf);
  if (!r.sameShape(y.image)) throw ParameterError("observation shape mismatch");
  return (y.image - r).squaredNorm();
}

Eigen::VectorXd data_fidelity_grad(const RgbdState& x, const Observation& y) {
  RenderWorkspace ws;
  check_state(x, y.camera);
  if (!x.rgb.sameShape(y.image)) throw ParameterError("observation shape mismatch");
  ws.prepare(x.depth, y.camera, y.psf, true);
  const Rgb residual = ws.scatter(x.rgb) - y.image;
  RenderGradients g;
  ws.gather(x.rgb, 2.0 * residual, g.grad_rgb, &g.grad_depth);
  const Eigen::Index n = x.depth.size();
  Eigen::VectorXd out(kStateChannels * n);
  out.head(3 * n) = 0.5 * flatten(g.grad_rgb);
  out.tail(n) = 0.5 * (y.camera.d_max - y.camera.d_min) * g.grad_depth.reshaped<Eigen::RowMajor>();
  return out;
}

Rgb add_observation_noise(const Rgb& clean, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ParameterError("noise sigma must be >= 0");
  Rgb out = clean;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& ch : out.ch) {
    for (Eigen::Index i = 0; i < ch.size(); ++i) ch.data()[i] += sigma * normal(rng);
  }
  return out;
}

CodedDefocusOperator::CodedDefocusOperator(CameraParams camera, CodedPsf psf, Eigen::Index rows, Eigen::Index cols)
    : camera_(std::move(camera)), psf_(std::move(psf)), rows_(rows), cols_(cols) {
  camera_.validate();
}

Eigen::VectorXd CodedDefocusOperator::apply(const Eigen::VectorXd& z) const {
  const RgbdState x = decode_state(z, rows_, cols_, camera_);
  ws_.prepare(x.depth, camera_, psf_, false);
  return flatten(ws_.scatter(x.rgb));
}

Eigen::VectorXd CodedDefocusOperator::vjp(const Eigen::VectorXd& z, const Eigen::VectorXd& cotangent) const {
  const RgbdState x = decode_state(z, rows_, cols_, camera_);
  ws_.prepare(x.depth, camera_, psf_, true);
  RenderGradients g;
  ws_.gather(x.rgb, unflatten_rgb(cotangent, rows_, cols_), g.grad_rgb, &g.grad_depth);
  const Eigen::Index n = rows_ * cols_;
  Eigen::VectorXd out(kStateChannels * n);
  out.head(3 * n) = flatten(g.grad_rgb);
  out.tail(n) = g.grad_depth.reshaped<Eigen::RowMajor>();
  return out.cwiseProduct(decode_derivative(z, camera_));
}

Eigen::VectorXd CodedDefocusOperator::fidelity_grad(const Eigen::VectorXd& z, const Eigen::VectorXd& y,
                                                    double* fidelity_out) const {
  const RgbdState x = decode_state(z, rows_, cols_, camera_);
  ws_.prepare(x.depth, camera_, psf_, true);
  const Eigen::VectorXd r = flatten(ws_.scatter(x.rgb)) - y;
  if (fidelity_out) *fidelity_out = r.squaredNorm();
  RenderGradients g;
  ws_.gather(x.rgb, unflatten_rgb(2.0 * r, rows_, cols_), g.grad_rgb, &g.grad_depth);
  const Eigen::Index n = rows_ * cols_;
  Eigen::VectorXd out(kStateChannels * n);
  out.head(3 * n) = flatten(g.grad_rgb);
  out.tail(n) = g.grad_depth.reshaped<Eigen::RowMajor>();
  return out.cwiseProduct(decode_derivative(z, camera_));
}

}  // namespace dfd
