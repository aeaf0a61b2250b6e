#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "dfd/optics.hpp"
#include "dfd/types.hpp"

namespace dfd {

/// The unknown of the reconstruction: all-in-focus RGB in [0, 1] and depth in
/// meters. The diffusion prior sees it through encode_state / decode_state as a
/// channel-planar vector [R, G, B, D] (each H x W row-major) in [-1, 1].
struct RgbdState {
  Rgb rgb;
  Plane depth;

  Eigen::Index rows() const { return depth.rows(); }
  Eigen::Index cols() const { return depth.cols(); }
};

constexpr int kStateChannels = 4;

Eigen::VectorXd encode_state(const RgbdState& x, const CameraParams& camera);

/// Inverse of encode_state with rgb clamped to [0, 1] and depth to
/// [d_min, d_max].
RgbdState decode_state(const Eigen::VectorXd& z, Eigen::Index rows, Eigen::Index cols, const CameraParams& camera);

/// d(decoded value)/dz per coordinate: 1/2 for rgb and (d_max - d_min)/2 for
/// depth inside the range, 0 where decode clamps.
Eigen::VectorXd decode_derivative(const Eigen::VectorXd& z, const CameraParams& camera);

Eigen::VectorXd flatten(const Rgb& image);
Rgb unflatten_rgb(const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols);

struct Observation {
  Rgb image;
  double noise_sigma = 0.0;
  CameraParams camera;
  CodedPsf psf;
};

/// Per-pixel kernel table for one depth map plus the reflect-padded source
/// index table. This is the im2col/col2im state; reuse one per thread.
class RenderWorkspace {
 public:
  void prepare(const Plane& depth, const CameraParams& camera, const CodedPsf& psf, bool with_derivative);

  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  int pad() const { return pad_; }
  bool has_derivative() const { return has_derivative_; }

  // Scatter rgb through the prepared kernels (col2im).
  Rgb scatter(const Rgb& rgb) const;
  // Adjoint gather of a cotangent (im2col). grad_scale is per pixel d/d(scale).
  void gather(const Rgb& rgb, const Rgb& cotangent, Rgb& grad_rgb, Plane* grad_depth) const;

 private:
  Eigen::Index rows_ = 0, cols_ = 0;
  int pad_ = 0;
  bool has_derivative_ = false;
  std::vector<int> radius_;          // per source pixel
  std::vector<std::size_t> offset_;  // start of the pixel's 3 k x k kernels
  std::vector<double> kernels_;
  std::vector<double> dkernels_;
  std::vector<double> dscale_ddepth_;
  std::vector<int> padded_source_;   // (rows + 2 pad) x (cols + 2 pad)
};

/// Half-sample symmetric reflection of index i into [0, n).
int reflect_index(int i, int n);

/// Spatially varying scatter: output(p, c) = sum_q K_{d(q)}^c(p - q) rgb(q, c)
/// over the reflect-padded scene. Throws ParameterError on shape mismatch or
/// depth outside [d_min, d_max].
Rgb render(const RgbdState& x, const CameraParams& camera, const CodedPsf& psf, RenderWorkspace* ws = nullptr);

struct RenderGradients {
  Rgb grad_rgb;
  Plane grad_depth;
};

/// Exact vector-Jacobian product of render at x.
RenderGradients render_vjp(const RgbdState& x, const Rgb& cotangent, const CameraParams& camera,
                           const CodedPsf& psf, RenderWorkspace* ws = nullptr);

/// ||y - render(x)||^2
double data_fidelity(const RgbdState& x, const Observation& y);

/// Gradient of data_fidelity with respect to the normalized state
/// encode_state(x), returned in the same channel-planar layout.
Eigen::VectorXd data_fidelity_grad(const RgbdState& x, const Observation& y);

/// clean + sigma * g, g i.i.d. standard normal from a generator seeded with `seed`.
Rgb add_observation_noise(const Rgb& clean, double sigma, std::uint64_t seed);

/// Differentiable measurement y = A(x) on a flat state vector.
class MeasurementOperator {
 public:
  virtual ~MeasurementOperator() = default;
  virtual Eigen::VectorXd apply(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::VectorXd vjp(const Eigen::VectorXd& x, const Eigen::VectorXd& cotangent) const = 0;

  // ||A(x) - y||^2 and its gradient in x.
  virtual double fidelity(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    return (apply(x) - y).squaredNorm();
  }
  virtual Eigen::VectorXd fidelity_grad(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                        double* fidelity_out = nullptr) const {
    const Eigen::VectorXd r = apply(x) - y;
    if (fidelity_out) *fidelity_out = r.squaredNorm();
    return vjp(x, 2.0 * r);
  }
};

/// Explicit matrix operator, for linear-Gaussian checks.
class MatrixOperator final : public MeasurementOperator {
 public:
  explicit MatrixOperator(Eigen::MatrixXd a) : a_(std::move(a)) {}
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const override { return a_ * x; }
  Eigen::VectorXd vjp(const Eigen::VectorXd&, const Eigen::VectorXd& cotangent) const override {
    return a_.transpose() * cotangent;
  }
  const Eigen::MatrixXd& matrix() const { return a_; }

 private:
  Eigen::MatrixXd a_;
};

/// Coded-defocus rendering on the normalized 4-channel state. Not thread-safe
/// (owns a workspace); make one per thread.
class CodedDefocusOperator final : public MeasurementOperator {
 public:
  CodedDefocusOperator(CameraParams camera, CodedPsf psf, Eigen::Index rows, Eigen::Index cols);

  Eigen::VectorXd apply(const Eigen::VectorXd& z) const override;
  Eigen::VectorXd vjp(const Eigen::VectorXd& z, const Eigen::VectorXd& cotangent) const override;
  Eigen::VectorXd fidelity_grad(const Eigen::VectorXd& z, const Eigen::VectorXd& y,
                                double* fidelity_out = nullptr) const override;

  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  const CameraParams& camera() const { return camera_; }
  const CodedPsf& psf() const { return psf_; }

 private:
  CameraParams camera_;
  CodedPsf psf_;
  Eigen::Index rows_, cols_;
  mutable RenderWorkspace ws_;
};

}  // namespace dfd
