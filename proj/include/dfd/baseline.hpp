#pragma once

#include <Eigen/Core>

#include "dfd/forward_model.hpp"
#include "dfd/optics.hpp"

namespace dfd {

struct BaselineConfig {
  double lambda1 = 1e-5;  // first-derivative weight
  double lambda2 = 1e-4;  // second-derivative weight
  int window = 11;        // odd box size for local depth selection
  int n_depths = 9;
  int pad = 16;           // reflect padding added before the periodic solves
  // Floor inside the log of the windowed energy (per pixel and channel).
  double energy_floor = 1e-6;
  // Residual energy per pixel and channel that counts as noise, not evidence.
  double residual_floor = 1e-3;
  // Pixels whose residual contrast is below this are flagged low confidence.
  double confidence_threshold = 0.05;

  void validate() const;
};

/// argmin_x ||y - k * x||^2 + lambda1 ||grad x||^2 + lambda2 ||grad^2 x||^2 per
/// channel, solved in the Fourier domain with periodic boundaries. Channel c of
/// `kernel` blurs channel c of the image. Throws NumericalError when both
/// weights are zero and the kernel spectrum nearly vanishes.
Rgb deconvolve_at_depth(const Rgb& y, const CodedPsf& kernel, const BaselineConfig& config);

/// Periodic shift-invariant blur with the same kernel convention.
Rgb blur_periodic(const Rgb& x, const CodedPsf& kernel);

struct BaselineResult {
  RgbdState state;
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> label;  // winning bank index
  Plane score;           // winning per-pixel score (negative log-likelihood per pixel)
  Plane contrast;        // (r_max - r_min) / (r_max + floor) over the sweep
  Plane low_confidence;  // 1 where contrast < threshold, else 0
};

/// Deconvolves the reflect-padded observation at every bank depth and scores
/// each depth per pixel with the windowed Gaussian marginal likelihood
///
///   sum_c log(mean_window E_c + energy_floor) + (1 / N) sum_w,c log(1 + |K_c(w)|^2 / P(w))
///
/// where E_c is the per-pixel re-rendering residual plus the weighted
/// derivative energies of the deconvolution and P the regularizer spectrum.
/// The log-determinant term removes the pull of the plain residual toward
/// the smallest kernel. Contrast compares the windowed re-rendering residual
/// across the sweep: where every depth fits equally well the pixel carries no
/// depth evidence.
BaselineResult depth_sweep_reconstruct(const Rgb& y, const PsfBank& bank, const BaselineConfig& config);

}  // namespace dfd
