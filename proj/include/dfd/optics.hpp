#pragma once

#include <array>
#include <vector>

#include "dfd/types.hpp"

namespace dfd {

/// Reference coded-aperture PSF. Each channel is k x k with k odd, non-negative
/// and unit-sum (enforced by normalize_psf).
struct CodedPsf {
  std::array<Plane, 3> kernels;
  double pixel_pitch = 13e-6;     // meters per sensor pixel
  double reference_depth = 4.0;   // depth (m) at which this kernel has scale 1

  int size() const { return static_cast<int>(kernels[0].rows()); }
  int radius() const { return (size() - 1) / 2; }
};

/// Thin-lens camera with a coded aperture.
struct CameraParams {
  double focal_length = 35e-3;
  double f_number = 1.8;
  double pixel_pitch = 13e-6;
  double focus_distance = 1.5;
  double aperture_width = 4.58e-3;
  double d_min = 2.0;
  double d_max = 4.0;
  double scale_floor = 0.05;
  // Rotate the kernel by 180 degrees for depths nearer than focus.
  bool flip_near_side = false;

  void validate() const;
  double aperture_diameter() const { return focal_length / f_number; }

  // 35 mm f/1.8, 13 um pitch, focused at 1.5 m, objects at 2-4 m.
  static CameraParams simulation_defaults() { return CameraParams{}; }
};

/// Divides each channel by its own sum. Throws DegeneratePsfError for an
/// all-zero channel and ParameterError for negative/non-finite values or an
/// even / non-square support.
CodedPsf normalize_psf(const std::array<Plane, 3>& raw, double pixel_pitch = 13e-6, double reference_depth = 4.0);

/// Geometric blur-circle diameter (meters, on the sensor) of a point at depth d.
double circle_of_confusion(double d, const CameraParams& camera);

/// Ratio of blur diameters c(d) / c(reference_depth), clamped below by the
/// camera's scale floor.
double depth_to_scale(double d, const CameraParams& camera, double reference_depth);

/// d(depth_to_scale)/d(depth); zero inside the clamp and at exact focus.
double depth_to_scale_derivative(double d, const CameraParams& camera, double reference_depth);

/// Support size produced by rescale_psf: ceil(scale * k) rounded up to odd.
int rescaled_support(int k, double scale);

/// Bilinear resampling of every channel under (u, v) -> (u / s, v / s) about
/// the kernel center, renormalized to unit sum per channel. Collapses to a
/// 1 x 1 delta when the support is a single pixel or nothing survives.
CodedPsf rescale_psf(const CodedPsf& psf, double scale, bool flip = false);

/// d(rescale_psf)/d(scale) per channel, on the same support as rescale_psf.
/// Zero grids inside the scale floor clamp or for a collapsed delta.
std::array<Plane, 3> rescale_psf_dscale(const CodedPsf& psf, double scale, double scale_floor = 0.05,
                                        bool flip = false);

/// Background-subtract a pinhole capture, clamp at zero, crop a k x k window
/// around the intensity centroid and normalize.
struct CalibrationOptions {
  int kernel_size = 9;
  // Peak must exceed this fraction of the frame's dynamic range above background.
  double min_contrast = 1e-3;
  double pixel_pitch = 13e-6;
  double reference_depth = 4.0;
};
CodedPsf calibrate_reference_psf(const std::array<Plane, 3>& pinhole, const std::array<Plane, 3>& background,
                                 const CalibrationOptions& options = {});

/// Rescaled kernels sampled uniformly over the camera depth range.
struct PsfBank {
  std::vector<double> depths;
  std::vector<double> scales;
  std::vector<CodedPsf> kernels;

  std::size_t size() const { return kernels.size(); }
};
PsfBank build_psf_bank(const CodedPsf& psf, const CameraParams& camera, int n_depths);

/// Deterministic Levin-style binary coded pattern (k x k, k odd) with a mild
/// per-channel spread, already normalized. Used when no calibrated PSF is given.
CodedPsf synthetic_coded_psf(int k = 9, double pixel_pitch = 13e-6, double reference_depth = 4.0);

}  // namespace dfd
