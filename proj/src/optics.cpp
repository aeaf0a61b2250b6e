#include "dfd/optics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dfd/errors.hpp"

namespace dfd {

void CameraParams::validate() const {
  if (!(focal_length > 0.0)) throw ParameterError("camera: focal_length must be > 0");
  if (!(f_number > 0.0)) throw ParameterError("camera: f_number must be > 0");
  if (!(pixel_pitch > 0.0)) throw ParameterError("camera: pixel_pitch must be > 0");
  if (!(focus_distance > focal_length)) throw ParameterError("camera: focus_distance must exceed focal_length");
  if (!(d_min > focal_length)) throw ParameterError("camera: d_min must exceed focal_length");
  if (!(d_max > d_min)) throw ParameterError("camera: d_max must exceed d_min");
  if (!(scale_floor > 0.0)) throw ParameterError("camera: scale_floor must be > 0");
}

CodedPsf normalize_psf(const std::array<Plane, 3>& raw, double pixel_pitch, double reference_depth) {
  const auto k = raw[0].rows();
  if (k < 1 || k % 2 == 0) throw ParameterError("PSF support must be odd, got " + std::to_string(k));
  CodedPsf out;
  out.pixel_pitch = pixel_pitch;
  out.reference_depth = reference_depth;
  for (std::size_t c = 0; c < 3; ++c) {
    const Plane& ch = raw[c];
    if (ch.rows() != k || ch.cols() != k) throw ParameterError("PSF channels must be square and equal-sized");
    if (!ch.allFinite()) throw ParameterError("PSF contains non-finite values");
    if ((ch.array() < 0.0).any()) throw ParameterError("PSF values must be non-negative");
    const double s = ch.sum();
    if (!(s > 0.0)) throw DegeneratePsfError("PSF channel " + std::to_string(c) + " is all zero");
    out.kernels[c] = ch / s;
  }
  return out;
}

double circle_of_confusion(double d, const CameraParams& camera) {
  if (!(d > camera.focal_length)) throw ParameterError("depth must exceed the focal length");
  const double f = camera.focal_length;
  const double df = camera.focus_distance;
  return camera.aperture_diameter() * f * std::abs(d - df) / (d * (df - f));
}

double depth_to_scale(double d, const CameraParams& camera, double reference_depth) {
  const double c_ref = circle_of_confusion(reference_depth, camera);
  if (!(c_ref > 0.0)) throw ParameterError("reference depth coincides with the focus distance");
  return std::max(circle_of_confusion(d, camera) / c_ref, camera.scale_floor);
}

double depth_to_scale_derivative(double d, const CameraParams& camera, double reference_depth) {
  const double c_ref = circle_of_confusion(reference_depth, camera);
  if (!(c_ref > 0.0)) throw ParameterError("reference depth coincides with the focus distance");
  const double ratio = circle_of_confusion(d, camera) / c_ref;
  if (ratio <= camera.scale_floor || d == camera.focus_distance) return 0.0;
  const double f = camera.focal_length;
  const double df = camera.focus_distance;
  const double sign = d > df ? 1.0 : -1.0;
  // d/dd |d - df| / d = sign * df / d^2
  return camera.aperture_diameter() * f / (df - f) * sign * df / (d * d) / c_ref;
}

int rescaled_support(int k, double scale) {
  int n = static_cast<int>(std::ceil(scale * k - 1e-9));
  n = std::max(n, 1);
  if (n % 2 == 0) ++n;
  return n;
}

namespace {

struct BilinearSample {
  double value;
  double d_row;
  double d_col;
};

// Samples `ref` at fractional (row, col) with zero outside the grid.
BilinearSample bilinear(const Plane& ref, double row, double col) {
  const double r0f = std::floor(row);
  const double c0f = std::floor(col);
  const int r0 = static_cast<int>(r0f);
  const int c0 = static_cast<int>(c0f);
  const double fr = row - r0f;
  const double fc = col - c0f;
  const int n = static_cast<int>(ref.rows());
  auto at = [&](int r, int c) { return (r < 0 || c < 0 || r >= n || c >= n) ? 0.0 : ref(r, c); };
  const double v00 = at(r0, c0), v01 = at(r0, c0 + 1), v10 = at(r0 + 1, c0), v11 = at(r0 + 1, c0 + 1);
  BilinearSample s;
  s.value = (1 - fr) * ((1 - fc) * v00 + fc * v01) + fr * ((1 - fc) * v10 + fc * v11);
  s.d_col = (1 - fr) * (v01 - v00) + fr * (v11 - v10);
  s.d_row = (1 - fc) * (v10 - v00) + fc * (v11 - v01);
  return s;
}

Plane flipped(const Plane& p) { return p.reverse(); }

Plane delta_kernel() { return Plane::Ones(1, 1); }

// Raw (un-normalized) resampled channel and its derivative in scale.
void resample_channel(const Plane& ref, double scale, int out_k, Plane& raw, Plane* draw) {
  const double center = (ref.rows() - 1) / 2.0;
  const int r_out = (out_k - 1) / 2;
  raw.resize(out_k, out_k);
  if (draw) draw->resize(out_k, out_k);
  const double inv = 1.0 / scale;
  const double inv2 = inv * inv;
  for (int a = 0; a < out_k; ++a) {
    const double v = a - r_out;
    for (int b = 0; b < out_k; ++b) {
      const double u = b - r_out;
      const BilinearSample s = bilinear(ref, center + v * inv, center + u * inv);
      raw(a, b) = s.value;
      if (draw) (*draw)(a, b) = -(u * inv2) * s.d_col - (v * inv2) * s.d_row;
    }
  }
}

}  // namespace

CodedPsf rescale_psf(const CodedPsf& psf, double scale, bool flip) {
  if (!(scale > 0.0)) throw ParameterError("rescale_psf: scale must be > 0");
  CodedPsf out;
  out.pixel_pitch = psf.pixel_pitch;
  out.reference_depth = psf.reference_depth;
  const int k_out = rescaled_support(psf.size(), scale);
  bool collapsed = k_out == 1;
  std::array<Plane, 3> raw;
  if (!collapsed) {
    for (std::size_t c = 0; c < 3; ++c) {
      resample_channel(psf.kernels[c], scale, k_out, raw[c], nullptr);
      if (!(raw[c].sum() > 0.0)) collapsed = true;
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    if (collapsed) {
      out.kernels[c] = delta_kernel();
    } else {
      out.kernels[c] = raw[c] / raw[c].sum();
      if (flip) out.kernels[c] = flipped(out.kernels[c]);
    }
  }
  return out;
}

std::array<Plane, 3> rescale_psf_dscale(const CodedPsf& psf, double scale, double scale_floor, bool flip) {
  if (!(scale > 0.0)) throw ParameterError("rescale_psf_dscale: scale must be > 0");
  const int k_out = rescaled_support(psf.size(), scale);
  std::array<Plane, 3> out;
  std::array<Plane, 3> raw, draw;
  bool collapsed = k_out == 1;
  if (!collapsed) {
    for (std::size_t c = 0; c < 3; ++c) {
      resample_channel(psf.kernels[c], scale, k_out, raw[c], &draw[c]);
      if (!(raw[c].sum() > 0.0)) collapsed = true;
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    if (collapsed) {
      out[c] = Plane::Zero(1, 1);
    } else if (scale <= scale_floor) {
      out[c] = Plane::Zero(k_out, k_out);
    } else {
      const double s = raw[c].sum();
      const double ds = draw[c].sum();
      out[c] = draw[c] / s - raw[c] * (ds / (s * s));
      if (flip) out[c] = flipped(out[c]);
    }
  }
  return out;
}

CodedPsf calibrate_reference_psf(const std::array<Plane, 3>& pinhole, const std::array<Plane, 3>& background,
                                 const CalibrationOptions& options) {
  const int k = options.kernel_size;
  if (k < 1 || k % 2 == 0) throw ParameterError("calibration kernel size must be odd");
  const auto H = pinhole[0].rows();
  const auto W = pinhole[0].cols();
  for (std::size_t c = 0; c < 3; ++c) {
    if (pinhole[c].rows() != H || pinhole[c].cols() != W || background[c].rows() != H || background[c].cols() != W) {
      throw ParameterError("calibration frames must share one shape");
    }
  }
  std::array<Plane, 3> diff;
  Plane intensity = Plane::Zero(H, W);
  double frame_max = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    diff[c] = (pinhole[c] - background[c]).cwiseMax(0.0);
    intensity += diff[c];
    frame_max = std::max(frame_max, pinhole[c].maxCoeff());
  }
  const double peak = intensity.maxCoeff();
  if (!(peak > options.min_contrast * std::max(1.0, frame_max))) {
    throw CalibrationError("no pinhole peak above the contrast threshold");
  }
  double sum = 0.0, sr = 0.0, sc = 0.0;
  for (Eigen::Index r = 0; r < H; ++r) {
    for (Eigen::Index c = 0; c < W; ++c) {
      const double v = intensity(r, c);
      sum += v;
      sr += v * r;
      sc += v * c;
    }
  }
  const auto cr = static_cast<Eigen::Index>(std::lround(sr / sum));
  const auto cc = static_cast<Eigen::Index>(std::lround(sc / sum));
  const int rad = (k - 1) / 2;
  if (cr - rad < 0 || cc - rad < 0 || cr + rad >= H || cc + rad >= W) {
    throw CalibrationError("pinhole peak too close to the frame border for a " + std::to_string(k) + "x" +
                           std::to_string(k) + " crop");
  }
  std::array<Plane, 3> crop;
  for (std::size_t c = 0; c < 3; ++c) crop[c] = diff[c].block(cr - rad, cc - rad, k, k);
  try {
    return normalize_psf(crop, options.pixel_pitch, options.reference_depth);
  } catch (const DegeneratePsfError& e) {
    throw CalibrationError(std::string("calibration crop is empty: ") + e.what());
  }
}

PsfBank build_psf_bank(const CodedPsf& psf, const CameraParams& camera, int n_depths) {
  if (n_depths < 2) throw ParameterError("PSF bank needs at least two depths");
  camera.validate();
  PsfBank bank;
  for (int i = 0; i < n_depths; ++i) {
    const double d = camera.d_min + (camera.d_max - camera.d_min) * i / (n_depths - 1);
    const double s = depth_to_scale(d, camera, psf.reference_depth);
    bank.depths.push_back(d);
    bank.scales.push_back(s);
    bank.kernels.push_back(rescale_psf(psf, s, camera.flip_near_side && d < camera.focus_distance));
  }
  return bank;
}

CodedPsf synthetic_coded_psf(int k, double pixel_pitch, double reference_depth) {
  if (k < 3 || k % 2 == 0) throw ParameterError("synthetic PSF size must be odd and >= 3");
  // 9x9 binary aperture code.
  static constexpr int kCode[9][9] = {
      {1, 1, 0, 1, 1, 1, 0, 1, 0}, {1, 0, 0, 1, 0, 1, 0, 0, 1}, {0, 1, 1, 1, 0, 0, 1, 1, 1},
      {1, 1, 0, 0, 1, 0, 1, 0, 1}, {1, 0, 1, 1, 1, 1, 1, 0, 0}, {0, 1, 1, 0, 1, 0, 0, 1, 1},
      {1, 1, 0, 1, 0, 1, 1, 1, 0}, {1, 0, 0, 1, 0, 1, 0, 0, 1}, {0, 1, 1, 1, 1, 0, 1, 1, 1},
  };
  Plane code(9, 9);
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 9; ++c) code(r, c) = kCode[r][c];

  CodedPsf base;
  for (auto& ch : base.kernels) ch = code;
  if (k != 9) base = rescale_psf(normalize_psf(base.kernels), k / 9.0);

  // Per-channel 3x3 smoothing of different strength.
  static constexpr double kSpread[3] = {0.10, 0.05, 0.15};
  std::array<Plane, 3> raw;
  for (std::size_t c = 0; c < 3; ++c) {
    const Plane& src = base.kernels[c];
    Plane out = Plane::Zero(k, k);
    for (int r = 0; r < k; ++r) {
      for (int q = 0; q < k; ++q) {
        double acc = 0.0;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dq = -1; dq <= 1; ++dq) {
            const int rr = r + dr, qq = q + dq;
            if (rr < 0 || qq < 0 || rr >= k || qq >= k) continue;
            acc += (dr == 0 && dq == 0 ? 1.0 - kSpread[c] : kSpread[c] / 8.0) * src(rr, qq);
          }
        }
        out(r, q) = acc;
      }
    }
    raw[c] = out;
  }
  return normalize_psf(raw, pixel_pitch, reference_depth);
}

}  // namespace dfd
