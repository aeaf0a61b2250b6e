#include "dfd/baseline.hpp"

#include <array>
#include <cmath>
#include <complex>
#include <limits>

#include <unsupported/Eigen/FFT>

#include "dfd/errors.hpp"

namespace dfd {

void BaselineConfig::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ParameterError("baseline weights must be >= 0");
  if (window < 3 || window % 2 == 0) throw ParameterError("baseline window must be odd and >= 3");
  if (n_depths < 2) throw ParameterError("baseline needs at least 2 depths");
  if (pad < 0) throw ParameterError("baseline pad must be >= 0");
  if (!(energy_floor > 0.0) || !(residual_floor > 0.0)) throw ParameterError("baseline floors must be > 0");
  if (!(confidence_threshold >= 0.0)) throw ParameterError("confidence threshold must be >= 0");
}

namespace {

using Complex = std::complex<double>;
using Spectrum = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Fft2 {
 public:
  Spectrum forward(const Plane& x) {
    Spectrum s = x.cast<Complex>();
    transform(s, false);
    return s;
  }
  Plane inverse(Spectrum s) {
    transform(s, true);
    return s.real();
  }

 private:
  void transform(Spectrum& s, bool inverse) {
    const Eigen::Index rows = s.rows(), cols = s.cols();
    std::vector<Complex> in, out;
    in.resize(cols);
    out.resize(cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) in[c] = s(r, c);
      if (inverse) fft_.inv(out.data(), in.data(), cols); else fft_.fwd(out.data(), in.data(), cols);
      for (Eigen::Index c = 0; c < cols; ++c) s(r, c) = out[c];
    }
    in.resize(rows);
    out.resize(rows);
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) in[r] = s(r, c);
      if (inverse) fft_.inv(out.data(), in.data(), rows); else fft_.fwd(out.data(), in.data(), rows);
      for (Eigen::Index r = 0; r < rows; ++r) s(r, c) = out[r];
    }
  }
  Eigen::FFT<double> fft_;
};

// Places a (2r+1)^2 filter with its center at the origin of a periodic grid.
Plane embed_centered(const Plane& k, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::Index r = (k.rows() - 1) / 2;
  Plane out = Plane::Zero(rows, cols);
  for (Eigen::Index u = 0; u < k.rows(); ++u) {
    for (Eigen::Index v = 0; v < k.cols(); ++v) {
      const Eigen::Index y = ((u - r) % rows + rows) % rows;
      const Eigen::Index x = ((v - r) % cols + cols) % cols;
      out(y, x) += k(u, v);
    }
  }
  return out;
}

// Sum over derivative filters of |D(w)|^2 at every frequency.
Plane filter_energy(const std::vector<Plane>& filters, Eigen::Index rows, Eigen::Index cols, Fft2& fft) {
  Plane e = Plane::Zero(rows, cols);
  for (const auto& f : filters) e += fft.forward(embed_centered(f, rows, cols)).cwiseAbs2();
  return e;
}

Plane make(std::initializer_list<std::initializer_list<double>> v) {
  Plane p(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(v.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : v) {
    Eigen::Index c = 0;
    for (double x : row) p(r, c++) = x;
    ++r;
  }
  return p;
}

// 3x3 centered stencils so the embedding stays centered.
std::vector<Plane> first_derivatives() {
  return {make({{0, 0, 0}, {0, 1, -1}, {0, 0, 0}}), make({{0, 0, 0}, {0, 1, 0}, {0, -1, 0}})};
}
std::vector<Plane> second_derivatives() {
  return {make({{0, 0, 0}, {1, -2, 1}, {0, 0, 0}}), make({{0, 1, 0}, {0, -2, 0}, {0, 1, 0}}),
          make({{0, 0, 0}, {0, 1, -1}, {0, -1, 1}})};
}

struct Regularizer {
  Plane first, second;
};

Regularizer regularizer_spectra(Eigen::Index rows, Eigen::Index cols, Fft2& fft) {
  return {filter_energy(first_derivatives(), rows, cols, fft), filter_energy(second_derivatives(), rows, cols, fft)};
}

Rgb deconvolve(const Rgb& y, const CodedPsf& kernel, const BaselineConfig& config, const Regularizer& reg,
               Fft2& fft) {
  const Eigen::Index rows = y.rows(), cols = y.cols();
  if (kernel.size() > rows || kernel.size() > cols) throw ParameterError("kernel larger than the image");
  Rgb out(rows, cols);
  const Plane penalty = config.lambda1 * reg.first + config.lambda2 * reg.second;
  for (int c = 0; c < 3; ++c) {
    const Spectrum k = fft.forward(embed_centered(kernel.kernels[c], rows, cols));
    const Plane denom = k.cwiseAbs2() + penalty;
    if (denom.minCoeff() < 1e-12) {
      throw NumericalError("deconvolution is ill-conditioned: kernel spectrum vanishes and no regularization is set");
    }
    const Spectrum ys = fft.forward(y[c]);
    const Spectrum xs = (k.conjugate().cwiseProduct(ys)).cwiseQuotient(denom.cast<Complex>());
    out[c] = fft.inverse(xs);
  }
  return out;
}

// Box sum with clamped (shrinking) windows via an integral image.
Plane box_sum(const Plane& v, int window) {
  const Eigen::Index rows = v.rows(), cols = v.cols();
  Plane integral = Plane::Zero(rows + 1, cols + 1);
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      integral(y + 1, x + 1) = v(y, x) + integral(y, x + 1) + integral(y + 1, x) - integral(y, x);
    }
  }
  const int h = window / 2;
  Plane out(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y) {
    const Eigen::Index y0 = std::max<Eigen::Index>(0, y - h), y1 = std::min(rows, y + h + 1);
    for (Eigen::Index x = 0; x < cols; ++x) {
      const Eigen::Index x0 = std::max<Eigen::Index>(0, x - h), x1 = std::min(cols, x + h + 1);
      out(y, x) = integral(y1, x1) - integral(y0, x1) - integral(y1, x0) + integral(y0, x0);
    }
  }
  return out;
}

}  // namespace

Rgb deconvolve_at_depth(const Rgb& y, const CodedPsf& kernel, const BaselineConfig& config) {
  if (!(config.lambda1 >= 0.0) || !(config.lambda2 >= 0.0)) throw ParameterError("baseline weights must be >= 0");
  Fft2 fft;
  const Regularizer reg = regularizer_spectra(y.rows(), y.cols(), fft);
  return deconvolve(y, kernel, config, reg, fft);
}

Rgb blur_periodic(const Rgb& x, const CodedPsf& kernel) {
  Fft2 fft;
  Rgb out(x.rows(), x.cols());
  for (int c = 0; c < 3; ++c) {
    const Spectrum k = fft.forward(embed_centered(kernel.kernels[c], x.rows(), x.cols()));
    out[c] = fft.inverse(k.cwiseProduct(fft.forward(x[c])));
  }
  return out;
}

BaselineResult depth_sweep_reconstruct(const Rgb& y, const PsfBank& bank, const BaselineConfig& config) {
  config.validate();
  if (bank.size() == 0) throw ParameterError("empty PSF bank");
  const Eigen::Index rows = y.rows(), cols = y.cols(), p = config.pad;
  const Eigen::Index pr = rows + 2 * p, pc = cols + 2 * p;
  Rgb yp(pr, pc);
  for (int c = 0; c < 3; ++c) {
    for (Eigen::Index i = 0; i < pr; ++i) {
      for (Eigen::Index j = 0; j < pc; ++j) {
        yp[c](i, j) = y[c](reflect_index(static_cast<int>(i - p), static_cast<int>(rows)),
                           reflect_index(static_cast<int>(j - p), static_cast<int>(cols)));
      }
    }
  }

  Fft2 fft;
  const Regularizer reg = regularizer_spectra(pr, pc, fft);
  const Plane penalty = config.lambda1 * reg.first + config.lambda2 * reg.second;
  std::vector<Spectrum> d1, d2;
  for (const auto& f : first_derivatives()) d1.push_back(fft.forward(embed_centered(f, pr, pc)));
  for (const auto& f : second_derivatives()) d2.push_back(fft.forward(embed_centered(f, pr, pc)));
  std::array<Spectrum, 3> ys;
  for (int c = 0; c < 3; ++c) ys[c] = fft.forward(yp[c]);
  const Plane counts = box_sum(Plane::Ones(rows, cols), config.window);
  const auto crop = [&](const Plane& v) { return Plane(v.block(p, p, rows, cols)); };

  BaselineResult res;
  res.state.rgb = Rgb(rows, cols);
  res.state.depth = Plane::Zero(rows, cols);
  res.label.setZero(rows, cols);
  res.score = Plane::Constant(rows, cols, std::numeric_limits<double>::infinity());
  Plane r_min = res.score, r_max = Plane::Zero(rows, cols);

  for (std::size_t b = 0; b < bank.size(); ++b) {
    Plane score = Plane::Zero(rows, cols), residual = Plane::Zero(rows, cols);
    Rgb x(rows, cols);
    double log_det = 0.0;
    for (int c = 0; c < 3; ++c) {
      const Spectrum k = fft.forward(embed_centered(bank.kernels[b].kernels[c], pr, pc));
      const Plane k2 = k.cwiseAbs2();
      const Plane denom = k2 + penalty;
      if (denom.minCoeff() < 1e-12) {
        throw NumericalError("deconvolution is ill-conditioned: kernel spectrum vanishes and no regularization is set");
      }
      const Spectrum xs = (k.conjugate().cwiseProduct(ys[c])).cwiseQuotient(denom.cast<Complex>());
      x[c] = crop(fft.inverse(xs));
      const Plane r2 = crop((fft.inverse(k.cwiseProduct(xs)) - yp[c]).cwiseAbs2());
      Plane energy = r2;
      for (const auto& d : d1) energy += config.lambda1 * crop(fft.inverse(d.cwiseProduct(xs)).cwiseAbs2());
      for (const auto& d : d2) energy += config.lambda2 * crop(fft.inverse(d.cwiseProduct(xs)).cwiseAbs2());
      residual += box_sum(r2, config.window);
      const Plane mean_energy = box_sum(energy, config.window).cwiseQuotient(counts);
      score += (mean_energy.array() + config.energy_floor).log().matrix();
      for (Eigen::Index i = 0; i < k2.size(); ++i) {
        // DC carries no derivative penalty and is identical for every unit-sum kernel.
        if (penalty.data()[i] > 0.0) log_det += std::log1p(k2.data()[i] / penalty.data()[i]);
      }
    }
    score.array() += log_det / static_cast<double>(pr * pc);
    r_min = r_min.cwiseMin(residual);
    r_max = r_max.cwiseMax(residual);
    for (Eigen::Index i = 0; i < score.size(); ++i) {
      if (score.data()[i] < res.score.data()[i]) {
        res.score.data()[i] = score.data()[i];
        res.label.data()[i] = static_cast<int>(b);
        res.state.depth.data()[i] = bank.depths[b];
        for (int c = 0; c < 3; ++c) res.state.rgb[c].data()[i] = x[c].data()[i];
      }
    }
  }
  const Plane floor = 3.0 * config.residual_floor * counts;
  res.contrast = (r_max - r_min).cwiseQuotient(r_max + floor);
  res.low_confidence = (res.contrast.array() < config.confidence_threshold).cast<double>();
  for (int c = 0; c < 3; ++c) res.state.rgb[c] = res.state.rgb[c].cwiseMax(0.0).cwiseMin(1.0);
  return res;
}

}  // namespace dfd
