#include "dfd/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "binary_io.hpp"
#include "dfd/errors.hpp"

namespace dfd {

double depth_mae(const Plane& pred, const Plane& truth, int boundary_band) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) throw ParameterError("depth_mae: shape mismatch");
  if (boundary_band < 0) throw ParameterError("depth_mae: boundary band must be >= 0");
  const Eigen::Index rows = pred.rows() - 2 * boundary_band, cols = pred.cols() - 2 * boundary_band;
  if (rows < 1 || cols < 1) throw ParameterError("depth_mae: boundary band leaves no pixels");
  return (pred.block(boundary_band, boundary_band, rows, cols) - truth.block(boundary_band, boundary_band, rows, cols))
      .cwiseAbs()
      .mean();
}

double psnr(const Rgb& pred, const Rgb& truth) {
  if (!pred.sameShape(truth)) throw ParameterError("psnr: shape mismatch");
  if (pred.pixels() == 0) throw ParameterError("psnr: empty image");
  const double mse = (pred - truth).squaredNorm() / (3.0 * static_cast<double>(pred.pixels()));
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double EvalReport::mean_depth_mae() const {
  if (rows.empty()) throw ParameterError("empty evaluation report");
  double s = 0.0;
  for (const auto& r : rows) s += r.depth_mae;
  return s / static_cast<double>(rows.size());
}

double EvalReport::mean_psnr() const {
  if (rows.empty()) throw ParameterError("empty evaluation report");
  double s = 0.0;
  for (const auto& r : rows) s += r.psnr;
  return s / static_cast<double>(rows.size());
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  auto os = detail::open_out(path.string());
  os << "scene,method,sigma,seed,depth_mae,psnr\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%llu,%.17g,%.17g", r.sigma, static_cast<unsigned long long>(r.seed),
                  r.depth_mae, r.psnr);
    os << r.scene << "," << r.method << "," << buf << "\n";
  }
  if (!os) throw IoError("write failed: " + path.string());
}

std::string EvalReport::summary() const {
  std::ostringstream os;
  os.precision(6);
  os << "scenes " << rows.size() << "\nmean_depth_mae_m " << mean_depth_mae() << "\nmean_psnr_db " << mean_psnr()
     << "\n";
  return os.str();
}

}  // namespace dfd
