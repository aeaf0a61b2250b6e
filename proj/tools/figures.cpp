#include "figures.hpp"

#include <algorithm>
#include <cmath>

#include "dfd/errors.hpp"
#include "dfd/io.hpp"

namespace dfd::cli {

Rgb depth_to_rgb(const Plane& depth, double d_min, double d_max) {
  Rgb out(depth.rows(), depth.cols());
  const Plane g = ((d_max - depth.array()) / (d_max - d_min)).cwiseMax(0.0).cwiseMin(1.0).matrix();
  for (auto& c : out.ch) c = g;
  return out;
}

Rgb tile(const std::vector<Rgb>& panels, int per_row) {
  if (panels.empty() || per_row < 1) throw ParameterError("tile: nothing to lay out");
  Eigen::Index h = 0, w = 0;
  for (const auto& p : panels) {
    h = std::max(h, p.rows());
    w = std::max(w, p.cols());
  }
  // nearest-neighbour upscale so small scenes stay legible
  const int f = static_cast<int>(std::max<Eigen::Index>(1, 128 / std::max(h, w)));
  h *= f;
  w *= f;
  const int gap = 2;
  const int n_rows = (static_cast<int>(panels.size()) + per_row - 1) / per_row;
  const int n_cols = std::min<int>(per_row, static_cast<int>(panels.size()));
  Rgb canvas = Rgb::Constant(n_rows * h + (n_rows + 1) * gap, n_cols * w + (n_cols + 1) * gap, 1.0);
  for (std::size_t k = 0; k < panels.size(); ++k) {
    const Eigen::Index y0 = gap + (k / per_row) * (h + gap);
    const Eigen::Index x0 = gap + (k % per_row) * (w + gap);
    for (int c = 0; c < 3; ++c) {
      for (Eigen::Index r = 0; r < panels[k].rows() * f; ++r) {
        for (Eigen::Index q = 0; q < panels[k].cols() * f; ++q) canvas[c](y0 + r, x0 + q) = panels[k][c](r / f, q / f);
      }
    }
  }
  return canvas;
}

namespace {

void put(Rgb& img, long y, long x, double r, double g, double b) {
  if (y < 0 || x < 0 || y >= img.rows() || x >= img.cols()) return;
  img[0](y, x) = r;
  img[1](y, x) = g;
  img[2](y, x) = b;
}

void line(Rgb& img, double y0, double x0, double y1, double x1, double r, double g, double b) {
  const int n = static_cast<int>(std::ceil(std::max(std::abs(y1 - y0), std::abs(x1 - x0)))) + 1;
  for (int i = 0; i <= n; ++i) {
    const double s = static_cast<double>(i) / n;
    put(img, std::lround(y0 + s * (y1 - y0)), std::lround(x0 + s * (x1 - x0)), r, g, b);
  }
}

}  // namespace

void plot_series(const std::filesystem::path& path, const std::vector<double>& x, const std::vector<double>& y,
                 bool log_y) {
  if (x.size() != y.size()) throw ParameterError("plot_series: x and y differ in length");
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i]) || (log_y && y[i] <= 0.0)) continue;
    pts.emplace_back(x[i], log_y ? std::log10(y[i]) : y[i]);
  }
  const long H = 240, W = 400, m = 20;
  Rgb img = Rgb::Constant(H, W, 1.0);
  double x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  if (!pts.empty()) {
    x_lo = x_hi = pts[0].first;
    y_lo = y_hi = pts[0].second;
    for (const auto& [px, py] : pts) {
      x_lo = std::min(x_lo, px), x_hi = std::max(x_hi, px);
      y_lo = std::min(y_lo, py), y_hi = std::max(y_hi, py);
    }
    if (log_y) y_lo = std::floor(y_lo), y_hi = std::ceil(y_hi);
    if (x_hi == x_lo) x_hi = x_lo + 1;
    if (y_hi == y_lo) y_hi = y_lo + 1;
  }
  auto X = [&](double v) { return m + (v - x_lo) / (x_hi - x_lo) * (W - 2 * m - 1); };
  auto Y = [&](double v) { return H - m - 1 - (v - y_lo) / (y_hi - y_lo) * (H - 2 * m - 1); };
  if (log_y) {
    for (double d = y_lo; d <= y_hi; d += 1.0) line(img, Y(d), m, Y(d), W - m - 1, 0.85, 0.85, 0.85);
  }
  line(img, m, m, H - m - 1, m, 0, 0, 0);
  line(img, H - m - 1, m, H - m - 1, W - m - 1, 0, 0, 0);
  line(img, m, m, m, W - m - 1, 0, 0, 0);
  line(img, m, W - m - 1, H - m - 1, W - m - 1, 0, 0, 0);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    line(img, Y(pts[i - 1].second), X(pts[i - 1].first), Y(pts[i].second), X(pts[i].first), 0.1, 0.3, 0.8);
  }
  if (pts.size() == 1) put(img, std::lround(Y(pts[0].second)), std::lround(X(pts[0].first)), 0.1, 0.3, 0.8);
  write_png(path, img);
}

}  // namespace dfd::cli
