#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfd/types.hpp"

namespace dfd {

/// Mean |pred - truth| in meters. `boundary_band` > 0 skips that many pixels
/// along every image border.
double depth_mae(const Plane& pred, const Plane& truth, int boundary_band = 0);

/// 10 log10(1 / MSE) over all three channels jointly, peak 1. Identical
/// inputs give +infinity.
double psnr(const Rgb& pred, const Rgb& truth);

struct EvalRow {
  std::string scene;
  std::string method;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  double depth_mae = 0.0;
  double psnr = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  double mean_depth_mae() const;
  double mean_psnr() const;  // +inf if any row is +inf
  void write_csv(const std::filesystem::path& path) const;
  std::string summary() const;
};

}  // namespace dfd
