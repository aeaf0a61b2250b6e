#pragma once

#include <filesystem>
#include <vector>

#include "dfd/types.hpp"

namespace dfd::cli {

/// Gray depth image: near is bright, far is dark, clamped to [d_min, d_max].
Rgb depth_to_rgb(const Plane& depth, double d_min, double d_max);

/// Panels laid out row by row on a white canvas with 2 px gutters.
/// Panels may differ in size; each cell takes the largest panel's size, and
/// panels below 128 px are enlarged by an integer factor.
Rgb tile(const std::vector<Rgb>& panels, int per_row);

/// Line plot of y against x with a frame and, for log_y, a grid line per
/// decade. Non-finite and (for log_y) non-positive points are skipped.
void plot_series(const std::filesystem::path& path, const std::vector<double>& x, const std::vector<double>& y,
                 bool log_y);

}  // namespace dfd::cli
