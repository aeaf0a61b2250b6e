#pragma once

#include <cstdint>

#include "dfd/forward_model.hpp"

namespace dfd {

enum class TextureKind { noise, checker, mixed };
std::string to_string(TextureKind kind);
TextureKind texture_kind_from_string(const std::string& s);

/// Desk-scale stand-in for rendered tabletop scenes: a sloped floor plane
/// with fronto-parallel textured rectangles in front of it.
struct SceneSpec {
  Eigen::Index rows = 64;
  Eigen::Index cols = 64;
  int n_objects = 3;
  double d_min = 2.0;
  double d_max = 4.0;
  TextureKind texture = TextureKind::mixed;
  bool floor = true;
  // Fraction of [d_min, d_max] the floor spans from top row to bottom row.
  double floor_slope_min = 0.3;
  double floor_slope_max = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

using InstanceMask = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Scene {
  RgbdState state;
  InstanceMask instance;  // 0 = floor/background, k = object k
};

/// Deterministic in `spec.seed`. Depth decreases linearly down the rows on
/// the floor; each object has a constant depth and wins where it is nearer.
Scene generate_scene(const SceneSpec& spec);

}  // namespace dfd
