#include "dfd/scene.hpp"

#include <cmath>
#include <random>

#include "dfd/errors.hpp"

namespace dfd {

std::string to_string(TextureKind kind) {
  switch (kind) {
    case TextureKind::noise: return "noise";
    case TextureKind::checker: return "checker";
    case TextureKind::mixed: return "mixed";
  }
  return "?";
}

TextureKind texture_kind_from_string(const std::string& s) {
  if (s == "noise") return TextureKind::noise;
  if (s == "checker") return TextureKind::checker;
  if (s == "mixed") return TextureKind::mixed;
  throw ParameterError("unknown texture '" + s + "' (expected noise, checker or mixed)");
}

void SceneSpec::validate() const {
  if (rows < 4 || cols < 4) throw ParameterError("scene must be at least 4 x 4");
  if (n_objects < 0) throw ParameterError("n_objects must be >= 0");
  if (!(d_min > 0.0) || !(d_max > d_min)) throw ParameterError("scene depth range must satisfy 0 < d_min < d_max");
  if (!(floor_slope_min >= 0.0) || !(floor_slope_max >= floor_slope_min) || floor_slope_max > 1.0) {
    throw ParameterError("floor slope range must satisfy 0 <= min <= max <= 1");
  }
  if (n_objects == 0 && !floor) throw ParameterError("degenerate scene: no objects and no floor");
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

std::array<double, 3> color(Rng& rng) { return {uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9)}; }

// Smooth value noise in [0, 1]: two octaves of bilinearly interpolated lattices.
Plane value_noise(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Plane out = Plane::Zero(rows, cols);
  double cell = uniform(rng, 3.0, 8.0), weight = 0.65;
  for (int octave = 0; octave < 2; ++octave) {
    const auto gr = static_cast<Eigen::Index>(rows / cell) + 2, gc = static_cast<Eigen::Index>(cols / cell) + 2;
    Plane lattice(gr, gc);
    for (Eigen::Index i = 0; i < lattice.size(); ++i) lattice.data()[i] = uniform(rng, 0.0, 1.0);
    for (Eigen::Index y = 0; y < rows; ++y) {
      const double fy = y / cell;
      const auto y0 = static_cast<Eigen::Index>(fy);
      const double ty = fy - y0;
      for (Eigen::Index x = 0; x < cols; ++x) {
        const double fx = x / cell;
        const auto x0 = static_cast<Eigen::Index>(fx);
        const double tx = fx - x0;
        const double v = (1 - ty) * ((1 - tx) * lattice(y0, x0) + tx * lattice(y0, x0 + 1)) +
                         ty * ((1 - tx) * lattice(y0 + 1, x0) + tx * lattice(y0 + 1, x0 + 1));
        out(y, x) += weight * v;
      }
    }
    cell = std::max(1.5, cell / 2.5);
    weight = 1.0 - weight;
  }
  return out;
}

Plane checker(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  const int period = std::uniform_int_distribution<int>(2, 6)(rng);
  const int oy = std::uniform_int_distribution<int>(0, period - 1)(rng), ox = std::uniform_int_distribution<int>(0, period - 1)(rng);
  Plane out(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) out(y, x) = (((y + oy) / period + (x + ox) / period) % 2) ? 1.0 : 0.0;
  }
  return out;
}

// Full-frame texture for one surface.
Rgb texture(Rng& rng, TextureKind kind, Eigen::Index rows, Eigen::Index cols) {
  if (kind == TextureKind::mixed) kind = uniform(rng, 0.0, 1.0) < 0.5 ? TextureKind::noise : TextureKind::checker;
  const auto a = color(rng), b = color(rng);
  const Plane m = kind == TextureKind::noise ? value_noise(rng, rows, cols) : checker(rng, rows, cols);
  Rgb out(rows, cols);
  for (int c = 0; c < 3; ++c) out[c] = (a[c] + (b[c] - a[c]) * m.array()).matrix();
  return out;
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Eigen::Index rows = spec.rows, cols = spec.cols;
  const double range = spec.d_max - spec.d_min;
  Scene s;
  s.state.rgb = Rgb(rows, cols);
  s.state.depth = Plane(rows, cols);
  s.instance = InstanceMask::Zero(rows, cols);

  // Floor (or a flat far backdrop): top row far, bottom row near.
  const double span = spec.floor ? uniform(rng, spec.floor_slope_min, spec.floor_slope_max) * range : 0.0;
  const double top = spec.floor ? spec.d_max - uniform(rng, 0.0, range - span) : spec.d_max;
  for (Eigen::Index y = 0; y < rows; ++y) {
    const double d = top - span * static_cast<double>(y) / static_cast<double>(rows - 1);
    s.state.depth.row(y).setConstant(std::clamp(d, spec.d_min, spec.d_max));
  }
  s.state.rgb = texture(rng, spec.texture, rows, cols);

  for (int k = 1; k <= spec.n_objects; ++k) {
    const auto h = std::uniform_int_distribution<Eigen::Index>(std::max<Eigen::Index>(2, rows / 6), std::max<Eigen::Index>(2, rows / 3))(rng);
    const auto w = std::uniform_int_distribution<Eigen::Index>(std::max<Eigen::Index>(2, cols / 6), std::max<Eigen::Index>(2, cols / 3))(rng);
    const auto y0 = std::uniform_int_distribution<Eigen::Index>(0, rows - h)(rng);
    const auto x0 = std::uniform_int_distribution<Eigen::Index>(0, cols - w)(rng);
    const double d = uniform(rng, spec.d_min, spec.d_max);
    const Rgb tex = texture(rng, spec.texture, rows, cols);
    for (Eigen::Index y = y0; y < y0 + h; ++y) {
      for (Eigen::Index x = x0; x < x0 + w; ++x) {
        if (d >= s.state.depth(y, x)) continue;
        s.state.depth(y, x) = d;
        s.instance(y, x) = k;
        for (int c = 0; c < 3; ++c) s.state.rgb[c](y, x) = tex[c](y, x);
      }
    }
  }
  return s;
}

}  // namespace dfd
