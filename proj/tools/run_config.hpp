#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfd/baseline.hpp"
#include "dfd/diffusion_schedule.hpp"
#include "dfd/optics.hpp"
#include "dfd/samplers.hpp"
#include "dfd/scene.hpp"
#include "dfd/tiny_denoiser.hpp"

namespace dfd::cli {

enum class Method { dfd_dps, dps, ddpm_prior_only, baseline };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::linear;
  int steps = 200;
  double beta_min = 0.0;  // 0: the default for `steps`
  double beta_max = 0.0;

  NoiseSchedule build() const;
};

struct PriorSpec {
  std::string kind = "checkpoint";  // checkpoint | gaussian
  std::string checkpoint;
  std::array<double, 4> mean{0.0, 0.0, 0.0, 0.0};  // per state channel, normalized units
  std::array<double, 4> variance{0.25, 0.25, 0.25, 0.25};
};

struct PsfSpec {
  std::string file;  // empty: synthetic coded pattern of `size`
  int size = 9;
  double scale = 1.0;
  bool flip = false;
  std::string pinhole;
  std::string background;
  CalibrationOptions calibration;
};

struct EvalSpec {
  std::string truth;
  std::vector<std::string> runs;
  int boundary_band = 0;
};

struct TrainSpec {
  TrainConfig config;
  DenoiserArch arch;
  int patch = 16;
  int crops_per_scene = 8;
  std::string resume;
};

/// Everything a command may need, fully validated by parse_config.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "dfd_out";
  std::string input;
  double sigma = 0.01;
  Method method = Method::dfd_dps;
  int n_scenes = 4;

  CameraParams camera;
  PsfSpec psf;
  ScheduleSpec schedule;
  SceneSpec scene;
  SamplerConfig sampler;
  PriorSpec prior;
  BaselineConfig baseline;
  EvalSpec eval;
  TrainSpec train;

  nlohmann::json to_json() const;
};

/// Flag values that override the file; unset optionals leave it alone.
struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> sigma;
  std::optional<std::string> method;
  std::optional<std::string> out;
  std::optional<int> steps;
  std::optional<double> tau;
  std::optional<std::string> variant;
  std::optional<std::string> input;
  nlohmann::json patch = nlohmann::json::object();  // merged last (RFC 7386)
};

/// `steps_target` selects what --steps overrides: reverse steps or training steps.
enum class StepsTarget { sampler, training };

/// Reads the optional JSON file, applies flags and validates every field.
/// Unknown keys and out-of-range values throw ParameterError.
RunConfig load_config(const Overrides& o, StepsTarget steps_target);
RunConfig parse_config(const nlohmann::json& j);

}  // namespace dfd::cli
