#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "dfd/prior.hpp"

namespace dfd {

struct DenoiserArch {
  int width = 24;          // hidden channels
  int time_features = 16;  // sinusoidal features (even)
  double data_variance = 0.25;

  void validate() const;
};

/// Small convolutional eps-prediction network on 4-channel images:
///
///   h1 = silu(conv3x3(c_in(t) x) + b1 + T1 e(t))
///   h2 = silu(conv3x3(h1) + b2 + T2 e(t))
///   eps = conv3x3(h2) + b3 + g(t) * x,   g(t) = G [e(t); 1]
///
/// with zero padding and c_in(t) = 1 / sqrt(abar_t v_data + 1 - abar_t). The
/// output layer and g start at zero, so an untrained model predicts eps = 0.
/// Any image size works; the state is channel-planar [R, G, B, D].
class TinyDenoiser final : public ScoreModel {
 public:
  TinyDenoiser() = default;
  TinyDenoiser(const DenoiserArch& arch, std::uint64_t seed);

  Eigen::VectorXd eps_predict(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule) const override;
  Eigen::VectorXd tweedie_vjp(const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd& cotangent,
                              const NoiseSchedule& schedule) const override;
  bool supports_vjp() const override { return true; }

  /// Spatial shape used to interpret flat states; square when unset.
  void set_image_shape(Eigen::Index rows, Eigen::Index cols);

  /// eps prediction plus, when `d_out` is given, the parameter gradient of
  /// <d_out, eps> accumulated into `param_grad` and the input VJP into `input_grad`.
  Eigen::VectorXd forward_backward(const Eigen::VectorXd& x_t, Eigen::Index rows, Eigen::Index cols, int t,
                                   const NoiseSchedule& schedule, const Eigen::VectorXd* d_out,
                                   Eigen::VectorXd* param_grad, Eigen::VectorXd* input_grad) const;

  const DenoiserArch& arch() const { return arch_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& parameters() { return params_; }
  Eigen::Index parameter_count() const { return params_.size(); }

 private:
  struct Layout;
  Layout layout() const;
  std::pair<Eigen::Index, Eigen::Index> shape_for(Eigen::Index size) const;

  DenoiserArch arch_;
  Eigen::VectorXd params_;
  Eigen::Index rows_ = 0, cols_ = 0;
};

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double learning_rate = 2e-3;
  double momentum = 0.9;
  double grad_clip = 1.0;  // on the global gradient norm; <= 0 disables
  std::uint64_t seed = 0;

  void validate() const;
};

/// Training state: enough to resume bit-identically.
struct TrainState {
  TinyDenoiser model;
  Eigen::VectorXd velocity;
  int step = 0;
  std::uint64_t seed = 0;
  std::vector<double> loss_curve;  // per-step batch-mean loss
};

/// A set of equally shaped, normalized 4-channel patches.
struct PatchSet {
  Eigen::Index rows = 16;
  Eigen::Index cols = 16;
  std::vector<Eigen::VectorXd> patches;
};

/// `per_state` random size x size crops of every channel-planar state of
/// shape rows x cols. Crop positions depend only on `seed`.
PatchSet random_crops(const std::vector<Eigen::VectorXd>& states, Eigen::Index rows, Eigen::Index cols, int size,
                      int per_state, std::uint64_t seed);

TrainState init_training(const DenoiserArch& arch, const TrainConfig& config);

/// Runs optimizer steps [state.step, until_step). Mini-batch draws depend only
/// on (seed, step), so splitting a run across calls is bit-identical to one call.
void continue_training(TrainState& state, const PatchSet& data, const NoiseSchedule& schedule,
                       const TrainConfig& config, int until_step);

/// Stochastic minimization of E ||eps_theta(x_t, t) - eps||^2.
/// Throws TrainingError if the batch loss exceeds 10x its initial value.
TrainState train_denoiser(const PatchSet& data, const NoiseSchedule& schedule, const TrainConfig& config,
                          const DenoiserArch& arch = {});

/// Mean eps-loss of `model` over fixed draws (seeded), for diagnostics.
double evaluate_eps_loss(const TinyDenoiser& model, const PatchSet& data, const NoiseSchedule& schedule,
                         int draws, std::uint64_t seed);

// Checkpoint: "DFDNET1\n", one JSON header line, then float64 payload
// (parameters, then optimizer velocity).
void save_checkpoint(const TrainState& state, const NoiseSchedule& schedule, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path, NoiseSchedule* schedule_out = nullptr);

}  // namespace dfd
