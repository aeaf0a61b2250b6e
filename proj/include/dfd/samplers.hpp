#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "dfd/diffusion_schedule.hpp"
#include "dfd/forward_model.hpp"
#include "dfd/prior.hpp"

namespace dfd {

enum class StepMode {
  constant,    // step = value
  normalized,  // step = value / (||gradient|| + eps_stab)
};
std::string to_string(StepMode mode);
StepMode step_mode_from_string(const std::string& s);

struct SamplerConfig {
  int n_steps = 0;  // reverse steps N; 0 uses the whole schedule, N < T respaces evenly
  PosteriorVariant variant = PosteriorVariant::ddpm_posterior;
  std::uint64_t seed = 0;

  // x0-space step of the coded-defocus sampler.
  StepMode tau_mode = StepMode::normalized;
  double tau = 0.0;
  std::vector<double> tau_schedule;    // per reverse step t = 1..N (entry t-1); overrides `tau`
  std::vector<double> channel_weights; // per state channel multiplier on tau; empty = all 1
  int inner_grad_steps = 1;

  // Noisy-space step of DPS.
  StepMode zeta_mode = StepMode::normalized;  // normalized: zeta / ||A x0_hat - y||
  double zeta = 1.0;
  std::vector<double> zeta_schedule;

  double eps_stab = 1e-8;
  int snapshot_stride = 0;  // keep every k-th x0 snapshot; 0 keeps none

  void validate(int schedule_steps) const;
};

struct TrajectoryRecord {
  int step = 0;             // 0 = first reverse step
  int t = 0;                // diffusion step of the model call (original schedule)
  double fidelity = 0.0;    // ||A x0_hat - y||^2 before the data step
  double tau = 0.0;         // effective step size applied
  double x_t_rms = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;
  std::vector<int> snapshot_steps;
  std::vector<Eigen::VectorXd> x0_snapshots;
  std::vector<Eigen::VectorXd> x0_prime_snapshots;
};

struct SampleResult {
  Eigen::VectorXd x0;
  Trajectory trajectory;
};

/// Ancestral sampling x_{t-1} = c_xt x_t + c_x0 x0_hat + sigma_t z from x_T ~ N(0, I).
Eigen::VectorXd sample_ddpm(const ScoreModel& model, const NoiseSchedule& schedule, Eigen::Index dim,
                            const SamplerConfig& config);

/// DDIM over an increasing step subsequence ending anywhere in [1, T];
/// eta = 0 draws no noise after x_T.
Eigen::VectorXd sample_ddim(const ScoreModel& model, const NoiseSchedule& schedule, Eigen::Index dim, double eta,
                            const std::vector<int>& steps, std::uint64_t seed);

/// Reverse step followed by x_{t-1} -= zeta_t grad_{x_t} ||A x0_hat(x_t) - y||^2.
/// zeta == 0 reproduces sample_ddpm bit for bit.
SampleResult sample_dps(const ScoreModel& model, const NoiseSchedule& schedule, const MeasurementOperator& op,
                        const Eigen::VectorXd& y, Eigen::Index dim, const SamplerConfig& config);

/// x0_hat from the score, x0' = x0_hat - tau w * grad ||A x0 - y||^2 (inner
/// steps), then re-noise with the posterior coefficients.
/// tau == 0 reproduces sample_ddpm bit for bit.
SampleResult sample_dfd_dps(const ScoreModel& model, const NoiseSchedule& schedule, const MeasurementOperator& op,
                            const Eigen::VectorXd& y, Eigen::Index dim, const SamplerConfig& config);

// Coded-defocus front ends: decode the final state to physical units.
struct Reconstruction {
  RgbdState state;
  Trajectory trajectory;
};
Reconstruction reconstruct_dfd_dps(const ScoreModel& model, const NoiseSchedule& schedule, const Observation& y,
                                   const SamplerConfig& config);
Reconstruction reconstruct_dps(const ScoreModel& model, const NoiseSchedule& schedule, const Observation& y,
                               const SamplerConfig& config);

/// Writes <prefix>.csv (step,t,fidelity,tau) and <prefix>_x0_<step>.png RGB
/// snapshots when `rows`, `cols` are given. Throws ParameterError when empty.
void log_trajectory(const Trajectory& traj, const std::filesystem::path& prefix, Eigen::Index rows = 0,
                    Eigen::Index cols = 0);

}  // namespace dfd
