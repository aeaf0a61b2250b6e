#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dfd/errors.hpp"

namespace dfd {

enum class ScheduleKind { linear, cosine };
enum class PosteriorVariant { as_written, ddpm_posterior };

std::string to_string(ScheduleKind kind);
std::string to_string(PosteriorVariant variant);
ScheduleKind schedule_kind_from_string(const std::string& s);
PosteriorVariant posterior_variant_from_string(const std::string& s);

/// Tables for a discrete variance-preserving diffusion with steps t = 1..T.
///
/// Vectors are stored 0-based (entry t-1 holds step t). alpha_bar(0) is the
/// clean-data convention value 1. Immutable after construction.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::linear;
  int n_steps = 0;
  double beta_min = 0.0;
  double beta_max = 0.0;
  Eigen::VectorXd betas;
  Eigen::VectorXd alphas;
  Eigen::VectorXd alpha_bars;
  Eigen::VectorXd sigmas_tilde;

  double beta(int t) const { return betas[check(t) - 1]; }
  double alpha(int t) const { return alphas[check(t) - 1]; }
  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars[check(t) - 1];
  }
  double sigma_tilde(int t) const { return sigmas_tilde[check(t) - 1]; }

  int check(int t) const {
    if (t < 1 || t > n_steps) {
      throw ParameterError("diffusion step " + std::to_string(t) + " outside [1, " +
                           std::to_string(n_steps) + "]");
    }
    return t;
  }
};

/// Builds beta/alpha/alpha_bar tables and the default reverse-noise scale
/// sigma_tilde_t = sqrt((1 - abar_{t-1}) / (1 - abar_t) * beta_t), zero at t = 1.
/// For the cosine kind, betas come from the squared-cosine alpha_bar curve and
/// are clipped into [beta_min, beta_max].
NoiseSchedule build_schedule(ScheduleKind kind, int n_steps, double beta_min, double beta_max);

/// Schedule defaults used throughout the tools: linear, T = 200, with the
/// standard 1000-step endpoints stretched by 1000 / T so alpha_bar_T ~ 0.
NoiseSchedule default_schedule(int n_steps = 200);

/// Sub-sampled view of a schedule at the given increasing steps (1-based,
/// last entry need not be T). The result is itself a valid schedule whose
/// step k corresponds to original step `steps[k-1]`.
struct RespacedSchedule {
  NoiseSchedule schedule;
  std::vector<int> original_steps;
};
RespacedSchedule respace(const NoiseSchedule& base, const std::vector<int>& steps);
std::vector<int> evenly_spaced_steps(int n_total, int n_used);

// Closed-form marginal q(x_t | x_0).
template <typename DerivedX, typename DerivedE>
typename DerivedX::PlainObject forward_marginal_sample(const Eigen::MatrixBase<DerivedX>& x0,
                                                       double alpha_bar,
                                                       const Eigen::MatrixBase<DerivedE>& eps) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
    throw ParameterError("forward_marginal_sample: eps shape does not match x0");
  }
  return std::sqrt(alpha_bar) * x0 + std::sqrt(1.0 - alpha_bar) * eps;
}

template <typename DerivedX, typename DerivedE>
typename DerivedX::PlainObject forward_marginal_sample(const Eigen::MatrixBase<DerivedX>& x0, int t,
                                                       const Eigen::MatrixBase<DerivedE>& eps,
                                                       const NoiseSchedule& schedule) {
  return forward_marginal_sample(x0, schedule.alpha_bar(t), eps);
}

inline void require_nonsingular(double alpha_bar) {
  if (!(alpha_bar > 0.0)) throw SingularityError("alpha_bar must be > 0 to estimate x0");
}

// x0 estimate from predicted noise.
template <typename DerivedX, typename DerivedE>
typename DerivedX::PlainObject x0_from_eps(const Eigen::MatrixBase<DerivedX>& x_t, double alpha_bar,
                                           const Eigen::MatrixBase<DerivedE>& eps_hat) {
  require_nonsingular(alpha_bar);
  return (x_t - std::sqrt(1.0 - alpha_bar) * eps_hat) / std::sqrt(alpha_bar);
}

template <typename DerivedX, typename DerivedE>
typename DerivedX::PlainObject x0_from_eps(const Eigen::MatrixBase<DerivedX>& x_t, int t,
                                           const Eigen::MatrixBase<DerivedE>& eps_hat,
                                           const NoiseSchedule& schedule) {
  return x0_from_eps(x_t, schedule.alpha_bar(t), eps_hat);
}

// Tweedie posterior mean from a score estimate.
template <typename DerivedX, typename DerivedS>
typename DerivedX::PlainObject x0_from_score(const Eigen::MatrixBase<DerivedX>& x_t, double alpha_bar,
                                             const Eigen::MatrixBase<DerivedS>& score) {
  require_nonsingular(alpha_bar);
  return (x_t + (1.0 - alpha_bar) * score) / std::sqrt(alpha_bar);
}

template <typename DerivedX, typename DerivedS>
typename DerivedX::PlainObject x0_from_score(const Eigen::MatrixBase<DerivedX>& x_t, int t,
                                             const Eigen::MatrixBase<DerivedS>& score,
                                             const NoiseSchedule& schedule) {
  return x0_from_score(x_t, schedule.alpha_bar(t), score);
}

// score = -eps / sqrt(1 - alpha_bar) and its inverse.
template <typename Derived>
typename Derived::PlainObject score_from_eps(const Eigen::MatrixBase<Derived>& eps, double alpha_bar) {
  return -eps / std::sqrt(1.0 - alpha_bar);
}
template <typename Derived>
typename Derived::PlainObject eps_from_score(const Eigen::MatrixBase<Derived>& score, double alpha_bar) {
  return -std::sqrt(1.0 - alpha_bar) * score;
}

struct StepCoefficients {
  double c_xt = 0.0;
  double c_x0 = 0.0;
  double sigma = 0.0;
};

/// Coefficients of x_{t-1} = c_xt x_t + c_x0 x0' + sigma z.
/// `as_written` uses sqrt(abar_t) on the x_t term, `ddpm_posterior` uses
/// sqrt(alpha_t), which is the mean of q(x_{t-1} | x_t, x_0).
StepCoefficients posterior_step_coefficients(int t, const NoiseSchedule& schedule,
                                             PosteriorVariant variant = PosteriorVariant::ddpm_posterior);

// Structured text (JSON) description: kind, n_steps, beta_min, beta_max.
std::string schedule_to_json(const NoiseSchedule& schedule);
NoiseSchedule schedule_from_json(const std::string& text);

// Flat little-endian table: "DFDSCHD1", uint32 T, then float64 columns
// beta[T], alpha[T], alpha_bar[T], sigma_tilde[T].
void write_schedule_table(const NoiseSchedule& schedule, const std::filesystem::path& path);
NoiseSchedule read_schedule_table(const std::filesystem::path& path);

}  // namespace dfd
