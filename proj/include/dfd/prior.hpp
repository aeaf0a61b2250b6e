#pragma once

#include <vector>

#include <Eigen/Core>

#include "dfd/diffusion_schedule.hpp"

namespace dfd {

/// Pluggable diffusion prior. Implementations provide either the noise
/// prediction or the score; the other follows from score = -eps / sqrt(1 - abar_t).
/// `t` is the 1-based step of `schedule`.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  virtual Eigen::VectorXd eps_predict(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule) const;
  virtual Eigen::VectorXd score(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule) const;

  /// Tweedie estimate x0_hat(x_t) = x0_from_eps(x_t, eps_predict(x_t, t)).
  Eigen::VectorXd denoise(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule) const;

  /// Vector-Jacobian product of denoise() with respect to x_t.
  /// Throws CapabilityError when supports_vjp() is false.
  virtual Eigen::VectorXd tweedie_vjp(const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd& cotangent,
                                      const NoiseSchedule& schedule) const;
  virtual bool supports_vjp() const { return false; }
};

/// Diagonal Gaussian N(mean, diag(variance)).
class GaussianPrior final : public ScoreModel {
 public:
  GaussianPrior(Eigen::VectorXd mean, Eigen::VectorXd variance);

  Eigen::VectorXd score(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule) const override;
  Eigen::VectorXd tweedie_vjp(const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd& cotangent,
                              const NoiseSchedule& schedule) const override;
  bool supports_vjp() const override { return true; }

  // Score of the t-marginal at a raw alpha_bar (allows the alpha_bar -> 0 limit).
  Eigen::VectorXd score_at(const Eigen::VectorXd& x_t, double alpha_bar) const;
  // Exact E[x0 | x_t].
  Eigen::VectorXd posterior_mean(const Eigen::VectorXd& x_t, double alpha_bar) const;

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& variance() const { return variance_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd variance_;
};

/// Mixture of diagonal Gaussians.
class GmmPrior final : public ScoreModel {
 public:
  GmmPrior(std::vector<double> weights, std::vector<Eigen::VectorXd> means, std::vector<Eigen::VectorXd> variances);

  Eigen::VectorXd score(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule) const override;
  Eigen::VectorXd tweedie_vjp(const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd& cotangent,
                              const NoiseSchedule& schedule) const override;
  bool supports_vjp() const override { return true; }

  Eigen::VectorXd score_at(const Eigen::VectorXd& x_t, double alpha_bar) const;
  double log_density_at(const Eigen::VectorXd& x_t, double alpha_bar) const;
  // Posterior component probabilities given x_t.
  Eigen::VectorXd responsibilities(const Eigen::VectorXd& x_t, double alpha_bar) const;

  std::size_t components() const { return weights_.size(); }
  const std::vector<Eigen::VectorXd>& means() const { return means_; }

 private:
  std::vector<double> weights_;
  std::vector<Eigen::VectorXd> means_;
  std::vector<Eigen::VectorXd> variances_;
};

/// Score of N(sqrt(abar) mu, abar sigma0^2 + 1 - abar) at x_t.
Eigen::VectorXd gaussian_score(const GaussianPrior& prior, const Eigen::VectorXd& x_t, int t,
                               const NoiseSchedule& schedule);
Eigen::VectorXd gmm_score(const GmmPrior& prior, const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule);

/// Exact linear-Gaussian posterior for y = A x + n, n ~ N(0, noise_var I),
/// with the Gaussian prior. noise_var may be 0 if A Sigma0 A^T is invertible.
struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};
GaussianPosterior gaussian_posterior_oracle(const GaussianPrior& prior, const Eigen::MatrixXd& linear_op,
                                            const Eigen::VectorXd& y, double noise_var);

Eigen::VectorXd tweedie_vjp(const ScoreModel& model, const Eigen::VectorXd& x_t, int t,
                            const Eigen::VectorXd& cotangent, const NoiseSchedule& schedule);

}  // namespace dfd
