#include "dfd/prior.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "dfd/errors.hpp"

namespace dfd {

Eigen::VectorXd ScoreModel::eps_predict(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule) const {
  return eps_from_score(score(x_t, t, schedule), schedule.alpha_bar(t));
}

Eigen::VectorXd ScoreModel::score(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule) const {
  return score_from_eps(eps_predict(x_t, t, schedule), schedule.alpha_bar(t));
}

Eigen::VectorXd ScoreModel::denoise(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule) const {
  return x0_from_score(x_t, t, score(x_t, t, schedule), schedule);
}

Eigen::VectorXd ScoreModel::tweedie_vjp(const Eigen::VectorXd&, int, const Eigen::VectorXd&,
                                        const NoiseSchedule&) const {
  throw CapabilityError("this score model does not support Tweedie VJPs");
}

Eigen::VectorXd tweedie_vjp(const ScoreModel& model, const Eigen::VectorXd& x_t, int t,
                            const Eigen::VectorXd& cotangent, const NoiseSchedule& schedule) {
  if (!model.supports_vjp()) throw CapabilityError("this score model does not support Tweedie VJPs");
  if (cotangent.size() != x_t.size()) throw ParameterError("tweedie_vjp: cotangent length mismatch");
  return model.tweedie_vjp(x_t, t, cotangent, schedule);
}

// ---------------------------------------------------------------------------

GaussianPrior::GaussianPrior(Eigen::VectorXd mean, Eigen::VectorXd variance)
    : mean_(std::move(mean)), variance_(std::move(variance)) {
  if (mean_.size() != variance_.size()) throw ParameterError("GaussianPrior: mean/variance length mismatch");
  if (!(variance_.array() > 0.0).all()) throw ParameterError("GaussianPrior: variances must be > 0");
}

Eigen::VectorXd GaussianPrior::score_at(const Eigen::VectorXd& x_t, double alpha_bar) const {
  if (x_t.size() != mean_.size()) throw ParameterError("GaussianPrior: state length mismatch");
  const Eigen::ArrayXd marginal_var = alpha_bar * variance_.array() + (1.0 - alpha_bar);
  return (-(x_t.array() - std::sqrt(alpha_bar) * mean_.array()) / marginal_var).matrix();
}

Eigen::VectorXd GaussianPrior::score(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule) const {
  return score_at(x_t, schedule.alpha_bar(t));
}

Eigen::VectorXd GaussianPrior::posterior_mean(const Eigen::VectorXd& x_t, double alpha_bar) const {
  // E[x0 | x_t] = (sqrt(abar) s0^2 x_t + (1 - abar) mu) / (abar s0^2 + 1 - abar)
  const Eigen::ArrayXd v = variance_.array();
  const Eigen::ArrayXd denom = alpha_bar * v + (1.0 - alpha_bar);
  return ((std::sqrt(alpha_bar) * v * x_t.array() + (1.0 - alpha_bar) * mean_.array()) / denom).matrix();
}

Eigen::VectorXd GaussianPrior::tweedie_vjp(const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd& cotangent,
                                           const NoiseSchedule& schedule) const {
  if (x_t.size() != mean_.size()) throw ParameterError("GaussianPrior: state length mismatch");
  const double ab = schedule.alpha_bar(t);
  const Eigen::ArrayXd marginal_var = ab * variance_.array() + (1.0 - ab);
  const Eigen::ArrayXd diag = (1.0 - (1.0 - ab) / marginal_var) / std::sqrt(ab);
  return (diag * cotangent.array()).matrix();
}

Eigen::VectorXd gaussian_score(const GaussianPrior& prior, const Eigen::VectorXd& x_t, int t,
                               const NoiseSchedule& schedule) {
  return prior.score(x_t, t, schedule);
}

// ---------------------------------------------------------------------------

GmmPrior::GmmPrior(std::vector<double> weights, std::vector<Eigen::VectorXd> means,
                   std::vector<Eigen::VectorXd> variances)
    : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
  if (weights_.empty() || weights_.size() != means_.size() || weights_.size() != variances_.size()) {
    throw ParameterError("GmmPrior: component lists must be nonempty and equally long");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    if (!(weights_[k] > 0.0)) throw ParameterError("GmmPrior: weights must be > 0");
    if (means_[k].size() != means_[0].size() || variances_[k].size() != means_[0].size()) {
      throw ParameterError("GmmPrior: component dimensions differ");
    }
    if (!(variances_[k].array() > 0.0).all()) throw ParameterError("GmmPrior: variances must be > 0");
    total += weights_[k];
  }
  if (std::abs(total - 1.0) > 1e-9) throw ParameterError("GmmPrior: weights must sum to 1");
}

namespace {

struct MixtureTerms {
  Eigen::VectorXd log_joint;  // log w_k + log N_k(x)
  std::vector<Eigen::ArrayXd> marginal_var;
};

MixtureTerms mixture_terms(const std::vector<double>& w, const std::vector<Eigen::VectorXd>& mu,
                           const std::vector<Eigen::VectorXd>& var, const Eigen::VectorXd& x, double ab) {
  MixtureTerms m;
  const std::size_t K = w.size();
  m.log_joint.resize(static_cast<Eigen::Index>(K));
  m.marginal_var.resize(K);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (std::size_t k = 0; k < K; ++k) {
    m.marginal_var[k] = ab * var[k].array() + (1.0 - ab);
    const Eigen::ArrayXd d = x.array() - std::sqrt(ab) * mu[k].array();
    m.log_joint[static_cast<Eigen::Index>(k)] =
        std::log(w[k]) - 0.5 * ((d * d / m.marginal_var[k]).sum() + (m.marginal_var[k].log() + log2pi).sum());
  }
  return m;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

}  // namespace

Eigen::VectorXd GmmPrior::responsibilities(const Eigen::VectorXd& x_t, double alpha_bar) const {
  if (x_t.size() != means_[0].size()) throw ParameterError("GmmPrior: state length mismatch");
  return softmax(mixture_terms(weights_, means_, variances_, x_t, alpha_bar).log_joint);
}

double GmmPrior::log_density_at(const Eigen::VectorXd& x_t, double alpha_bar) const {
  const Eigen::VectorXd lj = mixture_terms(weights_, means_, variances_, x_t, alpha_bar).log_joint;
  const double mx = lj.maxCoeff();
  return mx + std::log((lj.array() - mx).exp().sum());
}

Eigen::VectorXd GmmPrior::score_at(const Eigen::VectorXd& x_t, double alpha_bar) const {
  if (x_t.size() != means_[0].size()) throw ParameterError("GmmPrior: state length mismatch");
  const MixtureTerms m = mixture_terms(weights_, means_, variances_, x_t, alpha_bar);
  const Eigen::VectorXd r = softmax(m.log_joint);
  Eigen::VectorXd s = Eigen::VectorXd::Zero(x_t.size());
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    s.array() -= r[static_cast<Eigen::Index>(k)] * (x_t.array() - std::sqrt(alpha_bar) * means_[k].array()) /
                 m.marginal_var[k];
  }
  return s;
}

Eigen::VectorXd GmmPrior::score(const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule) const {
  return score_at(x_t, schedule.alpha_bar(t));
}

Eigen::VectorXd GmmPrior::tweedie_vjp(const Eigen::VectorXd& x_t, int t, const Eigen::VectorXd& cotangent,
                                      const NoiseSchedule& schedule) const {
  if (x_t.size() != means_[0].size()) throw ParameterError("GmmPrior: state length mismatch");
  const double ab = schedule.alpha_bar(t);
  const MixtureTerms m = mixture_terms(weights_, means_, variances_, x_t, ab);
  const Eigen::VectorXd r = softmax(m.log_joint);
  // Hessian of log p: sum_k r_k (-diag(1/v_k) + s_k s_k^T) - s s^T (symmetric).
  Eigen::VectorXd s = Eigen::VectorXd::Zero(x_t.size());
  Eigen::VectorXd hv = Eigen::VectorXd::Zero(x_t.size());
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    const double rk = r[static_cast<Eigen::Index>(k)];
    const Eigen::VectorXd sk =
        (-(x_t.array() - std::sqrt(ab) * means_[k].array()) / m.marginal_var[k]).matrix();
    s += rk * sk;
    hv.array() -= rk * cotangent.array() / m.marginal_var[k];
    hv += rk * sk.dot(cotangent) * sk;
  }
  hv -= s.dot(cotangent) * s;
  return (cotangent + (1.0 - ab) * hv) / std::sqrt(ab);
}

Eigen::VectorXd gmm_score(const GmmPrior& prior, const Eigen::VectorXd& x_t, int t, const NoiseSchedule& schedule) {
  return prior.score(x_t, t, schedule);
}

// ---------------------------------------------------------------------------

GaussianPosterior gaussian_posterior_oracle(const GaussianPrior& prior, const Eigen::MatrixXd& linear_op,
                                            const Eigen::VectorXd& y, double noise_var) {
  const Eigen::Index n = prior.mean().size();
  if (linear_op.cols() != n || linear_op.rows() != y.size()) {
    throw ParameterError("gaussian_posterior_oracle: operator shape mismatch");
  }
  if (n > 4096) throw ParameterError("gaussian_posterior_oracle: state too large for a dense solve");
  if (!(noise_var >= 0.0)) throw ParameterError("gaussian_posterior_oracle: noise variance must be >= 0");
  GaussianPosterior post;
  const Eigen::MatrixXd prior_cov = prior.variance().asDiagonal();
  if (std::isinf(noise_var)) {
    post.mean = prior.mean();
    post.covariance = prior_cov;
    return post;
  }
  // Innovation form: gain = S0 A^T (A S0 A^T + s^2 I)^{-1}.
  const Eigen::MatrixXd s0_at = prior.variance().asDiagonal() * linear_op.transpose();
  Eigen::MatrixXd innovation = linear_op * s0_at;
  innovation.diagonal().array() += noise_var;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(innovation);
  if (!lu.isInvertible()) throw NumericalError("gaussian_posterior_oracle: singular innovation covariance");
  const Eigen::MatrixXd gain = lu.solve(s0_at.transpose()).transpose();
  post.mean = prior.mean() + gain * (y - linear_op * prior.mean());
  post.covariance = prior_cov - gain * s0_at.transpose();
  return post;
}

}  // namespace dfd
