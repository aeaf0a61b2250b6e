#include <doctest.h>

#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "dfd/errors.hpp"
#include "dfd/prior.hpp"
#include "oracles.hpp"

using namespace dfd;

namespace {

Eigen::VectorXd positive(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

GmmPrior random_gmm(std::mt19937_64& rng, Eigen::Index dim, int k) {
  std::vector<double> w;
  std::vector<Eigen::VectorXd> mu, var;
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    w.push_back(positive(rng, 1, 0.2, 1.0)[0]);
    total += w.back();
    mu.push_back(oracle::random_vector(rng, dim, 1.5));
    var.push_back(positive(rng, dim, 0.05, 0.6));
  }
  for (auto& x : w) x /= total;
  return GmmPrior(w, mu, var);
}

// Only eps_predict; no VJP.
class ZeroEps final : public ScoreModel {
 public:
  Eigen::VectorXd eps_predict(const Eigen::VectorXd& x, int, const NoiseSchedule&) const override {
    return Eigen::VectorXd::Zero(x.size());
  }
};

// Jacobian of denoise by central differences, column by column.
Eigen::MatrixXd fd_jacobian(const ScoreModel& m, const Eigen::VectorXd& x, int t, const NoiseSchedule& s, double h) {
  Eigen::MatrixXd j(x.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd p = x, q = x;
    p[i] += h;
    q[i] -= h;
    j.col(i) = (m.denoise(p, t, s) - m.denoise(q, t, s)) / (2 * h);
  }
  return j;
}

}  // namespace

TEST_CASE("gaussian score closed form and limits") {
  std::mt19937_64 rng(1);
  const Eigen::VectorXd mu = oracle::random_vector(rng, 6), var = positive(rng, 6, 0.1, 2.0);
  const GaussianPrior g(mu, var);
  const Eigen::VectorXd x = oracle::random_vector(rng, 6);
  CHECK((g.score_at(x, 1.0) - Eigen::VectorXd(-(x - mu).array() / var.array())).norm() < 1e-14);
  CHECK((g.score_at(x, 0.0) + x).norm() < 1e-14);
  const double ab = 0.3;
  for (int i = 0; i < 6; ++i) {
    const double v = ab * var[i] + 1 - ab;
    CHECK(g.score_at(x, ab)[i] == doctest::Approx(-(x[i] - std::sqrt(ab) * mu[i]) / v).epsilon(1e-14));
  }
  CHECK_THROWS_AS(GaussianPrior(mu, -var), ParameterError);
  CHECK_THROWS_AS(g.score_at(Eigen::VectorXd::Zero(5), 0.5), ParameterError);
}

TEST_CASE("gmm score is the gradient of the log density") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const GmmPrior p = random_gmm(rng, 5, 1 + trial % 4);
    const double ab = positive(rng, 1, 0.01, 0.99)[0];
    const Eigen::VectorXd x = oracle::random_vector(rng, 5, 1.5);
    const Eigen::VectorXd s = p.score_at(x, ab);
    for (int i = 0; i < 5; ++i) {
      const double h = 1e-5;
      Eigen::VectorXd a = x, b = x;
      a[i] += h;
      b[i] -= h;
      const double fd = (p.log_density_at(a, ab) - p.log_density_at(b, ab)) / (2 * h);
      REQUIRE(std::abs(s[i] - fd) < 1e-6 * std::max(1.0, std::abs(fd)));
    }
    REQUIRE(std::abs(p.responsibilities(x, ab).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("one-component gmm equals the gaussian") {
  std::mt19937_64 rng(3);
  const Eigen::VectorXd mu = oracle::random_vector(rng, 4), var = positive(rng, 4, 0.1, 1.0);
  const GaussianPrior g(mu, var);
  const GmmPrior m({1.0}, {mu}, {var});
  const NoiseSchedule s = default_schedule(50);
  const Eigen::VectorXd x = oracle::random_vector(rng, 4);
  for (int t : {1, 25, 50}) {
    CHECK((g.score(x, t, s) - m.score(x, t, s)).norm() < 1e-12);
    CHECK((g.eps_predict(x, t, s) - m.eps_predict(x, t, s)).norm() < 1e-12);
  }
}

TEST_CASE("tweedie denoiser equals the exact posterior mean") {
  std::mt19937_64 rng(4);
  const NoiseSchedule s = default_schedule(200);
  const Eigen::VectorXd mu = oracle::random_vector(rng, 7), var = positive(rng, 7, 0.05, 1.0);
  const GaussianPrior g(mu, var);
  for (int t : {1, 10, 100, 200}) {
    const Eigen::VectorXd x = oracle::random_vector(rng, 7);
    const double ab = s.alpha_bar(t);
    // Scalar Bayes rule per coordinate.
    Eigen::VectorXd ref(7);
    for (int i = 0; i < 7; ++i) {
      const double prec = 1.0 / var[i] + ab / (1 - ab);
      ref[i] = (mu[i] / var[i] + std::sqrt(ab) * x[i] / (1 - ab)) / prec;
    }
    CHECK((g.denoise(x, t, s) - ref).norm() < 1e-9 * std::max(1.0, ref.norm()));
    CHECK((g.posterior_mean(x, ab) - ref).norm() < 1e-9 * std::max(1.0, ref.norm()));
  }
}

TEST_CASE("gmm tweedie denoiser equals the mixture posterior mean") {
  // E[x0 | x_t] = sum_k r_k(x_t) E_k[x0 | x_t], with r_k from an independent
  // evaluation of w_k N(x_t; sqrt(abar) mu_k, abar v_k + 1 - abar).
  std::mt19937_64 rng(5);
  const NoiseSchedule s = default_schedule(200);
  const std::vector<double> w = {0.2, 0.5, 0.3};
  std::vector<Eigen::VectorXd> mu, var;
  for (int k = 0; k < 3; ++k) {
    mu.push_back(oracle::random_vector(rng, 3, 1.5));
    var.push_back(positive(rng, 3, 0.05, 0.5));
  }
  const GmmPrior p(w, mu, var);
  for (int t : {5, 60, 180}) {
    const double ab = s.alpha_bar(t);
    const Eigen::VectorXd x = oracle::random_vector(rng, 3);
    std::vector<double> lik(3);
    double z = 0.0;
    for (int k = 0; k < 3; ++k) {
      double l = w[k];
      for (int i = 0; i < 3; ++i) {
        const double v = ab * var[k][i] + 1 - ab, d = x[i] - std::sqrt(ab) * mu[k][i];
        l *= std::exp(-0.5 * d * d / v) / std::sqrt(2 * std::numbers::pi * v);
      }
      lik[k] = l;
      z += l;
    }
    Eigen::VectorXd ref = Eigen::VectorXd::Zero(3);
    for (int k = 0; k < 3; ++k) {
      for (int i = 0; i < 3; ++i) {
        const double prec = 1.0 / var[k][i] + ab / (1 - ab);
        ref[i] += lik[k] / z * (mu[k][i] / var[k][i] + std::sqrt(ab) * x[i] / (1 - ab)) / prec;
      }
    }
    CHECK((p.denoise(x, t, s) - ref).norm() < 1e-8 * std::max(1.0, ref.norm()));
  }
}

TEST_CASE("tweedie_vjp is the transposed Jacobian of the denoiser") {
  std::mt19937_64 rng(6);
  const NoiseSchedule s = default_schedule(200);
  const GaussianPrior g(oracle::random_vector(rng, 5), positive(rng, 5, 0.1, 1.0));
  const GmmPrior m = random_gmm(rng, 5, 3);
  for (int t : {3, 40, 150}) {
    const Eigen::VectorXd x = oracle::random_vector(rng, 5);
    const Eigen::VectorXd v = oracle::random_vector(rng, 5);
    for (const ScoreModel* model : {static_cast<const ScoreModel*>(&g), static_cast<const ScoreModel*>(&m)}) {
      const Eigen::MatrixXd j = fd_jacobian(*model, x, t, s, 1e-5);
      const Eigen::VectorXd want = j.transpose() * v;
      const Eigen::VectorXd got = tweedie_vjp(*model, x, t, v, s);
      CHECK((got - want).norm() < 1e-5 * std::max(1.0, want.norm()));
    }
  }
  // Gaussian: the denoiser is affine, so the VJP is exact for any step.
  const Eigen::VectorXd x = oracle::random_vector(rng, 5), dx = oracle::random_vector(rng, 5);
  const Eigen::VectorXd v = oracle::random_vector(rng, 5);
  const double lhs = v.dot(g.denoise(x + dx, 30, s) - g.denoise(x, 30, s));
  CHECK(lhs == doctest::Approx(tweedie_vjp(g, x, 30, v, s).dot(dx)).epsilon(1e-10));
}

TEST_CASE("models without a VJP raise a capability error") {
  const ZeroEps z;
  const NoiseSchedule s = default_schedule(10);
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(3);
  CHECK_FALSE(z.supports_vjp());
  CHECK_THROWS_AS(tweedie_vjp(z, x, 5, x, s), CapabilityError);
  // The default score follows from eps; x0 estimate is x_t / sqrt(abar).
  CHECK(z.score(x, 5, s).norm() == 0.0);
  CHECK((z.denoise(x, 5, s) - x / std::sqrt(s.alpha_bar(5))).norm() < 1e-14);
}

TEST_CASE("linear-gaussian posterior oracle") {
  std::mt19937_64 rng(7);
  // Scalar hand case: x ~ N(1, 4), y = 2x + n, n ~ N(0, 1), y = 5.
  // Posterior precision 1/4 + 4 = 4.25, mean (1/4 + 2 * 5) / 4.25.
  const GaussianPrior one(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Constant(1, 4.0));
  const GaussianPosterior h = gaussian_posterior_oracle(one, Eigen::MatrixXd::Constant(1, 1, 2.0),
                                                        Eigen::VectorXd::Constant(1, 5.0), 1.0);
  CHECK(h.mean[0] == doctest::Approx(10.25 / 4.25));
  CHECK(h.covariance(0, 0) == doctest::Approx(1.0 / 4.25));

  // Information form on random problems.
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 6, m = 1 + trial % 8;
    const GaussianPrior g(oracle::random_vector(rng, n), positive(rng, n, 0.1, 2.0));
    Eigen::MatrixXd a(m, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = oracle::random_vector(rng, 1)[0];
    const Eigen::VectorXd y = oracle::random_vector(rng, m);
    const double nv = 0.05 + 0.1 * trial;
    const GaussianPosterior post = gaussian_posterior_oracle(g, a, y, nv);
    Eigen::MatrixXd prec = a.transpose() * a / nv;
    prec.diagonal().array() += g.variance().array().inverse();
    const Eigen::MatrixXd cov = prec.inverse();
    const Eigen::VectorXd mean =
        cov * (a.transpose() * y / nv + Eigen::VectorXd(g.mean().array() / g.variance().array()));
    REQUIRE((post.mean - mean).norm() < 1e-9 * std::max(1.0, mean.norm()));
    REQUIRE((post.covariance - cov).norm() < 1e-9 * std::max(1.0, cov.norm()));
  }

  const GaussianPrior g(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2));
  const GaussianPosterior flat =
      gaussian_posterior_oracle(g, Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Ones(2),
                                std::numeric_limits<double>::infinity());
  CHECK(flat.mean.norm() == 0.0);
  CHECK_THROWS_AS(gaussian_posterior_oracle(g, Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Ones(3), 1.0),
                  ParameterError);
  CHECK_THROWS_AS(gaussian_posterior_oracle(g, Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Ones(2), 0.0),
                  NumericalError);
}

TEST_CASE("gmm construction is validated") {
  const Eigen::VectorXd a = Eigen::VectorXd::Zero(2), v = Eigen::VectorXd::Ones(2);
  CHECK_THROWS_AS(GmmPrior({0.5, 0.4}, {a, a}, {v, v}), ParameterError);
  CHECK_THROWS_AS(GmmPrior({1.0}, {a}, {Eigen::VectorXd::Ones(3)}), ParameterError);
  CHECK_THROWS_AS(GmmPrior({}, {}, {}), ParameterError);
}
