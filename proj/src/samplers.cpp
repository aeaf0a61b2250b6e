#include "dfd/samplers.hpp"

#include <cmath>
#include <random>

#include "dfd/errors.hpp"
#include "dfd/io.hpp"

namespace dfd {

std::string to_string(StepMode mode) { return mode == StepMode::constant ? "constant" : "normalized"; }

StepMode step_mode_from_string(const std::string& s) {
  if (s == "constant") return StepMode::constant;
  if (s == "normalized") return StepMode::normalized;
  throw ParameterError("unknown step mode '" + s + "' (expected constant or normalized)");
}

void SamplerConfig::validate(int schedule_steps) const {
  if (n_steps < 0 || n_steps > schedule_steps) {
    throw ParameterError("sampler steps must lie in [1, " + std::to_string(schedule_steps) + "] (0 = all)");
  }
  const int n = n_steps == 0 ? schedule_steps : n_steps;
  if (!(tau >= 0.0) || !(zeta >= 0.0)) throw ParameterError("step sizes must be >= 0");
  if (!tau_schedule.empty() && static_cast<int>(tau_schedule.size()) < n) {
    throw ParameterError("tau schedule shorter than the number of reverse steps");
  }
  if (!zeta_schedule.empty() && static_cast<int>(zeta_schedule.size()) < n) {
    throw ParameterError("zeta schedule shorter than the number of reverse steps");
  }
  for (double v : tau_schedule) {
    if (!(v >= 0.0)) throw ParameterError("tau schedule entries must be >= 0");
  }
  for (double v : zeta_schedule) {
    if (!(v >= 0.0)) throw ParameterError("zeta schedule entries must be >= 0");
  }
  if (!channel_weights.empty() && channel_weights.size() != static_cast<std::size_t>(kStateChannels)) {
    throw ParameterError("channel_weights needs one entry per state channel (4)");
  }
  for (double w : channel_weights) {
    if (!(w >= 0.0)) throw ParameterError("channel weights must be >= 0");
  }
  if (inner_grad_steps < 1) throw ParameterError("inner_grad_steps must be >= 1");
  if (!(eps_stab > 0.0)) throw ParameterError("eps_stab must be > 0");
  if (snapshot_stride < 0) throw ParameterError("snapshot_stride must be >= 0");
}

namespace {

enum class Guide { none, dps, dfd };

struct Plan {
  NoiseSchedule coeffs;          // schedule the reverse coefficients come from
  std::vector<int> model_steps;  // entry k-1: model step for reverse step k
};

Plan make_plan(const NoiseSchedule& schedule, int n_steps) {
  Plan p;
  if (n_steps == 0 || n_steps == schedule.n_steps) {
    p.coeffs = schedule;
    p.model_steps.resize(schedule.n_steps);
    for (int t = 1; t <= schedule.n_steps; ++t) p.model_steps[t - 1] = t;
  } else {
    RespacedSchedule r = respace(schedule, evenly_spaced_steps(schedule.n_steps, n_steps));
    p.coeffs = std::move(r.schedule);
    p.model_steps = std::move(r.original_steps);
  }
  return p;
}

Eigen::VectorXd draw(std::mt19937_64& rng, std::normal_distribution<double>& normal, Eigen::Index dim) {
  Eigen::VectorXd z(dim);
  for (Eigen::Index i = 0; i < dim; ++i) z[i] = normal(rng);
  return z;
}

void require_finite(const Eigen::VectorXd& v, const char* what, int step) {
  if (!v.allFinite()) {
    throw NumericalError(std::string("non-finite ") + what + " at reverse step " + std::to_string(step), step);
  }
}

Eigen::ArrayXd channel_weight_vector(const SamplerConfig& c, Eigen::Index dim) {
  if (c.channel_weights.empty()) return Eigen::ArrayXd::Ones(dim);
  if (dim % kStateChannels != 0) throw ParameterError("channel weights need a 4-channel state");
  const Eigen::Index n = dim / kStateChannels;
  Eigen::ArrayXd w(dim);
  for (int ch = 0; ch < kStateChannels; ++ch) w.segment(ch * n, n).setConstant(c.channel_weights[ch]);
  return w;
}

SampleResult run(const ScoreModel& model, const NoiseSchedule& schedule, const MeasurementOperator* op,
                 const Eigen::VectorXd* y, Eigen::Index dim, const SamplerConfig& config, Guide guide) {
  config.validate(schedule.n_steps);
  if (dim < 1) throw ParameterError("state dimension must be positive");
  if (guide == Guide::dps && config.zeta > 0.0 && !model.supports_vjp()) {
    throw CapabilityError("DPS needs a score model with Tweedie VJPs");
  }
  const Plan plan = make_plan(schedule, config.n_steps);
  const int n = plan.coeffs.n_steps;
  const Eigen::ArrayXd weights = channel_weight_vector(config, guide == Guide::dfd ? dim : 0);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SampleResult out;
  Eigen::VectorXd x = draw(rng, normal, dim);

  for (int t = n; t >= 1; --t) {
    const int step = n - t;
    const int tm = plan.model_steps[t - 1];
    const double ab = plan.coeffs.alpha_bar(t);
    const Eigen::VectorXd score = model.score(x, tm, schedule);
    if (score.size() != dim) throw ParameterError("score model returned a state of the wrong length");
    const Eigen::VectorXd x0 = x0_from_score(x, ab, score);
    require_finite(x0, "x0 estimate", step);

    TrajectoryRecord rec;
    rec.step = step;
    rec.t = tm;
    rec.x_t_rms = x.norm() / std::sqrt(static_cast<double>(dim));

    Eigen::VectorXd x0p = x0;
    Eigen::VectorXd noisy_correction;
    if (guide == Guide::dfd) {
      const double tau_t = config.tau_schedule.empty() ? config.tau : config.tau_schedule[t - 1];
      for (int inner = 0; inner < config.inner_grad_steps; ++inner) {
        double fid = 0.0;
        if (tau_t == 0.0) {
          if (inner == 0) rec.fidelity = op->fidelity(x0p, *y);
          break;
        }
        const Eigen::VectorXd g = op->fidelity_grad(x0p, *y, &fid);
        require_finite(g, "data-fidelity gradient", step);
        if (inner == 0) rec.fidelity = fid;
        const double eff = config.tau_mode == StepMode::normalized ? tau_t / (g.norm() + config.eps_stab) : tau_t;
        if (inner == 0) rec.tau = eff;
        x0p.array() -= eff * weights * g.array();
      }
    } else if (guide == Guide::dps) {
      const double zeta_t = config.zeta_schedule.empty() ? config.zeta : config.zeta_schedule[t - 1];
      if (zeta_t == 0.0) {
        rec.fidelity = op->fidelity(x0, *y);
      } else {
        double fid = 0.0;
        const Eigen::VectorXd g0 = op->fidelity_grad(x0, *y, &fid);
        rec.fidelity = fid;
        const Eigen::VectorXd g = tweedie_vjp(model, x, tm, g0, schedule);
        require_finite(g, "DPS gradient", step);
        const double eff =
            config.zeta_mode == StepMode::normalized ? zeta_t / (std::sqrt(fid) + config.eps_stab) : zeta_t;
        rec.tau = eff;
        noisy_correction = eff * g;
      }
    } else if (op) {
      rec.fidelity = op->fidelity(x0, *y);
    }

    if (config.snapshot_stride > 0 && (step % config.snapshot_stride == 0 || t == 1)) {
      out.trajectory.snapshot_steps.push_back(step);
      out.trajectory.x0_snapshots.push_back(x0);
      out.trajectory.x0_prime_snapshots.push_back(x0p);
    }
    out.trajectory.records.push_back(rec);

    const StepCoefficients c = posterior_step_coefficients(t, plan.coeffs, config.variant);
    const Eigen::VectorXd z = draw(rng, normal, dim);
    Eigen::VectorXd next = c.c_xt * x + c.c_x0 * x0p + c.sigma * z;
    if (noisy_correction.size() > 0) next -= noisy_correction;
    require_finite(next, "state", step);
    x = std::move(next);
  }
  out.x0 = std::move(x);
  return out;
}

void require_measurement(const MeasurementOperator& op, const Eigen::VectorXd& y, Eigen::Index dim) {
  const Eigen::VectorXd probe = op.apply(Eigen::VectorXd::Zero(dim));
  if (probe.size() != y.size()) throw ParameterError("measurement length does not match the operator output");
}

}  // namespace

Eigen::VectorXd sample_ddpm(const ScoreModel& model, const NoiseSchedule& schedule, Eigen::Index dim,
                            const SamplerConfig& config) {
  return run(model, schedule, nullptr, nullptr, dim, config, Guide::none).x0;
}

Eigen::VectorXd sample_ddim(const ScoreModel& model, const NoiseSchedule& schedule, Eigen::Index dim, double eta,
                            const std::vector<int>& steps, std::uint64_t seed) {
  if (steps.empty()) throw ParameterError("DDIM needs at least one step");
  for (std::size_t k = 0; k < steps.size(); ++k) {
    schedule.check(steps[k]);
    if (k > 0 && steps[k] <= steps[k - 1]) throw ParameterError("DDIM steps must be strictly increasing");
  }
  if (!(eta >= 0.0)) throw ParameterError("DDIM eta must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd x = draw(rng, normal, dim);
  for (std::size_t k = steps.size(); k-- > 0;) {
    const int t = steps[k];
    const int t_prev = k > 0 ? steps[k - 1] : 0;
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t_prev);
    const Eigen::VectorXd eps = model.eps_predict(x, t, schedule);
    const Eigen::VectorXd x0 = x0_from_eps(x, ab, eps);
    const int step = static_cast<int>(steps.size() - 1 - k);
    require_finite(x0, "x0 estimate", step);
    const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev));
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    Eigen::VectorXd next = std::sqrt(ab_prev) * x0 + dir * eps;
    if (sigma > 0.0) next += sigma * draw(rng, normal, dim);
    x = std::move(next);
  }
  return x;
}

SampleResult sample_dps(const ScoreModel& model, const NoiseSchedule& schedule, const MeasurementOperator& op,
                        const Eigen::VectorXd& y, Eigen::Index dim, const SamplerConfig& config) {
  require_measurement(op, y, dim);
  return run(model, schedule, &op, &y, dim, config, Guide::dps);
}

SampleResult sample_dfd_dps(const ScoreModel& model, const NoiseSchedule& schedule, const MeasurementOperator& op,
                            const Eigen::VectorXd& y, Eigen::Index dim, const SamplerConfig& config) {
  require_measurement(op, y, dim);
  return run(model, schedule, &op, &y, dim, config, Guide::dfd);
}

namespace {

Reconstruction reconstruct(const ScoreModel& model, const NoiseSchedule& schedule, const Observation& y,
                           const SamplerConfig& config, Guide guide) {
  const Eigen::Index rows = y.image.rows(), cols = y.image.cols();
  const CodedDefocusOperator op(y.camera, y.psf, rows, cols);
  const Eigen::VectorXd yv = flatten(y.image);
  const Eigen::Index dim = kStateChannels * rows * cols;
  SampleResult r = run(model, schedule, &op, &yv, dim, config, guide);
  return {decode_state(r.x0, rows, cols, y.camera), std::move(r.trajectory)};
}

}  // namespace

Reconstruction reconstruct_dfd_dps(const ScoreModel& model, const NoiseSchedule& schedule, const Observation& y,
                                   const SamplerConfig& config) {
  return reconstruct(model, schedule, y, config, Guide::dfd);
}

Reconstruction reconstruct_dps(const ScoreModel& model, const NoiseSchedule& schedule, const Observation& y,
                               const SamplerConfig& config) {
  return reconstruct(model, schedule, y, config, Guide::dps);
}

void log_trajectory(const Trajectory& traj, const std::filesystem::path& prefix, Eigen::Index rows,
                    Eigen::Index cols) {
  if (traj.records.empty()) throw ParameterError("log_trajectory: empty trajectory");
  std::vector<std::vector<double>> table;
  table.reserve(traj.records.size());
  for (const auto& r : traj.records) {
    table.push_back({static_cast<double>(r.step), static_cast<double>(r.t), r.fidelity, r.tau});
  }
  write_csv(prefix.string() + ".csv", {"step", "t", "fidelity", "tau"}, table);
  if (rows <= 0 || cols <= 0) return;
  const Eigen::Index n = rows * cols;
  for (std::size_t k = 0; k < traj.x0_snapshots.size(); ++k) {
    const Eigen::VectorXd& z = traj.x0_snapshots[k];
    if (z.size() < 3 * n) throw ParameterError("log_trajectory: snapshot smaller than the image shape");
    Rgb img = Rgb::Zero(rows, cols);
    for (int c = 0; c < 3; ++c) {
      img[c] = Eigen::Map<const Plane>(z.data() + c * n, rows, cols).array().unaryExpr([](double v) {
        return std::clamp(0.5 * (v + 1.0), 0.0, 1.0);
      });
    }
    write_png(prefix.string() + "_x0_" + std::to_string(traj.snapshot_steps[k]) + ".png", img);
  }
}

}  // namespace dfd
