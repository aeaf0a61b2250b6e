#include "dfd/diffusion_schedule.hpp"

#include <algorithm>
#include <numbers>

#include <json.hpp>

#include "binary_io.hpp"

namespace dfd {

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::linear ? "linear" : "cosine"; }

std::string to_string(PosteriorVariant variant) {
  return variant == PosteriorVariant::as_written ? "as_written" : "ddpm_posterior";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ParameterError("unknown schedule kind: " + s);
}

PosteriorVariant posterior_variant_from_string(const std::string& s) {
  if (s == "as_written") return PosteriorVariant::as_written;
  if (s == "ddpm_posterior") return PosteriorVariant::ddpm_posterior;
  throw ParameterError("unknown posterior variant: " + s);
}

namespace {

void fill_derived(NoiseSchedule& s) {
  const int T = s.n_steps;
  s.alphas = Eigen::VectorXd::Ones(T) - s.betas;
  s.alpha_bars.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    prod *= s.alphas[i];
    s.alpha_bars[i] = prod;
  }
  s.sigmas_tilde.resize(T);
  for (int t = 1; t <= T; ++t) {
    const double ab_prev = s.alpha_bar(t - 1);
    const double ab = s.alpha_bars[t - 1];
    s.sigmas_tilde[t - 1] = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * s.betas[t - 1]);
  }
  s.sigmas_tilde[0] = 0.0;
}

void validate_betas(const Eigen::VectorXd& betas) {
  for (Eigen::Index i = 0; i < betas.size(); ++i) {
    if (!(betas[i] > 0.0 && betas[i] < 1.0)) {
      throw ParameterError("beta_" + std::to_string(i + 1) + " outside (0, 1)");
    }
  }
}

}  // namespace

NoiseSchedule build_schedule(ScheduleKind kind, int n_steps, double beta_min, double beta_max) {
  if (n_steps < 1) throw ParameterError("n_steps must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ParameterError("require 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.kind = kind;
  s.n_steps = n_steps;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.betas.resize(n_steps);
  if (kind == ScheduleKind::linear) {
    for (int i = 0; i < n_steps; ++i) {
      const double frac = n_steps == 1 ? 0.0 : static_cast<double>(i) / (n_steps - 1);
      s.betas[i] = beta_min + frac * (beta_max - beta_min);
    }
  } else {
    constexpr double offset = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / n_steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int i = 0; i < n_steps; ++i) {
      const double b = 1.0 - f(i + 1) / f(i);
      s.betas[i] = std::clamp(b, beta_min, beta_max);
    }
  }
  validate_betas(s.betas);
  fill_derived(s);
  return s;
}

NoiseSchedule default_schedule(int n_steps) {
  const double stretch = 1000.0 / n_steps;
  return build_schedule(ScheduleKind::linear, n_steps, std::min(1e-4 * stretch, 0.5),
                        std::min(0.02 * stretch, 0.999));
}

std::vector<int> evenly_spaced_steps(int n_total, int n_used) {
  if (n_used < 1 || n_used > n_total) throw ParameterError("step count must lie in [1, T]");
  std::vector<int> steps(n_used);
  for (int k = 0; k < n_used; ++k) {
    // k = n_used - 1 maps to T exactly.
    steps[k] = static_cast<int>(std::lround(1.0 + static_cast<double>(k) * (n_total - 1) /
                                                      std::max(1, n_used - 1)));
  }
  if (n_used == 1) steps[0] = n_total;
  return steps;
}

RespacedSchedule respace(const NoiseSchedule& base, const std::vector<int>& steps) {
  if (steps.empty()) throw ParameterError("respace: empty step list");
  for (std::size_t k = 0; k < steps.size(); ++k) {
    base.check(steps[k]);
    if (k > 0 && steps[k] <= steps[k - 1]) throw ParameterError("respace: steps must be strictly increasing");
  }
  RespacedSchedule out;
  out.original_steps = steps;
  NoiseSchedule& s = out.schedule;
  s.kind = base.kind;
  s.n_steps = static_cast<int>(steps.size());
  s.betas.resize(s.n_steps);
  double prev = 1.0;
  for (int k = 0; k < s.n_steps; ++k) {
    const double ab = base.alpha_bar(steps[k]);
    s.betas[k] = 1.0 - ab / prev;
    prev = ab;
  }
  validate_betas(s.betas);
  s.beta_min = s.betas.minCoeff();
  s.beta_max = s.betas.maxCoeff();
  fill_derived(s);
  // Keep alpha_bar bit-identical to the base table at the retained steps.
  for (int k = 0; k < s.n_steps; ++k) s.alpha_bars[k] = base.alpha_bar(steps[k]);
  return out;
}

StepCoefficients posterior_step_coefficients(int t, const NoiseSchedule& schedule, PosteriorVariant variant) {
  if (t < 1) throw ParameterError("no reverse step exists for t = 0");
  schedule.check(t);
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t - 1);
  const double beta = schedule.beta(t);
  const double denom = 1.0 - ab;
  StepCoefficients c;
  const double lead = variant == PosteriorVariant::as_written ? std::sqrt(ab) : std::sqrt(schedule.alpha(t));
  c.c_xt = lead * (1.0 - ab_prev) / denom;
  c.c_x0 = std::sqrt(ab_prev) * beta / denom;
  c.sigma = schedule.sigma_tilde(t);
  return c;
}

std::string schedule_to_json(const NoiseSchedule& schedule) {
  nlohmann::json j;
  j["kind"] = to_string(schedule.kind);
  j["n_steps"] = schedule.n_steps;
  j["beta_min"] = schedule.beta_min;
  j["beta_max"] = schedule.beta_max;
  return j.dump(2);
}

NoiseSchedule schedule_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("schedule config: ") + e.what());
  }
  for (const auto& [key, _] : j.items()) {
    if (key != "kind" && key != "n_steps" && key != "beta_min" && key != "beta_max") {
      throw ParameterError("schedule config: unknown key '" + key + "'");
    }
  }
  try {
    return build_schedule(schedule_kind_from_string(j.value("kind", "linear")), j.at("n_steps").get<int>(),
                          j.at("beta_min").get<double>(), j.at("beta_max").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("schedule config: ") + e.what());
  }
}

namespace {
constexpr char kScheduleMagic[8] = {'D', 'F', 'D', 'S', 'C', 'H', 'D', '1'};
}

void write_schedule_table(const NoiseSchedule& schedule, const std::filesystem::path& path) {
  auto os = detail::open_out(path.string());
  os.write(kScheduleMagic, sizeof(kScheduleMagic));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(schedule.n_steps));
  for (const Eigen::VectorXd* col : {&schedule.betas, &schedule.alphas, &schedule.alpha_bars, &schedule.sigmas_tilde}) {
    for (Eigen::Index i = 0; i < col->size(); ++i) detail::write_le<double>(os, (*col)[i]);
  }
  if (!os) throw IoError("write failed: " + path.string());
}

NoiseSchedule read_schedule_table(const std::filesystem::path& path) {
  auto is = detail::open_in(path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kScheduleMagic, 8) != 0) {
    throw FormatError(path.string() + ": bad magic at byte offset 0");
  }
  const auto T = detail::read_le<std::uint32_t>(is, path.string());
  if (T == 0) throw FormatError(path.string() + ": zero steps at byte offset 8");
  NoiseSchedule s;
  s.kind = ScheduleKind::linear;
  s.n_steps = static_cast<int>(T);
  for (Eigen::VectorXd* col : {&s.betas, &s.alphas, &s.alpha_bars, &s.sigmas_tilde}) {
    col->resize(T);
    for (std::uint32_t i = 0; i < T; ++i) (*col)[i] = detail::read_le<double>(is, path.string());
  }
  s.beta_min = s.betas.minCoeff();
  s.beta_max = s.betas.maxCoeff();
  return s;
}

}  // namespace dfd
