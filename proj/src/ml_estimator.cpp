#include "mlpmmh/ml_estimator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "mlpmmh/errors.hpp"
#include "mlpmmh/stats.hpp"

namespace mlpmmh {

LogWeights compute_weights(const DiffusionModel& model, const ParamVector& theta, const TracedPath& path,
                           const ObservationRecord& data) {
  if (!path.coupled()) throw ContractViolation("importance weights need a coupled path");
  const std::size_t n = data.size();
  if (path.length() != n + 1) throw ContractViolation("path length does not match the observation count");
  LogWeights w;
  for (std::size_t p = 1; p <= n; ++p) {
    const auto y = data.at(p - 1);
    const double g_fine = model.obs_log_density(theta, path.fine_at(p), y);
    const double g_coarse = model.obs_log_density(theta, path.coarse_at(p), y);
    const double g_max = std::max(g_fine, g_coarse);
    w.log_h1 += g_fine - g_max;
    w.log_h2 += g_coarse - g_max;
  }
  return w;
}

TestFunction parameter_component(std::size_t index) {
  return [index](const ParamVector& theta, std::span<const double>) { return theta[index]; };
}

LevelIncrementEstimate increment_from_samples(std::span<const double> phi_fine, std::span<const double> phi_coarse,
                                              std::span<const double> log_h1, std::span<const double> log_h2) {
  const std::size_t n = phi_fine.size();
  if (n == 0) throw EstimationError("level increment needs at least one sample");
  if (phi_coarse.size() != n || log_h1.size() != n || log_h2.size() != n) {
    throw ContractViolation("level increment inputs have mismatched lengths");
  }

  struct Term {
    double ratio, log_mean, min_log, ess;
  };
  auto weighted = [n](std::span<const double> phi, std::span<const double> log_w) -> Term {
    const double peak = *std::max_element(log_w.begin(), log_w.end());
    if (!std::isfinite(peak)) throw EstimationError("level increment weights are all zero");
    // Centred at phi[0] so a constant test function is reproduced exactly.
    const double centre = phi[0];
    double num = 0.0;
    double den = 0.0;
    double den2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = std::exp(log_w[i] - peak);
      num += (phi[i] - centre) * w;
      den += w;
      den2 += w * w;
    }
    if (!(den > 0.0)) throw EstimationError("level increment denominator is zero");
    return {centre + num / den, peak + std::log(den / static_cast<double>(n)),
            *std::min_element(log_w.begin(), log_w.end()), den * den / den2};
  };

  const Term fine = weighted(phi_fine, log_h1);
  const Term coarse = weighted(phi_coarse, log_h2);
  LevelIncrementEstimate out;
  out.samples = n;
  out.fine_term = fine.ratio;
  out.coarse_term = coarse.ratio;
  out.value = fine.ratio - coarse.ratio;
  out.log_mean_h1 = fine.log_mean;
  out.log_mean_h2 = coarse.log_mean;
  out.min_log_h1 = fine.min_log;
  out.min_log_h2 = coarse.min_log;
  out.ess_h1 = fine.ess;
  out.ess_h2 = coarse.ess;
  return out;
}

LevelIncrementEstimate level_increment_estimate(const DiffusionModel& model, const ObservationRecord& data,
                                                const ChainTrace& trace, const TestFunction& phi) {
  if (trace.samples.empty()) throw EstimationError("level increment from an empty trace");
  if (trace.coupling != Coupling::kCoupled || trace.level.level < 1) {
    throw ContractViolation("level increment needs a coupled trace at level >= 1");
  }
  const std::size_t n = trace.samples.size();
  std::vector<double> phi_fine(n), phi_coarse(n), log_h1(n), log_h2(n);

  // Rejected moves repeat the previous state, so consecutive samples often share a path.
  const ChainSample* previous = nullptr;
  for (std::size_t i = 0; i < n; ++i) {
    const ChainSample& s = trace.samples[i];
    if (previous != nullptr && previous->state.path == s.state.path && previous->state.theta == s.state.theta) {
      phi_fine[i] = phi_fine[i - 1];
      phi_coarse[i] = phi_coarse[i - 1];
      log_h1[i] = log_h1[i - 1];
      log_h2[i] = log_h2[i - 1];
    } else {
      const TracedPath& path = *s.state.path;
      const LogWeights w = compute_weights(model, s.state.theta, path, data);
      phi_fine[i] = phi(s.state.theta, path.fine);
      phi_coarse[i] = phi(s.state.theta, path.coarse);
      log_h1[i] = w.log_h1;
      log_h2[i] = w.log_h2;
    }
    previous = &s;
  }
  LevelIncrementEstimate out = increment_from_samples(phi_fine, phi_coarse, log_h1, log_h2);
  out.level = trace.level.level;
  out.cost = trace.sampling_cost;
  return out;
}

// --- allocation ----------------------------------------------------------------

double allocation_sum(int max_level, const RateConstants& rates) {
  const double exponent = 0.5 * (rates.beta - rates.gamma);
  if (max_level <= 0) return 1.0;
  double k = 0.0;
  for (int l = 1; l <= max_level; ++l) k += std::pow(std::ldexp(1.0, -l), exponent);
  return k;
}

int finest_level(double eps, const RateConstants& rates, LevelRule rule) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("target error eps must be positive");
  const double bits = std::log2(1.0 / eps);
  const double raw = rule == LevelRule::kBiasRate ? bits / rates.alpha : 2.0 * bits / rates.beta;
  // Tolerate floating noise when eps is an exact power of two.
  return std::max(0, static_cast<int>(std::ceil(raw - 1e-12)));
}

double LevelPlan::variance_sum() const {
  double acc = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    acc += std::pow(steps[i], rates.beta) / static_cast<double>(samples[i]);
  }
  return acc;
}

double LevelPlan::variance_constant() const {
  const double exponent = 0.5 * (rates.beta - rates.gamma);
  double acc = 0.0;
  for (double h : steps) acc += std::pow(h, exponent);
  return acc / (scale * k_sum);
}

LevelPlan allocate_samples(double eps, const RateConstants& rates, double scale, int base_level, LevelRule rule) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("target error eps must be positive");
  if (!(rates.beta > 0.0) || !(rates.gamma > 0.0) || !(rates.alpha > 0.0)) {
    throw ConfigError("rate constants beta, gamma, alpha must be positive");
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("allocation scale must be positive");
  if (base_level < 0) throw ConfigError("base level must be non-negative");

  LevelPlan plan;
  plan.eps = eps;
  plan.rates = rates;
  plan.scale = scale;
  plan.base_level = base_level;
  plan.max_level = std::max(base_level, finest_level(eps, rates, rule));
  plan.k_sum = allocation_sum(plan.max_level, rates);

  const double exponent = 0.5 * (rates.beta + rates.gamma);
  for (int l = base_level; l <= plan.max_level; ++l) {
    const double h = std::ldexp(1.0, -l);
    const double target = scale * plan.k_sum * std::pow(h, exponent) / (eps * eps);
    if (!std::isfinite(target) || target > 1e15) {
      throw ConfigError("sample count at level " + std::to_string(l) + " overflows");
    }
    plan.levels.push_back(l);
    plan.steps.push_back(h);
    plan.target_samples.push_back(target);
    plan.samples.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(target))));
  }
  return plan;
}

double calibrate_scale(double pilot_variance, int base_level, int max_level, const RateConstants& rates) {
  if (!(pilot_variance > 0.0) || !std::isfinite(pilot_variance)) {
    throw EstimationError("pilot variance must be positive");
  }
  const double h0 = std::ldexp(1.0, -base_level);
  return 2.0 * pilot_variance / (allocation_sum(max_level, rates) * std::pow(h0, 0.5 * (rates.beta + rates.gamma)));
}

// --- assembly ------------------------------------------------------------------

MLReport assemble_ml_estimate(const DiffusionModel& model, const ObservationRecord& data, const ChainTrace& base_trace,
                              std::span<const ChainTrace> increment_traces, const TestFunction& phi) {
  if (base_trace.samples.empty()) throw ConfigError("base level trace is missing");
  if (base_trace.coupling != Coupling::kSingle) throw ConfigError("base level trace must be single-level");

  MLReport report;
  report.base_level = base_trace.level.level;
  double acc = 0.0;
  for (const auto& s : base_trace.samples) acc += phi(s.state.theta, s.state.path->fine);
  report.base_value = acc / static_cast<double>(base_trace.samples.size());
  report.base_samples = base_trace.samples.size();
  report.base_cost = base_trace.sampling_cost;

  std::map<int, const ChainTrace*> by_level;
  for (const auto& t : increment_traces) {
    if (!by_level.emplace(t.level.level, &t).second) {
      throw ConfigError("duplicate increment trace for level " + std::to_string(t.level.level));
    }
  }
  report.max_level = report.base_level + static_cast<int>(by_level.size());
  for (int l = report.base_level + 1; l <= report.max_level; ++l) {
    const auto it = by_level.find(l);
    if (it == by_level.end()) throw ConfigError("missing increment trace for level " + std::to_string(l));
    report.increments.push_back(level_increment_estimate(model, data, *it->second, phi));
  }

  report.estimate = report.base_value;
  report.total_cost = report.base_cost;
  for (const auto& inc : report.increments) {
    report.estimate += inc.value;
    report.total_cost += inc.cost;
  }
  return report;
}

}  // namespace mlpmmh
