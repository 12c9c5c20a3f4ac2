#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mlpmmh/particle_filter.hpp"
#include "mlpmmh/pmmh.hpp"
#include "mlpmmh/sde_models.hpp"

namespace mlpmmh {

/// log H_1 = sum_p [log g(x_p, y_p) - log G_p(z_p)] and log H_2, its coarse
/// analogue. Both are <= 0 by construction of G_p.
struct LogWeights {
  double log_h1 = 0.0;
  double log_h2 = 0.0;
};

LogWeights compute_weights(const DiffusionModel& model, const ParamVector& theta, const TracedPath& path,
                           const ObservationRecord& data);

/// Test function phi(theta, x_{0:n}); the path is row-major (n+1) x d.
using TestFunction = std::function<double(const ParamVector&, std::span<const double>)>;

/// phi(theta, x) = theta[index].
TestFunction parameter_component(std::size_t index);

/// One level increment E_l^{N_l}(phi) of the telescoping sum.
struct LevelIncrementEstimate {
  int level = 0;
  double value = 0.0;
  std::size_t samples = 0;
  double fine_term = 0.0;    // sum phi(x) H1 / sum H1
  double coarse_term = 0.0;  // sum phi(x') H2 / sum H2
  double log_mean_h1 = 0.0;  // log of the H1 denominator mean
  double log_mean_h2 = 0.0;
  double min_log_h1 = 0.0;
  double min_log_h2 = 0.0;
  double ess_h1 = 0.0;  // effective sample size of the normalized H1 weights
  double ess_h2 = 0.0;
  double cost = 0.0;
};

/// Ratio-of-averages increment from per-sample values and log weights.
/// Weighted means are formed after subtracting the maximum log weight.
LevelIncrementEstimate increment_from_samples(std::span<const double> phi_fine, std::span<const double> phi_coarse,
                                              std::span<const double> log_h1, std::span<const double> log_h2);

/// Increment from a coupled PMMH trace at level l >= 1.
LevelIncrementEstimate level_increment_estimate(const DiffusionModel& model, const ObservationRecord& data,
                                                const ChainTrace& trace, const TestFunction& phi);

struct RateConstants {
  double beta = 2.0;   // strong (variance decay) rate
  double gamma = 1.0;  // cost rate
  double alpha = 1.0;  // weak (bias) rate
};

/// How the finest level is chosen from the target error.
enum class LevelRule {
  kBiasRate,    // L = ceil(log2(1/eps) / alpha), so h_L^alpha <= eps
  kStrongRate,  // L = ceil(2 log2(1/eps) / beta)
};

struct LevelPlan {
  double eps = 0.0;
  int base_level = 0;
  int max_level = 0;
  RateConstants rates;
  double scale = 1.0;      // proportionality constant c
  double k_sum = 0.0;      // K_L
  std::vector<int> levels;           // base_level .. max_level
  std::vector<double> steps;         // h_l = 2^-l
  std::vector<double> target_samples;  // c eps^-2 K_L h_l^{(beta+gamma)/2}, unrounded
  std::vector<std::size_t> samples;    // max(1, ceil(target))

  /// sum_l h_l^beta / N_l.
  [[nodiscard]] double variance_sum() const;
  /// c' with variance_sum() <= c' eps^2 guaranteed by the rounding rule.
  [[nodiscard]] double variance_constant() const;
};

/// K_L = sum_{l=1}^{L} h_l^{(beta-gamma)/2}. For L = 0 the empty sum is
/// replaced by the single-level value h_0^{(beta-gamma)/2} = 1.
double allocation_sum(int max_level, const RateConstants& rates);

int finest_level(double eps, const RateConstants& rates, LevelRule rule = LevelRule::kBiasRate);

/// Builds the per-level sample plan N_l proportional to eps^-2 K_L h_l^{(beta+gamma)/2}.
/// Throws ConfigError for eps <= 0, non-positive rates or scale.
LevelPlan allocate_samples(double eps, const RateConstants& rates, double scale = 1.0, int base_level = 0,
                           LevelRule rule = LevelRule::kBiasRate);

/// Scale c such that, for target level `max_level`, the base level receives
/// N_base = 2 V_0 / eps^2, i.e. its variance share V_0 / N_base is eps^2 / 2.
/// `pilot_variance` is V_0, the per-sample variance (N * Var of replicate
/// means) at the base level.
double calibrate_scale(double pilot_variance, int base_level, int max_level, const RateConstants& rates);

/// Multilevel estimate of E_{pi_{h_L}}[phi].
struct MLReport {
  int base_level = 0;
  int max_level = 0;
  double base_value = 0.0;
  std::size_t base_samples = 0;
  double base_cost = 0.0;
  std::vector<LevelIncrementEstimate> increments;
  double estimate = 0.0;
  double total_cost = 0.0;
};

/// Sums the plain mean of phi over the base-level trace and the increments of
/// levels base+1..L. Throws ConfigError when a level is missing or duplicated.
MLReport assemble_ml_estimate(const DiffusionModel& model, const ObservationRecord& data, const ChainTrace& base_trace,
                              std::span<const ChainTrace> increment_traces, const TestFunction& phi);

}  // namespace mlpmmh
