#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "../support.hpp"
#include "mlpmmh/errors.hpp"
#include "mlpmmh/ml_estimator.hpp"

using namespace mlpmmh;

namespace {

TracedPath coupled_path(std::vector<double> fine, std::vector<double> coarse) {
  TracedPath p;
  p.dim = 1;
  p.fine = std::move(fine);
  p.coarse = std::move(coarse);
  return p;
}

// Independent evaluation of the allocation rule.
double k_sum(int max_level, double beta, double gamma) {
  if (max_level <= 0) return 1.0;
  double k = 0.0;
  for (int l = 1; l <= max_level; ++l) k += std::pow(2.0, -l * (beta - gamma) / 2.0);
  return k;
}

double target(double c, double eps, int max_level, int l, double beta, double gamma) {
  return c * k_sum(max_level, beta, gamma) * std::pow(2.0, -l * (beta + gamma) / 2.0) / (eps * eps);
}

struct Traces {
  ObservationRecord data;
  ChainTrace base;
  std::vector<ChainTrace> increments;
};

Traces small_traces() {
  static OrnsteinUhlenbeck ou;
  Traces t;
  t.data = simulate_data(ou, {1.0, 0.5}, 5, 0.5 / 64, 2);
  ChainConfig c;
  c.level = LevelStep::at(1, 0.5);
  c.samples = 200;
  c.burn_in = 20;
  t.base = run_chain(ou, t.data, c, 1);
  c.coupling = Coupling::kCoupled;
  for (int l : {2, 3}) {
    c.level = LevelStep::at(l, 0.5);
    t.increments.push_back(run_chain(ou, t.data, c, 10 + l));
  }
  return t;
}

}  // namespace

TEST(Weights, IdenticalPathsGiveUnitWeights) {
  OrnsteinUhlenbeck ou;
  const auto data = support::make_record({0.2, -0.4, 1.0}, 0.5);
  const auto w = compute_weights(ou, {1.0, 0.5}, coupled_path({0, 0.1, 0.5, 0.9}, {0, 0.1, 0.5, 0.9}), data);
  EXPECT_EQ(w.log_h1, 0.0);
  EXPECT_EQ(w.log_h2, 0.0);
}

TEST(Weights, HandPathTermByTerm) {
  OrnsteinUhlenbeck ou;
  const std::vector<double> y{0.2, 0.1};
  const std::vector<double> x{0.0, 0.1, 0.4}, xc{0.0, 0.3, -0.2};
  const auto w = compute_weights(ou, {1.0, 0.5}, coupled_path(x, xc), support::make_record(y, 0.5));
  double h1 = 0.0, h2 = 0.0;
  for (int p = 1; p <= 2; ++p) {
    const double a = support::gauss_logpdf(y[p - 1], x[p], 0.2);
    const double b = support::gauss_logpdf(y[p - 1], xc[p], 0.2);
    const double g = a > b ? a : b;
    h1 += a - g;
    h2 += b - g;
  }
  EXPECT_NEAR(w.log_h1, h1, 1e-12);
  EXPECT_NEAR(w.log_h2, h2, 1e-12);
}

TEST(Weights, BoundedAndOneRatioIsUnityFuzz) {
  Langevin lv;
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double y = rng.normal();
    const auto data = support::make_record({y}, 1.0);
    const auto w = compute_weights(lv, {5.0, 1.0}, coupled_path({0.0, 2 * rng.normal()}, {0.0, 2 * rng.normal()}), data);
    EXPECT_LE(w.log_h1, 0.0);
    EXPECT_LE(w.log_h2, 0.0);
    EXPECT_EQ(std::max(w.log_h1, w.log_h2), 0.0);
  }
}

TEST(Weights, RejectsUncoupledOrMisSizedPaths) {
  OrnsteinUhlenbeck ou;
  const auto data = support::make_record({0.2, 0.1}, 0.5);
  TracedPath single;
  single.fine = {0, 0, 0};
  EXPECT_THROW(compute_weights(ou, {1.0, 0.5}, single, data), ContractViolation);
  EXPECT_THROW(compute_weights(ou, {1.0, 0.5}, coupled_path({0, 0}, {0, 0}), data), ContractViolation);
}

TEST(Increment, ConstantTestFunctionGivesExactZero) {
  const std::vector<double> phi(5, 0.7);
  const std::vector<double> h1{-0.1, -2.0, 0.0, -0.3, -5.0}, h2{0.0, -0.7, -1.1, 0.0, -0.2};
  EXPECT_EQ(increment_from_samples(phi, phi, h1, h2).value, 0.0);
}

TEST(Increment, UnitWeightsAndEqualValuesGiveZero) {
  const std::vector<double> phi{0.3, 1.2, 0.8};
  const std::vector<double> zero(3, 0.0);
  EXPECT_EQ(increment_from_samples(phi, phi, zero, zero).value, 0.0);
}

TEST(Increment, HandComputedRatio) {
  const std::vector<double> pf{1, 2, 3}, pc{0.5, 1, 4};
  const std::vector<double> h1{std::log(1.0), std::log(0.5), std::log(0.25)};
  const std::vector<double> h2{std::log(0.2), std::log(1.0), std::log(0.6)};
  const auto inc = increment_from_samples(pf, pc, h1, h2);
  const double fine = (1 * 1 + 2 * 0.5 + 3 * 0.25) / (1 + 0.5 + 0.25);
  const double coarse = (0.5 * 0.2 + 1 * 1 + 4 * 0.6) / (0.2 + 1 + 0.6);
  EXPECT_NEAR(inc.value, fine - coarse, 1e-12);
  EXPECT_NEAR(inc.fine_term, fine, 1e-12);
  EXPECT_NEAR(inc.log_mean_h1, std::log(1.75 / 3), 1e-12);
  EXPECT_NEAR(inc.min_log_h2, std::log(0.2), 1e-15);
  EXPECT_NEAR(inc.ess_h1, 1.75 * 1.75 / (1 + 0.25 + 0.0625), 1e-12);
}

TEST(Increment, InvariantToCommonWeightScale) {
  const std::vector<double> pf{1, 2, 3, 0.5}, pc{0.5, 1, 4, 2};
  std::vector<double> h1{-0.2, -1.0, -0.4, 0.0}, h2{0.0, -0.3, -2.0, -0.1};
  const double base = increment_from_samples(pf, pc, h1, h2).value;
  for (double& v : h1) v -= 3.7;
  EXPECT_NEAR(increment_from_samples(pf, pc, h1, h2).value, base, 1e-12);
  for (double& v : h2) v -= 40.0;
  EXPECT_NEAR(increment_from_samples(pf, pc, h1, h2).value, base, 1e-12);
}

TEST(Increment, Errors) {
  const std::vector<double> empty;
  EXPECT_THROW(increment_from_samples(empty, empty, empty, empty), EstimationError);
  const std::vector<double> one{1.0}, two{1.0, 2.0};
  EXPECT_THROW(increment_from_samples(one, two, one, one), ContractViolation);
}

TEST(Increment, FromCoupledTrace) {
  static const auto t = small_traces();
  OrnsteinUhlenbeck ou;
  const auto inc = level_increment_estimate(ou, t.data, t.increments[0], parameter_component(0));
  EXPECT_EQ(inc.level, 2);
  EXPECT_EQ(inc.samples, 200u);
  EXPECT_TRUE(std::isfinite(inc.value));
  EXPECT_LE(inc.min_log_h1, 0.0);
  EXPECT_LE(inc.log_mean_h2, 0.0);
  EXPECT_EQ(inc.cost, t.increments[0].sampling_cost);
  const auto constant = level_increment_estimate(
      ou, t.data, t.increments[0], [](const ParamVector&, std::span<const double>) { return 2.5; });
  EXPECT_EQ(constant.value, 0.0);
  EXPECT_THROW(level_increment_estimate(ou, t.data, t.base, parameter_component(0)), ContractViolation);
}

TEST(Allocation, ClosedFormBetaTwoGammaOne) {
  const RateConstants rates{2.0, 1.0, 1.0};
  const double eps = 1.0 / 16;
  const auto plan = allocate_samples(eps, rates, 0.8);
  EXPECT_EQ(plan.max_level, 4);
  EXPECT_NEAR(plan.k_sum, 1.0 / std::sqrt(2) + 0.5 + 1.0 / std::sqrt(8) + 0.25, 1e-15);
  EXPECT_NEAR(plan.k_sum, 1.81066017177982, 1e-12);
  ASSERT_EQ(plan.levels.size(), 5u);
  for (std::size_t i = 0; i < plan.levels.size(); ++i) {
    const double t = target(0.8, eps, 4, plan.levels[i], 2.0, 1.0);
    EXPECT_NEAR(plan.target_samples[i], t, 1e-12 * t);
    EXPECT_EQ(plan.samples[i], static_cast<std::size_t>(std::ceil(t)));
    if (i > 0) {
      EXPECT_NEAR(plan.target_samples[i] / plan.target_samples[i - 1], std::pow(2.0, -1.5), 1e-12);
      EXPECT_LE(plan.samples[i], plan.samples[i - 1]);
    }
  }
}

TEST(Allocation, EqualRatesGiveLinearK) {
  const RateConstants rates{1.0, 1.0, 1.0};
  const double eps = 1.0 / 32;
  const auto plan = allocate_samples(eps, rates);
  EXPECT_EQ(plan.max_level, 5);
  EXPECT_NEAR(plan.k_sum, 5.0, 1e-15);
  for (std::size_t i = 0; i < plan.levels.size(); ++i) {
    const double t = 5.0 * std::pow(2.0, -plan.levels[i]) / (eps * eps);
    EXPECT_NEAR(plan.target_samples[i], t, 1e-12 * t);
  }
}

TEST(Allocation, HalvingEps) {
  const RateConstants rates{2.0, 1.0, 1.0};
  const auto a = allocate_samples(1.0 / 8, rates, 1.0, 1);
  const auto b = allocate_samples(1.0 / 16, rates, 1.0, 1);
  EXPECT_EQ(b.max_level, a.max_level + 1);
  for (std::size_t i = 0; i < a.levels.size(); ++i) {
    EXPECT_NEAR(b.target_samples[i] / a.target_samples[i], 4.0 * b.k_sum / a.k_sum, 1e-12);
  }
}

TEST(Allocation, VarianceBound) {
  for (const RateConstants rates : {RateConstants{2.0, 1.0, 1.0}, RateConstants{1.0, 1.0, 1.0}}) {
    for (double eps : {0.3, 0.1, 1.0 / 64, 1e-3}) {
      for (double scale : {0.01, 1.0, 7.5}) {
        const auto plan = allocate_samples(eps, rates, scale);
        EXPECT_LE(plan.variance_sum(), plan.variance_constant() * eps * eps * (1 + 1e-12));
      }
    }
  }
}

TEST(Allocation, FinestLevelRules) {
  const RateConstants rates{2.0, 1.0, 1.0};
  EXPECT_EQ(finest_level(1.0 / 16, rates), 4);
  EXPECT_EQ(finest_level(0.1, rates), 4);
  EXPECT_EQ(finest_level(1.0 / 16, {2.0, 1.0, 0.5}), 8);
  EXPECT_EQ(finest_level(1.0 / 16, {1.0, 1.0, 1.0}, LevelRule::kStrongRate), 8);
  EXPECT_EQ(finest_level(2.0, rates), 0);
}

TEST(Allocation, Errors) {
  EXPECT_THROW(allocate_samples(0.0, {}), ConfigError);
  EXPECT_THROW(allocate_samples(-1.0, {}), ConfigError);
  EXPECT_THROW(allocate_samples(0.1, {0.0, 1.0, 1.0}), ConfigError);
  EXPECT_THROW(allocate_samples(0.1, {}, -1.0), ConfigError);
  EXPECT_THROW(allocate_samples(1e-9, {}), ConfigError);
}

TEST(Allocation, CalibratedScaleGivesBaseShare) {
  const RateConstants rates{2.0, 1.0, 1.0};
  const double v0 = 3.0, eps = 1.0 / 32;
  const double c = calibrate_scale(v0, 1, finest_level(eps, rates), rates);
  const auto plan = allocate_samples(eps, rates, c, 1);
  EXPECT_NEAR(plan.target_samples.front(), 2 * v0 / (eps * eps), 1e-9);
  EXPECT_THROW(calibrate_scale(0.0, 1, 5, rates), EstimationError);
}

TEST(Assemble, SumsLevelValues) {
  static const auto t = small_traces();
  OrnsteinUhlenbeck ou;
  const auto report = assemble_ml_estimate(ou, t.data, t.base, t.increments, parameter_component(1));
  EXPECT_EQ(report.base_level, 1);
  EXPECT_EQ(report.max_level, 3);
  ASSERT_EQ(report.increments.size(), 2u);
  double sum = report.base_value;
  double cost = report.base_cost;
  for (const auto& inc : report.increments) {
    sum += inc.value;
    cost += inc.cost;
  }
  EXPECT_NEAR(report.estimate, sum, 1e-12);
  EXPECT_NEAR(report.total_cost, cost, 1e-6);
}

TEST(Assemble, BaseOnlyIsPlainMean) {
  static const auto t = small_traces();
  OrnsteinUhlenbeck ou;
  const auto report = assemble_ml_estimate(ou, t.data, t.base, {}, parameter_component(0));
  const auto series = t.base.parameter_series(0);
  EXPECT_NEAR(report.estimate, support::mean_of(series), 1e-12);
  EXPECT_EQ(report.max_level, report.base_level);
}

TEST(Assemble, MissingOrDuplicateLevels) {
  static const auto t = small_traces();
  OrnsteinUhlenbeck ou;
  std::vector<ChainTrace> gap{t.increments[1]};
  EXPECT_THROW(assemble_ml_estimate(ou, t.data, t.base, gap, parameter_component(0)), ConfigError);
  std::vector<ChainTrace> dup{t.increments[0], t.increments[0]};
  EXPECT_THROW(assemble_ml_estimate(ou, t.data, t.base, dup, parameter_component(0)), ConfigError);
  EXPECT_THROW(assemble_ml_estimate(ou, t.data, t.increments[0], {}, parameter_component(0)), ConfigError);
}
