// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance            run everything
//   acceptance 1 3 8      run a subset

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mlpmmh/euler_coupling.hpp"
#include "mlpmmh/harness.hpp"
#include "mlpmmh/ml_estimator.hpp"
#include "mlpmmh/particle_filter.hpp"
#include "mlpmmh/pmmh.hpp"
#include "mlpmmh/random.hpp"
#include "mlpmmh/sde_models.hpp"
#include "../support.hpp"

namespace {

using namespace mlpmmh;
using support::mean_of;
using support::ols_slope;
using support::variance_of;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- oracles ---------------------------------------------------------------

// Exact likelihood of the Euler-discretized OU model (linear Gaussian) via a
// scalar Kalman filter. One observation interval is k steps of size h.
double kalman_euler_loglik(const std::vector<double>& y, double theta, double sigma, double spacing, double h,
                           double tau2 = 0.2, double x0 = 0.0) {
  const int k = static_cast<int>(std::lround(spacing / h));
  const double r = 1.0 - h * theta;
  double a = 1.0, q = 0.0;
  for (int j = 0; j < k; ++j) {
    q = r * r * q + h * sigma * sigma;
    a *= r;
  }
  double m = x0, p = 0.0, ll = 0.0;
  for (double obs : y) {
    m = a * m;
    p = a * a * p + q;
    const double s = p + tau2;
    ll += support::gauss_logpdf(obs, m, s);
    const double gain = p / s;
    m += gain * (obs - m);
    p *= 1.0 - gain;
  }
  return ll;
}

// Posterior means of (theta, sigma) under the OU priors, by midpoint
// quadrature in log coordinates.
std::pair<double, double> quadrature_posterior_mean(const std::vector<double>& y, double spacing, double h) {
  const int grid = 700;
  const double lo = std::log(1e-4), hi = std::log(25.0);
  const double du = (hi - lo) / grid;
  std::vector<double> lp(static_cast<std::size_t>(grid) * grid);
  double peak = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid; ++i) {
    const double t = std::exp(lo + (i + 0.5) * du);
    for (int j = 0; j < grid; ++j) {
      const double s = std::exp(lo + (j + 0.5) * du);
      // Gamma(1,1) and Gamma(1,0.5) priors, plus the log-coordinate Jacobian.
      const double v = kalman_euler_loglik(y, t, s, spacing, h) - t - 2.0 * s + std::log(t) + std::log(s);
      lp[static_cast<std::size_t>(i) * grid + j] = v;
      peak = std::max(peak, v);
    }
  }
  double z = 0.0, mt = 0.0, ms = 0.0;
  for (int i = 0; i < grid; ++i) {
    const double t = std::exp(lo + (i + 0.5) * du);
    for (int j = 0; j < grid; ++j) {
      const double s = std::exp(lo + (j + 0.5) * du);
      const double w = std::exp(lp[static_cast<std::size_t>(i) * grid + j] - peak);
      z += w;
      mt += w * t;
      ms += w * s;
    }
  }
  return {mt / z, ms / z};
}

// Plain Monte Carlo estimate of the Euler likelihood: average of prod_p g(x_p, y_p)
// over independent Euler paths. Returns (log mean, relative standard error).
std::pair<double, double> plain_mc_likelihood(const DiffusionModel& model, const ParamVector& theta,
                                              const std::vector<double>& y, double h, std::size_t paths,
                                              std::uint64_t seed) {
  Rng rng(seed);
  const int k = static_cast<int>(std::lround(model.obs_spacing() / h));
  std::vector<double> logs(paths);
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < paths; ++i) {
    double x = model.initial_law().point[0];
    double lw = 0.0;
    for (double obs : y) {
      for (int j = 0; j < k; ++j) {
        model.drift(theta, {&x, 1}, {&a, 1});
        model.diffusion(theta, {&x, 1}, {&b, 1});
        x += h * a + std::sqrt(h) * b * rng.normal();
      }
      lw += model.obs_log_density(theta, {&x, 1}, {&obs, 1});
    }
    logs[i] = lw;
  }
  const double top = *std::max_element(logs.begin(), logs.end());
  std::vector<double> w(paths);
  for (std::size_t i = 0; i < paths; ++i) w[i] = std::exp(logs[i] - top);
  const double m = mean_of(w);
  const double se = std::sqrt(variance_of(w) / static_cast<double>(paths));
  return {top + std::log(m), se / m};
}

// Batch-means standard error with 50 batches.
double batch_se(const std::vector<double>& x) {
  const std::size_t batches = 50, len = x.size() / batches;
  std::vector<double> means;
  for (std::size_t b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = b * len; i < (b + 1) * len; ++i) s += x[i];
    means.push_back(s / static_cast<double>(len));
  }
  return std::sqrt(variance_of(means) / static_cast<double>(batches));
}

std::vector<double> as_vector(const ObservationRecord& r) { return r.values; }

// --- 1: strong rate ------------------------------------------------------------

Outcome strong_rate(const DiffusionModel& model, const ParamVector& theta, std::uint64_t seed) {
  const std::size_t reps = 100000;
  std::vector<double> lh, lm;
  std::string detail;
  for (int l = 2; l <= 8; ++l) {
    const LevelStep level = LevelStep::at(l, model.obs_spacing());
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(l)}));
    EulerWorkspace work(1);
    double sum = 0.0;
    for (std::size_t r = 0; r < reps; ++r) {
      double f = model.initial_law().point[0], c = f;
      advance_coupled(model, theta, {&f, 1}, {&c, 1}, level, rng, work);
      sum += (f - c) * (f - c);
    }
    lh.push_back(std::log(level.step));
    lm.push_back(std::log(sum / static_cast<double>(reps)));
  }
  const double slope = ols_slope(lh, lm);
  return {slope >= 1.7 && slope <= 2.3, fmt("%s slope %.3f, band [1.7, 2.3]", std::string(model.name()).c_str(), slope)};
}

// --- 2: unbiasedness ---------------------------------------------------------

Outcome unbiased_ou() {
  const OrnsteinUhlenbeck model;
  const ParamVector theta{1.0, 0.5};
  const ObservationRecord data = simulate_data(model, theta, 10, default_fine_step(0.5), 11);
  const double h = 0.125;
  const double exact = kalman_euler_loglik(as_vector(data), theta[0], theta[1], 0.5, h);
  const LevelStep level = LevelStep::at(3, 0.5);
  Rng rng(12);
  std::vector<double> ratio;
  for (int r = 0; r < 10000; ++r) {
    ratio.push_back(std::exp(run_filter(model, theta, data, level, Coupling::kSingle, 50, rng).log_likelihood - exact));
  }
  const double m = mean_of(ratio), se = std::sqrt(variance_of(ratio) / ratio.size());
  const double z = (m - 1.0) / se;
  return {std::abs(z) <= 3.0, fmt("ou mean ratio to Kalman %.5f, SE %.5f, |z| %.2f <= 3", m, se, std::abs(z))};
}

Outcome unbiased_langevin() {
  const Langevin model;
  const ParamVector theta{10.0, 1.0};
  const ObservationRecord data = simulate_data(model, theta, 5, default_fine_step(1.0), 21);
  const double h = 0.25;
  const auto [oracle, oracle_rel_se] = plain_mc_likelihood(model, theta, as_vector(data), h, 2000000, 22);
  const LevelStep level = LevelStep::at(2, 1.0);
  Rng rng(23);
  std::vector<double> ratio;
  for (int r = 0; r < 10000; ++r) {
    ratio.push_back(
        std::exp(run_filter(model, theta, data, level, Coupling::kSingle, 50, rng).log_likelihood - oracle));
  }
  const double m = mean_of(ratio), se = std::sqrt(variance_of(ratio) / ratio.size());
  const double combined = std::hypot(se, m * oracle_rel_se);
  const double z = (m - 1.0) / combined;
  return {std::abs(z) <= 3.0,
          fmt("langevin mean ratio to plain MC %.5f, combined SE %.5f, |z| %.2f <= 3", m, combined, std::abs(z))};
}

// --- 3: weight structure ----------------------------------------------------

Outcome weight_structure(const DiffusionModel& model, std::uint64_t seed) {
  const std::size_t paths = 100000, n = 10;
  Rng rng(seed);
  std::size_t bad_range = 0, bad_step = 0, bad_sum = 0;
  for (std::size_t i = 0; i < paths; ++i) {
    const ParamVector theta = model.sample_prior(rng);
    const int l = coarsest_level(model.obs_spacing()) + 1 + static_cast<int>(i % 4);
    const LevelStep level = LevelStep::at(l, model.obs_spacing());
    ObservationRecord data;
    data.spacing = model.obs_spacing();
    TracedPath path;
    CoupledState z = initial_coupled_state(model, theta, rng);
    path.fine = z.fine;
    path.coarse = z.coarse;
    for (std::size_t p = 0; p < n; ++p) {
      z = transition_coupled(model, theta, z, level, rng);
      path.fine.push_back(z.fine[0]);
      path.coarse.push_back(z.coarse[0]);
      data.values.push_back(3.0 * rng.normal());
    }
    const LogWeights w = compute_weights(model, theta, path, data);
    if (!(w.log_h1 <= 0.0 && w.log_h2 <= 0.0 && std::isfinite(w.log_h1) && std::isfinite(w.log_h2))) ++bad_range;
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double y = data.values[p];
      const double g1 = model.obs_log_density(theta, path.fine_at(p + 1), {&y, 1});
      const double g2 = model.obs_log_density(theta, path.coarse_at(p + 1), {&y, 1});
      const double top = std::max(g1, g2);
      const double r1 = std::exp(g1 - top), r2 = std::exp(g2 - top);
      if (!(r1 == 1.0 || r2 == 1.0) || r1 > 1.0 || r2 > 1.0) ++bad_step;
      s1 += g1 - top;
      s2 += g2 - top;
    }
    if (std::abs(s1 - w.log_h1) > 1e-9 * (1.0 + std::abs(s1)) || std::abs(s2 - w.log_h2) > 1e-9 * (1.0 + std::abs(s2)))
      ++bad_sum;
  }
  return {bad_range == 0 && bad_step == 0 && bad_sum == 0,
          fmt("%s %zu paths: H outside (0,1] %zu, steps without a unit ratio %zu, mismatched products %zu",
              std::string(model.name()).c_str(), paths, bad_range, bad_step, bad_sum)};
}

// --- 4: PMMH against quadrature -------------------------------------------------

Outcome pmmh_correctness() {
  const OrnsteinUhlenbeck model;
  const ObservationRecord data = simulate_data(model, {1.0, 0.5}, 20, default_fine_step(0.5), 41);
  const double h = 0.125;
  const auto [qt, qs] = quadrature_posterior_mean(as_vector(data), 0.5, h);
  ChainConfig cc;
  cc.level = LevelStep::at(3, 0.5);
  cc.samples = 200000;
  cc.burn_in = 10000;
  cc.init_candidates = 10;
  const ChainTrace trace = run_chain(model, data, cc, 42);
  const auto t = trace.parameter_series(0), s = trace.parameter_series(1);
  const double mt = mean_of(t), ms = mean_of(s), st = batch_se(t), ss = batch_se(s);
  const double zt = (mt - qt) / st, zs = (ms - qs) / ss;
  return {std::abs(zt) <= 3.0 && std::abs(zs) <= 3.0,
          fmt("theta %.4f vs %.4f (|z| %.2f), sigma %.4f vs %.4f (|z| %.2f), acceptance %.2f", mt, qt, std::abs(zt),
              ms, qs, std::abs(zs), trace.acceptance_rate())};
}

// --- 5: increment variance decay -----------------------------------------------

Outcome variance_decay() {
  const OrnsteinUhlenbeck model;
  const ObservationRecord data = simulate_data(model, {1.0, 0.5}, 20, default_fine_step(0.5), 51);
  const std::size_t reps = 50, n = 2000;
  std::vector<double> lh;
  std::vector<std::vector<double>> lv(2);
  std::string levels;
  for (int l = 2; l <= 6; ++l) {
    ChainConfig cc;
    cc.level = LevelStep::at(l, 0.5);
    cc.coupling = Coupling::kCoupled;
    cc.samples = n;
    cc.burn_in = 1000;
    cc.init_candidates = 10;
    std::vector<std::vector<double>> inc(2);
    for (std::size_t r = 0; r < reps; ++r) {
      const ChainTrace trace = run_chain(model, data, cc, derive_seed(52, {static_cast<std::uint64_t>(l), r}));
      for (std::size_t p = 0; p < 2; ++p) {
        inc[p].push_back(level_increment_estimate(model, data, trace, parameter_component(p)).value);
      }
    }
    lh.push_back(std::log(cc.level.step));
    for (std::size_t p = 0; p < 2; ++p) lv[p].push_back(std::log(static_cast<double>(n) * variance_of(inc[p])));
  }
  const double st = ols_slope(lh, lv[0]), ss = ols_slope(lh, lv[1]);
  return {st >= 1.5 && ss >= 1.5, fmt("slopes theta %.3f, sigma %.3f, need >= 1.5", st, ss)};
}

// --- 6: telescoping -------------------------------------------------------------

// Linearized ratio estimator: the increment and its batch-means standard error.
std::pair<double, double> increment_with_se(const DiffusionModel& model, const ObservationRecord& data,
                                            const ChainTrace& trace, std::size_t p) {
  const std::size_t n = trace.samples.size();
  std::vector<double> f(n), c(n), w1(n), w2(n);
  double top1 = -std::numeric_limits<double>::infinity(), top2 = top1;
  for (std::size_t i = 0; i < n; ++i) {
    const ChainState& s = trace.samples[i].state;
    const LogWeights w = compute_weights(model, s.theta, *s.path, data);
    f[i] = c[i] = s.theta[p];
    w1[i] = w.log_h1;
    w2[i] = w.log_h2;
    top1 = std::max(top1, w.log_h1);
    top2 = std::max(top2, w.log_h2);
  }
  for (std::size_t i = 0; i < n; ++i) {
    w1[i] = std::exp(w1[i] - top1);
    w2[i] = std::exp(w2[i] - top2);
  }
  double a1 = 0.0, b1 = 0.0, a2 = 0.0, b2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    a1 += f[i] * w1[i];
    b1 += w1[i];
    a2 += c[i] * w2[i];
    b2 += w2[i];
  }
  const double e1 = a1 / b1, e2 = a2 / b2, m1 = b1 / n, m2 = b2 / n;
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = w1[i] * (f[i] - e1) / m1 - w2[i] * (c[i] - e2) / m2;
  return {e1 - e2, batch_se(z)};
}

Outcome telescoping(const DiffusionModel& model, const ParamVector& truth, std::size_t n_obs, int max_level,
                    std::size_t base_samples, std::size_t single_samples, std::uint64_t seed) {
  const ObservationRecord data = simulate_data(model, truth, n_obs, default_fine_step(model.obs_spacing()), seed);
  const int base = coarsest_level(model.obs_spacing());
  auto config = [&](int l, Coupling coupling, std::size_t samples) {
    ChainConfig cc;
    cc.level = LevelStep::at(l, model.obs_spacing());
    cc.coupling = coupling;
    cc.samples = samples;
    cc.burn_in = 2000;
    cc.init_candidates = 10;
    return cc;
  };
  const ChainTrace base_trace = run_chain(model, data, config(base, Coupling::kSingle, base_samples), seed + 1);
  std::vector<ChainTrace> inc;
  for (int l = base + 1; l <= max_level; ++l) {
    const std::size_t samples = std::max<std::size_t>(base_samples >> (2 * (l - base)), 5000);
    inc.push_back(run_chain(model, data, config(l, Coupling::kCoupled, samples), seed + 1 + l));
  }
  const ChainTrace single = run_chain(model, data, config(max_level, Coupling::kSingle, single_samples), seed + 100);

  bool pass = true;
  std::string detail = std::string(model.name());
  const auto names = model.param_names();
  for (std::size_t p = 0; p < 2; ++p) {
    const MLReport report = assemble_ml_estimate(model, data, base_trace, inc, parameter_component(p));
    const auto base_series = base_trace.parameter_series(p);
    double var = std::pow(batch_se(base_series), 2);
    double own = mean_of(base_series);
    for (const ChainTrace& t : inc) {
      const auto [value, se] = increment_with_se(model, data, t, p);
      own += value;
      var += se * se;
    }
    const auto series = single.parameter_series(p);
    const double sl = mean_of(series), sl_se = batch_se(series);
    const double combined = std::sqrt(var + sl_se * sl_se);
    const double z = (report.estimate - sl) / combined;
    const bool agree = std::abs(report.estimate - own) <= 1e-9 * (1.0 + std::abs(own));
    pass = pass && std::abs(z) <= 3.0 && agree;
    detail += fmt(" | %s ML %.4f vs SL %.4f, SE %.4f, |z| %.2f", names[p].c_str(), report.estimate, sl, combined,
                  std::abs(z));
    if (!agree) detail += fmt(" (ML %.6f disagrees with direct sum %.6f)", report.estimate, own);
  }
  return {pass, detail};
}

// --- 7: desk-scale rates ------------------------------------------------------

Outcome desk_rates() {
  harness::ExperimentConfig config = harness::default_config("ou", false);
  config.threads = std::max(1u, std::thread::hardware_concurrency());
  const auto model = harness::model_for(config);
  const ObservationRecord data = harness::prepare_data(*model, config);
  const harness::ExperimentResult result = harness::run_ml_experiment(*model, data, config);
  const auto reference = harness::reference_values(*model, data, config, 0, 0);
  const auto points = harness::cost_error_points(result.rows, reference);
  const auto rates = harness::fit_rates(points);
  bool pass = true;
  std::string detail;
  for (const std::string param : {"theta", "sigma"}) {
    const auto ml = rates.find("ml/" + param), sl = rates.find("single/" + param);
    if (ml == rates.end() || sl == rates.end()) {
      pass = false;
      detail += " | " + param + " missing fit";
      continue;
    }
    const double a = ml->second.slope, b = sl->second.slope;
    const bool ok = a >= -1.30 && a <= -0.85 && b >= -1.75 && b <= -1.25 && a > b;
    pass = pass && ok;
    detail += fmt(" | %s ML %.3f in [-1.30,-0.85], SL %.3f in [-1.75,-1.25]", param.c_str(), a, b);
  }
  return {pass, detail.substr(3)};
}

// --- 8: allocation ------------------------------------------------------------------

Outcome allocation() {
  std::size_t checked = 0, bad_target = 0, bad_count = 0, bad_bound = 0;
  for (const auto& [beta, gamma] : {std::pair{2.0, 1.0}, std::pair{1.0, 1.0}}) {
    for (const double eps : {0.2, 0.05, 0.01, 0.003}) {
      for (const int base : {0, 1}) {
        for (const double c : {1.0, 3.7}) {
          const RateConstants rates{beta, gamma, 1.0};
          const LevelPlan plan = allocate_samples(eps, rates, c, base);
          const int big_l = std::max(base, static_cast<int>(std::ceil(std::log2(1.0 / eps) - 1e-12)));
          double k = 0.0;
          for (int l = 1; l <= big_l; ++l) k += std::pow(2.0, -l * (beta - gamma) / 2.0);
          if (big_l == 0) k = 1.0;
          double levels_sum = 0.0, var_sum = 0.0;
          for (int l = base; l <= big_l; ++l) {
            const std::size_t i = static_cast<std::size_t>(l - base);
            const double h = std::pow(2.0, -l);
            const double target = c * k * std::pow(h, (beta + gamma) / 2.0) / (eps * eps);
            ++checked;
            if (i >= plan.target_samples.size() || std::abs(plan.target_samples[i] - target) > 1e-12 * target) {
              ++bad_target;
              continue;
            }
            const auto expected = static_cast<std::size_t>(std::max(1.0, std::ceil(target)));
            if (plan.samples[i] != expected) ++bad_count;
            levels_sum += std::pow(h, (beta - gamma) / 2.0);
            var_sum += std::pow(h, beta) / static_cast<double>(plan.samples[i]);
          }
          if (plan.levels.size() != static_cast<std::size_t>(big_l - base + 1)) ++bad_target;
          const double bound = levels_sum / (c * k) * eps * eps;
          if (!(var_sum <= bound * (1.0 + 1e-12)) || !(plan.variance_sum() <= bound * (1.0 + 1e-12))) ++bad_bound;
        }
      }
    }
  }
  return {bad_target == 0 && bad_count == 0 && bad_bound == 0,
          fmt("%zu level targets: mismatched %zu, wrong counts %zu, variance bound violations %zu", checked,
              bad_target, bad_count, bad_bound)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const OrnsteinUhlenbeck ou;
  const Langevin langevin;
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, [&] { return strong_rate(ou, {1.0, 0.5}, 101); }},
      {1, [&] { return strong_rate(langevin, {10.0, 1.0}, 102); }},
      {2, unbiased_ou},
      {2, unbiased_langevin},
      {3, [&] { return weight_structure(ou, 301); }},
      {3, [&] { return weight_structure(langevin, 302); }},
      {4, pmmh_correctness},
      {5, variance_decay},
      {6, [&] { return telescoping(ou, {1.0, 0.5}, 20, 4, 100000, 200000, 601); }},
      {6, [&] { return telescoping(langevin, {10.0, 1.0}, 20, 3, 40000, 40000, 651); }},
      {7, desk_rates},
      {8, allocation},
  };

  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.contains(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %d: %s (%.1f s)\n", out.pass ? "PASS" : "FAIL", id, out.detail.c_str(), secs);
    std::fflush(stdout);
    if (!out.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
