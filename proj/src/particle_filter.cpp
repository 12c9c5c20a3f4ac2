#include "mlpmmh/particle_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mlpmmh/errors.hpp"
#include "mlpmmh/stats.hpp"

namespace mlpmmh {
namespace {

// Cumulative normalized weights; throws FilterCollapse if none is positive.
std::vector<double> cumulative_weights(std::span<const double> log_weights) {
  if (log_weights.empty()) throw ContractViolation("resampling needs at least one weight");
  const double peak = *std::max_element(log_weights.begin(), log_weights.end());
  if (!(peak > -std::numeric_limits<double>::infinity()) || std::isnan(peak)) {
    throw FilterCollapse("all particle weights are zero");
  }
  std::vector<double> cumulative(log_weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    total += std::exp(log_weights[i] - peak);
    cumulative[i] = total;
  }
  for (double& c : cumulative) c /= total;
  cumulative.back() = 1.0;
  return cumulative;
}

std::size_t locate(const std::vector<double>& cumulative, double u) {
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

double effective_sample_size(std::span<const double> log_weights) {
  const double peak = *std::max_element(log_weights.begin(), log_weights.end());
  double s1 = 0.0;
  double s2 = 0.0;
  for (double lw : log_weights) {
    const double w = std::exp(lw - peak);
    s1 += w;
    s2 += w * w;
  }
  return s1 * s1 / s2;
}

}  // namespace

double log_potential(const DiffusionModel& model, const ParamVector& theta, std::span<const double> fine,
                     std::span<const double> coarse, std::span<const double> y) {
  return std::max(model.obs_log_density(theta, fine, y), model.obs_log_density(theta, coarse, y));
}

double potential(const DiffusionModel& model, const ParamVector& theta, std::span<const double> fine,
                 std::span<const double> coarse, std::span<const double> y) {
  return std::exp(log_potential(model, theta, fine, coarse, y));
}

std::vector<std::size_t> resample_multinomial(std::span<const double> log_weights, std::size_t count, Rng& rng) {
  const auto cumulative = cumulative_weights(log_weights);
  std::vector<std::size_t> out(count);
  for (auto& index : out) index = locate(cumulative, rng.uniform());
  return out;
}

std::vector<std::size_t> resample_stratified(std::span<const double> log_weights, std::size_t count, Rng& rng) {
  const auto cumulative = cumulative_weights(log_weights);
  std::vector<std::size_t> out(count);
  std::size_t j = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double u = (static_cast<double>(i) + rng.uniform()) / static_cast<double>(count);
    while (j + 1 < cumulative.size() && cumulative[j] <= u) ++j;
    out[i] = j;
  }
  return out;
}

double filter_cost(const LevelStep& level, Coupling coupling, std::size_t particles, std::size_t observations) noexcept {
  double per_interval = static_cast<double>(level.substeps);
  if (coupling == Coupling::kCoupled) per_interval += static_cast<double>(level.substeps / 2);
  return per_interval * static_cast<double>(particles) * static_cast<double>(observations);
}

FilterOutput run_filter(const DiffusionModel& model, const ParamVector& theta, const ObservationRecord& data,
                        const LevelStep& level, Coupling coupling, std::size_t particles, Rng& rng,
                        const FilterOptions& options) {
  if (particles < 1) throw ContractViolation("particle filter needs at least one particle");
  if (data.obs_dim != model.obs_dim()) throw ContractViolation("observation dimension does not match the model");
  const bool coupled = coupling == Coupling::kCoupled;
  if (coupled && !level.couples_to_coarser()) {
    throw ContractViolation("coupled filter needs a level >= 1 whose coarser neighbour divides the spacing");
  }

  const std::size_t n = data.size();
  const std::size_t M = particles;
  const std::size_t d = model.state_dim();
  const std::size_t slab = M * d;

  ParticleHistory hist;
  hist.particles = M;
  hist.dim = d;
  hist.fine.resize((n + 1) * slab);
  if (coupled) hist.coarse.resize((n + 1) * slab);
  hist.ancestors.resize(n * M);
  hist.log_potentials.resize(n * M);

  // z_0: diagonal coupling of the initial law, one draw per particle.
  const InitialLaw& init = model.initial_law();
  for (std::size_t i = 0; i < M; ++i) {
    std::span<double> x(hist.fine.data() + i * d, d);
    if (init.is_point_mass()) {
      std::copy(init.point.begin(), init.point.end(), x.begin());
    } else {
      init.sampler(theta, rng, x);
    }
    if (coupled) std::copy(x.begin(), x.end(), hist.coarse.begin() + static_cast<std::ptrdiff_t>(i * d));
  }

  FilterOutput out;
  if (options.record_ess) out.ess.reserve(n);

  EulerWorkspace work(d);
  std::vector<double> previous_log_g(M, 0.0);  // G_0 := 1
  const double log_m = std::log(static_cast<double>(M));
  double log_likelihood = 0.0;

  for (std::size_t p = 1; p <= n; ++p) {
    const auto parents = options.resampling == Resampling::kMultinomial
                             ? resample_multinomial(previous_log_g, M, rng)
                             : resample_stratified(previous_log_g, M, rng);
    std::copy(parents.begin(), parents.end(), hist.ancestors.begin() + static_cast<std::ptrdiff_t>((p - 1) * M));

    const auto y = data.at(p - 1);
    double* fine_now = hist.fine.data() + p * slab;
    const double* fine_before = hist.fine.data() + (p - 1) * slab;
    double* coarse_now = coupled ? hist.coarse.data() + p * slab : nullptr;
    const double* coarse_before = coupled ? hist.coarse.data() + (p - 1) * slab : nullptr;
    double* log_g = hist.log_potentials.data() + (p - 1) * M;

    for (std::size_t i = 0; i < M; ++i) {
      std::span<double> x(fine_now + i * d, d);
      std::copy_n(fine_before + parents[i] * d, d, x.begin());
      if (coupled) {
        std::span<double> xc(coarse_now + i * d, d);
        std::copy_n(coarse_before + parents[i] * d, d, xc.begin());
        advance_coupled(model, theta, x, xc, level, rng, work);
        log_g[i] = log_potential(model, theta, x, xc, y);
      } else {
        advance_fine(model, theta, x, level, rng, work);
        log_g[i] = model.obs_log_density(theta, x, y);
      }
    }

    std::span<const double> step_log_g(log_g, M);
    const double lse = stats::log_sum_exp(step_log_g);
    if (!(lse > -std::numeric_limits<double>::infinity()) || std::isnan(lse)) {
      throw FilterCollapse("all potentials vanished at observation " + std::to_string(p));
    }
    log_likelihood += lse - log_m;
    if (options.record_ess) out.ess.push_back(effective_sample_size(step_log_g));
    std::copy(step_log_g.begin(), step_log_g.end(), previous_log_g.begin());
  }

  // Trace one lineage: j ~ G_n, then follow ancestors back to time 0.
  std::size_t j = resample_multinomial(previous_log_g, 1, rng).front();
  out.traced_index = j;
  out.path.dim = d;
  out.path.fine.resize((n + 1) * d);
  if (coupled) out.path.coarse.resize((n + 1) * d);
  for (std::size_t p = n + 1; p-- > 0;) {
    std::copy_n(hist.fine.data() + p * slab + j * d, d, out.path.fine.begin() + static_cast<std::ptrdiff_t>(p * d));
    if (coupled) {
      std::copy_n(hist.coarse.data() + p * slab + j * d, d,
                  out.path.coarse.begin() + static_cast<std::ptrdiff_t>(p * d));
    }
    if (p > 0) j = hist.ancestors[(p - 1) * M + j];
  }

  out.log_likelihood = log_likelihood;
  if (options.keep_history) out.history = std::move(hist);
  return out;
}

}  // namespace mlpmmh
