#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mlpmmh/euler_coupling.hpp"
#include "mlpmmh/random.hpp"
#include "mlpmmh/sde_models.hpp"

namespace mlpmmh {

/// Whether the filter runs on single Euler paths at one level or on
/// fine/coarse pairs driven by the synchronous coupling.
enum class Coupling { kSingle, kCoupled };

enum class Resampling {
  kMultinomial,  // default; the law the likelihood estimator is analysed under
  kStratified,   // lower variance, but not the multinomial law
};

struct FilterOptions {
  Resampling resampling = Resampling::kMultinomial;
  bool record_ess = false;
  bool keep_history = false;
};

/// A path x_{0:n} (and x'_{0:n} for coupled runs) stored row-major, (n+1) x d.
struct TracedPath {
  std::size_t dim = 1;
  std::vector<double> fine;
  std::vector<double> coarse;  // empty for single-level paths

  [[nodiscard]] bool coupled() const noexcept { return !coarse.empty(); }
  [[nodiscard]] std::size_t length() const noexcept { return dim == 0 ? 0 : fine.size() / dim; }
  [[nodiscard]] std::span<const double> fine_at(std::size_t p) const noexcept {
    return std::span<const double>(fine).subspan(p * dim, dim);
  }
  [[nodiscard]] std::span<const double> coarse_at(std::size_t p) const noexcept {
    return std::span<const double>(coarse).subspan(p * dim, dim);
  }
};

/// Full particle genealogy: states for p = 0..n, ancestors a_{p-1} for p = 1..n,
/// and log potentials for p = 1..n.
struct ParticleHistory {
  std::size_t particles = 0;
  std::size_t dim = 1;
  std::vector<double> fine;    // (n+1) x M x d
  std::vector<double> coarse;  // (n+1) x M x d, empty for single runs
  std::vector<std::size_t> ancestors;  // n x M; ancestors[(p-1)*M + i] is the parent of particle i at time p
  std::vector<double> log_potentials;  // n x M

  [[nodiscard]] std::span<const double> fine_at(std::size_t p, std::size_t i) const noexcept {
    return std::span<const double>(fine).subspan((p * particles + i) * dim, dim);
  }
  [[nodiscard]] std::span<const double> coarse_at(std::size_t p, std::size_t i) const noexcept {
    return std::span<const double>(coarse).subspan((p * particles + i) * dim, dim);
  }
};

struct FilterOutput {
  double log_likelihood = 0.0;
  TracedPath path;
  std::size_t traced_index = 0;
  std::vector<double> ess;  // per observation, when requested
  std::optional<ParticleHistory> history;
};

/// log G_p(z) = max(log g(x, y_p), log g(x', y_p)).
double log_potential(const DiffusionModel& model, const ParamVector& theta, std::span<const double> fine,
                     std::span<const double> coarse, std::span<const double> y);

/// G_p(z) in linear scale.
double potential(const DiffusionModel& model, const ParamVector& theta, std::span<const double> fine,
                 std::span<const double> coarse, std::span<const double> y);

/// `count` i.i.d. categorical draws with probabilities proportional to
/// exp(log_weights - max). Throws FilterCollapse when every weight is -inf.
std::vector<std::size_t> resample_multinomial(std::span<const double> log_weights, std::size_t count, Rng& rng);

/// Stratified resampling: one uniform per stratum [i/count, (i+1)/count).
std::vector<std::size_t> resample_stratified(std::span<const double> log_weights, std::size_t count, Rng& rng);

/// Bootstrap particle filter with resampling at every step. Returns the log
/// of the unbiased likelihood estimate prod_p (1/M) sum_j G_p(z_p^j) and one
/// ancestral lineage drawn with probability proportional to G_n.
///
/// `Coupling::kSingle` runs plain Euler paths with G_p = g(x_p, y_p);
/// `Coupling::kCoupled` runs fine/coarse pairs and needs a level that couples
/// to its coarser neighbour.
FilterOutput run_filter(const DiffusionModel& model, const ParamVector& theta, const ObservationRecord& data,
                        const LevelStep& level, Coupling coupling, std::size_t particles, Rng& rng,
                        const FilterOptions& options = {});

/// Euler substeps (fine plus coarse) consumed by one filter run.
double filter_cost(const LevelStep& level, Coupling coupling, std::size_t particles, std::size_t observations) noexcept;

}  // namespace mlpmmh
