#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "mlpmmh/euler_coupling.hpp"
#include "mlpmmh/particle_filter.hpp"
#include "mlpmmh/random.hpp"
#include "mlpmmh/sde_models.hpp"

namespace mlpmmh {

/// Current PMMH state. `log_likelihood` is the estimate produced by the same
/// filter run that produced `path`; it is carried forward, never recomputed.
struct ChainState {
  ParamVector theta;
  std::shared_ptr<const TracedPath> path;
  double log_likelihood = 0.0;
  double log_prior = 0.0;
};

struct ChainSample {
  ChainState state;
  bool accepted = false;
};

/// Parameter proposal q(theta' | theta).
class Proposal {
 public:
  virtual ~Proposal() = default;
  [[nodiscard]] virtual ParamVector propose(const ParamVector& from, Rng& rng) const = 0;
  /// log q(from | to) - log q(to | from).
  [[nodiscard]] virtual double log_correction(const ParamVector& from, const ParamVector& to) const = 0;
};

/// Independent Gaussian random walks on log(theta_i). The Hastings
/// correction is sum_i log(to_i / from_i).
class LogRandomWalk final : public Proposal {
 public:
  explicit LogRandomWalk(std::vector<double> scales);

  [[nodiscard]] ParamVector propose(const ParamVector& from, Rng& rng) const override;
  [[nodiscard]] double log_correction(const ParamVector& from, const ParamVector& to) const override;
  [[nodiscard]] const std::vector<double>& scales() const noexcept { return scales_; }

 private:
  std::vector<double> scales_;
};

inline constexpr double kDefaultProposalScale = 0.25;

struct ChainConfig {
  LevelStep level;
  Coupling coupling = Coupling::kSingle;
  std::size_t particles = 0;  // 0: use the number of observations
  std::size_t samples = 1;
  std::size_t burn_in = 1000;
  std::vector<double> proposal_scales;  // empty: kDefaultProposalScale per coordinate
  FilterOptions filter;
  std::size_t init_retries = 100;
  std::size_t init_candidates = 1;  // prior draws scored; the best one starts the chain
};

struct ChainTrace {
  std::vector<ChainSample> samples;  // post burn-in
  std::size_t accepted = 0;          // among recorded samples
  std::size_t iterations = 0;        // including burn-in
  double cost = 0.0;                 // Euler substeps, burn-in included
  double sampling_cost = 0.0;        // Euler substeps of recorded iterations only
  LevelStep level;
  Coupling coupling = Coupling::kSingle;
  std::uint64_t seed = 0;

  [[nodiscard]] double acceptance_rate() const noexcept {
    return samples.empty() ? 0.0 : static_cast<double>(accepted) / static_cast<double>(samples.size());
  }
  /// Component `index` of theta across recorded samples.
  [[nodiscard]] std::vector<double> parameter_series(std::size_t index) const;
};

struct StepResult {
  ChainState state;
  bool accepted = false;
  double acceptance_probability = 0.0;
};

/// log acceptance ratio for a proposed move; -inf when the proposal has zero prior mass.
double log_acceptance_ratio(const ChainState& current, const ChainState& proposed, double log_proposal_correction);

/// One Metropolis-Hastings step with the particle likelihood estimate.
/// Proposals outside the prior support are rejected without running the filter.
StepResult pmmh_step(const ChainState& state, const DiffusionModel& model, const ObservationRecord& data,
                     const ChainConfig& config, const Proposal& proposal, Rng& rng);

/// Stateful sampler so chains can be extended after the fact. Construction
/// draws theta^0 from the prior and runs the filter once (retrying on collapse).
class PmmhSampler {
 public:
  PmmhSampler(const DiffusionModel& model, const ObservationRecord& data, ChainConfig config, std::uint64_t seed);
  PmmhSampler(const DiffusionModel& model, const ObservationRecord& data, ChainConfig config, std::uint64_t seed,
              std::unique_ptr<Proposal> proposal);

  /// Runs `iterations` unrecorded steps.
  void burn_in(std::size_t iterations);
  /// Appends `count` recorded samples to `trace`.
  void sample(std::size_t count, ChainTrace& trace);

  [[nodiscard]] const ChainState& state() const noexcept { return state_; }
  [[nodiscard]] const ChainConfig& config() const noexcept { return config_; }
  [[nodiscard]] double cost() const noexcept { return cost_; }
  [[nodiscard]] std::size_t iterations() const noexcept { return iterations_; }

 private:
  double iteration_cost() const noexcept;

  const DiffusionModel* model_;
  const ObservationRecord* data_;
  ChainConfig config_;
  std::unique_ptr<Proposal> proposal_;
  Rng rng_;
  ChainState state_;
  double cost_ = 0.0;
  std::size_t iterations_ = 0;
};

/// Runs burn_in + samples PMMH steps and returns the recorded samples.
ChainTrace run_chain(const DiffusionModel& model, const ObservationRecord& data, const ChainConfig& config,
                     std::uint64_t seed);

/// Pilot tuning of the log-random-walk scales toward an acceptance rate in
/// [0.2, 0.3]: `rounds` short chains of `iterations` steps, rescaling all
/// coordinates jointly after each round.
std::vector<double> tune_proposal_scales(const DiffusionModel& model, const ObservationRecord& data,
                                         ChainConfig config, std::uint64_t seed, std::size_t rounds = 8,
                                         std::size_t iterations = 200);

/// Resolves the particle count rule (0 -> number of observations).
std::size_t resolve_particles(const ChainConfig& config, const ObservationRecord& data) noexcept;

}  // namespace mlpmmh
