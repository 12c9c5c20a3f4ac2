#include "mlpmmh/pmmh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mlpmmh/errors.hpp"

namespace mlpmmh {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> resolve_scales(const ChainConfig& config, const DiffusionModel& model) {
  if (config.proposal_scales.empty()) return std::vector<double>(model.param_dim(), kDefaultProposalScale);
  if (config.proposal_scales.size() != model.param_dim()) {
    throw ConfigError("proposal scale count does not match the parameter dimension");
  }
  return config.proposal_scales;
}

}  // namespace

LogRandomWalk::LogRandomWalk(std::vector<double> scales) : scales_(std::move(scales)) {
  for (double s : scales_) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("proposal scales must be positive");
  }
}

ParamVector LogRandomWalk::propose(const ParamVector& from, Rng& rng) const {
  ParamVector to = from;
  for (std::size_t i = 0; i < to.size(); ++i) to[i] = from[i] * std::exp(scales_[i] * rng.normal());
  return to;
}

double LogRandomWalk::log_correction(const ParamVector& from, const ParamVector& to) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < to.size(); ++i) acc += std::log(to[i]) - std::log(from[i]);
  return acc;
}

std::vector<double> ChainTrace::parameter_series(std::size_t index) const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.state.theta[index]);
  return out;
}

std::size_t resolve_particles(const ChainConfig& config, const ObservationRecord& data) noexcept {
  return config.particles == 0 ? data.size() : config.particles;
}

double log_acceptance_ratio(const ChainState& current, const ChainState& proposed, double log_proposal_correction) {
  if (proposed.log_prior == kNegInf) return kNegInf;
  return (proposed.log_likelihood - current.log_likelihood) + (proposed.log_prior - current.log_prior) +
         log_proposal_correction;
}

StepResult pmmh_step(const ChainState& state, const DiffusionModel& model, const ObservationRecord& data,
                     const ChainConfig& config, const Proposal& proposal, Rng& rng) {
  ChainState candidate;
  candidate.theta = proposal.propose(state.theta, rng);
  candidate.log_prior = model.log_prior(candidate.theta);
  if (candidate.log_prior == kNegInf || !candidate.theta.all_finite()) {
    return {state, false, 0.0};
  }

  FilterOutput filtered = run_filter(model, candidate.theta, data, config.level, config.coupling,
                                     resolve_particles(config, data), rng, config.filter);
  candidate.log_likelihood = filtered.log_likelihood;
  candidate.path = std::make_shared<const TracedPath>(std::move(filtered.path));

  const double log_ratio =
      log_acceptance_ratio(state, candidate, proposal.log_correction(state.theta, candidate.theta));
  const double probability = std::isnan(log_ratio) ? 0.0 : std::exp(std::min(0.0, log_ratio));
  const bool accept = log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio;
  if (accept) return {std::move(candidate), true, probability};
  return {state, false, probability};
}

PmmhSampler::PmmhSampler(const DiffusionModel& model, const ObservationRecord& data, ChainConfig config,
                         std::uint64_t seed)
    : PmmhSampler(model, data, config, seed, std::make_unique<LogRandomWalk>(resolve_scales(config, model))) {}

PmmhSampler::PmmhSampler(const DiffusionModel& model, const ObservationRecord& data, ChainConfig config,
                         std::uint64_t seed, std::unique_ptr<Proposal> proposal)
    : model_(&model), data_(&data), config_(std::move(config)), proposal_(std::move(proposal)), rng_(seed) {
  data.validate();
  if (!proposal_) throw ConfigError("PMMH needs a proposal");
  if (config_.coupling == Coupling::kCoupled && !config_.level.couples_to_coarser()) {
    throw ConfigError("coupled chain at level " + std::to_string(config_.level.level) +
                      " has no valid coarser level");
  }
  const std::size_t particles = resolve_particles(config_, data);
  const std::size_t candidates = std::max<std::size_t>(config_.init_candidates, 1);
  std::size_t found = 0;
  for (std::size_t attempt = 0; found < candidates; ++attempt) {
    ChainState init;
    init.theta = model.sample_prior(rng_);
    init.log_prior = model.log_prior(init.theta);
    if (init.log_prior != kNegInf) {
      try {
        FilterOutput filtered =
            run_filter(model, init.theta, data, config_.level, config_.coupling, particles, rng_, config_.filter);
        cost_ += filter_cost(config_.level, config_.coupling, particles, data.size());
        if (std::isfinite(filtered.log_likelihood)) {
          init.log_likelihood = filtered.log_likelihood;
          init.path = std::make_shared<const TracedPath>(std::move(filtered.path));
          if (found == 0 || init.log_likelihood + init.log_prior > state_.log_likelihood + state_.log_prior) {
            state_ = std::move(init);
          }
          ++found;
          continue;
        }
      } catch (const FilterCollapse&) {
        // degenerate start: redraw theta^0
      }
    }
    if (found == 0 && attempt + 1 >= std::max<std::size_t>(config_.init_retries, 1)) {
      throw FilterCollapse("could not initialize PMMH chain from the prior");
    }
    if (attempt + 1 >= std::max<std::size_t>(config_.init_retries, 1) + candidates) break;
  }
}

double PmmhSampler::iteration_cost() const noexcept {
  return filter_cost(config_.level, config_.coupling, resolve_particles(config_, *data_), data_->size());
}

void PmmhSampler::burn_in(std::size_t iterations) {
  for (std::size_t i = 0; i < iterations; ++i) {
    StepResult step = pmmh_step(state_, *model_, *data_, config_, *proposal_, rng_);
    state_ = std::move(step.state);
    cost_ += iteration_cost();
    ++iterations_;
  }
}

void PmmhSampler::sample(std::size_t count, ChainTrace& trace) {
  trace.samples.reserve(trace.samples.size() + count);
  const double per_iteration = iteration_cost();
  for (std::size_t i = 0; i < count; ++i) {
    StepResult step = pmmh_step(state_, *model_, *data_, config_, *proposal_, rng_);
    state_ = std::move(step.state);
    trace.samples.push_back({state_, step.accepted});
    if (step.accepted) ++trace.accepted;
    cost_ += per_iteration;
    trace.sampling_cost += per_iteration;
    ++iterations_;
  }
  trace.iterations = iterations_;
  trace.cost = cost_;
  trace.level = config_.level;
  trace.coupling = config_.coupling;
}

ChainTrace run_chain(const DiffusionModel& model, const ObservationRecord& data, const ChainConfig& config,
                     std::uint64_t seed) {
  if (config.samples < 1) throw ConfigError("run_chain needs at least one sample");
  PmmhSampler sampler(model, data, config, seed);
  sampler.burn_in(config.burn_in);
  ChainTrace trace;
  trace.seed = seed;
  sampler.sample(config.samples, trace);
  return trace;
}

std::vector<double> tune_proposal_scales(const DiffusionModel& model, const ObservationRecord& data,
                                         ChainConfig config, std::uint64_t seed, std::size_t rounds,
                                         std::size_t iterations) {
  std::vector<double> scales = resolve_scales(config, model);
  for (std::size_t round = 0; round < rounds; ++round) {
    config.proposal_scales = scales;
    config.burn_in = iterations / 2;
    config.samples = iterations;
    const ChainTrace trace = run_chain(model, data, config, derive_seed(seed, {round}));
    const double rate = trace.acceptance_rate();
    if (rate >= 0.2 && rate <= 0.3) break;
    const double factor = std::clamp(std::exp(2.0 * (rate - 0.25)), 0.5, 2.0);
    for (double& s : scales) s *= rate < 0.01 ? 0.5 : factor;
  }
  return scales;
}

}  // namespace mlpmmh
