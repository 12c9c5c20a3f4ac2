#include "mlpmmh/sde_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

#include "mlpmmh/errors.hpp"
#include "mlpmmh/euler_coupling.hpp"

namespace mlpmmh {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void require_finite(const ParamVector& theta, std::span<const double> x, const char* what) {
  if (!theta.all_finite() || !all_finite(x)) {
    throw DomainError(std::string(what) + ": non-finite parameter or state");
  }
}

double sample_gamma(Rng& rng, double shape, double scale) {
  std::gamma_distribution<double> dist(shape, scale);
  return dist(rng.engine());
}

// Inverse-CDF draw from the gamma law restricted to (0, upper].
double sample_gamma_below(Rng& rng, double shape, double scale, double upper) {
  if (!std::isfinite(upper)) return sample_gamma(rng, shape, scale);
  const double mass = boost::math::gamma_p(shape, upper / scale);
  const double u = rng.uniform() * mass;
  return u > 0.0 ? std::min(upper, scale * boost::math::gamma_p_inv(shape, u)) : upper * 1e-12;
}

}  // namespace

bool ParamVector::all_finite() const noexcept {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void ObservationRecord::validate() const {
  if (obs_dim == 0 || values.size() % obs_dim != 0) throw ConfigError("observation record has ragged rows");
  if (size() < 1) throw ConfigError("observation record must hold at least one observation");
  if (!(spacing > 0.0) || !std::isfinite(spacing)) throw ConfigError("observation spacing must be positive");
}

double gamma_log_density(double x, double shape, double scale) noexcept {
  if (!(x > 0.0) || !std::isfinite(x)) return kNegInf;
  return (shape - 1.0) * std::log(x) - x / scale - std::lgamma(shape) - shape * std::log(scale);
}

double normal_log_density(double x, double mean, double variance) noexcept {
  const double r = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * variance) - 0.5 * r * r / variance;
}

std::vector<double> evaluate_drift(const DiffusionModel& model, const ParamVector& theta,
                                   std::span<const double> x) {
  require_finite(theta, x, "drift");
  if (x.size() != model.state_dim()) throw DomainError("drift: state has wrong dimension");
  std::vector<double> out(model.state_dim());
  model.drift(theta, x, out);
  return out;
}

std::vector<double> evaluate_diffusion(const DiffusionModel& model, const ParamVector& theta,
                                       std::span<const double> x) {
  require_finite(theta, x, "diffusion");
  if (x.size() != model.state_dim()) throw DomainError("diffusion: state has wrong dimension");
  std::vector<double> out(model.state_dim() * model.state_dim());
  model.diffusion(theta, x, out);
  return out;
}

double evaluate_obs_log_density(const DiffusionModel& model, const ParamVector& theta,
                                std::span<const double> x, std::span<const double> y) {
  require_finite(theta, x, "obs_log_density");
  if (!all_finite(y)) throw DomainError("obs_log_density: non-finite observation");
  return model.obs_log_density(theta, x, y);
}

// --- Ornstein-Uhlenbeck -----------------------------------------------------

OrnsteinUhlenbeck::OrnsteinUhlenbeck(Constants constants) : c_(constants) {
  if (!(c_.tau2 > 0.0)) throw ConfigError("OU observation variance must be positive");
  if (!(c_.spacing > 0.0)) throw ConfigError("OU observation spacing must be positive");
  if (!(c_.theta_upper > 0.0)) throw ConfigError("OU theta bound must be positive");
  initial_.point = {c_.x0};
}

void OrnsteinUhlenbeck::drift(const ParamVector& theta, std::span<const double> x, std::span<double> out) const {
  out[0] = theta[0] * (c_.mu - x[0]);
}

void OrnsteinUhlenbeck::diffusion(const ParamVector& theta, std::span<const double>, std::span<double> out) const {
  out[0] = theta[1];
}

double OrnsteinUhlenbeck::obs_log_density(const ParamVector&, std::span<const double> x,
                                          std::span<const double> y) const {
  return normal_log_density(y[0], x[0], c_.tau2);
}

void OrnsteinUhlenbeck::sample_observation(const ParamVector&, std::span<const double> x, Rng& rng,
                                           std::span<double> y) const {
  y[0] = x[0] + std::sqrt(c_.tau2) * rng.normal();
}

double OrnsteinUhlenbeck::log_prior(const ParamVector& theta) const {
  if (theta.size() != 2 || theta[0] > c_.theta_upper) return kNegInf;
  return gamma_log_density(theta[0], c_.theta_prior_shape, c_.theta_prior_scale) +
         gamma_log_density(theta[1], c_.sigma_prior_shape, c_.sigma_prior_scale);
}

ParamVector OrnsteinUhlenbeck::sample_prior(Rng& rng) const {
  const double t = sample_gamma_below(rng, c_.theta_prior_shape, c_.theta_prior_scale, c_.theta_upper);
  const double s = sample_gamma(rng, c_.sigma_prior_shape, c_.sigma_prior_scale);
  return {t, s};
}

// --- Langevin ----------------------------------------------------------------

Langevin::Langevin(Constants constants) : c_(constants) {
  if (!(c_.tau2 > 0.0)) throw ConfigError("Langevin observation scale must be positive");
  if (!(c_.spacing > 0.0)) throw ConfigError("Langevin observation spacing must be positive");
  if (!(c_.theta_upper > 0.0)) throw ConfigError("Langevin theta bound must be positive");
  initial_.point = {c_.x0};
}

void Langevin::drift(const ParamVector& theta, std::span<const double> x, std::span<double> out) const {
  // 0.5 * d/dx log t_nu(x) with nu = theta[0]
  const double nu = theta[0];
  out[0] = -(nu + 1.0) * x[0] / (2.0 * (nu + x[0] * x[0]));
}

void Langevin::diffusion(const ParamVector& theta, std::span<const double>, std::span<double> out) const {
  out[0] = theta[1];
}

double Langevin::obs_log_density(const ParamVector&, std::span<const double> x, std::span<const double> y) const {
  const double variance = std::max(c_.tau2 * std::exp(x[0]), kMinObsVariance);
  return normal_log_density(y[0], 0.0, variance);
}

void Langevin::sample_observation(const ParamVector&, std::span<const double> x, Rng& rng,
                                  std::span<double> y) const {
  const double variance = std::max(c_.tau2 * std::exp(x[0]), kMinObsVariance);
  y[0] = std::sqrt(variance) * rng.normal();
}

double Langevin::log_prior(const ParamVector& theta) const {
  if (theta.size() != 2 || theta[0] > c_.theta_upper) return kNegInf;
  return gamma_log_density(theta[0], c_.theta_prior_shape, c_.theta_prior_scale) +
         gamma_log_density(theta[1], c_.sigma_prior_shape, c_.sigma_prior_scale);
}

ParamVector Langevin::sample_prior(Rng& rng) const {
  const double t = sample_gamma_below(rng, c_.theta_prior_shape, c_.theta_prior_scale, c_.theta_upper);
  const double s = sample_gamma(rng, c_.sigma_prior_shape, c_.sigma_prior_scale);
  return {t, s};
}

std::unique_ptr<DiffusionModel> make_model(std::string_view id, double theta_upper) {
  if (id == "ou") {
    OrnsteinUhlenbeck::Constants c;
    c.theta_upper = theta_upper;
    return std::make_unique<OrnsteinUhlenbeck>(c);
  }
  if (id == "langevin") {
    Langevin::Constants c;
    c.theta_upper = theta_upper;
    return std::make_unique<Langevin>(c);
  }
  throw ConfigError("unknown model id '" + std::string(id) + "' (expected ou | langevin)");
}

// --- data simulation ----------------------------------------------------------

ObservationRecord simulate_data(const DiffusionModel& model, const ParamVector& theta_true, std::size_t n,
                                double fine_step, std::uint64_t seed) {
  if (n < 1) throw ConfigError("simulate_data: need at least one observation");
  if (!theta_true.all_finite()) throw DomainError("simulate_data: non-finite parameters");
  const double spacing = model.obs_spacing();
  if (!(fine_step > 0.0)) throw ConfigError("simulate_data: fine step must be positive");
  const double ratio = spacing / fine_step;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
    throw ConfigError("simulate_data: fine step does not divide the observation spacing");
  }
  const auto substeps = static_cast<std::size_t>(rounded);

  Rng rng(seed);
  const std::size_t d = model.state_dim();
  const std::size_t m = model.obs_dim();
  std::vector<double> x(d);
  const InitialLaw& init = model.initial_law();
  if (init.is_point_mass()) {
    std::copy(init.point.begin(), init.point.end(), x.begin());
  } else {
    init.sampler(theta_true, rng, x);
  }

  ObservationRecord record;
  record.obs_dim = m;
  record.spacing = spacing;
  record.values.resize(n * m);
  record.model_name = std::string(model.name());
  record.true_params = theta_true;
  record.fine_step = fine_step;
  record.seed = seed;

  EulerWorkspace work(d);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t s = 0; s < substeps; ++s) {
      euler_substep(model, theta_true, x, fine_step, rng, work);
    }
    model.sample_observation(theta_true, x, rng, std::span<double>(record.values).subspan(k * m, m));
  }
  return record;
}

}  // namespace mlpmmh
