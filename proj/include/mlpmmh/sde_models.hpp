#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlpmmh/random.hpp"

namespace mlpmmh {

/// Static model parameters. Coordinate names come from the owning model.
struct ParamVector {
  std::vector<double> values;

  ParamVector() = default;
  ParamVector(std::initializer_list<double> init) : values(init) {}
  explicit ParamVector(std::vector<double> v) : values(std::move(v)) {}

  [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const noexcept { return values[i]; }
  double& operator[](std::size_t i) noexcept { return values[i]; }
  [[nodiscard]] bool all_finite() const noexcept;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

/// Law of X_0: a point mass, or a sampler drawing from f_theta.
struct InitialLaw {
  std::vector<double> point;
  std::function<void(const ParamVector&, Rng&, std::span<double>)> sampler;

  [[nodiscard]] bool is_point_mass() const noexcept { return !sampler; }
};

/// Observations y_1..y_n at regular spacing, stored row-major with
/// `obs_dim` entries per observation. Index 0 holds y_1.
struct ObservationRecord {
  std::size_t obs_dim = 1;
  double spacing = 1.0;
  std::vector<double> values;

  // provenance
  std::string model_name;
  ParamVector true_params;
  double fine_step = 0.0;
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t size() const noexcept { return obs_dim == 0 ? 0 : values.size() / obs_dim; }
  [[nodiscard]] std::span<const double> at(std::size_t i) const noexcept {
    return std::span<const double>(values).subspan(i * obs_dim, obs_dim);
  }
  /// Throws ConfigError unless n >= 1 and spacing > 0.
  void validate() const;
};

/// A partially observed diffusion dX = a(X) dt + b(X) dW with observation
/// density g(x, y), initial law and prior on the static parameters.
///
/// The virtual interface is unchecked and used on hot paths; the free
/// `evaluate_*` functions below validate their inputs. Instances are
/// immutable after construction.
class DiffusionModel {
 public:
  virtual ~DiffusionModel() = default;

  [[nodiscard]] virtual std::string_view name() const noexcept = 0;
  [[nodiscard]] virtual std::size_t state_dim() const noexcept = 0;
  [[nodiscard]] virtual std::size_t obs_dim() const noexcept = 0;
  [[nodiscard]] virtual std::vector<std::string> param_names() const = 0;
  [[nodiscard]] std::size_t param_dim() const { return param_names().size(); }

  /// Observation spacing delta, in model time units.
  [[nodiscard]] virtual double obs_spacing() const noexcept = 0;

  /// Writes a_theta(x) into `out` (length d).
  virtual void drift(const ParamVector& theta, std::span<const double> x, std::span<double> out) const = 0;
  /// Writes b_theta(x) into `out` (d x d, row-major).
  virtual void diffusion(const ParamVector& theta, std::span<const double> x, std::span<double> out) const = 0;

  /// log g_theta(x, y).
  [[nodiscard]] virtual double obs_log_density(const ParamVector& theta, std::span<const double> x,
                                               std::span<const double> y) const = 0;
  virtual void sample_observation(const ParamVector& theta, std::span<const double> x, Rng& rng,
                                  std::span<double> y) const = 0;

  /// log pi(theta); -inf outside the prior support.
  [[nodiscard]] virtual double log_prior(const ParamVector& theta) const = 0;
  [[nodiscard]] virtual ParamVector sample_prior(Rng& rng) const = 0;

  [[nodiscard]] virtual const InitialLaw& initial_law() const noexcept = 0;

  /// Default strong-rate exponent for level-increment variance: 2 when the
  /// diffusion coefficient is constant in x, 1 otherwise.
  [[nodiscard]] virtual double default_beta() const noexcept { return 1.0; }
};

/// log density of Gamma(shape, scale) at x; -inf for x <= 0.
double gamma_log_density(double x, double shape, double scale) noexcept;

/// log density of N(mean, variance) at x.
double normal_log_density(double x, double mean, double variance) noexcept;

// Checked evaluation. All throw DomainError on non-finite input.
std::vector<double> evaluate_drift(const DiffusionModel& model, const ParamVector& theta,
                                   std::span<const double> x);
std::vector<double> evaluate_diffusion(const DiffusionModel& model, const ParamVector& theta,
                                       std::span<const double> x);
double evaluate_obs_log_density(const DiffusionModel& model, const ParamVector& theta,
                                std::span<const double> x, std::span<const double> y);

/// dX = theta (mu - X) dt + sigma dW,  Y_k | X ~ N(X, tau2).
/// Parameters (theta, sigma) with independent Gamma(1, 1) and Gamma(1, 0.5) priors.
class OrnsteinUhlenbeck final : public DiffusionModel {
 public:
  struct Constants {
    double mu = 0.0;
    double tau2 = 0.2;
    double spacing = 0.5;
    double x0 = 0.0;
    double theta_prior_shape = 1.0;
    double theta_prior_scale = 1.0;
    double sigma_prior_shape = 1.0;
    double sigma_prior_scale = 0.5;
    double theta_upper = std::numeric_limits<double>::infinity();  // prior restricted to theta <= theta_upper
  };

  OrnsteinUhlenbeck() : OrnsteinUhlenbeck(Constants{}) {}
  explicit OrnsteinUhlenbeck(Constants constants);

  [[nodiscard]] std::string_view name() const noexcept override { return "ou"; }
  [[nodiscard]] std::size_t state_dim() const noexcept override { return 1; }
  [[nodiscard]] std::size_t obs_dim() const noexcept override { return 1; }
  [[nodiscard]] std::vector<std::string> param_names() const override { return {"theta", "sigma"}; }
  [[nodiscard]] double obs_spacing() const noexcept override { return c_.spacing; }

  void drift(const ParamVector& theta, std::span<const double> x, std::span<double> out) const override;
  void diffusion(const ParamVector& theta, std::span<const double> x, std::span<double> out) const override;
  [[nodiscard]] double obs_log_density(const ParamVector& theta, std::span<const double> x,
                                       std::span<const double> y) const override;
  void sample_observation(const ParamVector& theta, std::span<const double> x, Rng& rng,
                          std::span<double> y) const override;
  [[nodiscard]] double log_prior(const ParamVector& theta) const override;
  [[nodiscard]] ParamVector sample_prior(Rng& rng) const override;
  [[nodiscard]] const InitialLaw& initial_law() const noexcept override { return initial_; }
  [[nodiscard]] double default_beta() const noexcept override { return 2.0; }

  [[nodiscard]] const Constants& constants() const noexcept { return c_; }

 private:
  Constants c_;
  InitialLaw initial_;
};

/// Overdamped Langevin diffusion targeting a Student-t with theta degrees of
/// freedom: dX = 0.5 d/dx log t_theta(X) dt + sigma dW,  Y_k | X ~ N(0, tau2 exp(X)).
/// Parameters (theta, sigma) with independent Gamma(1, 1) priors.
class Langevin final : public DiffusionModel {
 public:
  struct Constants {
    double tau2 = 1.0;
    double spacing = 1.0;
    double x0 = 0.0;
    double theta_prior_shape = 1.0;
    double theta_prior_scale = 1.0;
    double sigma_prior_shape = 1.0;
    double sigma_prior_scale = 1.0;
    double theta_upper = std::numeric_limits<double>::infinity();
  };

  Langevin() : Langevin(Constants{}) {}
  explicit Langevin(Constants constants);

  [[nodiscard]] std::string_view name() const noexcept override { return "langevin"; }
  [[nodiscard]] std::size_t state_dim() const noexcept override { return 1; }
  [[nodiscard]] std::size_t obs_dim() const noexcept override { return 1; }
  [[nodiscard]] std::vector<std::string> param_names() const override { return {"theta", "sigma"}; }
  [[nodiscard]] double obs_spacing() const noexcept override { return c_.spacing; }

  void drift(const ParamVector& theta, std::span<const double> x, std::span<double> out) const override;
  void diffusion(const ParamVector& theta, std::span<const double> x, std::span<double> out) const override;
  [[nodiscard]] double obs_log_density(const ParamVector& theta, std::span<const double> x,
                                       std::span<const double> y) const override;
  void sample_observation(const ParamVector& theta, std::span<const double> x, Rng& rng,
                          std::span<double> y) const override;
  [[nodiscard]] double log_prior(const ParamVector& theta) const override;
  [[nodiscard]] ParamVector sample_prior(Rng& rng) const override;
  [[nodiscard]] const InitialLaw& initial_law() const noexcept override { return initial_; }
  [[nodiscard]] double default_beta() const noexcept override { return 2.0; }

  [[nodiscard]] const Constants& constants() const noexcept { return c_; }

  /// Smallest observation variance used in the density (guards log(0)).
  static constexpr double kMinObsVariance = 1e-300;

 private:
  Constants c_;
  InitialLaw initial_;
};

/// Builds a benchmark model by id ("ou" or "langevin"); throws ConfigError otherwise.
/// `theta_upper` truncates the prior of the first parameter to (0, theta_upper].
std::unique_ptr<DiffusionModel> make_model(std::string_view id,
                                           double theta_upper = std::numeric_limits<double>::infinity());

/// Simulates X on a grid of step `fine_step` from the initial law by Euler-Maruyama
/// and draws y_k ~ g(x_{k delta}, .) at each observation time. Deterministic in `seed`.
/// Throws ConfigError if fine_step does not divide the observation spacing.
ObservationRecord simulate_data(const DiffusionModel& model, const ParamVector& theta_true, std::size_t n,
                                double fine_step, std::uint64_t seed);

/// Default ground-truth simulation step: spacing * 2^-12.
inline double default_fine_step(double spacing) noexcept { return spacing / 4096.0; }

}  // namespace mlpmmh
