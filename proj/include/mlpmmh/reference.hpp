#pragma once

#include <cstddef>
#include <optional>

#include "mlpmmh/sde_models.hpp"

namespace mlpmmh::reference {

/// Linear-Gaussian transition over one observation interval:
/// X_next = mu + a (X - mu) + N(0, variance).
struct LinearTransition {
  double a = 1.0;
  double variance = 0.0;
};

/// Exact OU transition over `spacing`.
LinearTransition ou_exact_transition(double theta, double sigma, double spacing) noexcept;

/// Transition of the Euler recursion x <- x + h theta (mu - x) + sqrt(h) sigma xi
/// composed over spacing / h steps.
LinearTransition ou_euler_transition(double theta, double sigma, double spacing, double step);

/// Kalman-filter log likelihood log p(y_{1:n} | theta, sigma) of the OU model,
/// exact when `euler_step` is empty, otherwise for the Euler-discretized chain.
double ou_log_likelihood(const OrnsteinUhlenbeck::Constants& constants, double theta, double sigma,
                         const ObservationRecord& data, std::optional<double> euler_step = std::nullopt);

struct PosteriorSummary {
  double mean_theta = 0.0;
  double mean_sigma = 0.0;
  double sd_theta = 0.0;
  double sd_sigma = 0.0;
  double log_evidence = 0.0;
};

/// Posterior moments of (theta, sigma) by midpoint quadrature on a 2-D grid.
/// A coarse pass locates the region within 30 nats of the mode; a `grid` x
/// `grid` pass over that box gives the reported moments.
PosteriorSummary ou_posterior(const OrnsteinUhlenbeck& model, const ObservationRecord& data,
                              std::optional<double> euler_step = std::nullopt, std::size_t grid = 400);

}  // namespace mlpmmh::reference
