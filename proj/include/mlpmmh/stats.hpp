#pragma once

#include <cstddef>
#include <span>

namespace mlpmmh::stats {

/// log(sum(exp(v))); returns -inf for an empty span or when every entry is -inf.
double log_sum_exp(std::span<const double> values) noexcept;

double mean(std::span<const double> values);

/// Unbiased (n - 1) sample variance. Requires at least two values.
double sample_variance(std::span<const double> values);

/// Monte Carlo standard error of the mean of a correlated series using
/// non-overlapping batch means.
double batch_means_standard_error(std::span<const double> series, std::size_t batches = 50);

/// Lag-k sample autocorrelation.
double autocorrelation(std::span<const double> series, std::size_t lag);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares y = intercept + slope * x.
LineFit least_squares(std::span<const double> x, std::span<const double> y);

}  // namespace mlpmmh::stats
