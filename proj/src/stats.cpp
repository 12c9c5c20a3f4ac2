#include "mlpmmh/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mlpmmh/errors.hpp"

namespace mlpmmh::stats {

double log_sum_exp(std::span<const double> values) noexcept {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double peak = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(peak)) return peak;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - peak);
  return peak + std::log(acc);
}

double mean(std::span<const double> values) {
  if (values.empty()) throw EstimationError("mean of an empty sample");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double sample_variance(std::span<const double> values) {
  if (values.size() < 2) throw EstimationError("sample variance needs at least two values");
  const double m = mean(values);
  double acc = 0.0;
  for (double v : values) acc += (v - m) * (v - m);
  return acc / static_cast<double>(values.size() - 1);
}

double batch_means_standard_error(std::span<const double> series, std::size_t batches) {
  if (batches < 2 || series.size() < 2 * batches) {
    throw EstimationError("batch means needs at least two values per batch");
  }
  const std::size_t width = series.size() / batches;
  std::vector<double> means(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    means[b] = mean(series.subspan(b * width, width));
  }
  return std::sqrt(sample_variance(means) / static_cast<double>(batches));
}

double autocorrelation(std::span<const double> series, std::size_t lag) {
  if (series.size() <= lag + 1) throw EstimationError("series too short for requested lag");
  const double m = mean(series);
  double denom = 0.0;
  for (double v : series) denom += (v - m) * (v - m);
  if (denom == 0.0) return 0.0;
  double num = 0.0;
  for (std::size_t i = 0; i + lag < series.size(); ++i) num += (series[i] - m) * (series[i + lag] - m);
  return num / denom;
}

LineFit least_squares(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw EstimationError("least squares needs matched points");
  const double mx = mean(x);
  const double my = mean(y);
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw EstimationError("least squares with constant abscissa");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

}  // namespace mlpmmh::stats
