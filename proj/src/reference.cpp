#include "mlpmmh/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "mlpmmh/errors.hpp"

namespace mlpmmh::reference {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Box {
  double theta_lo, theta_hi, sigma_lo, sigma_hi;
};

template <typename F>
void for_each_cell(const Box& box, std::size_t grid, F&& f) {
  const double dt = (box.theta_hi - box.theta_lo) / static_cast<double>(grid);
  const double ds = (box.sigma_hi - box.sigma_lo) / static_cast<double>(grid);
  for (std::size_t i = 0; i < grid; ++i) {
    const double t = box.theta_lo + (static_cast<double>(i) + 0.5) * dt;
    for (std::size_t j = 0; j < grid; ++j) {
      const double s = box.sigma_lo + (static_cast<double>(j) + 0.5) * ds;
      f(i, j, t, s);
    }
  }
}

}  // namespace

LinearTransition ou_exact_transition(double theta, double sigma, double spacing) noexcept {
  const double a = std::exp(-theta * spacing);
  return {a, sigma * sigma * (1.0 - a * a) / (2.0 * theta)};
}

LinearTransition ou_euler_transition(double theta, double sigma, double spacing, double step) {
  const double ratio = spacing / step;
  const double k = std::round(ratio);
  if (k < 1.0 || std::abs(ratio - k) > 1e-9 * ratio) throw ConfigError("Euler step does not divide the spacing");
  const double b = 1.0 - theta * step;
  double a = 1.0;
  double variance = 0.0;
  for (std::size_t m = 0; m < static_cast<std::size_t>(k); ++m) {
    variance = b * b * variance + sigma * sigma * step;
    a *= b;
  }
  return {a, variance};
}

double ou_log_likelihood(const OrnsteinUhlenbeck::Constants& constants, double theta, double sigma,
                         const ObservationRecord& data, std::optional<double> euler_step) {
  const LinearTransition tr = euler_step ? ou_euler_transition(theta, sigma, data.spacing, *euler_step)
                                         : ou_exact_transition(theta, sigma, data.spacing);
  double m = constants.x0;
  double var = 0.0;
  double ll = 0.0;
  for (std::size_t p = 0; p < data.size(); ++p) {
    m = constants.mu + tr.a * (m - constants.mu);
    var = tr.a * tr.a * var + tr.variance;
    const double s = var + constants.tau2;
    const double r = data.at(p)[0] - m;
    ll += -0.5 * std::log(2.0 * std::numbers::pi * s) - 0.5 * r * r / s;
    const double gain = var / s;
    m += gain * r;
    var *= 1.0 - gain;
  }
  return ll;
}

PosteriorSummary ou_posterior(const OrnsteinUhlenbeck& model, const ObservationRecord& data,
                              std::optional<double> euler_step, std::size_t grid) {
  const auto& c = model.constants();
  auto log_post = [&](double t, double s) {
    const double lp = model.log_prior({t, s});
    if (lp == kNegInf) return kNegInf;
    return lp + ou_log_likelihood(c, t, s, data, euler_step);
  };

  // Coarse pass over a wide prior box.
  const std::size_t coarse = 240;
  Box box{0.0, std::min(c.theta_upper, 12.0 * c.theta_prior_scale * c.theta_prior_shape), 0.0,
          12.0 * c.sigma_prior_scale * c.sigma_prior_shape};
  std::vector<double> values(coarse * coarse);
  double peak = kNegInf;
  for_each_cell(box, coarse, [&](std::size_t i, std::size_t j, double t, double s) {
    values[i * coarse + j] = log_post(t, s);
    peak = std::max(peak, values[i * coarse + j]);
  });
  if (!std::isfinite(peak)) throw EstimationError("posterior quadrature found no mass");

  std::size_t i_lo = coarse, i_hi = 0, j_lo = coarse, j_hi = 0;
  for (std::size_t i = 0; i < coarse; ++i) {
    for (std::size_t j = 0; j < coarse; ++j) {
      if (values[i * coarse + j] > peak - 30.0) {
        i_lo = std::min(i_lo, i);
        i_hi = std::max(i_hi, i);
        j_lo = std::min(j_lo, j);
        j_hi = std::max(j_hi, j);
      }
    }
  }
  const double dt = (box.theta_hi - box.theta_lo) / static_cast<double>(coarse);
  const double ds = (box.sigma_hi - box.sigma_lo) / static_cast<double>(coarse);
  const Box fine{box.theta_lo + static_cast<double>(i_lo > 0 ? i_lo - 1 : 0) * dt,
                 box.theta_lo + static_cast<double>(std::min(i_hi + 2, coarse)) * dt,
                 box.sigma_lo + static_cast<double>(j_lo > 0 ? j_lo - 1 : 0) * ds,
                 box.sigma_lo + static_cast<double>(std::min(j_hi + 2, coarse)) * ds};

  values.assign(grid * grid, kNegInf);
  peak = kNegInf;
  for_each_cell(fine, grid, [&](std::size_t i, std::size_t j, double t, double s) {
    values[i * grid + j] = log_post(t, s);
    peak = std::max(peak, values[i * grid + j]);
  });
  double z = 0.0, mt = 0.0, ms = 0.0, mt2 = 0.0, ms2 = 0.0;
  for_each_cell(fine, grid, [&](std::size_t i, std::size_t j, double t, double s) {
    const double w = std::exp(values[i * grid + j] - peak);
    z += w;
    mt += w * t;
    ms += w * s;
    mt2 += w * t * t;
    ms2 += w * s * s;
  });
  const double cell = (fine.theta_hi - fine.theta_lo) * (fine.sigma_hi - fine.sigma_lo) /
                      static_cast<double>(grid * grid);
  PosteriorSummary out;
  out.mean_theta = mt / z;
  out.mean_sigma = ms / z;
  out.sd_theta = std::sqrt(std::max(0.0, mt2 / z - out.mean_theta * out.mean_theta));
  out.sd_sigma = std::sqrt(std::max(0.0, ms2 / z - out.mean_sigma * out.mean_sigma));
  out.log_evidence = peak + std::log(z * cell);
  return out;
}

}  // namespace mlpmmh::reference
