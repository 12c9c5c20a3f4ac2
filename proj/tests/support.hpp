#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mlpmmh/random.hpp"
#include "mlpmmh/sde_models.hpp"

namespace mlpmmh::support {

// dX = c dt + s dW, Y ~ N(X, 1). Parameters (c, s); flat prior on s > 0.
class ConstantCoefficients final : public DiffusionModel {
 public:
  explicit ConstantCoefficients(double spacing = 1.0, double x0 = 0.0) : spacing_(spacing) { initial_.point = {x0}; }

  std::string_view name() const noexcept override { return "constant"; }
  std::size_t state_dim() const noexcept override { return 1; }
  std::size_t obs_dim() const noexcept override { return 1; }
  std::vector<std::string> param_names() const override { return {"c", "s"}; }
  double obs_spacing() const noexcept override { return spacing_; }
  void drift(const ParamVector& t, std::span<const double>, std::span<double> out) const override { out[0] = t[0]; }
  void diffusion(const ParamVector& t, std::span<const double>, std::span<double> out) const override {
    out[0] = t[1];
  }
  double obs_log_density(const ParamVector&, std::span<const double> x, std::span<const double> y) const override {
    return normal_log_density(y[0], x[0], 1.0);
  }
  void sample_observation(const ParamVector&, std::span<const double> x, Rng& rng,
                          std::span<double> y) const override {
    y[0] = x[0] + rng.normal();
  }
  double log_prior(const ParamVector& t) const override {
    return t[1] > 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  ParamVector sample_prior(Rng& rng) const override { return {rng.normal(), 0.5 + rng.uniform()}; }
  const InitialLaw& initial_law() const noexcept override { return initial_; }

 private:
  double spacing_;
  InitialLaw initial_;
};

// OU dynamics with an initial density N(0, 1) instead of a point mass.
class RandomStartOU final : public DiffusionModel {
 public:
  RandomStartOU() {
    initial_.sampler = [](const ParamVector&, Rng& rng, std::span<double> out) { out[0] = rng.normal(); };
  }
  std::string_view name() const noexcept override { return "ou-random-start"; }
  std::size_t state_dim() const noexcept override { return 1; }
  std::size_t obs_dim() const noexcept override { return 1; }
  std::vector<std::string> param_names() const override { return ou_.param_names(); }
  double obs_spacing() const noexcept override { return ou_.obs_spacing(); }
  void drift(const ParamVector& t, std::span<const double> x, std::span<double> out) const override {
    ou_.drift(t, x, out);
  }
  void diffusion(const ParamVector& t, std::span<const double> x, std::span<double> out) const override {
    ou_.diffusion(t, x, out);
  }
  double obs_log_density(const ParamVector& t, std::span<const double> x, std::span<const double> y) const override {
    return ou_.obs_log_density(t, x, y);
  }
  void sample_observation(const ParamVector& t, std::span<const double> x, Rng& rng,
                          std::span<double> y) const override {
    ou_.sample_observation(t, x, rng, y);
  }
  double log_prior(const ParamVector& t) const override { return ou_.log_prior(t); }
  ParamVector sample_prior(Rng& rng) const override { return ou_.sample_prior(rng); }
  const InitialLaw& initial_law() const noexcept override { return initial_; }

 private:
  OrnsteinUhlenbeck ou_;
  InitialLaw initial_;
};

inline ObservationRecord make_record(std::vector<double> ys, double spacing) {
  ObservationRecord r;
  r.obs_dim = 1;
  r.spacing = spacing;
  r.values = std::move(ys);
  return r;
}

// Scalar Gaussian log density written out independently of the library.
inline double gauss_logpdf(double y, double mean, double var) {
  const double d = y - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * d * d / var;
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance_of(std::span<const double> v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Slope of an ordinary least-squares line, computed directly.
inline double ols_slope(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace mlpmmh::support
