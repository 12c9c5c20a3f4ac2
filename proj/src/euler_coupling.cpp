#include "mlpmmh/euler_coupling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mlpmmh/errors.hpp"

namespace mlpmmh {
namespace {

bool is_positive_integer(double v, double* rounded) {
  *rounded = std::round(v);
  return *rounded >= 1.0 && std::abs(v - *rounded) <= 1e-9 * std::max(1.0, v);
}

// x += dt * a + B * dw with a and B already evaluated at the pre-step x.
inline void apply_update(std::span<double> x, double dt, const EulerWorkspace& work, std::span<const double> dw) {
  const std::size_t d = x.size();
  if (d == 1) {
    x[0] += dt * work.drift[0] + work.diffusion[0] * dw[0];
    return;
  }
  for (std::size_t i = 0; i < d; ++i) {
    double acc = dt * work.drift[i];
    for (std::size_t j = 0; j < d; ++j) acc += work.diffusion[i * d + j] * dw[j];
    x[i] += acc;
  }
}

}  // namespace

LevelStep LevelStep::at(int level, double spacing) {
  if (level < 0 || level > 62) throw ConfigError("level must lie in [0, 62]");
  const double h = std::ldexp(1.0, -level);
  double k = 0.0;
  if (!is_positive_integer(spacing / h, &k)) {
    throw ConfigError("level " + std::to_string(level) + " step does not divide observation spacing");
  }
  return {level, h, static_cast<std::size_t>(k)};
}

int coarsest_level(double spacing) {
  for (int l = 0; l <= 62; ++l) {
    double k = 0.0;
    if (is_positive_integer(spacing / std::ldexp(1.0, -l), &k)) return l;
  }
  throw ConfigError("no dyadic step divides the observation spacing");
}

std::vector<double> euler_step(const DiffusionModel& model, const ParamVector& theta, std::span<const double> x,
                               double h, std::span<const double> xi) {
  if (!(h > 0.0)) throw ContractViolation("euler_step: step must be positive");
  if (xi.size() != model.state_dim() || x.size() != model.state_dim()) {
    throw ContractViolation("euler_step: dimension mismatch");
  }
  EulerWorkspace work(model.state_dim());
  std::vector<double> out(x.begin(), x.end());
  const double root_h = std::sqrt(h);
  for (std::size_t j = 0; j < xi.size(); ++j) work.increment[j] = root_h * xi[j];
  euler_increment(model, theta, out, h, work.increment, work);
  return out;
}

void euler_increment(const DiffusionModel& model, const ParamVector& theta, std::span<double> x, double dt,
                     std::span<const double> dw, EulerWorkspace& work) {
  model.drift(theta, x, work.drift);
  model.diffusion(theta, x, work.diffusion);
  apply_update(x, dt, work, dw);
}

void euler_substep(const DiffusionModel& model, const ParamVector& theta, std::span<double> x, double h, Rng& rng,
                   EulerWorkspace& work, std::span<double> noise_out) {
  const std::size_t d = x.size();
  const double root_h = std::sqrt(h);
  model.drift(theta, x, work.drift);
  model.diffusion(theta, x, work.diffusion);
  for (std::size_t j = 0; j < d; ++j) {
    const double xi = rng.normal();
    if (!noise_out.empty()) noise_out[j] = xi;
    work.increment[j] = root_h * xi;
  }
  apply_update(x, h, work, work.increment);
}

void advance_fine(const DiffusionModel& model, const ParamVector& theta, std::span<double> x, const LevelStep& level,
                  Rng& rng, EulerWorkspace& work, std::span<double> noise_out) {
  const std::size_t d = x.size();
  for (std::size_t m = 0; m < level.substeps; ++m) {
    auto slot = noise_out.empty() ? std::span<double>{} : noise_out.subspan(m * d, d);
    euler_substep(model, theta, x, level.step, rng, work, slot);
  }
}

void advance_coupled(const DiffusionModel& model, const ParamVector& theta, std::span<double> fine,
                     std::span<double> coarse, const LevelStep& level, Rng& rng, EulerWorkspace& work,
                     std::span<double> noise_out) {
  if (!level.couples_to_coarser()) {
    throw ContractViolation("coupled transition needs level >= 1 with an even substep count");
  }
  const std::size_t d = fine.size();
  const double h = level.step;
  const double root_h = std::sqrt(h);
  const std::size_t coarse_steps = level.substeps / 2;
  for (std::size_t m = 0; m < coarse_steps; ++m) {
    // fine steps 2m and 2m+1, keeping their normals for the coarse step
    auto first = noise_out.empty() ? std::span<double>{} : noise_out.subspan(2 * m * d, d);
    euler_substep(model, theta, fine, h, rng, work, work.noise);
    std::copy(work.noise.begin(), work.noise.end(), work.noise_pair.begin());
    if (!first.empty()) std::copy(work.noise.begin(), work.noise.end(), first.begin());
    auto second = noise_out.empty() ? std::span<double>{} : noise_out.subspan((2 * m + 1) * d, d);
    euler_substep(model, theta, fine, h, rng, work, work.noise);
    if (!second.empty()) std::copy(work.noise.begin(), work.noise.end(), second.begin());

    model.drift(theta, coarse, work.drift);
    model.diffusion(theta, coarse, work.diffusion);
    for (std::size_t j = 0; j < d; ++j) work.increment[j] = root_h * (work.noise_pair[j] + work.noise[j]);
    apply_update(coarse, 2.0 * h, work, work.increment);
  }
}

FineTransition transition_fine(const DiffusionModel& model, const ParamVector& theta, std::span<const double> x,
                               const LevelStep& level, Rng& rng) {
  const std::size_t d = model.state_dim();
  if (x.size() != d) throw ContractViolation("transition_fine: state has wrong dimension");
  FineTransition out{std::vector<double>(x.begin(), x.end()), std::vector<double>(level.substeps * d)};
  EulerWorkspace work(d);
  advance_fine(model, theta, out.endpoint, level, rng, work, out.noise);
  return out;
}

CoupledState transition_coupled(const DiffusionModel& model, const ParamVector& theta, const CoupledState& z,
                                const LevelStep& level, Rng& rng) {
  const std::size_t d = model.state_dim();
  if (z.fine.size() != d || z.coarse.size() != d) throw ContractViolation("transition_coupled: wrong dimension");
  CoupledState out = z;
  EulerWorkspace work(d);
  advance_coupled(model, theta, out.fine, out.coarse, level, rng, work);
  return out;
}

CoupledState initial_coupled_state(const DiffusionModel& model, const ParamVector& theta, Rng& rng) {
  const InitialLaw& init = model.initial_law();
  CoupledState z;
  z.fine.resize(model.state_dim());
  if (init.is_point_mass()) {
    std::copy(init.point.begin(), init.point.end(), z.fine.begin());
  } else {
    init.sampler(theta, rng, z.fine);
  }
  z.coarse = z.fine;
  return z;
}

}  // namespace mlpmmh
