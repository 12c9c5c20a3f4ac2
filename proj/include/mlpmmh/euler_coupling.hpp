#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mlpmmh/random.hpp"
#include "mlpmmh/sde_models.hpp"

namespace mlpmmh {

/// Discretization level l with Euler step h = 2^-l and k = delta / h
/// substeps per observation interval.
struct LevelStep {
  int level = 0;
  double step = 1.0;
  std::size_t substeps = 1;

  /// Throws ConfigError when level < 0 or delta / 2^-level is not a positive integer.
  static LevelStep at(int level, double spacing);

  /// True when the next-coarser level (step 2h) also has an integral number
  /// of substeps, i.e. this level can serve as the fine half of a coupled pair.
  [[nodiscard]] bool couples_to_coarser() const noexcept { return level >= 1 && substeps % 2 == 0; }
};

/// Smallest l >= 0 for which delta / 2^-l is a positive integer (<= 62).
int coarsest_level(double spacing);

/// Fine/coarse pair z = (x, x').
struct CoupledState {
  std::vector<double> fine;
  std::vector<double> coarse;
};

/// Scratch buffers for the hot Euler loops; one per thread.
class EulerWorkspace {
 public:
  explicit EulerWorkspace(std::size_t dim)
      : drift(dim), diffusion(dim * dim), increment(dim), noise(dim), noise_pair(dim) {}

  [[nodiscard]] std::size_t dim() const noexcept { return drift.size(); }

  std::vector<double> drift;
  std::vector<double> diffusion;
  std::vector<double> increment;
  std::vector<double> noise;
  std::vector<double> noise_pair;
};

/// x + h a(x) + sqrt(h) b(x) xi.
std::vector<double> euler_step(const DiffusionModel& model, const ParamVector& theta, std::span<const double> x,
                               double h, std::span<const double> xi);

/// In place x <- x + dt a(x) + b(x) dw, where dw is the Brownian increment.
void euler_increment(const DiffusionModel& model, const ParamVector& theta, std::span<double> x, double dt,
                     std::span<const double> dw, EulerWorkspace& work);

/// One Euler step of size h driven by d fresh standard normals. When
/// `noise_out` is non-empty the d draws are written there.
void euler_substep(const DiffusionModel& model, const ParamVector& theta, std::span<double> x, double h, Rng& rng,
                   EulerWorkspace& work, std::span<double> noise_out = {});

/// Advances x over one observation interval (k substeps of size h), in place.
/// `noise_out`, if non-empty, receives the k * d draws in consumption order.
void advance_fine(const DiffusionModel& model, const ParamVector& theta, std::span<double> x, const LevelStep& level,
                  Rng& rng, EulerWorkspace& work, std::span<double> noise_out = {});

/// Advances a coupled pair over one observation interval, in place. The fine
/// chain takes k steps of size h; the coarse chain takes k/2 steps of size 2h
/// driven by the pairwise sums of the same normals. Throws ContractViolation
/// unless `level.couples_to_coarser()`.
void advance_coupled(const DiffusionModel& model, const ParamVector& theta, std::span<double> fine,
                     std::span<double> coarse, const LevelStep& level, Rng& rng, EulerWorkspace& work,
                     std::span<double> noise_out = {});

struct FineTransition {
  std::vector<double> endpoint;
  std::vector<double> noise;  // k * d draws, consumption order
};

FineTransition transition_fine(const DiffusionModel& model, const ParamVector& theta, std::span<const double> x,
                               const LevelStep& level, Rng& rng);

CoupledState transition_coupled(const DiffusionModel& model, const ParamVector& theta, const CoupledState& z,
                                const LevelStep& level, Rng& rng);

/// Diagonal coupling of the initial law: one draw shared by both components.
CoupledState initial_coupled_state(const DiffusionModel& model, const ParamVector& theta, Rng& rng);

}  // namespace mlpmmh
