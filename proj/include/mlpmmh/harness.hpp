#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mlpmmh/ml_estimator.hpp"
#include "mlpmmh/pmmh.hpp"
#include "mlpmmh/sde_models.hpp"

namespace mlpmmh::harness {

/// Everything needed to reproduce one cost-vs-error experiment.
struct ExperimentConfig {
  std::string model = "ou";

  // data
  std::size_t observations = 100;
  ParamVector true_params;  // empty: model default
  std::uint64_t data_seed = 1;
  std::string data_path;  // optional CSV; simulated when empty

  // inference
  std::vector<int> levels;   // finest levels L of the grid
  std::vector<double> eps;   // alternative to `levels`, strictly decreasing
  int base_level = -1;       // -1: coarsest level whose step divides the spacing
  std::size_t particles = 0; // 0: M = n
  std::size_t burn_in = 1000;
  std::size_t init_candidates = 10;
  double theta_upper = std::numeric_limits<double>::infinity();  // compact prior support for theta
  std::vector<double> proposal_scales;
  std::size_t replicates = 20;
  RateConstants rates{};
  bool rates_from_model = true;  // beta from the model's default when true
  std::size_t pilot_replicates = 100;
  std::size_t pilot_samples = 500;
  int calibration_level = -1;  // target L at which N_base = 2 V_0 / eps^2; -1: coarsest target of the grid
  std::size_t max_samples = 50'000'000;  // per-chain cap; exceeding it is a config error
  bool run_single = true;
  std::size_t single_max_doublings = 10;

  std::uint64_t seed = 2024;
  std::string out_dir = "results";
  unsigned threads = 1;

  /// Throws ConfigError on non-positive counts or a non-decreasing eps grid.
  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);

/// Full-scale (`full`) or desk-scale defaults for a benchmark model.
ExperimentConfig default_config(std::string_view model, bool full = false);

/// Default true parameters of a benchmark model: OU (1, 0.5), Langevin (10, 1).
ParamVector default_true_params(std::string_view model);

/// One line of the results table:
/// `model,method,L,eps,replicate,param,estimate,cost,seed`.
struct ResultRow {
  std::string model;
  std::string method;  // "ml" or "single"
  int level = 0;
  double eps = 0.0;
  std::size_t replicate = 0;
  std::string param;
  double estimate = 0.0;
  double cost = 0.0;
  std::uint64_t seed = 0;
};

void write_results_header(std::ostream& os);
void write_result_row(std::ostream& os, const ResultRow& row);
std::vector<ResultRow> read_results_csv(std::istream& is);

/// Serializes result rows into an append-only CSV; safe to share across threads.
class ResultAppender {
 public:
  explicit ResultAppender(std::filesystem::path path);
  void append(const ResultRow& row);
  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
};

/// Unbiased variance across replicate estimates; throws EstimationError for fewer than two.
double estimate_level_variance(std::span<const double> replicates);

struct MseDecomposition {
  double mse = 0.0;
  double bias2 = 0.0;
  double variance = 0.0;
};

/// mse = mean (e - ref)^2, bias2 = (mean e - ref)^2, variance = mse - bias2.
MseDecomposition compute_mse_vs_reference(std::span<const double> estimates, double reference);

struct RateFit {
  std::string param;
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<std::pair<double, double>> points;  // (log cost, log mse)
};

/// Least-squares slope of log cost against log MSE, i.e. the exponent r in
/// cost ~ MSE^r. Requires >= 3 positive (cost, mse) pairs with spread in both.
RateFit fit_rate(std::span<const std::pair<double, double>> cost_mse, std::string param = {});

/// Pilot calibration at the base level.
struct PilotResult {
  int base_level = 0;
  std::vector<double> per_sample_variance;  // N * Var(replicate means), per parameter
  std::vector<double> proposal_scales;
  double mean_acceptance = 0.0;
};

/// Runs `pilot_replicates` short chains and estimates V_0 per parameter.
PilotResult run_pilot(const DiffusionModel& model, const ObservationRecord& data, const ExperimentConfig& config,
                      bool tune_scales = false);

/// Builds the per-level plan for target level L from a pilot. The scale c is
/// fixed once for the whole grid, at `calibration_level`. The target error is
/// the config's eps that maps to L, or 2^{-alpha L}.
LevelPlan plan_for_level(int max_level, const PilotResult& pilot, const ExperimentConfig& config);

/// One replicate of the multilevel estimator: one report per parameter.
struct MLReplicate {
  std::vector<MLReport> reports;
  double cost = 0.0;
  std::uint64_t seed = 0;
};

MLReplicate run_ml_replicate(const DiffusionModel& model, const ObservationRecord& data,
                             const ExperimentConfig& config, const LevelPlan& plan, std::uint64_t seed);

/// Replicated single-level PMMH at one level; chains are extended by doubling
/// until the replicate standard deviation of every parameter is at most
/// `target_sd` (when given).
struct SingleLevelRun {
  std::size_t samples = 0;
  std::vector<std::vector<double>> estimates;  // [param][replicate]
  std::vector<double> costs;                   // per replicate, sampling cost
  std::vector<std::uint64_t> seeds;
};

SingleLevelRun run_single_level(const DiffusionModel& model, const ObservationRecord& data,
                                const ExperimentConfig& config, int level, std::size_t initial_samples,
                                std::span<const double> target_sd, std::size_t replicates);

struct ExperimentResult {
  PilotResult pilot;
  std::vector<LevelPlan> plans;
  std::vector<ResultRow> rows;
};

/// For each target level: R multilevel replicates (levels base..L) and, when
/// enabled, R single-level replicates at h_L matched to the multilevel error.
/// Rows are appended to `sink` as they are produced.
ExperimentResult run_ml_experiment(const DiffusionModel& model, const ObservationRecord& data,
                                   const ExperimentConfig& config, ResultAppender* sink = nullptr);

/// Reference posterior means per parameter name. OU: quadrature on the exact
/// likelihood; otherwise a long single-level run at `gold_level`.
std::map<std::string, double> reference_values(const DiffusionModel& model, const ObservationRecord& data,
                                               const ExperimentConfig& config, int gold_level,
                                               std::size_t gold_samples);

/// Per (method, param, L): MSE decomposition and mean cost.
struct CostErrorPoint {
  std::string method;
  std::string param;
  int level = 0;
  double eps = 0.0;
  double cost = 0.0;
  MseDecomposition error;
  std::size_t replicates = 0;
};

std::vector<CostErrorPoint> cost_error_points(std::span<const ResultRow> rows,
                                              const std::map<std::string, double>& reference);

/// Fits cost-vs-MSE slopes per (method, param). Keys are "method/param".
std::map<std::string, RateFit> fit_rates(std::span<const CostErrorPoint> points);

void write_cost_error_csv(std::ostream& os, std::span<const CostErrorPoint> points);
void write_rates_csv(std::ostream& os, const std::map<std::string, RateFit>& rates);
/// Minimal log-log scatter of cost against MSE, one series per method/param.
void write_cost_error_svg(std::ostream& os, std::span<const CostErrorPoint> points);

/// Loads the data named by the config or simulates it.
ObservationRecord prepare_data(const DiffusionModel& model, const ExperimentConfig& config);

/// Builds the benchmark model named by config.model.
std::unique_ptr<DiffusionModel> model_for(const ExperimentConfig& config);

}  // namespace mlpmmh::harness
