#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlpmmh/ml_estimator.hpp"
#include "mlpmmh/pmmh.hpp"
#include "mlpmmh/sde_models.hpp"

namespace mlpmmh::io {

// Observation records: `k,y` (or `k,y1,...,ym`) plus a JSON sidecar with
// model name, true parameters, spacing, seed and fine step.
void write_observations_csv(std::ostream& os, const ObservationRecord& record);
nlohmann::json observation_metadata(const ObservationRecord& record);
void save_observations(const std::filesystem::path& csv_path, const ObservationRecord& record);
/// Reads `csv_path` and, when present, the sidecar `<csv_path stem>.json`.
ObservationRecord load_observations(const std::filesystem::path& csv_path);
ObservationRecord read_observations_csv(std::istream& is);

/// Sidecar path for a data CSV: same stem, `.json` extension.
std::filesystem::path metadata_path(const std::filesystem::path& csv_path);

// Chain traces: `iter,<param names...>,log_lik,accepted`.
void write_chain_csv(std::ostream& os, const ChainTrace& trace, const std::vector<std::string>& param_names);
nlohmann::json chain_metadata(const ChainTrace& trace, const std::vector<std::string>& param_names);

// Filter diagnostics: `p,ess`.
void write_ess_csv(std::ostream& os, const std::vector<double>& ess);

nlohmann::json to_json(const LevelIncrementEstimate& inc);
nlohmann::json to_json(const MLReport& report);
/// One CSV row per level: `level,value,samples,cost,fine_term,coarse_term,log_mean_h1,log_mean_h2,ess_h1,ess_h2`.
void write_report_csv(std::ostream& os, const MLReport& report, bool header = true);

nlohmann::json to_json(const LevelPlan& plan);

}  // namespace mlpmmh::io
