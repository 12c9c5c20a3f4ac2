#include "mlpmmh/io.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mlpmmh/errors.hpp"

namespace mlpmmh::io {
namespace {

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() && s.find_first_not_of(" \r\t", used) != std::string::npos) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("cannot parse number '" + s + "'");
  }
}

}  // namespace

void write_observations_csv(std::ostream& os, const ObservationRecord& record) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "k";
  if (record.obs_dim == 1) {
    os << ",y";
  } else {
    for (std::size_t j = 1; j <= record.obs_dim; ++j) os << ",y" << j;
  }
  os << '\n';
  for (std::size_t k = 0; k < record.size(); ++k) {
    os << (k + 1);
    for (double v : record.at(k)) os << ',' << v;
    os << '\n';
  }
}

nlohmann::json observation_metadata(const ObservationRecord& record) {
  return {{"model", record.model_name},
          {"theta_true", record.true_params.values},
          {"delta", record.spacing},
          {"seed", record.seed},
          {"fine_step", record.fine_step},
          {"n", record.size()},
          {"obs_dim", record.obs_dim}};
}

std::filesystem::path metadata_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".json");
  return p;
}

void save_observations(const std::filesystem::path& csv_path, const ObservationRecord& record) {
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  write_observations_csv(csv, record);
  std::ofstream meta(metadata_path(csv_path));
  if (!meta) throw IoError("cannot write " + metadata_path(csv_path).string());
  meta << observation_metadata(record).dump(2) << '\n';
}

ObservationRecord read_observations_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty observation file");
  const auto header = split(line);
  if (header.size() < 2 || header[0] != "k") throw IoError("observation header must start with 'k,y'");
  ObservationRecord record;
  record.obs_dim = header.size() - 1;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split(line);
    if (fields.size() != header.size()) throw IoError("ragged observation row: " + line);
    for (std::size_t j = 1; j < fields.size(); ++j) record.values.push_back(parse_double(fields[j]));
  }
  return record;
}

ObservationRecord load_observations(const std::filesystem::path& csv_path) {
  std::ifstream csv(csv_path);
  if (!csv) throw IoError("cannot read " + csv_path.string());
  ObservationRecord record = read_observations_csv(csv);
  const auto meta_path = metadata_path(csv_path);
  if (std::filesystem::exists(meta_path)) {
    std::ifstream meta(meta_path);
    const auto j = nlohmann::json::parse(meta, nullptr, false);
    if (j.is_discarded()) throw IoError("malformed metadata " + meta_path.string());
    record.model_name = j.value("model", std::string{});
    record.true_params = ParamVector(j.value("theta_true", std::vector<double>{}));
    record.spacing = j.value("delta", record.spacing);
    record.seed = j.value("seed", std::uint64_t{0});
    record.fine_step = j.value("fine_step", 0.0);
  }
  record.validate();
  return record;
}

void write_chain_csv(std::ostream& os, const ChainTrace& trace, const std::vector<std::string>& param_names) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "iter";
  for (const auto& name : param_names) os << ',' << name;
  os << ",log_lik,accepted\n";
  for (std::size_t i = 0; i < trace.samples.size(); ++i) {
    const auto& s = trace.samples[i];
    os << (i + 1);
    for (double v : s.state.theta.values) os << ',' << v;
    os << ',' << s.state.log_likelihood << ',' << (s.accepted ? 1 : 0) << '\n';
  }
}

nlohmann::json chain_metadata(const ChainTrace& trace, const std::vector<std::string>& param_names) {
  return {{"params", param_names},
          {"level", trace.level.level},
          {"step", trace.level.step},
          {"coupled", trace.coupling == Coupling::kCoupled},
          {"samples", trace.samples.size()},
          {"iterations", trace.iterations},
          {"acceptance_rate", trace.acceptance_rate()},
          {"cost", trace.cost},
          {"sampling_cost", trace.sampling_cost},
          {"seed", trace.seed}};
}

void write_ess_csv(std::ostream& os, const std::vector<double>& ess) {
  os << "p,ess\n";
  for (std::size_t p = 0; p < ess.size(); ++p) os << (p + 1) << ',' << ess[p] << '\n';
}

nlohmann::json to_json(const LevelIncrementEstimate& inc) {
  return {{"level", inc.level},         {"value", inc.value},         {"samples", inc.samples},
          {"fine_term", inc.fine_term}, {"coarse_term", inc.coarse_term}, {"log_mean_h1", inc.log_mean_h1},
          {"log_mean_h2", inc.log_mean_h2}, {"min_log_h1", inc.min_log_h1}, {"min_log_h2", inc.min_log_h2},
          {"ess_h1", inc.ess_h1},       {"ess_h2", inc.ess_h2},       {"cost", inc.cost}};
}

nlohmann::json to_json(const MLReport& report) {
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& inc : report.increments) levels.push_back(to_json(inc));
  return {{"base_level", report.base_level},
          {"max_level", report.max_level},
          {"base_value", report.base_value},
          {"base_samples", report.base_samples},
          {"base_cost", report.base_cost},
          {"increments", levels},
          {"estimate", report.estimate},
          {"total_cost", report.total_cost}};
}

void write_report_csv(std::ostream& os, const MLReport& report, bool header) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  if (header) os << "level,value,samples,cost,fine_term,coarse_term,log_mean_h1,log_mean_h2,ess_h1,ess_h2\n";
  os << report.base_level << ',' << report.base_value << ',' << report.base_samples << ',' << report.base_cost
     << ",,,,,,\n";
  for (const auto& inc : report.increments) {
    os << inc.level << ',' << inc.value << ',' << inc.samples << ',' << inc.cost << ',' << inc.fine_term << ','
       << inc.coarse_term << ',' << inc.log_mean_h1 << ',' << inc.log_mean_h2 << ',' << inc.ess_h1 << ','
       << inc.ess_h2 << '\n';
  }
}

nlohmann::json to_json(const LevelPlan& plan) {
  return {{"eps", plan.eps},
          {"base_level", plan.base_level},
          {"max_level", plan.max_level},
          {"beta", plan.rates.beta},
          {"gamma", plan.rates.gamma},
          {"alpha", plan.rates.alpha},
          {"scale", plan.scale},
          {"k_sum", plan.k_sum},
          {"levels", plan.levels},
          {"target_samples", plan.target_samples},
          {"samples", plan.samples}};
}

}  // namespace mlpmmh::io
