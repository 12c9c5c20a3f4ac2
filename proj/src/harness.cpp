#include "mlpmmh/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "mlpmmh/errors.hpp"
#include "mlpmmh/io.hpp"
#include "mlpmmh/random.hpp"
#include "mlpmmh/reference.hpp"
#include "mlpmmh/stats.hpp"

namespace mlpmmh::harness {
namespace {

// Runs body(i) for i in [0, count) on up to `threads` workers. The first
// exception is rethrown after all workers stop.
template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            body(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            next = count;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

int resolve_base_level(const ExperimentConfig& config, const ObservationRecord& data) {
  const int base = config.base_level < 0 ? coarsest_level(data.spacing) : config.base_level;
  LevelStep::at(base, data.spacing);
  return base;
}

RateConstants resolve_rates(const ExperimentConfig& config, const DiffusionModel& model) {
  RateConstants rates = config.rates;
  if (config.rates_from_model) rates.beta = model.default_beta();
  return rates;
}

ChainConfig chain_config(const ExperimentConfig& config, const ObservationRecord& data, int level, Coupling coupling,
                         std::size_t samples) {
  ChainConfig cc;
  cc.level = LevelStep::at(level, data.spacing);
  cc.coupling = coupling;
  cc.particles = config.particles;
  cc.samples = samples;
  cc.burn_in = config.burn_in;
  cc.init_candidates = config.init_candidates;
  cc.proposal_scales = config.proposal_scales;
  return cc;
}

// (L, eps) pairs of the experiment grid.
std::vector<std::pair<int, double>> grid_points(const ExperimentConfig& config, const RateConstants& rates, int base) {
  std::vector<std::pair<int, double>> grid;
  if (!config.eps.empty()) {
    for (double e : config.eps) grid.emplace_back(std::max(base, finest_level(e, rates)), e);
  } else {
    for (int l : config.levels) {
      if (l < base) throw ConfigError("level " + std::to_string(l) + " is below the base level " + std::to_string(base));
      grid.emplace_back(l, std::exp2(-rates.alpha * l));
    }
  }
  if (grid.empty()) throw ConfigError("experiment grid is empty: set 'levels' or 'eps'");
  return grid;
}

double max_of(std::span<const double> v) { return *std::max_element(v.begin(), v.end()); }

std::uint64_t cell_seed(const ExperimentConfig& config, std::string_view method, int level, std::size_t replicate) {
  return derive_seed(config.seed, {hash_tag(config.model), hash_tag(method), static_cast<std::uint64_t>(level),
                                   static_cast<std::uint64_t>(replicate)});
}

}  // namespace

// --- configuration -------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (model.empty()) throw ConfigError("model id is empty");
  if (observations == 0) throw ConfigError("observations must be positive");
  if (replicates == 0) throw ConfigError("replicates must be positive");
  if (pilot_replicates < 2) throw ConfigError("pilot_replicates must be at least 2");
  if (pilot_samples == 0) throw ConfigError("pilot_samples must be positive");
  if (max_samples == 0) throw ConfigError("max_samples must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
  if (!levels.empty() && !eps.empty()) throw ConfigError("give either 'levels' or 'eps', not both");
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (!(eps[i] > 0.0) || !std::isfinite(eps[i])) throw ConfigError("eps values must be positive");
    if (i > 0 && !(eps[i] < eps[i - 1])) throw ConfigError("eps grid must be strictly decreasing");
  }
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] < 0) throw ConfigError("levels must be non-negative");
    if (i > 0 && levels[i] <= levels[i - 1]) throw ConfigError("level grid must be strictly increasing");
  }
  for (double s : proposal_scales) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("proposal scales must be positive");
  }
  if (!(theta_upper > 0.0)) throw ConfigError("theta_upper must be positive");
  if (!(rates.beta > 0.0) || !(rates.gamma > 0.0) || !(rates.alpha > 0.0)) {
    throw ConfigError("rate constants must be positive");
  }
}

ParamVector default_true_params(std::string_view model) {
  if (model == "ou") return {1.0, 0.5};
  if (model == "langevin") return {10.0, 1.0};
  throw ConfigError("unknown model '" + std::string(model) + "'");
}

ExperimentConfig default_config(std::string_view model, bool full) {
  ExperimentConfig c;
  c.model = std::string(model);
  c.true_params = default_true_params(model);
  c.replicates = full ? 100 : 20;
  c.burn_in = full ? 10000 : 1000;
  if (model == "ou") {
    c.theta_upper = 3.0;
    c.observations = full ? 100 : 50;
    c.levels = {2, 3, 4, 5, 6};
  } else {
    c.observations = full ? 1000 : 200;
    c.levels = {1, 2, 3, 4};
  }
  return c;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  const std::string model = j.value("model", std::string("ou"));
  ExperimentConfig c = default_config(model, j.value("full", false));
  try {
    c.observations = j.value("observations", c.observations);
    if (j.contains("true_params")) c.true_params = ParamVector(j.at("true_params").get<std::vector<double>>());
    c.data_seed = j.value("data_seed", c.data_seed);
    c.data_path = j.value("data_path", c.data_path);
    if (j.contains("levels")) {
      c.levels = j.at("levels").get<std::vector<int>>();
      c.eps.clear();
    }
    if (j.contains("eps")) {
      c.eps = j.at("eps").get<std::vector<double>>();
      c.levels.clear();
    }
    c.base_level = j.value("base_level", c.base_level);
    c.particles = j.value("particles", c.particles);
    c.burn_in = j.value("burn_in", c.burn_in);
    c.init_candidates = j.value("init_candidates", c.init_candidates);
    c.calibration_level = j.value("calibration_level", c.calibration_level);
    if (j.contains("theta_upper")) {
      const auto& t = j.at("theta_upper");
      c.theta_upper = t.is_null() ? std::numeric_limits<double>::infinity() : t.get<double>();
    }
    c.proposal_scales = j.value("proposal_scales", c.proposal_scales);
    c.replicates = j.value("replicates", c.replicates);
    if (j.contains("rates")) {
      const auto& r = j.at("rates");
      c.rates.beta = r.value("beta", c.rates.beta);
      c.rates.gamma = r.value("gamma", c.rates.gamma);
      c.rates.alpha = r.value("alpha", c.rates.alpha);
      c.rates_from_model = !r.contains("beta");
    }
    c.pilot_replicates = j.value("pilot_replicates", c.pilot_replicates);
    c.pilot_samples = j.value("pilot_samples", c.pilot_samples);
    c.max_samples = j.value("max_samples", c.max_samples);
    c.run_single = j.value("run_single", c.run_single);
    c.single_max_doublings = j.value("single_max_doublings", c.single_max_doublings);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j = {{"model", c.model},
                      {"observations", c.observations},
                      {"true_params", c.true_params.values},
                      {"data_seed", c.data_seed},
                      {"data_path", c.data_path},
                      {"base_level", c.base_level},
                      {"particles", c.particles},
                      {"burn_in", c.burn_in},
                      {"init_candidates", c.init_candidates},
                      {"calibration_level", c.calibration_level},
                      {"theta_upper", std::isfinite(c.theta_upper) ? nlohmann::json(c.theta_upper) : nlohmann::json()},
                      {"proposal_scales", c.proposal_scales},
                      {"replicates", c.replicates},
                      {"pilot_replicates", c.pilot_replicates},
                      {"pilot_samples", c.pilot_samples},
                      {"max_samples", c.max_samples},
                      {"run_single", c.run_single},
                      {"single_max_doublings", c.single_max_doublings},
                      {"seed", c.seed},
                      {"out_dir", c.out_dir},
                      {"threads", c.threads}};
  if (!c.eps.empty()) {
    j["eps"] = c.eps;
  } else {
    j["levels"] = c.levels;
  }
  nlohmann::json rates = {{"gamma", c.rates.gamma}, {"alpha", c.rates.alpha}};
  if (!c.rates_from_model) rates["beta"] = c.rates.beta;
  j["rates"] = rates;
  return j;
}

std::unique_ptr<DiffusionModel> model_for(const ExperimentConfig& config) {
  return make_model(config.model, config.theta_upper);
}

ObservationRecord prepare_data(const DiffusionModel& model, const ExperimentConfig& config) {
  if (!config.data_path.empty()) {
    auto data = io::load_observations(config.data_path);
    if (!data.model_name.empty() && data.model_name != model.name()) {
      throw ConfigError("data file was generated by model '" + data.model_name + "', not '" +
                        std::string(model.name()) + "'");
    }
    if (std::abs(data.spacing - model.obs_spacing()) > 1e-12) throw ConfigError("data spacing differs from the model's");
    return data;
  }
  const ParamVector truth = config.true_params.size() == 0 ? default_true_params(config.model) : config.true_params;
  return simulate_data(model, truth, config.observations, default_fine_step(model.obs_spacing()), config.data_seed);
}

// --- result rows ---------------------------------------------------------------

void write_results_header(std::ostream& os) { os << "model,method,L,eps,replicate,param,estimate,cost,seed\n"; }

void write_result_row(std::ostream& os, const ResultRow& r) {
  os << r.model << ',' << r.method << ',' << r.level << ',' << format_double(r.eps) << ',' << r.replicate << ','
     << r.param << ',' << format_double(r.estimate) << ',' << format_double(r.cost) << ',' << r.seed << '\n';
}

std::vector<ResultRow> read_results_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty results file");
  if (line.rfind("model,method,L,eps,replicate,param,estimate,cost,seed", 0) != 0) {
    throw IoError("unexpected results header: " + line);
  }
  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ss(line);
    for (std::string field; std::getline(ss, field, ',');) f.push_back(field);
    if (f.size() != 9) throw IoError("results line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                                     " fields");
    try {
      ResultRow r;
      r.model = f[0];
      r.method = f[1];
      r.level = std::stoi(f[2]);
      r.eps = std::stod(f[3]);
      r.replicate = std::stoull(f[4]);
      r.param = f[5];
      r.estimate = std::stod(f[6]);
      r.cost = std::stod(f[7]);
      r.seed = std::stoull(f[8]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw IoError("cannot parse results line " + std::to_string(line_no));
    }
  }
  return rows;
}

ResultAppender::ResultAppender(std::filesystem::path path) : path_(std::move(path)) {
  const bool fresh = !std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot open " + path_.string());
  if (fresh) write_results_header(out);
}

void ResultAppender::append(const ResultRow& row) {
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to " + path_.string());
  write_result_row(out, row);
}

// --- error and rate summaries -------------------------------------------------

double estimate_level_variance(std::span<const double> replicates) {
  if (replicates.size() < 2) throw EstimationError("variance needs at least 2 replicates");
  return stats::sample_variance(replicates);
}

MseDecomposition compute_mse_vs_reference(std::span<const double> estimates, double reference) {
  if (estimates.empty()) throw EstimationError("no estimates");
  MseDecomposition d;
  double sum = 0.0;
  for (double e : estimates) {
    d.mse += (e - reference) * (e - reference);
    sum += e;
  }
  const double n = static_cast<double>(estimates.size());
  d.mse /= n;
  const double bias = sum / n - reference;
  d.bias2 = bias * bias;
  d.variance = std::max(0.0, d.mse - d.bias2);
  return d;
}

RateFit fit_rate(std::span<const std::pair<double, double>> cost_mse, std::string param) {
  if (cost_mse.size() < 3) throw EstimationError("rate fit needs at least 3 points");
  RateFit fit;
  fit.param = std::move(param);
  std::vector<double> log_cost;
  std::vector<double> log_mse;
  for (const auto& [cost, mse] : cost_mse) {
    if (!(cost > 0.0) || !(mse > 0.0) || !std::isfinite(cost) || !std::isfinite(mse)) {
      throw EstimationError("rate fit needs positive finite cost and mse");
    }
    log_cost.push_back(std::log(cost));
    log_mse.push_back(std::log(mse));
    fit.points.emplace_back(log_cost.back(), log_mse.back());
  }
  const auto [lo_c, hi_c] = std::minmax_element(log_cost.begin(), log_cost.end());
  const auto [lo_m, hi_m] = std::minmax_element(log_mse.begin(), log_mse.end());
  if (*hi_c - *lo_c <= 1e-12 * std::max(1.0, std::abs(*hi_c))) throw EstimationError("degenerate rate fit: constant cost");
  if (*hi_m - *lo_m <= 1e-12 * std::max(1.0, std::abs(*hi_m))) throw EstimationError("degenerate rate fit: constant mse");
  const auto line = stats::least_squares(log_mse, log_cost);
  if (!std::isfinite(line.slope)) throw EstimationError("rate fit slope is not finite");
  fit.slope = line.slope;
  fit.intercept = line.intercept;
  return fit;
}

std::vector<CostErrorPoint> cost_error_points(std::span<const ResultRow> rows,
                                              const std::map<std::string, double>& reference) {
  struct Cell {
    std::vector<double> estimates;
    double cost = 0.0;
    double eps = 0.0;
  };
  std::map<std::tuple<std::string, std::string, int>, Cell> cells;
  for (const auto& r : rows) {
    auto& cell = cells[{r.method, r.param, r.level}];
    cell.estimates.push_back(r.estimate);
    cell.cost += r.cost;
    cell.eps = r.eps;
  }
  std::vector<CostErrorPoint> points;
  for (const auto& [key, cell] : cells) {
    const auto& [method, param, level] = key;
    const auto ref = reference.find(param);
    if (ref == reference.end()) throw ConfigError("no reference value for parameter '" + param + "'");
    CostErrorPoint p;
    p.method = method;
    p.param = param;
    p.level = level;
    p.eps = cell.eps;
    p.replicates = cell.estimates.size();
    p.cost = cell.cost / static_cast<double>(p.replicates);
    p.error = compute_mse_vs_reference(cell.estimates, ref->second);
    points.push_back(std::move(p));
  }
  return points;
}

std::map<std::string, RateFit> fit_rates(std::span<const CostErrorPoint> points) {
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  for (const auto& p : points) series[p.method + "/" + p.param].emplace_back(p.cost, p.error.mse);
  std::map<std::string, RateFit> fits;
  for (const auto& [key, pts] : series) {
    if (pts.size() < 3) continue;
    fits.emplace(key, fit_rate(pts, key.substr(key.find('/') + 1)));
  }
  return fits;
}

void write_cost_error_csv(std::ostream& os, std::span<const CostErrorPoint> points) {
  os << "method,param,L,eps,replicates,cost,mse,bias2,variance\n";
  for (const auto& p : points) {
    os << p.method << ',' << p.param << ',' << p.level << ',' << format_double(p.eps) << ',' << p.replicates << ','
       << format_double(p.cost) << ',' << format_double(p.error.mse) << ',' << format_double(p.error.bias2) << ','
       << format_double(p.error.variance) << '\n';
  }
}

void write_rates_csv(std::ostream& os, const std::map<std::string, RateFit>& rates) {
  os << "method,param,slope,intercept,points\n";
  for (const auto& [key, fit] : rates) {
    os << key.substr(0, key.find('/')) << ',' << fit.param << ',' << format_double(fit.slope) << ','
       << format_double(fit.intercept) << ',' << fit.points.size() << '\n';
  }
}

void write_cost_error_svg(std::ostream& os, std::span<const CostErrorPoint> points) {
  constexpr double kWidth = 640;
  constexpr double kHeight = 480;
  constexpr double kMargin = 60;
  static const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::map<std::string, std::vector<std::pair<double, double>>> series;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& p : points) {
    if (!(p.cost > 0.0) || !(p.error.mse > 0.0)) continue;
    const double x = std::log10(p.error.mse);
    const double y = std::log10(p.cost);
    series[p.method + "/" + p.param].emplace_back(x, y);
    x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
  }
  if (series.empty()) x0 = y0 = 0, x1 = y1 = 1;
  if (x1 - x0 < 1e-9) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-9) y0 -= 0.5, y1 += 0.5;
  const auto sx = [&](double x) { return kMargin + (x - x0) / (x1 - x0) * (kWidth - 2 * kMargin); };
  const auto sy = [&](double y) { return kHeight - kMargin - (y - y0) / (y1 - y0) * (kHeight - 2 * kMargin); };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\"" << kWidth - kMargin << "\" y2=\""
     << kHeight - kMargin << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\"" << kHeight - kMargin
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\">log10 MSE ["
     << format_double(x0) << ", " << format_double(x1) << "]</text>\n";
  os << "<text x=\"15\" y=\"" << kHeight / 2 << "\" transform=\"rotate(-90 15 " << kHeight / 2
     << ")\" text-anchor=\"middle\">log10 cost [" << format_double(y0) << ", " << format_double(y1) << "]</text>\n";
  std::size_t k = 0;
  for (const auto& [name, pts] : series) {
    const char* color = kColors[k % std::size(kColors)];
    auto sorted = pts;
    std::sort(sorted.begin(), sorted.end());
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (const auto& [x, y] : sorted) os << sx(x) << ',' << sy(y) << ' ';
    os << "\"/>\n";
    for (const auto& [x, y] : sorted) {
      os << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    os << "<text x=\"" << kWidth - kMargin - 140 << "\" y=\"" << kMargin + 18 * static_cast<double>(k)
       << "\" fill=\"" << color << "\">" << name << "</text>\n";
    ++k;
  }
  os << "</svg>\n";
}

// --- pilot and runs ------------------------------------------------------------

PilotResult run_pilot(const DiffusionModel& model, const ObservationRecord& data, const ExperimentConfig& config,
                      bool tune_scales) {
  config.validate();
  PilotResult pilot;
  pilot.base_level = resolve_base_level(config, data);
  ChainConfig cc = chain_config(config, data, pilot.base_level, Coupling::kSingle, config.pilot_samples);
  if (tune_scales) {
    cc.proposal_scales = tune_proposal_scales(model, data, cc, derive_seed(config.seed, {hash_tag("tune")}));
  }
  pilot.proposal_scales =
      cc.proposal_scales.empty() ? std::vector<double>(model.param_dim(), kDefaultProposalScale) : cc.proposal_scales;

  const std::size_t dim = model.param_dim();
  std::vector<std::vector<double>> means(dim, std::vector<double>(config.pilot_replicates));
  std::vector<double> acceptance(config.pilot_replicates);
  parallel_for(config.pilot_replicates, config.threads, [&](std::size_t r) {
    const auto trace = run_chain(model, data, cc, cell_seed(config, "pilot", pilot.base_level, r));
    for (std::size_t p = 0; p < dim; ++p) means[p][r] = stats::mean(trace.parameter_series(p));
    acceptance[r] = trace.acceptance_rate();
  });
  for (std::size_t p = 0; p < dim; ++p) {
    pilot.per_sample_variance.push_back(static_cast<double>(config.pilot_samples) *
                                        estimate_level_variance(means[p]));
  }
  pilot.mean_acceptance = stats::mean(acceptance);
  return pilot;
}

LevelPlan plan_for_level(int max_level, const PilotResult& pilot, const ExperimentConfig& config) {
  RateConstants rates = config.rates;
  if (config.rates_from_model) rates.beta = model_for(config)->default_beta();
  if (max_level < pilot.base_level) throw ConfigError("target level is below the base level");
  double eps = std::exp2(-rates.alpha * max_level);
  if (!config.eps.empty()) {
    for (double e : config.eps) {
      if (std::max(pilot.base_level, finest_level(e, rates)) == max_level) eps = e;
    }
  }
  int calibration = config.calibration_level;
  if (calibration < 0) {
    calibration = max_level;
    if (!config.levels.empty()) calibration = *std::min_element(config.levels.begin(), config.levels.end());
    if (!config.eps.empty()) calibration = finest_level(config.eps.front(), rates);
  }
  calibration = std::max(calibration, pilot.base_level);
  const double v0 = max_of(pilot.per_sample_variance);
  const double scale = calibrate_scale(v0, pilot.base_level, calibration, rates);
  LevelPlan plan = allocate_samples(eps, rates, scale, pilot.base_level);
  for (std::size_t i = 0; i < plan.samples.size(); ++i) {
    if (plan.samples[i] > config.max_samples) {
      throw ConfigError("level " + std::to_string(plan.levels[i]) + " needs " + std::to_string(plan.samples[i]) +
                        " samples, above the cap of " + std::to_string(config.max_samples));
    }
  }
  return plan;
}

MLReplicate run_ml_replicate(const DiffusionModel& model, const ObservationRecord& data,
                             const ExperimentConfig& config, const LevelPlan& plan, std::uint64_t seed) {
  if (plan.levels.empty()) throw ConfigError("empty level plan");
  MLReplicate out;
  out.seed = seed;
  const auto base_cc = chain_config(config, data, plan.levels[0], Coupling::kSingle, plan.samples[0]);
  const auto base = run_chain(model, data, base_cc, derive_seed(seed, {static_cast<std::uint64_t>(plan.levels[0])}));
  std::vector<ChainTrace> increments;
  for (std::size_t i = 1; i < plan.levels.size(); ++i) {
    const auto cc = chain_config(config, data, plan.levels[i], Coupling::kCoupled, plan.samples[i]);
    increments.push_back(run_chain(model, data, cc, derive_seed(seed, {static_cast<std::uint64_t>(plan.levels[i])})));
  }
  for (std::size_t p = 0; p < model.param_dim(); ++p) {
    out.reports.push_back(assemble_ml_estimate(model, data, base, increments, parameter_component(p)));
  }
  out.cost = out.reports.front().total_cost;
  return out;
}

SingleLevelRun run_single_level(const DiffusionModel& model, const ObservationRecord& data,
                                const ExperimentConfig& config, int level, std::size_t initial_samples,
                                std::span<const double> target_sd, std::size_t replicates) {
  if (replicates == 0) throw ConfigError("replicates must be positive");
  if (!target_sd.empty() && replicates < 2) throw ConfigError("error matching needs at least 2 replicates");
  const std::size_t dim = model.param_dim();
  if (!target_sd.empty() && target_sd.size() != dim) throw ConfigError("target_sd size differs from parameter count");

  SingleLevelRun run;
  run.samples = std::max<std::size_t>(1, initial_samples);
  if (run.samples > config.max_samples) {
    throw ConfigError("single-level run at level " + std::to_string(level) + " needs " + std::to_string(run.samples) +
                      " samples, above the cap of " + std::to_string(config.max_samples));
  }
  const auto cc = chain_config(config, data, level, Coupling::kSingle, run.samples);

  std::vector<std::unique_ptr<PmmhSampler>> samplers(replicates);
  std::vector<std::vector<double>> sums(dim, std::vector<double>(replicates, 0.0));
  run.costs.assign(replicates, 0.0);
  run.seeds.resize(replicates);
  for (std::size_t r = 0; r < replicates; ++r) run.seeds[r] = cell_seed(config, "single", level, r);

  const auto extend = [&](std::size_t count) {
    parallel_for(replicates, config.threads, [&](std::size_t r) {
      if (!samplers[r]) {
        samplers[r] = std::make_unique<PmmhSampler>(model, data, cc, run.seeds[r]);
        samplers[r]->burn_in(cc.burn_in);
      }
      ChainTrace trace;
      samplers[r]->sample(count, trace);
      for (const auto& s : trace.samples) {
        for (std::size_t p = 0; p < dim; ++p) sums[p][r] += s.state.theta[p];
      }
      run.costs[r] += trace.sampling_cost;
    });
  };
  const auto matched = [&] {
    if (target_sd.empty()) return true;
    for (std::size_t p = 0; p < dim; ++p) {
      std::vector<double> est(replicates);
      for (std::size_t r = 0; r < replicates; ++r) est[r] = sums[p][r] / static_cast<double>(run.samples);
      if (std::sqrt(estimate_level_variance(est)) > target_sd[p]) return false;
    }
    return true;
  };

  extend(run.samples);
  for (std::size_t d = 0; d < config.single_max_doublings && !matched(); ++d) {
    if (2 * run.samples > config.max_samples) {
      throw ConfigError("single-level run at level " + std::to_string(level) + " exceeds the cap of " +
                        std::to_string(config.max_samples) + " samples");
    }
    extend(run.samples);
    run.samples *= 2;
  }

  run.estimates.assign(dim, std::vector<double>(replicates));
  for (std::size_t p = 0; p < dim; ++p) {
    for (std::size_t r = 0; r < replicates; ++r) run.estimates[p][r] = sums[p][r] / static_cast<double>(run.samples);
  }
  return run;
}

ExperimentResult run_ml_experiment(const DiffusionModel& model, const ObservationRecord& data,
                                   const ExperimentConfig& config, ResultAppender* sink) {
  config.validate();
  data.validate();
  if (config.model != model.name()) throw ConfigError("config model differs from the model instance");
  const RateConstants rates = resolve_rates(config, model);
  const auto names = model.param_names();
  const std::size_t dim = names.size();

  ExperimentResult result;
  result.pilot = run_pilot(model, data, config);
  const auto grid = grid_points(config, rates, result.pilot.base_level);

  const auto emit = [&](ResultRow row) {
    if (sink) sink->append(row);
    result.rows.push_back(std::move(row));
  };

  for (const auto& [level, eps] : grid) {
    const LevelPlan plan = plan_for_level(level, result.pilot, config);
    result.plans.push_back(plan);

    std::vector<MLReplicate> ml(config.replicates);
    parallel_for(config.replicates, config.threads, [&](std::size_t r) {
      ml[r] = run_ml_replicate(model, data, config, plan, cell_seed(config, "ml", level, r));
    });
    std::vector<std::vector<double>> ml_estimates(dim, std::vector<double>(config.replicates));
    for (std::size_t r = 0; r < config.replicates; ++r) {
      for (std::size_t p = 0; p < dim; ++p) {
        ml_estimates[p][r] = ml[r].reports[p].estimate;
        emit({config.model, "ml", level, eps, r, names[p], ml[r].reports[p].estimate, ml[r].cost, ml[r].seed});
      }
    }

    if (!config.run_single) continue;
    std::vector<double> target_sd;
    std::size_t initial = 1;
    if (config.replicates >= 2) {
      for (std::size_t p = 0; p < dim; ++p) {
        const double var = estimate_level_variance(ml_estimates[p]);
        target_sd.push_back(std::sqrt(var));
        const double need = var > 0.0 ? result.pilot.per_sample_variance[p] / var
                                      : static_cast<double>(config.max_samples);
        initial = std::max(initial, static_cast<std::size_t>(std::ceil(std::min(need, 1e15))));
      }
    } else {
      initial = plan.samples.front();
    }
    initial = std::min(initial, config.max_samples);
    const auto single = run_single_level(model, data, config, level, initial, target_sd, config.replicates);
    for (std::size_t r = 0; r < config.replicates; ++r) {
      for (std::size_t p = 0; p < dim; ++p) {
        emit({config.model, "single", level, eps, r, names[p], single.estimates[p][r], single.costs[r],
              single.seeds[r]});
      }
    }
  }
  return result;
}

std::map<std::string, double> reference_values(const DiffusionModel& model, const ObservationRecord& data,
                                               const ExperimentConfig& config, int gold_level,
                                               std::size_t gold_samples) {
  const auto names = model.param_names();
  std::map<std::string, double> ref;
  if (const auto* ou = dynamic_cast<const OrnsteinUhlenbeck*>(&model)) {
    const auto post = reference::ou_posterior(*ou, data);
    ref[names[0]] = post.mean_theta;
    ref[names[1]] = post.mean_sigma;
    return ref;
  }
  const auto cc = chain_config(config, data, gold_level, Coupling::kSingle, gold_samples);
  const auto trace = run_chain(model, data, cc, cell_seed(config, "gold", gold_level, 0));
  for (std::size_t p = 0; p < names.size(); ++p) ref[names[p]] = stats::mean(trace.parameter_series(p));
  return ref;
}

}  // namespace mlpmmh::harness
