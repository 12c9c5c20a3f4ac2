// Command-line driver: data simulation, pilot calibration, multilevel and
// single-level runs, full experiment grids and rate fitting.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mlpmmh/errors.hpp"
#include "mlpmmh/harness.hpp"
#include "mlpmmh/io.hpp"
#include "mlpmmh/particle_filter.hpp"
#include "mlpmmh/random.hpp"

namespace fs = std::filesystem;
using namespace mlpmmh;
using nlohmann::json;

namespace {

struct Common {
  std::string model;
  std::string config_path;
  std::string data_path;
  std::optional<std::uint64_t> seed;
  std::vector<double> eps;
  std::vector<int> levels;
  std::optional<std::size_t> replicates;
  std::optional<std::size_t> particles;
  std::optional<std::size_t> burn_in;
  std::optional<std::size_t> init_candidates;
  std::optional<double> theta_upper;
  std::optional<unsigned> threads;
  bool full = false;
  std::string out = "results";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--model", c.model, "Model id: ou | langevin");
  cmd->add_option("--config", c.config_path, "Experiment config (JSON)");
  cmd->add_option("--data", c.data_path, "Observation CSV; simulated from the config when absent");
  cmd->add_option("--seed", c.seed, "Master seed");
  cmd->add_option("--eps", c.eps, "Target errors (strictly decreasing)");
  cmd->add_option("--levels", c.levels, "Finest levels L");
  cmd->add_option("--replicates", c.replicates, "Replicates R");
  cmd->add_option("--particles", c.particles, "Particles M (default n)");
  cmd->add_option("--burn-in", c.burn_in, "Burn-in iterations per chain");
  cmd->add_option("--init-candidates", c.init_candidates, "Prior draws scored when starting a chain");
  cmd->add_option("--theta-upper", c.theta_upper, "Upper bound of the theta prior support");
  cmd->add_option("--threads", c.threads, "Worker threads");
  cmd->add_flag("--full", c.full, "Full-scale defaults (larger n, R and burn-in)");
  cmd->add_option("--out", c.out, "Output directory");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

harness::ExperimentConfig resolve_config(const Common& c) {
  harness::ExperimentConfig cfg;
  if (!c.config_path.empty()) {
    json j = read_json(c.config_path);
    if (!c.model.empty()) j["model"] = c.model;
    if (c.full) j["full"] = true;
    cfg = harness::config_from_json(j);
  } else {
    cfg = harness::default_config(c.model.empty() ? "ou" : c.model, c.full);
  }
  if (!c.data_path.empty()) cfg.data_path = c.data_path;
  if (c.seed) cfg.seed = *c.seed;
  if (!c.eps.empty()) {
    cfg.eps = c.eps;
    cfg.levels.clear();
  }
  if (!c.levels.empty()) {
    cfg.levels = c.levels;
    cfg.eps.clear();
  }
  if (c.replicates) cfg.replicates = *c.replicates;
  if (c.particles) cfg.particles = *c.particles;
  if (c.burn_in) cfg.burn_in = *c.burn_in;
  if (c.init_candidates) cfg.init_candidates = *c.init_candidates;
  if (c.theta_upper) cfg.theta_upper = *c.theta_upper;
  if (c.threads) cfg.threads = *c.threads;
  cfg.out_dir = c.out;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

template <class Fn>
void write_with(const fs::path& path, Fn&& fn) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  fn(out);
}

json pilot_json(const harness::PilotResult& p) {
  return {{"base_level", p.base_level},
          {"per_sample_variance", p.per_sample_variance},
          {"proposal_scales", p.proposal_scales},
          {"mean_acceptance", p.mean_acceptance}};
}

std::map<std::string, double> parse_reference(const std::vector<std::string>& items) {
  std::map<std::string, double> ref;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("reference must look like name=value: " + item);
    ref[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
  }
  return ref;
}

int cmd_simulate(const Common& c, std::size_t n, const std::vector<double>& truth) {
  auto cfg = resolve_config(c);
  if (n > 0) cfg.observations = n;
  if (!truth.empty()) cfg.true_params = ParamVector(truth);
  if (c.seed) cfg.data_seed = *c.seed;
  cfg.data_path.clear();
  const auto model = harness::model_for(cfg);
  const auto data = harness::prepare_data(*model, cfg);
  const fs::path csv = fs::path(c.out) / "data.csv";
  fs::create_directories(c.out);
  io::save_observations(csv, data);
  std::cout << json{{"data", csv.string()}, {"metadata", io::metadata_path(csv).string()}, {"n", data.size()}}.dump()
            << '\n';
  return 0;
}

int cmd_pilot(const Common& c, bool tune) {
  const auto cfg = resolve_config(c);
  const auto model = harness::model_for(cfg);
  const auto data = harness::prepare_data(*model, cfg);
  const auto pilot = harness::run_pilot(*model, data, cfg, tune);
  json out = pilot_json(pilot);
  json plans = json::array();
  harness::ExperimentConfig grid = cfg;
  grid.proposal_scales = pilot.proposal_scales;
  const std::vector<int> levels = cfg.levels;
  for (int l : levels) plans.push_back(io::to_json(harness::plan_for_level(l, pilot, grid)));
  for (double e : cfg.eps) {
    RateConstants rates = cfg.rates;
    if (cfg.rates_from_model) rates.beta = model->default_beta();
    plans.push_back(io::to_json(harness::plan_for_level(std::max(pilot.base_level, finest_level(e, rates)), pilot, grid)));
  }
  out["plans"] = plans;
  write_text(fs::path(c.out) / "pilot.json", out.dump(2) + "\n");
  std::cout << out.dump() << '\n';
  return 0;
}

int cmd_run_ml(const Common& c, std::optional<std::uint64_t> replicate_seed) {
  auto cfg = resolve_config(c);
  const auto model = harness::model_for(cfg);
  const auto data = harness::prepare_data(*model, cfg);
  const auto pilot = harness::run_pilot(*model, data, cfg);
  RateConstants rates = cfg.rates;
  if (cfg.rates_from_model) rates.beta = model->default_beta();

  std::vector<std::pair<int, double>> grid;
  for (int l : cfg.levels) grid.emplace_back(l, std::exp2(-rates.alpha * l));
  for (double e : cfg.eps) grid.emplace_back(std::max(pilot.base_level, finest_level(e, rates)), e);
  if (grid.empty()) throw ConfigError("run-ml needs --levels or --eps");

  harness::ResultAppender sink(fs::path(c.out) / "results.csv");
  std::ofstream reports(fs::path(c.out) / "reports.jsonl", std::ios::app);
  const auto names = model->param_names();
  for (const auto& [level, eps] : grid) {
    const auto plan = harness::plan_for_level(level, pilot, cfg);
    const std::size_t count = replicate_seed ? 1 : cfg.replicates;
    for (std::size_t r = 0; r < count; ++r) {
      const std::uint64_t seed =
          replicate_seed ? *replicate_seed
                         : derive_seed(cfg.seed, {hash_tag(cfg.model), hash_tag("ml"), static_cast<std::uint64_t>(level),
                                                  static_cast<std::uint64_t>(r)});
      const auto rep = harness::run_ml_replicate(*model, data, cfg, plan, seed);
      json record = {{"L", level}, {"eps", eps}, {"replicate", r}, {"seed", seed}, {"plan", io::to_json(plan)}};
      for (std::size_t p = 0; p < names.size(); ++p) {
        sink.append({cfg.model, "ml", level, eps, r, names[p], rep.reports[p].estimate, rep.cost, seed});
        record[names[p]] = io::to_json(rep.reports[p]);
      }
      reports << record.dump() << '\n';
    }
  }
  std::cout << json{{"results", sink.path().string()}}.dump() << '\n';
  return 0;
}

int cmd_run_single(const Common& c, std::size_t samples, const std::string& debug_ess) {
  auto cfg = resolve_config(c);
  if (cfg.levels.size() != 1) throw ConfigError("run-single needs exactly one --levels value");
  const int level = cfg.levels.front();
  const auto model = harness::model_for(cfg);
  const auto data = harness::prepare_data(*model, cfg);
  const auto names = model->param_names();
  const auto run = harness::run_single_level(*model, data, cfg, level, samples, {}, cfg.replicates);
  const double eps = std::exp2(-cfg.rates.alpha * level);
  harness::ResultAppender sink(fs::path(c.out) / "results.csv");
  for (std::size_t r = 0; r < cfg.replicates; ++r) {
    for (std::size_t p = 0; p < names.size(); ++p) {
      sink.append({cfg.model, "single", level, eps, r, names[p], run.estimates[p][r], run.costs[r], run.seeds[r]});
    }
  }
  if (!debug_ess.empty()) {
    ParamVector theta;
    for (std::size_t p = 0; p < names.size(); ++p) theta.values.push_back(run.estimates[p][0]);
    Rng rng(cfg.seed);
    FilterOptions opts;
    opts.record_ess = true;
    ChainConfig cc;
    cc.particles = cfg.particles;
    const auto out = run_filter(*model, theta, data, LevelStep::at(level, data.spacing), Coupling::kSingle,
                                resolve_particles(cc, data), rng, opts);
    write_with(debug_ess, [&](std::ostream& os) { io::write_ess_csv(os, out.ess); });
  }
  std::cout << json{{"results", sink.path().string()}, {"samples", run.samples}}.dump() << '\n';
  return 0;
}

void summarize(const fs::path& dir, const DiffusionModel& model, const ObservationRecord& data,
               const harness::ExperimentConfig& cfg, std::span<const harness::ResultRow> rows,
               const std::map<std::string, double>& reference) {
  const auto points = harness::cost_error_points(rows, reference);
  const auto fits = harness::fit_rates(points);
  write_with(dir / "cost_error.csv", [&](std::ostream& os) { harness::write_cost_error_csv(os, points); });
  write_with(dir / "cost_error.svg", [&](std::ostream& os) { harness::write_cost_error_svg(os, points); });
  write_with(dir / "rates.csv", [&](std::ostream& os) { harness::write_rates_csv(os, fits); });
  json summary = {{"model", model.name()}, {"n", data.size()}, {"reference", reference}, {"seed", cfg.seed}};
  for (const auto& [key, fit] : fits) summary["rates"][key] = fit.slope;
  write_text(dir / "rates.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << '\n';
}

std::map<std::string, double> reference_for(const DiffusionModel& model, const ObservationRecord& data,
                                            const harness::ExperimentConfig& cfg,
                                            std::span<const harness::ResultRow> rows, std::size_t gold_samples) {
  int max_level = 0;
  for (const auto& r : rows) max_level = std::max(max_level, r.level);
  return harness::reference_values(model, data, cfg, max_level + 2, gold_samples);
}

int cmd_experiment(const Common& c, std::size_t gold_samples) {
  const auto cfg = resolve_config(c);
  const fs::path dir = c.out;
  fs::create_directories(dir);
  const auto model = harness::model_for(cfg);
  const auto data = harness::prepare_data(*model, cfg);
  write_text(dir / "config.json", harness::to_json(cfg).dump(2) + "\n");
  io::save_observations(dir / "data.csv", data);

  harness::ResultAppender sink(dir / "results.csv");
  const auto result = harness::run_ml_experiment(*model, data, cfg, &sink);
  json plans = json::array();
  for (const auto& p : result.plans) plans.push_back(io::to_json(p));
  write_text(dir / "pilot.json", json{{"pilot", pilot_json(result.pilot)}, {"plans", plans}}.dump(2) + "\n");

  std::size_t gold = gold_samples;
  if (gold == 0 && !result.plans.empty()) gold = 10 * result.plans.back().samples.front();
  summarize(dir, *model, data, cfg, result.rows, reference_for(*model, data, cfg, result.rows, gold));
  return 0;
}

int cmd_rates(const Common& c, const std::string& results_path, const std::vector<std::string>& reference_items,
              std::size_t gold_samples) {
  std::ifstream in(results_path);
  if (!in) throw IoError("cannot read " + results_path);
  const auto rows = harness::read_results_csv(in);
  if (rows.empty()) throw EstimationError("results file has no rows");
  auto cfg = resolve_config(c);
  if (c.model.empty() && c.config_path.empty()) cfg.model = rows.front().model;
  const auto model = harness::model_for(cfg);
  const auto data = harness::prepare_data(*model, cfg);
  auto reference = parse_reference(reference_items);
  if (reference.empty()) reference = reference_for(*model, data, cfg, rows, gold_samples);
  fs::create_directories(c.out);
  summarize(c.out, *model, data, cfg, rows, reference);
  return 0;
}

int report_error(std::string_view kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
  return kind == "config_error" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilevel particle MCMC for partially observed diffusions"};
  app.require_subcommand(1);

  Common common;
  std::size_t sim_n = 0;
  std::vector<double> truth;
  auto* simulate = app.add_subcommand("simulate", "Simulate observations (CSV + JSON metadata)");
  add_common(simulate, common);
  simulate->add_option("--n", sim_n, "Number of observations");
  simulate->add_option("--true-params", truth, "True parameters");

  bool tune = false;
  auto* pilot = app.add_subcommand("pilot", "Estimate V_0 at the base level and the per-level plans");
  add_common(pilot, common);
  pilot->add_flag("--tune", tune, "Tune proposal scales toward acceptance 0.2-0.3");

  std::optional<std::uint64_t> replicate_seed;
  auto* run_ml = app.add_subcommand("run-ml", "Replicated multilevel estimators");
  add_common(run_ml, common);
  run_ml->add_option("--replicate-seed", replicate_seed, "Re-run the single replicate with this seed");

  std::size_t samples = 1000;
  std::string debug_ess;
  auto* run_single = app.add_subcommand("run-single", "Replicated single-level PMMH at one level");
  add_common(run_single, common);
  run_single->add_option("--samples", samples, "Recorded samples per chain");
  run_single->add_option("--debug-ess", debug_ess, "Write per-step ESS of one filter run to this CSV");

  std::size_t gold_samples = 0;
  auto* experiment = app.add_subcommand("experiment", "Full grid: pilot, ML and single-level runs, rates");
  add_common(experiment, common);
  experiment->add_option("--gold-samples", gold_samples, "Samples of the gold run (models without an oracle)");

  std::string results_path;
  std::vector<std::string> reference_items;
  auto* rates = app.add_subcommand("rates", "Fit cost-vs-MSE slopes from a results CSV");
  add_common(rates, common);
  rates->add_option("--results", results_path, "Results CSV")->required();
  rates->add_option("--reference", reference_items, "Reference values as name=value");
  rates->add_option("--gold-samples", gold_samples, "Samples of the gold run (models without an oracle)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error("usage_error", e.what());
  }

  try {
    if (*simulate) return cmd_simulate(common, sim_n, truth);
    if (*pilot) return cmd_pilot(common, tune);
    if (*run_ml) return cmd_run_ml(common, replicate_seed);
    if (*run_single) return cmd_run_single(common, samples, debug_ess);
    if (*experiment) return cmd_experiment(common, gold_samples == 0 ? 0 : gold_samples);
    if (*rates) return cmd_rates(common, results_path, reference_items, gold_samples == 0 ? 20000 : gold_samples);
  } catch (const Error& e) {
    return report_error(e.kind(), e.what());
  } catch (const std::exception& e) {
    return report_error("error", e.what());
  }
  return 0;
}
