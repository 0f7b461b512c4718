#pragma once

// Benchmark front end: JSON run configurations, deterministic instance
// generation, a bounded worker pool over instances, per-instance JSON-lines
// logs, CSV metrics, and a standalone plan checker. Instance seeds derive
// from (master seed, setting index, agent index, instance index) only, so
// different solvers see identical instance sets.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "difflns/denoiser.hpp"
#include "difflns/grid.hpp"
#include "difflns/instance_gen.hpp"
#include "difflns/pipeline.hpp"
#include "difflns/rng.hpp"

namespace difflns {

enum class SolverKind { kDiffLns, kLns2, kPpMultistart };

inline const char* solver_name(SolverKind solver) {
  switch (solver) {
    case SolverKind::kDiffLns: return "difflns";
    case SolverKind::kLns2: return "lns2";
    case SolverKind::kPpMultistart: return "pp-multistart";
  }
  return "?";
}

inline SolverKind solver_from_name(const std::string& name) {
  if (name == "difflns") return SolverKind::kDiffLns;
  if (name == "lns2") return SolverKind::kLns2;
  if (name == "pp-multistart") return SolverKind::kPpMultistart;
  throw std::invalid_argument("unknown solver: " + name);
}

struct SettingConfig {
  std::string id;
  SceneFamily family = SceneFamily::kRandom;
  int height = 10;
  int width = 10;
  double density_low = 0.0;   // per-instance target drawn uniformly
  double density_high = 0.0;  // from [low, high]
  std::vector<int> agent_counts;
  int instances = 1;
  double time_limit_seconds = 180.0;
  int horizon = 0;  // 0 = default 2*(H+W)
};

struct RunConfig {
  std::uint64_t master_seed = 0;
  SolverKind solver = SolverKind::kDiffLns;
  std::string out_dir;  // empty = no files
  int jobs = 1;
  std::string weights_path;  // required for the neural predictor
  PipelineConfig pipeline;
  std::vector<SettingConfig> settings;
};

struct InstanceOutcome {
  std::string setting_id;
  std::string family;
  int agents = 0;
  int instance_index = 0;
  std::uint64_t seed = 0;
  bool success = false;
  long long soc = 0;
  double runtime_seconds = 0.0;
  int candidates = 0;
};

struct MetricsRow {
  std::string setting_id;
  std::string family;
  int agents = 0;
  int instances = 0;
  double success_rate = 0.0;
  double mean_soc = 0.0;  // over successes; NaN when none
  double mean_runtime_seconds = 0.0;
  double mean_candidates = 0.0;
};

struct BenchmarkReport {
  std::vector<InstanceOutcome> outcomes;
  std::vector<MetricsRow> rows;
};

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::runtime_error config_error(const std::string& where,
                                       const std::string& what) {
  return std::runtime_error("config: " + where + ": " + what);
}

template <typename T>
T require_field(const nlohmann::json& node, const std::string& key,
                const std::string& where) {
  if (!node.contains(key)) throw config_error(where, "missing field '" + key + "'");
  try {
    return node.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw config_error(where, "bad value for field '" + key + "'");
  }
}

template <typename T>
T optional_field(const nlohmann::json& node, const std::string& key, T fallback) {
  if (!node.contains(key)) return fallback;
  return node.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& root) {
  RunConfig config;
  config.master_seed = detail::optional_field<std::uint64_t>(root, "seed", 0);
  config.solver = solver_from_name(
      detail::optional_field<std::string>(root, "solver", "difflns"));
  config.out_dir = detail::optional_field<std::string>(root, "out", "");
  config.jobs = detail::optional_field<int>(root, "jobs", 1);
  config.weights_path =
      detail::optional_field<std::string>(root, "weights", "");
  if (config.jobs < 1) throw detail::config_error("jobs", "must be >= 1");

  if (root.contains("pipeline")) {
    const auto& p = root.at("pipeline");
    config.pipeline.drafts_per_round =
        detail::optional_field<int>(p, "drafts_per_round", 4);
    config.pipeline.max_rounds = detail::optional_field<int>(p, "max_rounds", 5);
    config.pipeline.repair_budget_seconds =
        detail::optional_field<double>(p, "repair_budget_s", 120.0);
    config.pipeline.max_candidates =
        detail::optional_field<int>(p, "max_candidates", 20);
    config.pipeline.diffusion_steps =
        detail::optional_field<int>(p, "diffusion_steps", 100);
    config.pipeline.repair.neighborhood_size =
        detail::optional_field<int>(p, "neighborhood_size", 8);
    config.pipeline.repair.max_iterations = detail::optional_field<long long>(
        p, "max_repair_iterations", config.pipeline.repair.max_iterations);
    const std::string predictor =
        detail::optional_field<std::string>(p, "predictor", "heuristic");
    if (predictor == "heuristic")
      config.pipeline.predictor = PredictorKind::kHeuristic;
    else if (predictor == "neural")
      config.pipeline.predictor = PredictorKind::kNeural;
    else
      throw detail::config_error("pipeline.predictor", "unknown predictor");
    if (config.pipeline.drafts_per_round < 1 || config.pipeline.max_rounds < 1)
      throw detail::config_error("pipeline", "M and R must be >= 1");
  }

  if (!root.contains("settings") || !root.at("settings").is_array() ||
      root.at("settings").empty())
    throw detail::config_error("settings", "need a non-empty array");
  int index = 0;
  for (const auto& node : root.at("settings")) {
    const std::string where = "settings[" + std::to_string(index++) + "]";
    SettingConfig setting;
    setting.id = detail::optional_field<std::string>(node, "id",
                                                     "setting" + std::to_string(index));
    setting.family = family_from_name(
        detail::require_field<std::string>(node, "family", where));
    setting.height = detail::require_field<int>(node, "height", where);
    setting.width = detail::require_field<int>(node, "width", where);
    if (node.contains("density_range")) {
      const auto range = node.at("density_range");
      if (!range.is_array() || range.size() != 2)
        throw detail::config_error(where, "density_range must be [low, high]");
      setting.density_low = range[0].get<double>();
      setting.density_high = range[1].get<double>();
    } else {
      setting.density_low = setting.density_high =
          detail::require_field<double>(node, "density", where);
    }
    setting.agent_counts =
        detail::require_field<std::vector<int>>(node, "agents", where);
    setting.instances = detail::require_field<int>(node, "instances", where);
    setting.time_limit_seconds =
        detail::require_field<double>(node, "time_limit_s", where);
    setting.horizon = detail::optional_field<int>(node, "horizon", 0);
    if (setting.instances < 1)
      throw detail::config_error(where, "instances must be >= 1");
    if (setting.time_limit_seconds <= 0.0)
      throw detail::config_error(where, "time_limit_s must be positive");
    if (setting.agent_counts.empty())
      throw detail::config_error(where, "agents must be non-empty");
    for (const int n : setting.agent_counts)
      if (n < 1) throw detail::config_error(where, "agent counts must be >= 1");
    config.settings.push_back(std::move(setting));
  }
  return config;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& error) {
    throw std::runtime_error("config: " + path + ": " + error.what());
  }
  return parse_run_config(root);
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace detail {

struct Task {
  int setting_index = 0;
  int agent_index = 0;
  int instance_index = 0;
};

inline Instance build_bench_instance(const RunConfig& config,
                                     const Task& task,
                                     std::uint64_t* solve_seed) {
  const SettingConfig& setting = config.settings[task.setting_index];
  const std::uint64_t base =
      mix_seed(config.master_seed, task.setting_index, task.agent_index,
               task.instance_index);
  SceneSpec spec;
  spec.family = setting.family;
  spec.height = setting.height;
  spec.width = setting.width;
  spec.agent_count = setting.agent_counts[task.agent_index];
  spec.seed = mix_seed(base, 0x6d6170u);
  Rng density_rng(mix_seed(base, 0x646eu));
  spec.obstacle_density =
      density_rng.uniform(setting.density_low, setting.density_high);
  const GridMap map = generate_map(spec);
  *solve_seed = mix_seed(base, 0x736f6cu);
  return sample_instance(map, spec.agent_count, setting.horizon,
                         mix_seed(base, 0x696eu));
}

inline SolveResult run_solver(const RunConfig& config, const Instance& instance,
                              double time_limit, std::uint64_t solve_seed,
                              const std::shared_ptr<const DenoiserParams>& weights) {
  PipelineConfig pipeline = config.pipeline;
  pipeline.total_budget_seconds = time_limit;
  switch (config.solver) {
    case SolverKind::kDiffLns: {
      const d3pm::Predictor predictor =
          pipeline.predictor == PredictorKind::kNeural
              ? make_denoiser_predictor(instance, weights)
              : make_heuristic_predictor(instance);
      return difflns_solve(instance, predictor, pipeline, solve_seed);
    }
    case SolverKind::kLns2:
      return lns2_solve(instance, pipeline, solve_seed);
    case SolverKind::kPpMultistart:
      return pp_multistart_solve(instance, pipeline, solve_seed);
  }
  throw std::logic_error("run_solver: unhandled solver");
}

}  // namespace detail

inline std::vector<MetricsRow> recompute_metrics(
    const std::vector<InstanceOutcome>& outcomes) {
  std::vector<MetricsRow> rows;
  for (const auto& outcome : outcomes) {
    MetricsRow* row = nullptr;
    for (auto& existing : rows)
      if (existing.setting_id == outcome.setting_id &&
          existing.agents == outcome.agents)
        row = &existing;
    if (!row) {
      rows.push_back({});
      row = &rows.back();
      row->setting_id = outcome.setting_id;
      row->family = outcome.family;
      row->agents = outcome.agents;
    }
    row->instances += 1;
    row->success_rate += outcome.success ? 1.0 : 0.0;
    if (outcome.success) row->mean_soc += static_cast<double>(outcome.soc);
    row->mean_runtime_seconds += outcome.runtime_seconds;
    row->mean_candidates += outcome.candidates;
  }
  for (auto& row : rows) {
    const double successes = row.success_rate;
    row.success_rate = successes / row.instances;
    row.mean_soc = successes > 0.0
                       ? row.mean_soc / successes
                       : std::numeric_limits<double>::quiet_NaN();
    row.mean_runtime_seconds /= row.instances;
    row.mean_candidates /= row.instances;
  }
  return rows;
}

inline std::string format_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  out << "setting,family,N,instances,SR,mean_SOC,mean_runtime_s,mean_candidates\n";
  out.precision(12);
  for (const auto& row : rows) {
    out << row.setting_id << ',' << row.family << ',' << row.agents << ','
        << row.instances << ',' << row.success_rate << ',';
    if (std::isnan(row.mean_soc))
      out << "";  // SOC is defined only when something succeeded
    else
      out << row.mean_soc;
    out << ',' << row.mean_runtime_seconds << ',' << row.mean_candidates << '\n';
  }
  return out.str();
}

inline nlohmann::json outcome_to_json(const InstanceOutcome& outcome) {
  return {{"setting", outcome.setting_id},
          {"family", outcome.family},
          {"N", outcome.agents},
          {"instance", outcome.instance_index},
          {"seed", outcome.seed},
          {"status", outcome.success ? "success" : "failure"},
          {"soc", outcome.success ? nlohmann::json(outcome.soc)
                                  : nlohmann::json(nullptr)},
          {"runtime_s", outcome.runtime_seconds},
          {"candidates", outcome.candidates}};
}

inline InstanceOutcome outcome_from_json(const nlohmann::json& node) {
  InstanceOutcome outcome;
  outcome.setting_id = node.at("setting").get<std::string>();
  outcome.family = node.at("family").get<std::string>();
  outcome.agents = node.at("N").get<int>();
  outcome.instance_index = node.at("instance").get<int>();
  outcome.seed = node.at("seed").get<std::uint64_t>();
  outcome.success = node.at("status").get<std::string>() == "success";
  if (outcome.success) outcome.soc = node.at("soc").get<long long>();
  outcome.runtime_seconds = node.at("runtime_s").get<double>();
  outcome.candidates = node.at("candidates").get<int>();
  return outcome;
}

// Runs every (setting, N, instance) cell under its per-setting limit on a
// bounded worker pool. Outcomes are ordered deterministically regardless of
// the job count; files are written when out_dir is set.
inline BenchmarkReport run_benchmark(const RunConfig& config) {
  std::shared_ptr<const DenoiserParams> weights;
  if (config.solver == SolverKind::kDiffLns &&
      config.pipeline.predictor == PredictorKind::kNeural) {
    if (config.weights_path.empty())
      throw std::runtime_error("config: neural predictor needs a weights path");
    weights = std::make_shared<const DenoiserParams>(
        load_params(config.weights_path));
  }

  std::vector<detail::Task> tasks;
  for (int s = 0; s < static_cast<int>(config.settings.size()); ++s)
    for (int a = 0; a < static_cast<int>(config.settings[s].agent_counts.size()); ++a)
      for (int i = 0; i < config.settings[s].instances; ++i)
        tasks.push_back({s, a, i});

  std::vector<InstanceOutcome> outcomes(tasks.size());
  std::atomic<std::size_t> cursor{0};
  std::mutex failure_mutex;
  std::string failure;

  const auto worker = [&]() {
    while (true) {
      const std::size_t at = cursor.fetch_add(1);
      if (at >= tasks.size()) return;
      const detail::Task& task = tasks[at];
      const SettingConfig& setting = config.settings[task.setting_index];
      InstanceOutcome outcome;
      outcome.setting_id = setting.id;
      outcome.family = family_name(setting.family);
      outcome.agents = setting.agent_counts[task.agent_index];
      outcome.instance_index = task.instance_index;
      try {
        std::uint64_t solve_seed = 0;
        const Instance instance =
            detail::build_bench_instance(config, task, &solve_seed);
        outcome.seed = solve_seed;
        const SolveResult result = detail::run_solver(
            config, instance, setting.time_limit_seconds, solve_seed, weights);
        outcome.success = result.success;
        outcome.soc = result.soc;
        outcome.runtime_seconds = result.wall_seconds;
        outcome.candidates = result.candidates_generated;
      } catch (const std::exception& error) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (failure.empty()) failure = error.what();
        return;
      }
      outcomes[at] = std::move(outcome);
    }
  };

  const int jobs = std::max(1, config.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& thread : pool) thread.join();
  }
  if (!failure.empty()) throw std::runtime_error("benchmark: " + failure);

  BenchmarkReport report;
  report.outcomes = std::move(outcomes);
  report.rows = recompute_metrics(report.outcomes);

  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    std::ostringstream log;
    for (const auto& outcome : report.outcomes)
      log << outcome_to_json(outcome).dump() << '\n';
    write_text_file(config.out_dir + "/results.jsonl", log.str());
    write_text_file(config.out_dir + "/metrics.csv",
                    format_metrics_csv(report.rows));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Standalone plan verification
// ---------------------------------------------------------------------------

struct VerifyReport {
  bool ok = false;
  std::vector<std::string> errors;
  ConflictReport conflicts;
};

inline VerifyReport verify_solution(const std::string& map_path,
                                    const std::string& scen_path,
                                    const std::string& plan_path) {
  VerifyReport report;
  std::istringstream map_in(read_text_file(map_path));
  std::istringstream scen_in(read_text_file(scen_path));
  std::istringstream plan_in(read_text_file(plan_path));
  const GridMap map = parse_map(map_in);
  const auto entries = parse_scenario(scen_in);
  const Plan plan = parse_plan(plan_in);

  Instance instance;
  instance.map = map;
  instance.horizon = default_horizon(map);
  for (const auto& entry : entries) {
    instance.starts.push_back(entry.start);
    instance.goals.push_back(entry.goal);
  }
  std::string reason;
  if (!plan_paths_valid(plan, instance, &reason)) report.errors.push_back(reason);
  if (plan.agent_count() == instance.agent_count()) {
    report.conflicts = detect_conflicts(plan);
    for (const auto& vc : report.conflicts.vertex_conflicts)
      report.errors.push_back(
          "vertex conflict: agents " + std::to_string(vc.agent_a) + "," +
          std::to_string(vc.agent_b) + " at t=" + std::to_string(vc.time) +
          " cell (" + std::to_string(vc.cell.row) + "," +
          std::to_string(vc.cell.col) + ")");
    for (const auto& ec : report.conflicts.edge_conflicts)
      report.errors.push_back("edge conflict: agents " +
                              std::to_string(ec.agent_a) + "," +
                              std::to_string(ec.agent_b) +
                              " at t=" + std::to_string(ec.time));
  }
  report.ok = report.errors.empty();
  return report;
}

}  // namespace difflns
