// Command-line front end: map/scenario generation, single-instance solving,
// fixed-budget benchmarking, and standalone plan verification.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include "difflns/bench.hpp"
#include "difflns/denoiser.hpp"
#include "difflns/instance_gen.hpp"
#include "difflns/pipeline.hpp"

namespace {

using namespace difflns;

int run_gen(const std::string& family, int height, int width, double density,
            int agents, std::uint64_t seed, int horizon,
            const std::string& out_dir) {
  SceneSpec spec;
  spec.family = family_from_name(family);
  spec.height = height;
  spec.width = width;
  spec.obstacle_density = density;
  spec.agent_count = agents;
  spec.seed = seed;
  const GridMap map = generate_map(spec);
  const Instance instance =
      sample_instance(map, agents, horizon, mix_seed(seed, 0x5eedu));
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir + "/map.txt", format_map(map));
  write_text_file(out_dir + "/scen.txt",
                  format_scenario(instance.starts, instance.goals));
  std::printf("wrote %s/map.txt (%dx%d, %d obstacles) and %s/scen.txt (%d agents)\n",
              out_dir.c_str(), map.height(), map.width(),
              map.cell_count() - map.free_count(), out_dir.c_str(), agents);
  return 0;
}

Instance load_instance(const std::string& map_path, const std::string& scen_path,
                       int horizon) {
  std::istringstream map_in(read_text_file(map_path));
  std::istringstream scen_in(read_text_file(scen_path));
  Instance instance;
  instance.map = parse_map(map_in);
  for (const auto& entry : parse_scenario(scen_in)) {
    instance.starts.push_back(entry.start);
    instance.goals.push_back(entry.goal);
  }
  instance.horizon = horizon > 0 ? horizon : default_horizon(instance.map);
  validate_instance(instance);
  return instance;
}

int run_solve(const std::string& map_path, const std::string& scen_path,
              const std::string& solver, const std::string& predictor,
              const std::string& weights_path, std::uint64_t seed,
              double budget, double repair_budget, int drafts, int rounds,
              int horizon, const std::string& plan_out) {
  const Instance instance = load_instance(map_path, scen_path, horizon);
  PipelineConfig config;
  config.total_budget_seconds = budget;
  config.repair_budget_seconds = repair_budget;
  config.drafts_per_round = drafts;
  config.max_rounds = rounds;

  SolveResult result;
  const SolverKind kind = solver_from_name(solver);
  if (kind == SolverKind::kDiffLns) {
    d3pm::Predictor clean_state;
    std::shared_ptr<const DenoiserParams> params;
    if (predictor == "neural") {
      params = std::make_shared<const DenoiserParams>(
          weights_path.empty() ? init_params(seed) : load_params(weights_path));
      clean_state = make_denoiser_predictor(instance, params);
    } else {
      clean_state = make_heuristic_predictor(instance);
    }
    result = difflns_solve(instance, clean_state, config, seed);
  } else if (kind == SolverKind::kLns2) {
    result = lns2_solve(instance, config, seed);
  } else {
    result = pp_multistart_solve(instance, config, seed);
  }

  std::printf("status:     %s\n", result.success ? "success" : "failure");
  if (result.success) std::printf("soc:        %lld\n", result.soc);
  std::printf("rounds:     %d\ncandidates: %d\nruntime_s:  %.3f\n",
              result.rounds_used, result.candidates_generated,
              result.wall_seconds);
  if (result.success && !plan_out.empty()) {
    write_text_file(plan_out, format_plan(result.plan));
    std::printf("plan:       %s\n", plan_out.c_str());
  }
  return result.success ? 0 : 1;
}

int run_bench(const std::string& config_path, const std::string& out_override,
              const std::string& solver_override, int jobs_override,
              std::int64_t seed_override) {
  RunConfig config = load_run_config(config_path);
  if (!out_override.empty()) config.out_dir = out_override;
  if (!solver_override.empty()) config.solver = solver_from_name(solver_override);
  if (jobs_override > 0) config.jobs = jobs_override;
  if (seed_override >= 0)
    config.master_seed = static_cast<std::uint64_t>(seed_override);

  const BenchmarkReport report = run_benchmark(config);
  std::fputs(format_metrics_csv(report.rows).c_str(), stdout);
  if (!config.out_dir.empty())
    std::printf("# wrote %s/metrics.csv and %s/results.jsonl\n",
                config.out_dir.c_str(), config.out_dir.c_str());
  return 0;  // completion, not success rate, decides the exit code
}

int run_verify(const std::string& map_path, const std::string& scen_path,
               const std::string& plan_path) {
  const VerifyReport report = verify_solution(map_path, scen_path, plan_path);
  if (report.ok) {
    std::printf("OK\n");
    return 0;
  }
  for (const auto& error : report.errors)
    std::printf("INVALID: %s\n", error.c_str());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DiffLNS MAPF solver toolkit"};
  app.require_subcommand(1);

  // gen
  std::string family = "random", out_dir = "scene";
  int height = 10, width = 10, agents = 20, horizon = 0;
  double density = 0.175;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen", "generate a map and scenario");
  gen->add_option("--family", family, "random|maze|room|warehouse");
  gen->add_option("--height", height);
  gen->add_option("--width", width);
  gen->add_option("--density", density, "obstacle density target");
  gen->add_option("--agents", agents);
  gen->add_option("--horizon", horizon, "0 = 2*(H+W)");
  gen->add_option("--seed", seed);
  gen->add_option("--out", out_dir, "output directory");

  // solve
  std::string map_path, scen_path, solver = "difflns", predictor = "heuristic";
  std::string weights_path, plan_out;
  double budget = 600.0, repair_budget = 120.0;
  int drafts = 4, rounds = 5;
  auto* solve = app.add_subcommand("solve", "solve one instance");
  solve->add_option("--map", map_path)->required();
  solve->add_option("--scen", scen_path)->required();
  solve->add_option("--solver", solver, "difflns|lns2|pp-multistart");
  solve->add_option("--predictor", predictor, "heuristic|neural");
  solve->add_option("--weights", weights_path, "denoiser weight file");
  solve->add_option("--seed", seed);
  solve->add_option("--budget", budget, "total budget, seconds");
  solve->add_option("--repair-budget", repair_budget, "per candidate, seconds");
  solve->add_option("--drafts", drafts, "drafts per round (M)");
  solve->add_option("--rounds", rounds, "max rounds (R)");
  solve->add_option("--horizon", horizon, "0 = 2*(H+W)");
  solve->add_option("--plan-out", plan_out, "write the plan here on success");

  // bench
  std::string config_path, bench_out, bench_solver;
  int jobs = 0;
  std::int64_t bench_seed = -1;
  auto* bench = app.add_subcommand("bench", "run a benchmark configuration");
  bench->add_option("--config", config_path)->required();
  bench->add_option("--out", bench_out, "override the output directory");
  bench->add_option("--solver", bench_solver, "override the solver");
  bench->add_option("--jobs", jobs, "worker threads");
  bench->add_option("--seed", bench_seed, "override the master seed");

  // verify
  std::string verify_plan;
  auto* verify = app.add_subcommand("verify", "check a plan file");
  verify->add_option("--map", map_path)->required();
  verify->add_option("--scen", scen_path)->required();
  verify->add_option("--plan", verify_plan)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return run_gen(family, height, width, density, agents, seed, horizon,
                     out_dir);
    if (solve->parsed())
      return run_solve(map_path, scen_path, solver, predictor, weights_path,
                       seed, budget, repair_budget, drafts, rounds, horizon,
                       plan_out);
    if (bench->parsed())
      return run_bench(config_path, bench_out, bench_solver, jobs, bench_seed);
    if (verify->parsed()) return run_verify(map_path, scen_path, verify_plan);
  } catch (const std::exception& error) {
    std::fprintf(stderr, "error: %s\n", error.what());
    return 2;
  }
  return 0;
}
