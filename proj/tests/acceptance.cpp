// Acceptance suite: one criterion per section, one pass/fail line each.
// Exit code equals the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "difflns/bench.hpp"
#include "difflns/d3pm.hpp"
#include "difflns/denoiser.hpp"
#include "difflns/instance_gen.hpp"
#include "difflns/pipeline.hpp"
#include "difflns/task_losses.hpp"
#include "support/denoiser_refs.hpp"
#include "support/dual.hpp"
#include "support/oracles.hpp"

using namespace difflns;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.3g", value);
  return buffer;
}

d3pm::Kernel kernel_product(const d3pm::Kernel& a, const d3pm::Kernel& b) {
  d3pm::Kernel out{};
  for (int r = 0; r < d3pm::kCategories; ++r)
    for (int c = 0; c < d3pm::kCategories; ++c) {
      double sum = 0.0;
      for (int m = 0; m < d3pm::kCategories; ++m) sum += a[r][m] * b[m][c];
      out[r][c] = sum;
    }
  return out;
}

// --------------------------------------------------------------------------
// 1. Analytic posterior vs brute-force enumeration.
// --------------------------------------------------------------------------
bool criterion_posterior_oracle(std::string* detail) {
  const double start = now_seconds();
  const auto schedule = d3pm::cosine_schedule(100);
  // Brute-force k-step kernels as explicit products.
  std::vector<d3pm::Kernel> bar(101);
  bar[0] = d3pm::transition_matrix(1.0);
  for (int k = 1; k <= 100; ++k)
    bar[k] = kernel_product(bar[k - 1], d3pm::transition_matrix(schedule.alpha[k]));

  Rng rng(0xACCE97);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = rng.uniform_int(1, 100);
    const int x0 = rng.uniform_int(0, d3pm::kCategories - 1);
    const int xk = rng.uniform_int(0, d3pm::kCategories - 1);
    const auto analytic = d3pm::posterior(xk, x0, k, schedule);
    const auto q_k = d3pm::transition_matrix(schedule.alpha[k]);
    for (int c = 0; c < d3pm::kCategories; ++c) {
      const double joint = bar[k - 1][x0][c] * q_k[c][xk];
      const double marginal = bar[k][x0][xk];
      worst = std::max(worst, std::abs(analytic[c] - joint / marginal));
    }
  }
  const double elapsed = now_seconds() - start;
  *detail = "max abs error " + fmt(worst) + ", " + fmt(elapsed) + " s";
  return worst <= 1e-10 && elapsed < 5.0;
}

// --------------------------------------------------------------------------
// 2. Closed-form marginals vs explicit kernel products.
// --------------------------------------------------------------------------
bool criterion_marginal_composition(std::string* detail) {
  const auto schedule = d3pm::cosine_schedule(100);
  d3pm::Kernel product = d3pm::transition_matrix(1.0);
  double worst = 0.0;
  for (int k = 1; k <= 100; ++k) {
    product = kernel_product(product, d3pm::transition_matrix(schedule.alpha[k]));
    const auto closed = d3pm::marginal_matrix(k, schedule);
    for (int r = 0; r < d3pm::kCategories; ++r)
      for (int c = 0; c < d3pm::kCategories; ++c)
        worst = std::max(worst, std::abs(product[r][c] - closed[r][c]));
  }
  double uniform_gap = 0.0;
  for (int r = 0; r < d3pm::kCategories; ++r)
    for (int c = 0; c < d3pm::kCategories; ++c)
      uniform_gap = std::max(
          uniform_gap, std::abs(d3pm::marginal_matrix(100, schedule)[r][c] - 0.2));
  *detail = "composition error " + fmt(worst) + ", terminal gap " + fmt(uniform_gap);
  return worst <= 1e-12 && uniform_gap <= 1e-2;
}

JointActionTensor random_probability_tensor(int agents, int steps, Rng& rng) {
  JointActionTensor x(agents, steps);
  for (int i = 0; i < agents; ++i)
    for (int t = 0; t < steps; ++t) {
      double sum = 0.0;
      for (int a = 0; a < kNumActions; ++a) {
        x.at(i, t, a) = 0.05 + rng.next_double();
        sum += x.at(i, t, a);
      }
      for (int a = 0; a < kNumActions; ++a) x.at(i, t, a) /= sum;
    }
  return x;
}

Instance random_instance(int agents, std::uint64_t seed, int size = 8,
                         double density = 0.15) {
  SceneSpec spec;
  spec.family = SceneFamily::kRandom;
  spec.height = size;
  spec.width = size;
  spec.obstacle_density = density;
  spec.seed = seed;
  return sample_instance(generate_map(spec), agents, 0, mix_seed(seed, 1));
}

// --------------------------------------------------------------------------
// 3. Permutation equivariance of the denoiser forward pass.
// --------------------------------------------------------------------------
bool criterion_equivariance(std::string* detail) {
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(mix_seed(0xE9, trial));
    const int agents = rng.uniform_int(2, 8);
    const int steps = 8;
    const auto params = init_params(mix_seed(31, trial));
    const auto instance = random_instance(agents, mix_seed(17, trial));
    const auto x = random_probability_tensor(agents, steps, rng);
    const int k = rng.uniform_int(1, 100);
    std::vector<int> perm(agents);
    for (int i = 0; i < agents; ++i) perm[i] = i;
    rng.shuffle(perm);

    const auto base = denoiser_forward(x, instance, k, params);
    Instance permuted = instance;
    JointActionTensor px(agents, steps);
    for (int i = 0; i < agents; ++i) {
      permuted.starts[perm[i]] = instance.starts[i];
      permuted.goals[perm[i]] = instance.goals[i];
      for (int t = 0; t < steps; ++t)
        for (int a = 0; a < kNumActions; ++a)
          px.at(perm[i], t, a) = x.at(i, t, a);
    }
    const auto out = denoiser_forward(px, permuted, k, params);
    for (int i = 0; i < agents; ++i)
      for (int t = 0; t < steps; ++t)
        for (int a = 0; a < kNumActions; ++a)
          worst = std::max(
              worst, std::abs(out.at(perm[i], t, a) - base.at(i, t, a)));
  }
  *detail = "max discrepancy " + fmt(worst) + " over 50 trials";
  return worst <= 1e-5;
}

// --------------------------------------------------------------------------
// 4. Sparse social attention equals a dense reference on full neighborhoods.
// --------------------------------------------------------------------------
bool criterion_sparse_equals_dense(std::string* detail) {
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(mix_seed(0x5d, trial));
    const int agents = rng.uniform_int(2, 8);
    const int steps = rng.uniform_int(1, 16);
    const auto params = init_params(mix_seed(97, trial));
    const DenoiserDims& dims = params.dims;
    Eigen::MatrixXd tokens(Eigen::Index(agents) * steps, dims.hidden);
    for (Eigen::Index r = 0; r < tokens.rows(); ++r)
      for (int c = 0; c < dims.hidden; ++c) tokens(r, c) = rng.normal();
    std::vector<std::vector<Eigen::Vector2d>> positions(agents);
    for (int i = 0; i < agents; ++i)
      for (int t = 0; t < steps; ++t)
        positions[i].push_back(
            Eigen::Vector2d(rng.uniform(-1, 1), rng.uniform(-1, 1)));
    std::vector<std::vector<int>> full(agents);
    for (int i = 0; i < agents; ++i) {
      full[i].push_back(i);
      for (int j = 0; j < agents; ++j)
        if (j != i) full[i].push_back(j);
    }
    const auto& block = params.blocks[0];
    const auto sparse = sparse_social_attention(
        tokens, agents, steps, positions, full, block.social, block.bias, dims);
    const auto dense = denoiser_refs::dense_social_reference(
        tokens, agents, steps, positions, block.social, block.bias, dims);
    worst = std::max(worst, (sparse - dense).cwiseAbs().maxCoeff());
  }
  *detail = "max discrepancy " + fmt(worst) + " over 20 configs";
  return worst <= 1e-6;
}

// --------------------------------------------------------------------------
// 5. Finite differences vs dual-number directional derivatives.
// --------------------------------------------------------------------------
enum class Loss { kGoal, kVertex, kEdge, kValid };

double eval_loss(Loss which, const JointActionTensor& probs,
                 const Instance& instance,
                 const std::vector<DistanceField>& fields) {
  switch (which) {
    case Loss::kGoal: return goal_progress_loss(probs, instance, fields);
    case Loss::kVertex: return vertex_conflict_loss(probs, instance);
    case Loss::kEdge: return edge_conflict_loss(probs, instance);
    case Loss::kValid: return validity_loss(probs, instance);
  }
  return 0.0;
}

double eval_loss_derivative(Loss which, const JointActionTensor& probs,
                            const Instance& instance,
                            const std::vector<DistanceField>& fields,
                            int agent, int step, int entry) {
  BasicActionTensor<dual::Dual> dx(probs.agents, probs.steps);
  for (int i = 0; i < probs.agents; ++i)
    for (int t = 0; t < probs.steps; ++t)
      for (int a = 0; a < kNumActions; ++a) {
        double dot = 0.0;
        if (i == agent && t == step)
          dot = (a == entry ? 1.0 : 0.0) - probs.at(i, t, a);
        dx.at(i, t, a) = dual::Dual(probs.at(i, t, a), dot);
      }
  switch (which) {
    case Loss::kGoal:
      return task_detail::goal_progress_impl(dx, instance, fields).d;
    case Loss::kVertex:
      return task_detail::vertex_conflict_impl(dx, instance, 1.0).d;
    case Loss::kEdge:
      return task_detail::edge_conflict_impl(dx, instance, 1.0).d;
    case Loss::kValid:
      return task_detail::validity_impl(dx, instance).d;
  }
  return 0.0;
}

bool away_from_boundaries(Loss which, const JointActionTensor& probs,
                          const Instance& instance) {
  constexpr double kMargin = 1e-4;
  const auto positions = expected_grid_positions(probs, instance.starts);
  const int agents = probs.agents, steps = probs.steps;
  if (which == Loss::kGoal) {
    for (int i = 0; i < agents; ++i)
      for (int t = 0; t < steps; ++t)
        for (const double coord : positions[i][t])
          if (std::abs(coord - std::floor(coord) - 0.5) < kMargin) return false;
    return true;
  }
  if (which == Loss::kVertex || which == Loss::kEdge) {
    const auto clear = [&](const std::array<double, 2>& a,
                           const std::array<double, 2>& b) {
      if (std::abs(a[0] - b[0]) < kMargin) return false;
      if (std::abs(a[1] - b[1]) < kMargin) return false;
      const double d = std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]);
      return std::abs(d - 1.0) >= kMargin;
    };
    for (int i = 0; i < agents; ++i)
      for (int j = i + 1; j < agents; ++j)
        for (int t = 0; t < steps; ++t) {
          if (which == Loss::kVertex) {
            if (!clear(positions[i][t], positions[j][t])) return false;
          } else if (t + 1 < steps) {
            if (!clear(positions[i][t], positions[j][t + 1])) return false;
            if (!clear(positions[i][t + 1], positions[j][t])) return false;
          }
        }
    return true;
  }
  for (int i = 0; i < agents; ++i)
    for (int t = 0; t < steps; ++t) {
      const int best = probs.argmax_action(i, t);
      for (int a = 0; a < kNumActions; ++a)
        if (a != best && probs.at(i, t, best) - probs.at(i, t, a) < 10 * kMargin)
          return false;
    }
  return true;
}

bool criterion_gradient_checks(std::string* detail) {
  constexpr double kStep = 1e-5;
  SceneSpec spec;
  spec.family = SceneFamily::kRandom;
  spec.height = 6;
  spec.width = 6;
  spec.obstacle_density = 0.2;
  spec.seed = 40;
  const auto map = generate_map(spec);
  double worst_rel = 0.0;
  for (const Loss which : {Loss::kGoal, Loss::kVertex, Loss::kEdge, Loss::kValid}) {
    int accepted = 0, trial = 0;
    while (accepted < 20) {
      if (++trial > 5000) {
        *detail = "could not find 20 interior points";
        return false;
      }
      Rng rng(mix_seed(0x9d, static_cast<int>(which), trial));
      const auto instance = sample_instance(map, 3, 0, rng.next_u64());
      const auto fields = goal_distance_fields(instance);
      const auto probs = random_probability_tensor(3, 5, rng);
      if (!away_from_boundaries(which, probs, instance)) continue;
      const int agent = rng.uniform_int(0, 2);
      const int step = rng.uniform_int(0, 4);
      const int entry = rng.uniform_int(0, kNumActions - 1);

      const double analytic =
          eval_loss_derivative(which, probs, instance, fields, agent, step, entry);
      const auto bump = [&](double h) {
        JointActionTensor out = probs;
        out.at(agent, step, entry) += h;
        double sum = 0.0;
        for (int a = 0; a < kNumActions; ++a) sum += out.at(agent, step, a);
        for (int a = 0; a < kNumActions; ++a) out.at(agent, step, a) /= sum;
        return eval_loss(which, out, instance, fields);
      };
      const double fd = (bump(kStep) - bump(-kStep)) / (2.0 * kStep);
      const double magnitude = std::max(std::abs(analytic), std::abs(fd));
      if (magnitude > 1e-9) {
        const double rel = std::abs(analytic - fd) / magnitude;
        worst_rel = std::max(worst_rel, rel);
        if (rel > 1e-3) {
          *detail = "relative error " + fmt(rel);
          return false;
        }
      }
      ++accepted;
    }
  }
  *detail = "worst relative error " + fmt(worst_rel) + " over 4 x 20 perturbations";
  return true;
}

// --------------------------------------------------------------------------
// 6. SIPPS soft-collision optimality at desk scale.
// --------------------------------------------------------------------------
bool criterion_sipps_optimality(std::string* detail) {
  Rng rng(0x51DD5);
  int checked = 0, agreed = 0;
  while (checked < 200) {
    const int height = rng.uniform_int(2, 5);
    const int width = rng.uniform_int(2, 5);
    GridMap map(height, width);
    for (int idx = 0; idx < map.cell_count(); ++idx)
      if (rng.next_double() < 0.2) map.set_obstacle(map.cell_at(idx), true);
    const auto free = map.free_cells();
    if (free.size() < 2) continue;
    const Cell start = free[rng.next_below(free.size())];
    const Cell goal = free[rng.next_below(free.size())];
    std::vector<Path> fixed;
    SafeIntervalTable table(map);
    const int others = rng.uniform_int(0, 2);
    for (int o = 0; o < others; ++o) {
      Path path{free[rng.next_below(free.size())]};
      const int length = rng.uniform_int(0, 8);
      for (int t = 0; t < length; ++t) {
        const auto a = static_cast<Action>(rng.uniform_int(0, kNumActions - 1));
        const auto next = apply_action(path.back(), a, map);
        path.push_back(next ? *next : path.back());
      }
      fixed.push_back(path);
      table.add_path(path);
    }
    const int oracle =
        oracles::spacetime_min_soft_collisions(map, start, goal, fixed, 10);
    SippsOptions options;
    options.max_time = 10;
    const auto result = sipps(map, start, goal, table, options);
    ++checked;
    if (oracle < 0) {
      agreed += result.found ? 0 : 1;
    } else {
      agreed += (result.found && result.soft_collisions == oracle) ? 1 : 0;
    }
  }
  *detail = std::to_string(agreed) + "/200 instances optimal";
  return agreed == 200;
}

// --------------------------------------------------------------------------
// 7. Accept-rule invariant and success re-validation across solver runs.
// --------------------------------------------------------------------------
bool criterion_accept_rule(std::string* detail) {
  int violations = 0;
  int runs = 0, successes = 0;
  const auto inspect = [&](const Instance& instance, const SolveResult& result) {
    ++runs;
    for (const auto& record : result.candidates) {
      const auto& trajectory = record.repair_stats.colliding_pairs_trajectory;
      for (std::size_t i = 1; i < trajectory.size(); ++i)
        if (trajectory[i] > trajectory[i - 1]) ++violations;
    }
    if (result.success) {
      ++successes;
      std::string reason;
      if (!plan_paths_valid(result.plan, instance, &reason)) ++violations;
      // Independent exhaustive pairwise check.
      if (oracles::pairwise_conflicts(result.plan).colliding_pairs != 0)
        ++violations;
    }
  };

  PipelineConfig config;
  config.repair_budget_seconds = 30.0;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const auto instance =
        random_instance(16, mix_seed(0xACC, seed), 10, 0.175);
    inspect(instance,
            difflns_solve(instance, make_heuristic_predictor(instance), config,
                          seed));
    inspect(instance, pp_multistart_solve(instance, config, seed));
    inspect(instance, lns2_solve(instance, config, seed));
  }
  *detail = std::to_string(violations) + " violations over " +
            std::to_string(runs) + " runs (" + std::to_string(successes) +
            " successes)";
  return violations == 0 && successes > 0;
}

// --------------------------------------------------------------------------
// 8. End-to-end success rate on Small Random at desk scale.
// --------------------------------------------------------------------------
bool criterion_small_random_sr(std::string* detail) {
  int successes = 0;
  double total_runtime = 0.0;
  const int instances = 50;
  for (int i = 0; i < instances; ++i) {
    SceneSpec spec;
    spec.family = SceneFamily::kRandom;
    spec.height = 10;
    spec.width = 10;
    spec.obstacle_density = 0.175;
    spec.seed = mix_seed(0xE2E, i);
    const auto map = generate_map(spec);
    const auto instance = sample_instance(map, 20, 0, mix_seed(0xE2E, i, 1));
    PipelineConfig config;  // defaults: M = 4, R = 5, 120 s repair budget
    const auto result = difflns_solve(
        instance, make_heuristic_predictor(instance), config, mix_seed(7, i));
    total_runtime += result.wall_seconds;
    if (result.success && plan_feasible(result.plan, instance)) ++successes;
  }
  const double sr = successes / static_cast<double>(instances);
  const double mean_runtime = total_runtime / instances;
  *detail = "SR " + fmt(sr) + ", mean runtime " + fmt(mean_runtime) + " s";
  return sr >= 0.95 && mean_runtime < 30.0;
}

// --------------------------------------------------------------------------
// 9. DiffLNS vs PP-Multistart comparability harness.
// --------------------------------------------------------------------------
bool criterion_comparability(std::string* detail) {
  nlohmann::json base = {
      {"seed", 99},
      {"jobs", 1},
      {"pipeline",
       {{"drafts_per_round", 4},
        {"max_rounds", 5},
        {"max_candidates", 20},
        {"repair_budget_s", 30.0},
        {"predictor", "heuristic"}}},
      {"settings",
       {{{"id", "congested_small"},
         {"family", "random"},
         {"height", 10},
         {"width", 10},
         {"density", 0.175},
         {"agents", {34}},
         {"instances", 8},
         {"time_limit_s", 120.0}}}}};
  base["solver"] = "difflns";
  const auto diff_report = run_benchmark(parse_run_config(base));
  base["solver"] = "pp-multistart";
  const auto pp_report = run_benchmark(parse_run_config(base));

  // Identical instance sets: the derived per-instance seeds must match.
  for (std::size_t i = 0; i < diff_report.outcomes.size(); ++i)
    if (diff_report.outcomes[i].seed != pp_report.outcomes[i].seed) {
      *detail = "instance seeds diverge between solvers";
      return false;
    }
  // Candidate caps respected.
  for (const auto& report : {diff_report, pp_report})
    for (const auto& outcome : report.outcomes)
      if (outcome.candidates > 20) {
        *detail = "candidate cap exceeded";
        return false;
      }
  // Emitted metrics match an exact recomputation from the serialized log.
  for (const auto& report : {diff_report, pp_report}) {
    std::vector<InstanceOutcome> parsed;
    for (const auto& outcome : report.outcomes)
      parsed.push_back(outcome_from_json(outcome_to_json(outcome)));
    const auto rows = recompute_metrics(parsed);
    if (rows.size() != report.rows.size()) {
      *detail = "row count mismatch";
      return false;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].success_rate != report.rows[i].success_rate ||
          rows[i].mean_candidates != report.rows[i].mean_candidates ||
          (!std::isnan(rows[i].mean_soc) &&
           rows[i].mean_soc != report.rows[i].mean_soc)) {
        *detail = "recomputed metrics differ from emitted metrics";
        return false;
      }
    }
    const std::string csv = format_metrics_csv(report.rows);
    if (csv.find("SR") == std::string::npos ||
        csv.find("mean_candidates") == std::string::npos) {
      *detail = "CSV lacks SR or mean_candidates columns";
      return false;
    }
  }
  *detail = "difflns SR " + fmt(diff_report.rows[0].success_rate) +
            " (mean candidates " + fmt(diff_report.rows[0].mean_candidates) +
            "), pp-multistart SR " + fmt(pp_report.rows[0].success_rate) +
            " (mean candidates " + fmt(pp_report.rows[0].mean_candidates) + ")";
  return true;
}

// --------------------------------------------------------------------------
// 10. Single-worker determinism of full benchmark runs.
// --------------------------------------------------------------------------
bool criterion_determinism(std::string* detail) {
  const nlohmann::json config_json = {
      {"seed", 12345},
      {"solver", "difflns"},
      {"jobs", 1},
      {"pipeline",
       {{"drafts_per_round", 4},
        {"max_rounds", 5},
        {"repair_budget_s", 30.0},
        {"predictor", "heuristic"}}},
      {"settings",
       {{{"id", "a"},
         {"family", "random"},
         {"height", 10},
         {"width", 10},
         {"density", 0.175},
         {"agents", {12, 20}},
         {"instances", 4},
         {"time_limit_s", 60.0}},
        {{"id", "b"},
         {"family", "warehouse"},
         {"height", 13},
         {"width", 13},
         {"density", 0.3},
         {"agents", {10}},
         {"instances", 3},
         {"time_limit_s", 60.0}}}}};
  const auto config = parse_run_config(config_json);
  const auto first = run_benchmark(config);
  const auto second = run_benchmark(config);
  if (first.outcomes.size() != second.outcomes.size()) {
    *detail = "outcome counts differ";
    return false;
  }
  for (std::size_t i = 0; i < first.outcomes.size(); ++i) {
    const auto& a = first.outcomes[i];
    const auto& b = second.outcomes[i];
    if (a.success != b.success || a.soc != b.soc ||
        a.candidates != b.candidates || a.seed != b.seed) {
      *detail = "instance " + std::to_string(i) + " diverged";
      return false;
    }
  }
  *detail = std::to_string(first.outcomes.size()) +
            " instances bit-identical across two runs";
  return true;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<bool(std::string*)> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "D3PM posterior matches brute-force enumeration", criterion_posterior_oracle},
      {2, "forward marginals compose exactly", criterion_marginal_composition},
      {3, "denoiser is permutation equivariant", criterion_equivariance},
      {4, "sparse social attention equals the dense reference", criterion_sparse_equals_dense},
      {5, "task-loss gradients match finite differences", criterion_gradient_checks},
      {6, "SIPPS is collision-optimal at desk scale", criterion_sipps_optimality},
      {7, "LNS2 accept rule holds and successes re-validate", criterion_accept_rule},
      {8, "small-random end-to-end success rate", criterion_small_random_sr},
      {9, "difflns vs pp-multistart harness is comparable", criterion_comparability},
      {10, "benchmarks are deterministic per master seed", criterion_determinism},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    std::string detail;
    bool passed = false;
    try {
      passed = criterion.run(&detail);
    } catch (const std::exception& error) {
      detail = std::string("exception: ") + error.what();
    }
    if (!passed) ++failures;
    std::printf("[%s] %2d. %s%s%s\n", passed ? "PASS" : "FAIL", criterion.id,
                criterion.name, detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
