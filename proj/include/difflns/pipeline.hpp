#pragma once

// The iterative multi-sample repair loop: sample a batch of drafts, complete
// them into goal-terminated seed plans, repair each with LNS2, return the
// smallest-SOC feasible candidate; otherwise retry with a fresh batch until
// the round, candidate or time budget runs out. A PP-Multistart variant swaps
// the diffusion initializer for prioritized planning under random priority
// orders, and a plain single-candidate LNS2 mode covers the classical solver.

#include <chrono>
#include <stdexcept>
#include <string>
#include <vector>

#include "difflns/action_tensor.hpp"
#include "difflns/d3pm.hpp"
#include "difflns/grid.hpp"
#include "difflns/lns2.hpp"
#include "difflns/rng.hpp"
#include "difflns/single_agent.hpp"

namespace difflns {

enum class PredictorKind { kHeuristic, kNeural };

struct PipelineConfig {
  int drafts_per_round = 4;    // M
  int max_rounds = 5;          // R
  double total_budget_seconds = 600.0;  // B, generation + repair wall clock
  double repair_budget_seconds = 120.0;  // per candidate
  int max_candidates = 20;
  int diffusion_steps = 100;
  PredictorKind predictor = PredictorKind::kHeuristic;
  RepairConfig repair;  // neighborhood size, iteration caps
};

struct CandidateRecord {
  int round = 0;           // 1-based
  int index_in_round = 0;  // 0-based
  bool feasible = false;
  long long soc = 0;  // valid when feasible
  double generation_seconds = 0.0;
  double repair_seconds = 0.0;
  RepairStats repair_stats;
};

struct SolveResult {
  bool success = false;
  Plan plan;
  long long soc = 0;
  int rounds_used = 0;
  int candidates_generated = 0;
  double wall_seconds = 0.0;
  std::vector<CandidateRecord> candidates;
};

// Converts a one-hot draft into a valid, goal-terminated seed plan: roll the
// actions out with invalid moves treated as stay, cut the redundant suffix
// once the agent rests at its goal, and complete unfinished trajectories with
// a static shortest-path suffix from the last position.
inline Plan preprocess_draft(const JointActionTensor& draft,
                             const Instance& instance) {
  if (draft.agents != instance.agent_count())
    throw std::invalid_argument("preprocess_draft: agent count mismatch");
  Plan plan;
  plan.paths.resize(draft.agents);
  for (int i = 0; i < draft.agents; ++i) {
    Path rollout{instance.starts[i]};
    for (int t = 0; t < draft.steps; ++t) {
      const auto action = static_cast<Action>(draft.argmax_action(i, t));
      const auto next = apply_action(rollout.back(), action, instance.map);
      rollout.push_back(next ? *next : rollout.back());
    }
    const Cell goal = instance.goals[i];
    // Earliest arrival after which the agent never leaves the goal.
    int settle = -1;
    for (int t = static_cast<int>(rollout.size()) - 1; t >= 0; --t) {
      if (rollout[t] != goal) break;
      settle = t;
    }
    if (settle >= 0) {
      rollout.resize(settle + 1);
    } else {
      const Path suffix = shortest_suffix(instance.map, rollout.back(), goal);
      rollout.insert(rollout.end(), suffix.begin(), suffix.end());
    }
    plan.paths[i] = std::move(rollout);
  }
  return plan;
}

namespace detail {

struct RoundClock {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();

  double elapsed() const {
    const std::chrono::duration<double> used =
        std::chrono::steady_clock::now() - start;
    return used.count();
  }
};

// Candidate initializer: returns a goal-terminated (possibly conflicted)
// seed plan for candidate m of round r, plus the generation wall time.
template <typename MakeSeed>
SolveResult multi_sample_solve(const Instance& instance,
                               const PipelineConfig& config,
                               std::uint64_t seed, MakeSeed&& make_seed) {
  if (config.drafts_per_round < 1 || config.max_rounds < 1)
    throw std::invalid_argument("pipeline: M and R must be >= 1");
  if (config.total_budget_seconds <= 0.0 ||
      config.repair_budget_seconds <= 0.0)
    throw std::invalid_argument("pipeline: budgets must be positive");

  const RoundClock clock;
  SolveResult result;
  for (int round = 1; round <= config.max_rounds; ++round) {
    if (clock.elapsed() >= config.total_budget_seconds) break;
    result.rounds_used = round;
    std::vector<CandidateRecord> round_records;
    std::vector<Plan> round_plans;
    for (int m = 0; m < config.drafts_per_round; ++m) {
      if (result.candidates_generated >= config.max_candidates) break;
      if (clock.elapsed() >= config.total_budget_seconds) break;
      CandidateRecord record;
      record.round = round;
      record.index_in_round = m;
      const std::uint64_t candidate_seed = mix_seed(seed, round, m);
      Plan repaired;  // kept alongside the record when feasible

      const double generation_start = clock.elapsed();
      Plan seed_plan;
      bool generated = true;
      try {
        seed_plan = make_seed(candidate_seed);
      } catch (const std::exception&) {
        generated = false;  // candidate marked failed, loop continues
      }
      record.generation_seconds = clock.elapsed() - generation_start;
      ++result.candidates_generated;

      if (generated) {
        RepairConfig repair = config.repair;
        repair.seed = mix_seed(candidate_seed, 0x726570u);
        repair.time_budget_seconds =
            std::min(config.repair_budget_seconds,
                     config.total_budget_seconds - clock.elapsed());
        if (repair.time_budget_seconds > 0.0) {
          const double repair_start = clock.elapsed();
          try {
            auto [plan, stats] = lns2_repair(std::move(seed_plan), instance, repair);
            record.repair_seconds = clock.elapsed() - repair_start;
            record.repair_stats = std::move(stats);
            if (record.repair_stats.success &&
                plan_feasible(plan, instance)) {
              record.feasible = true;
              record.soc = sum_of_costs(plan, instance.goals);
              repaired = std::move(plan);
            }
          } catch (const std::exception&) {
            record.repair_seconds = clock.elapsed() - repair_start;
          }
        }
      }
      round_records.push_back(std::move(record));
      round_plans.push_back(std::move(repaired));
    }

    // Per-round selection: smallest SOC wins, ties to the lowest index.
    int best = -1;
    for (std::size_t idx = 0; idx < round_records.size(); ++idx) {
      if (!round_records[idx].feasible) continue;
      if (best < 0 || round_records[idx].soc < round_records[best].soc)
        best = static_cast<int>(idx);
    }
    for (auto& record : round_records)
      result.candidates.push_back(std::move(record));
    if (best >= 0) {
      result.success = true;
      result.plan = std::move(round_plans[best]);
      result.soc = sum_of_costs(result.plan, instance.goals);
      break;
    }
    if (result.candidates_generated >= config.max_candidates) break;
  }
  result.wall_seconds = clock.elapsed();
  return result;
}

}  // namespace detail

// Algorithm: per round, sample M diffusion drafts, preprocess, repair each
// with LNS2; return the smallest-SOC feasible plan of the first nonempty
// round.
inline SolveResult difflns_solve(const Instance& instance,
                                 const d3pm::Predictor& predictor,
                                 const PipelineConfig& config,
                                 std::uint64_t seed) {
  const auto schedule = d3pm::cosine_schedule(config.diffusion_steps);
  return detail::multi_sample_solve(
      instance, config, seed, [&](std::uint64_t candidate_seed) {
        const auto draft =
            d3pm::sample_draft(predictor, instance.agent_count(),
                               instance.horizon, schedule, candidate_seed);
        return preprocess_draft(draft, instance);
      });
}

// Same loop with the diffusion initializer replaced by prioritized planning
// under a fresh random priority order per candidate.
inline SolveResult pp_multistart_solve(const Instance& instance,
                                       const PipelineConfig& config,
                                       std::uint64_t seed) {
  return detail::multi_sample_solve(
      instance, config, seed, [&](std::uint64_t candidate_seed) {
        std::vector<int> order(instance.agent_count());
        for (int i = 0; i < instance.agent_count(); ++i) order[i] = i;
        Rng rng(mix_seed(candidate_seed, 0x6f7264u));
        rng.shuffle(order);
        return pp_init(instance, order);
      });
}

// Classical single-candidate LNS2: one PP initialization repaired under the
// full time budget.
inline SolveResult lns2_solve(const Instance& instance,
                              const PipelineConfig& config,
                              std::uint64_t seed) {
  if (config.total_budget_seconds <= 0.0)
    throw std::invalid_argument("lns2_solve: budget must be positive");
  const detail::RoundClock clock;
  SolveResult result;
  result.rounds_used = 1;
  result.candidates_generated = 1;
  CandidateRecord record;
  record.round = 1;

  std::vector<int> order(instance.agent_count());
  for (int i = 0; i < instance.agent_count(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x6c6eu));
  rng.shuffle(order);
  try {
    Plan initial = pp_init(instance, order);
    record.generation_seconds = clock.elapsed();
    RepairConfig repair = config.repair;
    repair.seed = mix_seed(seed, 0x726570u);
    repair.time_budget_seconds =
        config.total_budget_seconds - clock.elapsed();
    if (repair.time_budget_seconds > 0.0) {
      auto [plan, stats] = lns2_repair(std::move(initial), instance, repair);
      record.repair_seconds = clock.elapsed() - record.generation_seconds;
      record.repair_stats = std::move(stats);
      if (record.repair_stats.success && plan_feasible(plan, instance)) {
        record.feasible = true;
        result.success = true;
        result.plan = std::move(plan);
        result.soc = sum_of_costs(result.plan, instance.goals);
        record.soc = result.soc;
      }
    }
  } catch (const std::exception&) {
    // fall through as a failed candidate
  }
  result.candidates.push_back(std::move(record));
  result.wall_seconds = clock.elapsed();
  return result;
}

}  // namespace difflns
