#pragma once

// Prioritized-planning initialization and the LNS2 repair loop: replan agent
// subsets with SIPPS against the fixed remainder, accept whenever the number
// of colliding pairs does not increase, stop at zero pairs or on budget.

#include <algorithm>
#include <chrono>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "difflns/grid.hpp"
#include "difflns/rng.hpp"
#include "difflns/single_agent.hpp"

namespace difflns {

struct RepairConfig {
  int neighborhood_size = 8;
  double time_budget_seconds = 120.0;
  long long max_iterations = std::numeric_limits<long long>::max();
  double weight_decay = 0.99;  // adaptive destroy-strategy update
  std::uint64_t seed = 0;
};

struct RepairStats {
  long long iterations = 0;
  // Colliding-pair counts: the initial value, then one entry per accepted
  // iteration. Non-increasing by the accept rule.
  std::vector<int> colliding_pairs_trajectory;
  double wall_seconds = 0.0;
  bool success = false;
};

namespace detail {

inline int sipps_horizon(const GridMap& map, const SafeIntervalTable& table) {
  return table.latest_event() + map.cell_count() + 4;
}

}  // namespace detail

// Plans agents one at a time in the given priority order, each against all
// previously planned paths as soft obstacles. The result may contain
// collisions.
inline Plan pp_init(const Instance& instance, const std::vector<int>& order) {
  if (static_cast<int>(order.size()) != instance.agent_count())
    throw std::invalid_argument("pp_init: order size mismatch");
  SafeIntervalTable table(instance.map);
  Plan plan;
  plan.paths.resize(instance.agent_count());
  for (const int agent : order) {
    SippsOptions options;
    options.max_time = detail::sipps_horizon(instance.map, table);
    const auto result = sipps(instance.map, instance.starts[agent],
                              instance.goals[agent], table, options);
    if (!result.found)
      throw std::runtime_error("pp_init: agent " + std::to_string(agent) +
                               " cannot reach its goal");
    plan.paths[agent] = result.path;
    table.add_path(result.path);
  }
  return plan;
}

enum class DestroyStrategy : int { kCollisionWalk = 0, kRandom = 1 };

struct DestroyWeights {
  double collision_walk = 1.0;
  double random = 1.0;

  double total() const { return collision_walk + random; }
  double& of(DestroyStrategy s) {
    return s == DestroyStrategy::kCollisionWalk ? collision_walk : random;
  }
};

// Adaptive update applied to the weight of the strategy used in an iteration.
inline double updated_weight(double current, bool improvement,
                             double decay = 0.99) {
  return decay * current + (improvement ? 1.0 : 0.0);
}

// Picks min(neighborhood_size, N) distinct agents for replanning. The
// collision strategy seeds from a random conflicting pair and grows along a
// random walk on the collision graph; the random strategy samples uniformly.
// The strategy is drawn proportionally to the adaptive weights.
inline std::vector<int> select_neighborhood(const Plan& plan,
                                            const ConflictReport& report,
                                            const RepairConfig& config,
                                            const DestroyWeights& weights,
                                            Rng& rng,
                                            DestroyStrategy* chosen = nullptr) {
  const int n = plan.agent_count();
  const int size = std::min(config.neighborhood_size, n);
  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;
  if (size == n) {
    if (chosen) *chosen = DestroyStrategy::kRandom;
    return all;
  }

  // Collision graph adjacency and the list of conflicting pairs, in a
  // deterministic order.
  std::vector<std::pair<int, int>> pairs;
  std::vector<std::vector<int>> adjacency(n);
  {
    std::unordered_set<std::uint64_t> seen;
    const auto add_pair = [&](int i, int j) {
      if (!seen.insert(detail::pair_key(i, j)).second) return;
      pairs.push_back({i, j});
      adjacency[i].push_back(j);
      adjacency[j].push_back(i);
    };
    for (const auto& vc : report.vertex_conflicts) add_pair(vc.agent_a, vc.agent_b);
    for (const auto& ec : report.edge_conflicts) add_pair(ec.agent_a, ec.agent_b);
  }

  const DestroyStrategy strategy =
      (!pairs.empty() &&
       rng.next_double() * weights.total() < weights.collision_walk)
          ? DestroyStrategy::kCollisionWalk
          : DestroyStrategy::kRandom;
  if (chosen) *chosen = strategy;

  std::vector<int> subset;
  std::vector<bool> member(n, false);
  const auto add = [&](int agent) {
    if (!member[agent]) {
      member[agent] = true;
      subset.push_back(agent);
    }
  };

  if (strategy == DestroyStrategy::kCollisionWalk) {
    const auto& seed_pair = pairs[rng.next_below(pairs.size())];
    add(seed_pair.first);
    add(seed_pair.second);
    int current = seed_pair.second;
    while (static_cast<int>(subset.size()) < size) {
      std::vector<int> fresh;
      for (const int nb : adjacency[current])
        if (!member[nb]) fresh.push_back(nb);
      if (fresh.empty()) {
        // Jump to a random already-selected agent that still has unvisited
        // collision neighbors; fall back to uniform fill when the component
        // is exhausted.
        std::vector<int> frontier;
        for (const int agent : subset)
          for (const int nb : adjacency[agent])
            if (!member[nb]) {
              frontier.push_back(agent);
              break;
            }
        if (frontier.empty()) break;
        current = frontier[rng.next_below(frontier.size())];
        continue;
      }
      current = fresh[rng.next_below(fresh.size())];
      add(current);
    }
  }
  while (static_cast<int>(subset.size()) < size) {
    const int agent = static_cast<int>(rng.next_below(n));
    add(agent);
  }
  return subset;
}

// LNS2 repair. Keeps paths outside the selected neighborhood fixed, replans
// the neighborhood with SIPPS under a fresh random internal priority order,
// and accepts the update iff the colliding-pair count does not increase.
inline std::pair<Plan, RepairStats> lns2_repair(Plan plan,
                                                const Instance& instance,
                                                const RepairConfig& config) {
  if (config.time_budget_seconds <= 0.0)
    throw std::invalid_argument("lns2_repair: budget must be positive");
  if (config.neighborhood_size < 1)
    throw std::invalid_argument("lns2_repair: neighborhood size must be >= 1");
  const auto start_clock = std::chrono::steady_clock::now();
  const auto elapsed = [&]() {
    const std::chrono::duration<double> used =
        std::chrono::steady_clock::now() - start_clock;
    return used.count();
  };

  RepairStats stats;
  Rng rng(mix_seed(config.seed, 0x6c6e73u));
  DestroyWeights weights;

  ConflictReport report = detect_conflicts(plan, instance.agent_count());
  int pairs = report.colliding_pairs;
  stats.colliding_pairs_trajectory.push_back(pairs);

  while (pairs > 0 && stats.iterations < config.max_iterations &&
         elapsed() < config.time_budget_seconds) {
    DestroyStrategy strategy = DestroyStrategy::kRandom;
    std::vector<int> subset =
        select_neighborhood(plan, report, config, weights, rng, &strategy);
    rng.shuffle(subset);  // fresh internal priority order

    std::vector<bool> erased(instance.agent_count(), false);
    for (const int agent : subset) erased[agent] = true;
    SafeIntervalTable table(instance.map);
    for (int i = 0; i < instance.agent_count(); ++i)
      if (!erased[i]) table.add_path(plan.paths[i]);

    bool replanned_all = true;
    std::vector<Path> new_paths(subset.size());
    for (std::size_t idx = 0; idx < subset.size(); ++idx) {
      const int agent = subset[idx];
      SippsOptions options;
      options.max_time = detail::sipps_horizon(instance.map, table);
      options.deadline_seconds = config.time_budget_seconds - elapsed();
      const auto result = sipps(instance.map, instance.starts[agent],
                                instance.goals[agent], table, options);
      if (!result.found) {
        replanned_all = false;
        break;
      }
      new_paths[idx] = result.path;
      table.add_path(result.path);
    }

    ++stats.iterations;
    bool improvement = false;
    if (replanned_all) {
      Plan candidate = plan;
      for (std::size_t idx = 0; idx < subset.size(); ++idx)
        candidate.paths[subset[idx]] = std::move(new_paths[idx]);
      const ConflictReport candidate_report = detect_conflicts(candidate);
      if (candidate_report.colliding_pairs <= pairs) {  // ties accepted
        improvement = candidate_report.colliding_pairs < pairs;
        plan = std::move(candidate);
        report = std::move(candidate_report);
        pairs = report.colliding_pairs;
        stats.colliding_pairs_trajectory.push_back(pairs);
      }
    }
    double& weight = weights.of(strategy);
    weight = updated_weight(weight, improvement, config.weight_decay);
  }

  stats.success = pairs == 0;
  stats.wall_seconds = elapsed();
  return {std::move(plan), std::move(stats)};
}

}  // namespace difflns
