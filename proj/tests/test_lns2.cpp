#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "difflns/instance_gen.hpp"
#include "difflns/lns2.hpp"
#include "support/oracles.hpp"

using namespace difflns;

namespace {

Instance make_instance(const GridMap& map, std::vector<Cell> starts,
                       std::vector<Cell> goals) {
  Instance instance;
  instance.map = map;
  instance.starts = std::move(starts);
  instance.goals = std::move(goals);
  instance.horizon = default_horizon(map);
  validate_instance(instance);
  return instance;
}

std::vector<int> identity_order(int n) {
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  return order;
}

}  // namespace

TEST_CASE("pp_init single agent returns its shortest path") {
  const GridMap map(4, 4);
  const auto instance = make_instance(map, {{0, 0}}, {{3, 3}});
  const auto plan = pp_init(instance, identity_order(1));
  REQUIRE(plan.agent_count() == 1);
  CHECK(plan.paths[0].size() == 7);  // 6 moves
  CHECK(plan.paths[0].front() == Cell{0, 0});
  CHECK(plan.paths[0].back() == Cell{3, 3});
}

TEST_CASE("pp_init on disjoint corridors is collision free and shortest") {
  const auto map = oracles::map_from_art({
      "....",
      "@@@@",
      "....",
  });
  const auto instance =
      make_instance(map, {{0, 0}, {2, 3}}, {{0, 3}, {2, 0}});
  const auto plan = pp_init(instance, identity_order(2));
  CHECK(plan.paths[0].size() == 4);
  CHECK(plan.paths[1].size() == 4);
  CHECK(detect_conflicts(plan).colliding_pairs == 0);
}

TEST_CASE("pp_init through a shared bottleneck reports its conflicts") {
  // Both agents must cross the single middle gap at the same time under the
  // identity order; the second agent routes around it softly or collides.
  const auto map = oracles::map_from_art({
      ".@.@",
      "....",
      ".@.@",
  });
  const auto instance =
      make_instance(map, {{0, 0}, {2, 0}}, {{0, 2}, {2, 2}});
  const auto plan = pp_init(instance, identity_order(2));
  const auto report = detect_conflicts(plan);
  const auto oracle = oracles::pairwise_conflicts(plan);
  CHECK(report.colliding_pairs == oracle.colliding_pairs);
  CHECK(plan.paths[0].front() == instance.starts[0]);
  CHECK(plan.paths[1].back() == instance.goals[1]);
}

TEST_CASE("select_neighborhood takes everyone when N is small") {
  const GridMap map(3, 3);
  const auto instance = make_instance(map, {{0, 0}, {2, 2}}, {{2, 2}, {0, 0}});
  const auto plan = pp_init(instance, identity_order(2));
  const auto report = detect_conflicts(plan);
  RepairConfig config;
  config.neighborhood_size = 8;
  DestroyWeights weights;
  Rng rng(1);
  const auto subset = select_neighborhood(plan, report, config, weights, rng);
  CHECK(subset.size() == 2);
}

TEST_CASE("collision strategy with one conflicting pair picks that pair") {
  // Head-on swap in a corridor between agents 0 and 2; agent 1 is far away.
  const GridMap map(5, 5);
  Plan plan;
  plan.paths = {
      {{0, 0}, {0, 1}, {0, 2}},
      {{4, 0}, {4, 1}},
      {{0, 2}, {0, 1}, {0, 0}},
  };
  const auto report = detect_conflicts(plan);
  REQUIRE(report.colliding_pairs == 1);
  RepairConfig config;
  config.neighborhood_size = 2;
  DestroyWeights weights;
  weights.random = 0.0;  // force the collision strategy
  Rng rng(7);
  DestroyStrategy chosen;
  auto subset = select_neighborhood(plan, report, config, weights, rng, &chosen);
  CHECK(chosen == DestroyStrategy::kCollisionWalk);
  std::sort(subset.begin(), subset.end());
  CHECK(subset == std::vector<int>{0, 2});
}

TEST_CASE("adaptive weights favor the strategy that keeps improving") {
  DestroyWeights weights;
  for (int i = 0; i < 10; ++i)
    weights.collision_walk = updated_weight(weights.collision_walk, true);
  CHECK(weights.collision_walk > weights.random);
}

TEST_CASE("lns2_repair returns a collision-free input unchanged") {
  const GridMap map(4, 4);
  const auto instance = make_instance(map, {{0, 0}, {3, 3}}, {{0, 3}, {3, 0}});
  const auto plan = pp_init(instance, identity_order(2));
  REQUIRE(detect_conflicts(plan).colliding_pairs == 0);
  RepairConfig config;
  config.seed = 9;
  const auto [repaired, stats] = lns2_repair(plan, instance, config);
  CHECK(stats.success);
  CHECK(stats.iterations == 0);
  CHECK(repaired.paths == plan.paths);
  CHECK(stats.colliding_pairs_trajectory == std::vector<int>{0});
}

TEST_CASE("lns2_repair rejects a non-positive budget") {
  const GridMap map(3, 3);
  const auto instance = make_instance(map, {{0, 0}}, {{2, 2}});
  const auto plan = pp_init(instance, identity_order(1));
  RepairConfig config;
  config.time_budget_seconds = 0.0;
  CHECK_THROWS_AS(lns2_repair(plan, instance, config), std::invalid_argument);
}

TEST_CASE("canonical swap with a bypass cell repairs quickly on all seeds") {
  // Two agents swapping along the top row of a 3x3 with free bypass cells.
  const GridMap map(3, 3);
  const auto instance = make_instance(map, {{0, 0}, {0, 2}}, {{0, 2}, {0, 0}});
  Plan conflicted;
  conflicted.paths = {
      {{0, 0}, {0, 1}, {0, 2}},
      {{0, 2}, {0, 1}, {0, 0}},
  };
  REQUIRE(detect_conflicts(conflicted).colliding_pairs == 1);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    RepairConfig config;
    config.neighborhood_size = 8;
    config.seed = seed;
    const auto [plan, stats] = lns2_repair(conflicted, instance, config);
    REQUIRE(stats.success);
    CHECK(stats.iterations <= 5);
    CHECK(plan_feasible(plan, instance));
  }
}

TEST_CASE("repair trajectories are monotone and reproducible") {
  SceneSpec spec;
  spec.family = SceneFamily::kRandom;
  spec.height = 10;
  spec.width = 10;
  spec.obstacle_density = 0.175;
  spec.seed = 21;
  const auto map = generate_map(spec);
  const auto instance = sample_instance(map, 20, 0, 13);

  Rng order_rng(5);
  auto order = identity_order(instance.agent_count());
  order_rng.shuffle(order);
  const auto initial = pp_init(instance, order);

  RepairConfig config;
  config.seed = 77;
  config.time_budget_seconds = 120.0;
  const auto [plan_a, stats_a] = lns2_repair(initial, instance, config);
  const auto [plan_b, stats_b] = lns2_repair(initial, instance, config);

  REQUIRE(stats_a.success);
  CHECK(plan_feasible(plan_a, instance));
  for (std::size_t i = 1; i < stats_a.colliding_pairs_trajectory.size(); ++i)
    CHECK(stats_a.colliding_pairs_trajectory[i] <=
          stats_a.colliding_pairs_trajectory[i - 1]);

  CHECK(stats_a.iterations == stats_b.iterations);
  CHECK(stats_a.colliding_pairs_trajectory == stats_b.colliding_pairs_trajectory);
  CHECK(plan_a.paths == plan_b.paths);

  // Feasible output never undercuts the BFS lower bound.
  long long lower = 0;
  for (int i = 0; i < instance.agent_count(); ++i)
    lower += bfs_distance_map(map, instance.goals[i]).at(instance.starts[i]);
  CHECK(sum_of_costs(plan_a, instance.goals) >= lower);
}
