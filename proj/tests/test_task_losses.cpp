#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "difflns/instance_gen.hpp"
#include "difflns/task_losses.hpp"
#include "support/dual.hpp"
#include "support/oracles.hpp"

using namespace difflns;
using dual::Dual;

namespace {

Instance empty_instance(int height, int width, std::vector<Cell> starts,
                        std::vector<Cell> goals) {
  Instance instance;
  instance.map = GridMap(height, width);
  instance.starts = std::move(starts);
  instance.goals = std::move(goals);
  instance.horizon = default_horizon(instance.map);
  return instance;
}

JointActionTensor one_hot_actions(std::vector<std::vector<int>> actions) {
  const int agents = static_cast<int>(actions.size());
  const int steps = static_cast<int>(actions[0].size());
  JointActionTensor tensor(agents, steps);
  for (int i = 0; i < agents; ++i)
    for (int t = 0; t < steps; ++t) tensor.set_one_hot(i, t, actions[i][t]);
  return tensor;
}

constexpr int kStay = 0, kUp = 1, kDown = 2, kLeft = 3, kRight = 4;

}  // namespace

TEST_CASE("goal progress loss") {
  SECTION("a distance-decreasing path costs nothing") {
    const auto instance = empty_instance(1, 8, {{0, 0}}, {{0, 5}});
    const auto fields = goal_distance_fields(instance);
    const auto probs = one_hot_actions(
        {{kRight, kRight, kRight, kRight, kRight, kStay, kStay}});
    CHECK(goal_progress_loss(probs, instance, fields) ==
          Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("standing still away from the goal pays 1/s per step") {
    const auto instance = empty_instance(4, 9, {{0, 0}}, {{0, 6}});
    const auto fields = goal_distance_fields(instance);
    const auto probs = one_hot_actions({{kStay, kStay, kStay, kStay}});
    CHECK(goal_progress_loss(probs, instance, fields) ==
          Catch::Approx(1.0 / 9.0).epsilon(1e-12));
  }
  SECTION("resting at the goal costs nothing") {
    const auto instance = empty_instance(3, 3, {{1, 1}}, {{1, 1}});
    const auto fields = goal_distance_fields(instance);
    const auto probs = one_hot_actions({{kStay, kStay, kStay}});
    CHECK(goal_progress_loss(probs, instance, fields) ==
          Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("vertex conflict loss") {
  SECTION("a single agent never conflicts") {
    const auto instance = empty_instance(3, 3, {{0, 0}}, {{2, 2}});
    const auto probs = one_hot_actions({{kDown, kRight}});
    CHECK(vertex_conflict_loss(probs, instance) == 0.0);
  }
  SECTION("one coincidence, nothing else in radius") {
    const auto instance = empty_instance(1, 3, {{0, 0}, {0, 2}}, {{0, 0}, {0, 2}});
    const auto probs =
        one_hot_actions({{kRight, kLeft}, {kLeft, kRight}});
    // Both agents sit on (0,1) after the first action, then return.
    CHECK(vertex_conflict_loss(probs, instance) ==
          Catch::Approx(1.0).epsilon(1e-12));
  }
  SECTION("three agents with two in-radius members average the exponentials") {
    const auto instance = empty_instance(
        2, 8, {{0, 0}, {0, 1}, {1, 7}}, {{0, 0}, {0, 1}, {1, 7}});
    // Pair (0,1): adjacent (distance 1) after a stay step, then coincident.
    const auto probs = one_hot_actions(
        {{kStay, kRight}, {kStay, kStay}, {kStay, kStay}});
    const double expected = (std::exp(-1.0) + std::exp(0.0) + std::exp(-1.0)) / 3.0;
    // Members: t=0 distance 1, t=1 distance 0 for pair (0,1)... recompute:
    // positions agent0: (0,0),(0,1); agent1: (0,1),(0,1). distances: 1, 0.
    const double loss = vertex_conflict_loss(probs, instance);
    CHECK(loss == Catch::Approx((std::exp(-1.0) + 1.0) / 2.0).epsilon(1e-12));
    (void)expected;
  }
}

TEST_CASE("edge conflict loss") {
  SECTION("a perfect swap scores one") {
    const auto instance = empty_instance(1, 2, {{0, 0}, {0, 1}}, {{0, 0}, {0, 1}});
    const auto probs = one_hot_actions({{kStay, kRight}, {kStay, kLeft}});
    CHECK(edge_conflict_loss(probs, instance) ==
          Catch::Approx(1.0).epsilon(1e-12));
  }
  SECTION("parallel distant motion is an empty set") {
    const auto instance = empty_instance(6, 6, {{0, 0}, {5, 0}}, {{0, 2}, {5, 2}});
    const auto probs = one_hot_actions({{kRight, kRight}, {kRight, kRight}});
    CHECK(edge_conflict_loss(probs, instance) == 0.0);
  }
  SECTION("near swap at unit distances") {
    const auto instance = empty_instance(1, 3, {{0, 0}, {0, 2}}, {{0, 0}, {0, 2}});
    const auto probs = one_hot_actions({{kStay, kRight}, {kStay, kLeft}});
    // d_forward = |(0,0)-(0,1)| = 1, d_backward = |(0,1)-(0,2)| = 1.
    CHECK(edge_conflict_loss(probs, instance, 1.0) ==
          Catch::Approx(std::exp(-1.0)).epsilon(1e-12));
  }
}

TEST_CASE("validity loss") {
  SECTION("interior cells allow all five actions") {
    const auto instance = empty_instance(5, 5, {{2, 2}}, {{2, 2}});
    JointActionTensor probs(1, 1, 0.2);
    CHECK(validity_loss(probs, instance) == 0.0);
  }
  SECTION("a uniform row at a corner leaks 0.4") {
    const auto instance = empty_instance(4, 4, {{0, 0}}, {{0, 0}});
    JointActionTensor probs(1, 1, 0.2);
    CHECK(validity_loss(probs, instance) == Catch::Approx(0.4).epsilon(1e-12));
  }
  SECTION("valid one-hot actions everywhere cost nothing") {
    const auto instance = empty_instance(3, 4, {{0, 0}}, {{0, 3}});
    const auto probs = one_hot_actions({{kRight, kRight, kRight, kStay}});
    CHECK(validity_loss(probs, instance) == 0.0);
  }
  SECTION("invalid argmax moves are treated as stay") {
    const auto instance = empty_instance(2, 2, {{0, 0}}, {{1, 1}});
    // First row pushes up (off grid): the rollout must stay at (0,0), so the
    // second row is evaluated from the corner again.
    JointActionTensor probs(1, 2, 0.0);
    probs.at(0, 0, kUp) = 0.6;
    probs.at(0, 0, kStay) = 0.4;
    probs.at(0, 1, kUp) = 0.5;
    probs.at(0, 1, kLeft) = 0.5;
    CHECK(validity_loss(probs, instance) ==
          Catch::Approx((0.6 + 1.0) / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("task loss composition and schedule") {
  const auto instance = empty_instance(1, 3, {{0, 0}, {0, 2}}, {{0, 0}, {0, 2}});
  const auto probs = one_hot_actions({{kRight, kLeft}, {kLeft, kRight}});
  const auto fields = goal_distance_fields(instance);
  SECTION("zeroed weights zero the loss") {
    LossWeights weights;
    weights.goal = weights.vertex = weights.edge = weights.valid = 0.0;
    CHECK(task_loss(probs, instance, fields, weights) == 0.0);
  }
  SECTION("generic case equals the hand-combined sum") {
    const LossWeights weights;
    const double expected =
        0.4 * goal_progress_loss(probs, instance, fields) +
        0.2 * vertex_conflict_loss(probs, instance, weights.vertex_radius) +
        0.2 * edge_conflict_loss(probs, instance, weights.edge_radius) +
        0.4 * validity_loss(probs, instance);
    CHECK(task_loss(probs, instance, fields, weights) ==
          Catch::Approx(expected).epsilon(1e-12));
  }
  SECTION("warmup scale") {
    CHECK(task_loss_scale(0.0) == Catch::Approx(0.2).margin(1e-15));
    CHECK(task_loss_scale(150.0) == Catch::Approx(1.0).margin(1e-15));
    CHECK(task_loss_scale(75.0) == Catch::Approx(0.6).margin(1e-15));
    CHECK(task_loss_scale(400.0) == Catch::Approx(1.0).margin(1e-15));
  }
}

TEST_CASE("losses are invariant under agent permutation") {
  SceneSpec spec;
  spec.family = SceneFamily::kRandom;
  spec.height = 6;
  spec.width = 6;
  spec.obstacle_density = 0.15;
  spec.seed = 2;
  const auto map = generate_map(spec);
  const auto instance = sample_instance(map, 4, 0, 17);
  Rng rng(8);
  JointActionTensor probs(4, 6);
  for (int i = 0; i < 4; ++i)
    for (int t = 0; t < 6; ++t) {
      double sum = 0.0;
      for (int a = 0; a < kNumActions; ++a) {
        probs.at(i, t, a) = 0.05 + rng.next_double();
        sum += probs.at(i, t, a);
      }
      for (int a = 0; a < kNumActions; ++a) probs.at(i, t, a) /= sum;
    }
  const auto fields = goal_distance_fields(instance);

  const int perm[4] = {2, 0, 3, 1};
  Instance permuted = instance;
  JointActionTensor shuffled(4, 6);
  for (int i = 0; i < 4; ++i) {
    permuted.starts[perm[i]] = instance.starts[i];
    permuted.goals[perm[i]] = instance.goals[i];
    for (int t = 0; t < 6; ++t)
      for (int a = 0; a < kNumActions; ++a)
        shuffled.at(perm[i], t, a) = probs.at(i, t, a);
  }
  const auto permuted_fields = goal_distance_fields(permuted);

  CHECK(goal_progress_loss(probs, instance, fields) ==
        Catch::Approx(goal_progress_loss(shuffled, permuted, permuted_fields))
            .epsilon(1e-12));
  CHECK(vertex_conflict_loss(probs, instance) ==
        Catch::Approx(vertex_conflict_loss(shuffled, permuted)).epsilon(1e-12));
  CHECK(edge_conflict_loss(probs, instance) ==
        Catch::Approx(edge_conflict_loss(shuffled, permuted)).epsilon(1e-12));
  CHECK(validity_loss(probs, instance) ==
        Catch::Approx(validity_loss(shuffled, permuted)).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// Finite differences against dual-number directional derivatives.
// ---------------------------------------------------------------------------

namespace {

enum class Loss { kGoal, kVertex, kEdge, kValid };

double eval_double(Loss which, const JointActionTensor& probs,
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

double eval_dual_derivative(Loss which, const JointActionTensor& probs,
                            const Instance& instance,
                            const std::vector<DistanceField>& fields, int agent,
                            int step, int entry) {
  BasicActionTensor<Dual> dx(probs.agents, probs.steps);
  for (int i = 0; i < probs.agents; ++i)
    for (int t = 0; t < probs.steps; ++t)
      for (int a = 0; a < kNumActions; ++a) {
        double dot = 0.0;
        if (i == agent && t == step)
          dot = (a == entry ? 1.0 : 0.0) - probs.at(i, t, a);
        dx.at(i, t, a) = Dual(probs.at(i, t, a), dot);
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

JointActionTensor perturbed(const JointActionTensor& probs, int agent, int step,
                            int entry, double h) {
  JointActionTensor out = probs;
  out.at(agent, step, entry) += h;
  double sum = 0.0;
  for (int a = 0; a < kNumActions; ++a) sum += out.at(agent, step, a);
  for (int a = 0; a < kNumActions; ++a) out.at(agent, step, a) /= sum;
  return out;
}

// Rejects evaluation points within 1e-4 of a hinge, set-membership, rounding
// or argmax boundary for the given loss.
bool away_from_boundaries(Loss which, const JointActionTensor& probs,
                          const Instance& instance,
                          const std::vector<DistanceField>& fields) {
  constexpr double kMargin = 1e-4;
  const auto positions = expected_grid_positions(probs, instance.starts);
  const int agents = probs.agents, steps = probs.steps;
  if (which == Loss::kGoal) {
    for (int i = 0; i < agents; ++i)
      for (int t = 0; t < steps; ++t)
        for (const double coord : positions[i][t]) {
          const double frac = std::abs(coord - std::floor(coord) - 0.5);
          if (frac < kMargin) return false;  // rounding boundary
        }
    return true;
  }
  if (which == Loss::kVertex || which == Loss::kEdge) {
    for (int i = 0; i < agents; ++i)
      for (int j = i + 1; j < agents; ++j)
        for (int t = 0; t < steps; ++t) {
          const auto check = [&](const std::array<double, 2>& a,
                                 const std::array<double, 2>& b) {
            if (std::abs(a[0] - b[0]) < kMargin) return false;  // L1 kink
            if (std::abs(a[1] - b[1]) < kMargin) return false;
            const double d =
                std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]);
            return std::abs(d - 1.0) >= kMargin;  // radius boundary
          };
          if (which == Loss::kVertex) {
            if (!check(positions[i][t], positions[j][t])) return false;
          } else if (t + 1 < steps) {
            if (!check(positions[i][t], positions[j][t + 1])) return false;
            if (!check(positions[i][t + 1], positions[j][t])) return false;
          }
        }
    return true;
  }
  // Validity: the rollout argmax of every row must be stable.
  for (int i = 0; i < agents; ++i)
    for (int t = 0; t < steps; ++t) {
      const int best = probs.argmax_action(i, t);
      for (int a = 0; a < kNumActions; ++a)
        if (a != best &&
            probs.at(i, t, best) - probs.at(i, t, a) < 10 * kMargin)
          return false;
    }
  return true;
}

}  // namespace

TEST_CASE("finite differences match dual-number directional derivatives") {
  SceneSpec spec;
  spec.family = SceneFamily::kRandom;
  spec.height = 6;
  spec.width = 6;
  spec.obstacle_density = 0.2;
  spec.seed = 5;
  const auto map = generate_map(spec);
  constexpr double kStep = 1e-5;

  for (const Loss which :
       {Loss::kGoal, Loss::kVertex, Loss::kEdge, Loss::kValid}) {
    int accepted = 0;
    int trial = 0;
    while (accepted < 20 && trial < 4000) {
      Rng rng(mix_seed(991, static_cast<int>(which), trial++));
      const auto instance = sample_instance(map, 3, 0, rng.next_u64());
      const auto fields = goal_distance_fields(instance);
      JointActionTensor probs(3, 5);
      for (int i = 0; i < 3; ++i)
        for (int t = 0; t < 5; ++t) {
          double sum = 0.0;
          for (int a = 0; a < kNumActions; ++a) {
            probs.at(i, t, a) = 0.05 + rng.next_double();
            sum += probs.at(i, t, a);
          }
          for (int a = 0; a < kNumActions; ++a) probs.at(i, t, a) /= sum;
        }
      if (!away_from_boundaries(which, probs, instance, fields)) continue;
      const int agent = rng.uniform_int(0, 2);
      const int step = rng.uniform_int(0, 4);
      const int entry = rng.uniform_int(0, kNumActions - 1);

      const double analytic =
          eval_dual_derivative(which, probs, instance, fields, agent, step, entry);
      const double plus = eval_double(
          which, perturbed(probs, agent, step, entry, kStep), instance, fields);
      const double minus = eval_double(
          which, perturbed(probs, agent, step, entry, -kStep), instance, fields);
      const double fd = (plus - minus) / (2.0 * kStep);

      const double magnitude = std::max(std::abs(analytic), std::abs(fd));
      INFO("loss " << static_cast<int>(which) << " trial " << trial
                   << " analytic " << analytic << " fd " << fd);
      if (magnitude > 1e-9) {
        REQUIRE(std::abs(analytic - fd) <= 1e-3 * magnitude);
      }
      ++accepted;
    }
    REQUIRE(accepted == 20);
  }
}

TEST_CASE("losses stay non-negative on random inputs") {
  SceneSpec spec;
  spec.family = SceneFamily::kRandom;
  spec.height = 5;
  spec.width = 5;
  spec.obstacle_density = 0.2;
  spec.seed = 9;
  const auto map = generate_map(spec);
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const auto instance = sample_instance(map, 3, 0, rng.next_u64());
    const auto fields = goal_distance_fields(instance);
    JointActionTensor probs(3, 6);
    for (int i = 0; i < 3; ++i)
      for (int t = 0; t < 6; ++t) {
        double sum = 0.0;
        for (int a = 0; a < kNumActions; ++a) {
          probs.at(i, t, a) = 0.01 + rng.next_double();
          sum += probs.at(i, t, a);
        }
        for (int a = 0; a < kNumActions; ++a) probs.at(i, t, a) /= sum;
      }
    CHECK(goal_progress_loss(probs, instance, fields) >= 0.0);
    CHECK(vertex_conflict_loss(probs, instance) >= 0.0);
    CHECK(edge_conflict_loss(probs, instance) >= 0.0);
    CHECK(validity_loss(probs, instance) >= 0.0);
  }
}
