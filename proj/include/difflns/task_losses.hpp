#pragma once

// Task-oriented auxiliary objectives evaluated on predicted clean-action
// distributions: goal progress, vertex- and edge-conflict proximity, and
// action validity. The computations are templated on the scalar type so a
// forward-mode dual number can replay them for derivative checks; set
// membership, grid snapping and rollout argmaxes always branch on the scalar
// value and therefore freeze at the evaluation point.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "difflns/action_tensor.hpp"
#include "difflns/grid.hpp"
#include "difflns/single_agent.hpp"

namespace difflns {

struct LossWeights {
  double goal = 0.4;
  double vertex = 0.2;
  double edge = 0.2;
  double valid = 0.4;
  double kl = 0.02;          // belongs to the generative objective
  double vertex_radius = 1.0;  // Manhattan, in cells
  double edge_radius = 1.0;
};

inline double scalar_value(double x) { return x; }

namespace task_detail {

template <typename Scalar>
Scalar l1_distance(const std::array<Scalar, 2>& a,
                   const std::array<Scalar, 2>& b) {
  Scalar dr = a[0] - b[0];
  Scalar dc = a[1] - b[1];
  if (dr < Scalar(0)) dr = -dr;
  if (dc < Scalar(0)) dc = -dc;
  return dr + dc;
}

template <typename Scalar>
Scalar hinge(const Scalar& x) {
  return scalar_value(x) > 0.0 ? x : Scalar(0);
}

// Snap a soft position to its nearest cell for the BFS lookup. Positions that
// round onto an obstacle or an unreachable cell fall back to the best finite
// distance in the 3x3 ring; -1 marks a hopeless lookup.
inline int snapped_distance(const DistanceField& field, double row, double col) {
  const auto clamp = [](double v, int extent) {
    return std::min(std::max(static_cast<int>(std::lround(v)), 0), extent - 1);
  };
  const int r = clamp(row, field.height);
  const int c = clamp(col, field.width);
  const int direct = field.distance[r * field.width + c];
  if (direct >= 0) return direct;
  int best = -1;
  for (int dr = -1; dr <= 1; ++dr)
    for (int dc = -1; dc <= 1; ++dc) {
      const int rr = r + dr, cc = c + dc;
      if (rr < 0 || rr >= field.height || cc < 0 || cc >= field.width) continue;
      const int d = field.distance[rr * field.width + cc];
      if (d >= 0 && (best < 0 || d < best)) best = d;
    }
  return best;
}

template <typename Scalar>
Scalar goal_progress_impl(const BasicActionTensor<Scalar>& probs,
                          const Instance& instance,
                          const std::vector<DistanceField>& fields) {
  const int agents = probs.agents;
  const int steps = probs.steps;
  if (steps < 2) return Scalar(0);
  const auto positions = expected_grid_positions(probs, instance.starts);
  const double scale =
      std::max(instance.map.height(), instance.map.width());
  const Scalar inv_scale(1.0 / scale);
  Scalar total(0);
  for (int i = 0; i < agents; ++i) {
    for (int t = 0; t + 1 < steps; ++t) {
      const int d_now =
          snapped_distance(fields[i], scalar_value(positions[i][t][0]),
                           scalar_value(positions[i][t][1]));
      const int d_next =
          snapped_distance(fields[i], scalar_value(positions[i][t + 1][0]),
                           scalar_value(positions[i][t + 1][1]));
      if (d_now < 0 || d_next < 0) continue;
      const Scalar now(d_now / scale);
      const Scalar next(d_next / scale);
      total += hinge(next - hinge(now - inv_scale));
    }
  }
  return total / Scalar(static_cast<double>(agents) * (steps - 1));
}

template <typename Scalar>
Scalar vertex_conflict_impl(const BasicActionTensor<Scalar>& probs,
                            const Instance& instance, double radius) {
  const int agents = probs.agents;
  if (agents < 2) return Scalar(0);
  const auto positions = expected_grid_positions(probs, instance.starts);
  using std::exp;
  Scalar total(0);
  long long members = 0;
  for (int i = 0; i < agents; ++i)
    for (int j = i + 1; j < agents; ++j)
      for (int t = 0; t < probs.steps; ++t) {
        const Scalar distance = l1_distance(positions[i][t], positions[j][t]);
        if (scalar_value(distance) > radius) continue;
        total += exp(-distance);
        ++members;
      }
  if (members == 0) return Scalar(0);
  return total / Scalar(static_cast<double>(members));
}

template <typename Scalar>
Scalar edge_conflict_impl(const BasicActionTensor<Scalar>& probs,
                          const Instance& instance, double radius) {
  const int agents = probs.agents;
  if (agents < 2 || probs.steps < 2) return Scalar(0);
  const auto positions = expected_grid_positions(probs, instance.starts);
  using std::exp;
  Scalar total(0);
  long long members = 0;
  for (int i = 0; i < agents; ++i)
    for (int j = i + 1; j < agents; ++j)
      for (int t = 0; t + 1 < probs.steps; ++t) {
        const Scalar forward =
            l1_distance(positions[i][t], positions[j][t + 1]);
        const Scalar backward =
            l1_distance(positions[i][t + 1], positions[j][t]);
        if (scalar_value(forward) > radius || scalar_value(backward) > radius)
          continue;
        total += exp(-(forward + backward) / Scalar(2));
        ++members;
      }
  if (members == 0) return Scalar(0);
  return total / Scalar(static_cast<double>(members));
}

template <typename Scalar>
Scalar validity_impl(const BasicActionTensor<Scalar>& probs,
                     const Instance& instance) {
  const int agents = probs.agents;
  const int steps = probs.steps;
  Scalar total(0);
  for (int i = 0; i < agents; ++i) {
    Cell pos = instance.starts[i];  // argmax rollout position
    for (int t = 0; t < steps; ++t) {
      const Scalar* row = probs.row(i, t);
      int best = 0;
      for (int a = 1; a < kNumActions; ++a)
        if (scalar_value(row[a]) > scalar_value(row[best])) best = a;
      for (int a = 0; a < kNumActions; ++a)
        if (!apply_action(pos, static_cast<Action>(a), instance.map))
          total += row[a];
      const auto next =
          apply_action(pos, static_cast<Action>(best), instance.map);
      if (next) pos = *next;  // invalid argmax moves stay in place
    }
  }
  return total / Scalar(static_cast<double>(agents) * steps);
}

template <typename Scalar>
Scalar task_loss_impl(const BasicActionTensor<Scalar>& probs,
                      const Instance& instance,
                      const std::vector<DistanceField>& fields,
                      const LossWeights& weights) {
  return Scalar(weights.goal) * goal_progress_impl(probs, instance, fields) +
         Scalar(weights.vertex) *
             vertex_conflict_impl(probs, instance, weights.vertex_radius) +
         Scalar(weights.edge) *
             edge_conflict_impl(probs, instance, weights.edge_radius) +
         Scalar(weights.valid) * validity_impl(probs, instance);
}

}  // namespace task_detail

// Penalizes steps that fail to shrink the normalized BFS distance to the
// goal by one cell where possible.
inline double goal_progress_loss(const JointActionTensor& probs,
                                 const Instance& instance,
                                 const std::vector<DistanceField>& fields) {
  if (static_cast<int>(fields.size()) != probs.agents)
    throw std::invalid_argument("goal_progress_loss: fields mismatch");
  return task_detail::goal_progress_impl(probs, instance, fields);
}

inline double vertex_conflict_loss(const JointActionTensor& probs,
                                   const Instance& instance,
                                   double radius = 1.0) {
  return task_detail::vertex_conflict_impl(probs, instance, radius);
}

inline double edge_conflict_loss(const JointActionTensor& probs,
                                 const Instance& instance,
                                 double radius = 1.0) {
  return task_detail::edge_conflict_impl(probs, instance, radius);
}

inline double validity_loss(const JointActionTensor& probs,
                            const Instance& instance) {
  return task_detail::validity_impl(probs, instance);
}

inline double task_loss(const JointActionTensor& probs,
                        const Instance& instance,
                        const std::vector<DistanceField>& fields,
                        const LossWeights& weights = {}) {
  if (static_cast<int>(fields.size()) != probs.agents)
    throw std::invalid_argument("task_loss: fields mismatch");
  return task_detail::task_loss_impl(probs, instance, fields, weights);
}

// Warmup scaling of the task objective over training epochs.
inline double task_loss_scale(double epochs) {
  return 0.2 + 0.8 * std::min(epochs / 150.0, 1.0);
}

}  // namespace difflns
