#pragma once

// Joint action tensors: N x T x C rows of categorical distributions (or
// one-hot samples) over the five grid actions, plus the expected-position
// geometry shared by the denoiser and the task losses. The scalar type is a
// template parameter so forward-mode derivative checks can reuse the exact
// computation.

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "difflns/grid.hpp"

namespace difflns {

template <typename Scalar>
struct BasicActionTensor {
  static constexpr int kActions = kNumActions;

  int agents = 0;
  int steps = 0;
  std::vector<Scalar> data;  // (agent, step, action) row-major

  BasicActionTensor() = default;
  BasicActionTensor(int agents_in, int steps_in, Scalar fill = Scalar(0))
      : agents(agents_in), steps(steps_in),
        data(static_cast<std::size_t>(agents_in) * steps_in * kActions, fill) {
    if (agents_in < 1 || steps_in < 1)
      throw std::invalid_argument("action tensor: empty dimensions");
  }

  std::size_t row_offset(int agent, int step) const {
    return (static_cast<std::size_t>(agent) * steps + step) * kActions;
  }
  Scalar* row(int agent, int step) { return data.data() + row_offset(agent, step); }
  const Scalar* row(int agent, int step) const {
    return data.data() + row_offset(agent, step);
  }
  Scalar& at(int agent, int step, int action) {
    return data[row_offset(agent, step) + action];
  }
  const Scalar& at(int agent, int step, int action) const {
    return data[row_offset(agent, step) + action];
  }

  void set_one_hot(int agent, int step, int action) {
    Scalar* r = row(agent, step);
    for (int a = 0; a < kActions; ++a) r[a] = Scalar(a == action ? 1 : 0);
  }

  int argmax_action(int agent, int step) const {  // ties: lowest action index
    const Scalar* r = row(agent, step);
    int best = 0;
    for (int a = 1; a < kActions; ++a)
      if (r[a] > r[best]) best = a;
    return best;
  }
};

using JointActionTensor = BasicActionTensor<double>;

inline bool rows_normalized(const JointActionTensor& tensor,
                            double tolerance = 1e-9) {
  for (int i = 0; i < tensor.agents; ++i)
    for (int t = 0; t < tensor.steps; ++t) {
      double sum = 0.0;
      for (int a = 0; a < JointActionTensor::kActions; ++a) {
        const double p = tensor.at(i, t, a);
        if (!(p >= 0.0) || !std::isfinite(p)) return false;
        sum += p;
      }
      if (std::abs(sum - 1.0) > tolerance) return false;
    }
  return true;
}

inline bool is_one_hot(const JointActionTensor& tensor) {
  for (int i = 0; i < tensor.agents; ++i)
    for (int t = 0; t < tensor.steps; ++t) {
      int ones = 0;
      for (int a = 0; a < JointActionTensor::kActions; ++a) {
        const double p = tensor.at(i, t, a);
        if (p == 1.0) ++ones;
        else if (p != 0.0) return false;
      }
      if (ones != 1) return false;
    }
  return true;
}

// Expected grid positions after each action row: the prefix sum of expected
// displacements from the start cell, in (row, col) coordinates. Entry t is
// the soft position after actions 0..t.
template <typename Scalar>
std::vector<std::vector<std::array<Scalar, 2>>> expected_grid_positions(
    const BasicActionTensor<Scalar>& tensor, const std::vector<Cell>& starts) {
  if (static_cast<int>(starts.size()) != tensor.agents)
    throw std::invalid_argument("expected_grid_positions: starts mismatch");
  std::vector<std::vector<std::array<Scalar, 2>>> positions(tensor.agents);
  for (int i = 0; i < tensor.agents; ++i) {
    Scalar row_pos(starts[i].row);
    Scalar col_pos(starts[i].col);
    positions[i].reserve(tensor.steps);
    for (int t = 0; t < tensor.steps; ++t) {
      const Scalar* r = tensor.row(i, t);
      Scalar drow(0);
      Scalar dcol(0);
      for (int a = 0; a < kNumActions; ++a) {
        drow += r[a] * Scalar(kActionDelta[a][0]);
        dcol += r[a] * Scalar(kActionDelta[a][1]);
      }
      row_pos += drow;
      col_pos += dcol;
      positions[i].push_back({row_pos, col_pos});
    }
  }
  return positions;
}

// One-hot tensor encoding the actions that realize a path, padded with stays.
inline JointActionTensor tensor_from_path_actions(
    const std::vector<Path>& paths, int steps) {
  JointActionTensor tensor(static_cast<int>(paths.size()), steps);
  for (int i = 0; i < tensor.agents; ++i) {
    for (int t = 0; t < steps; ++t) {
      int action = 0;
      if (t + 1 < static_cast<int>(paths[i].size())) {
        const int dr = paths[i][t + 1].row - paths[i][t].row;
        const int dc = paths[i][t + 1].col - paths[i][t].col;
        for (int a = 0; a < kNumActions; ++a)
          if (kActionDelta[a][0] == dr && kActionDelta[a][1] == dc) action = a;
      }
      tensor.set_one_hot(i, t, action);
    }
  }
  return tensor;
}

}  // namespace difflns
