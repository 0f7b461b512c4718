#pragma once

// Discrete diffusion over joint action tensors with the uniform transition
// kernel Q_k = alpha_k I + (1 - alpha_k)/C J: cosine schedule, closed-form
// marginals, analytic posterior, reverse sampling and the generative losses.
// All kernel math is double precision; the oracles assert 1e-10..1e-12
// agreement.

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "difflns/action_tensor.hpp"
#include "difflns/rng.hpp"

namespace difflns::d3pm {

inline constexpr int kCategories = JointActionTensor::kActions;
inline constexpr int kDefaultSteps = 100;
inline constexpr double kKlWeight = 0.02;  // lambda_KL in the generative loss

using Row = std::array<double, kCategories>;
using Kernel = std::array<Row, kCategories>;

struct DiffusionSchedule {
  int steps = 0;                  // K
  std::vector<double> alpha;      // alpha[k], k in 1..K; alpha[0] unused = 1
  std::vector<double> alpha_bar;  // cumulative product, alpha_bar[0] = 1
};

// Cosine schedule: alpha_bar_k proportional to
// cos^2(((k/K + s) / (1 + s)) * pi/2) with offset s = 0.008, and per-step
// alpha clipped to [0.001, 1] before the cumulative product is rebuilt.
inline DiffusionSchedule cosine_schedule(int steps) {
  if (steps < 1) throw std::invalid_argument("cosine_schedule: K must be >= 1");
  constexpr double kOffset = 0.008;
  constexpr double kHalfPi = 1.5707963267948966;
  const auto f = [&](double k) {
    const double c = std::cos((k / steps + kOffset) / (1.0 + kOffset) * kHalfPi);
    return c * c;
  };
  DiffusionSchedule schedule;
  schedule.steps = steps;
  schedule.alpha.assign(steps + 1, 1.0);
  schedule.alpha_bar.assign(steps + 1, 1.0);
  double previous_raw = 1.0;
  for (int k = 1; k <= steps; ++k) {
    const double raw = f(static_cast<double>(k)) / f(0.0);
    const double ratio = previous_raw > 0.0 ? raw / previous_raw : 0.0;
    schedule.alpha[k] = std::min(1.0, std::max(0.001, ratio));
    schedule.alpha_bar[k] = schedule.alpha_bar[k - 1] * schedule.alpha[k];
    previous_raw = raw;
  }
  return schedule;
}

// Q = alpha I + (1 - alpha)/C J; every row sums to 1.
inline Kernel transition_matrix(double alpha) {
  Kernel q;
  const double off = (1.0 - alpha) / kCategories;
  for (int r = 0; r < kCategories; ++r)
    for (int c = 0; c < kCategories; ++c) q[r][c] = off + (r == c ? alpha : 0.0);
  return q;
}

// The uniform kernels compose in closed form, so the k-step kernel is the
// one-step formula evaluated at alpha_bar_k.
inline Kernel marginal_matrix(int k, const DiffusionSchedule& schedule) {
  if (k < 0 || k > schedule.steps)
    throw std::invalid_argument("marginal_matrix: k out of range");
  return transition_matrix(schedule.alpha_bar[k]);
}

inline Row forward_marginal_row(const double* x0_row, int k,
                                const DiffusionSchedule& schedule) {
  if (k < 0 || k > schedule.steps)
    throw std::invalid_argument("forward_marginal: k out of range");
  const double bar = schedule.alpha_bar[k];
  const double off = (1.0 - bar) / kCategories;
  Row out;
  for (int c = 0; c < kCategories; ++c) out[c] = off + bar * x0_row[c];
  return out;
}

inline JointActionTensor forward_marginal(const JointActionTensor& x0, int k,
                                          const DiffusionSchedule& schedule) {
  JointActionTensor out(x0.agents, x0.steps);
  for (int i = 0; i < x0.agents; ++i)
    for (int t = 0; t < x0.steps; ++t) {
      const Row row = forward_marginal_row(x0.row(i, t), k, schedule);
      for (int c = 0; c < kCategories; ++c) out.at(i, t, c) = row[c];
    }
  return out;
}

namespace detail {

// Stream phases keep independent draws from colliding in seed space.
inline constexpr std::uint64_t kPhaseForward = 0xf0f0a1;
inline constexpr std::uint64_t kPhaseReverse = 0xf0f0a2;
inline constexpr std::uint64_t kPhaseInit = 0xf0f0a3;

inline int sample_categorical(const Row& probabilities, double u) {
  double cumulative = 0.0;
  for (int c = 0; c < kCategories; ++c) {
    cumulative += probabilities[c];
    if (u < cumulative) return c;
  }
  return kCategories - 1;
}

inline int one_hot_index(const double* row) {
  for (int c = 0; c < kCategories; ++c)
    if (row[c] == 1.0) return c;
  throw std::invalid_argument("expected a one-hot row");
}

}  // namespace detail

// Samples x_k ~ q(x_k | x_0) row-wise. Rows draw from streams derived by
// hashing (seed, agent, timestep, k), so the result is independent of
// iteration order.
inline JointActionTensor forward_sample(const JointActionTensor& x0, int k,
                                        const DiffusionSchedule& schedule,
                                        std::uint64_t seed) {
  JointActionTensor out(x0.agents, x0.steps);
  for (int i = 0; i < x0.agents; ++i)
    for (int t = 0; t < x0.steps; ++t) {
      if (k == 0) {
        for (int c = 0; c < kCategories; ++c) out.at(i, t, c) = x0.at(i, t, c);
        continue;
      }
      const Row row = forward_marginal_row(x0.row(i, t), k, schedule);
      Rng rng(mix_seed(seed, detail::kPhaseForward, i, t, k));
      out.set_one_hot(i, t, detail::sample_categorical(row, rng.next_double()));
    }
  return out;
}

// Analytic posterior q(x_{k-1} = c | x_k, x_0) for one-hot x_k and x_0:
// proportional to Q_k[c, x_k] * Qbar_{k-1}[x_0, c].
inline Row posterior(int xk_index, int x0_index, int k,
                     const DiffusionSchedule& schedule) {
  if (k < 1 || k > schedule.steps)
    throw std::invalid_argument("posterior: k out of range");
  const Kernel q_k = transition_matrix(schedule.alpha[k]);
  const Kernel q_bar_prev = transition_matrix(schedule.alpha_bar[k - 1]);
  Row out;
  double normalizer = 0.0;
  for (int c = 0; c < kCategories; ++c) {
    out[c] = q_k[c][xk_index] * q_bar_prev[x0_index][c];
    normalizer += out[c];
  }
  if (normalizer <= 0.0) throw std::runtime_error("posterior: zero normalizer");
  for (int c = 0; c < kCategories; ++c) out[c] /= normalizer;
  return out;
}

inline Row posterior_row(const double* xk_row, const double* x0_row, int k,
                         const DiffusionSchedule& schedule) {
  return posterior(detail::one_hot_index(xk_row), detail::one_hot_index(x0_row),
                   k, schedule);
}

// Reverse mixture p(x_{k-1} | x_k) = sum_c x0_probs[c] * posterior(x_k, c, k).
// Candidates whose posterior is undefined (q(x_k | x0 = c) = 0, possible only
// under degenerate alpha = 1 schedules) carry no evidence and are skipped; the
// remaining mass is renormalized.
inline Row reverse_distribution_row(const double* xk_row,
                                    const double* x0_probs, int k,
                                    const DiffusionSchedule& schedule) {
  if (k < 1 || k > schedule.steps)
    throw std::invalid_argument("reverse_distribution_row: k out of range");
  const int xk_index = detail::one_hot_index(xk_row);
  const Kernel q_k = transition_matrix(schedule.alpha[k]);
  const Kernel q_bar_prev = transition_matrix(schedule.alpha_bar[k - 1]);
  Row mixture{};
  double weight = 0.0;
  for (int c = 0; c < kCategories; ++c) {
    if (x0_probs[c] == 0.0) continue;
    Row joint;
    double normalizer = 0.0;
    for (int d = 0; d < kCategories; ++d) {
      joint[d] = q_bar_prev[c][d] * q_k[d][xk_index];
      normalizer += joint[d];
    }
    if (normalizer <= 0.0) continue;
    for (int d = 0; d < kCategories; ++d)
      mixture[d] += x0_probs[c] * joint[d] / normalizer;
    weight += x0_probs[c];
  }
  if (weight <= 0.0)
    throw std::runtime_error("reverse_distribution_row: no admissible clean state");
  for (int d = 0; d < kCategories; ++d) mixture[d] /= weight;
  return mixture;
}

inline JointActionTensor reverse_step(const JointActionTensor& xk,
                                      const JointActionTensor& x0_probs, int k,
                                      const DiffusionSchedule& schedule,
                                      std::uint64_t seed) {
  if (xk.agents != x0_probs.agents || xk.steps != x0_probs.steps)
    throw std::invalid_argument("reverse_step: shape mismatch");
  JointActionTensor out(xk.agents, xk.steps);
  for (int i = 0; i < xk.agents; ++i)
    for (int t = 0; t < xk.steps; ++t) {
      const Row mixture =
          reverse_distribution_row(xk.row(i, t), x0_probs.row(i, t), k, schedule);
      Rng rng(mix_seed(seed, detail::kPhaseReverse, i, t, k));
      out.set_one_hot(i, t,
                      detail::sample_categorical(mixture, rng.next_double()));
    }
  return out;
}

// Clean-state predictor: (x_k, k) -> probability tensor. The MAPF condition
// is bound when the predictor is constructed.
using Predictor = std::function<JointActionTensor(const JointActionTensor&, int)>;

// Full reverse pass: x_K uniform per row, then K predictor/reverse-step
// rounds. The draft is the row-wise argmax of the final clean-state
// prediction (ties resolve to the lowest action index).
inline JointActionTensor sample_draft(const Predictor& predictor, int agents,
                                      int steps,
                                      const DiffusionSchedule& schedule,
                                      std::uint64_t seed) {
  JointActionTensor x(agents, steps);
  for (int i = 0; i < agents; ++i)
    for (int t = 0; t < steps; ++t) {
      Rng rng(mix_seed(seed, detail::kPhaseInit, i, t));
      x.set_one_hot(i, t,
                    static_cast<int>(rng.next_below(kCategories)));
    }
  JointActionTensor prediction(agents, steps);
  for (int k = schedule.steps; k >= 1; --k) {
    prediction = predictor(x, k);
    if (!rows_normalized(prediction, 1e-6))
      throw std::runtime_error("sample_draft: predictor rows not normalized");
    if (k > 1) x = reverse_step(x, prediction, k, schedule, seed);
  }
  JointActionTensor draft(agents, steps);
  for (int i = 0; i < agents; ++i)
    for (int t = 0; t < steps; ++t)
      draft.set_one_hot(i, t, prediction.argmax_action(i, t));
  return draft;
}

// Token-level cross entropy against the clean tensor, with a probability
// floor so exact zeros stay finite.
inline double aux_loss(const JointActionTensor& x0,
                       const JointActionTensor& x0_probs) {
  if (x0.agents != x0_probs.agents || x0.steps != x0_probs.steps)
    throw std::invalid_argument("aux_loss: shape mismatch");
  constexpr double kFloor = 1e-12;
  double total = 0.0;
  for (int i = 0; i < x0.agents; ++i)
    for (int t = 0; t < x0.steps; ++t) {
      const int truth = detail::one_hot_index(x0.row(i, t));
      total += -std::log(std::max(kFloor, x0_probs.at(i, t, truth)));
    }
  return total / (static_cast<double>(x0.agents) * x0.steps);
}

// Posterior-matching KL: draw x_k ~ q(x_k | x_0), then average the row-wise
// KL(q(x_{k-1} | x_k, x_0) || p_theta(x_{k-1} | x_k)).
inline double kl_loss(const JointActionTensor& x0, int k,
                      const Predictor& predictor,
                      const DiffusionSchedule& schedule, std::uint64_t seed) {
  const JointActionTensor xk = forward_sample(x0, k, schedule, seed);
  const JointActionTensor prediction = predictor(xk, k);
  constexpr double kFloor = 1e-300;
  double total = 0.0;
  for (int i = 0; i < x0.agents; ++i)
    for (int t = 0; t < x0.steps; ++t) {
      const Row q = posterior_row(xk.row(i, t), x0.row(i, t), k, schedule);
      const Row p =
          reverse_distribution_row(xk.row(i, t), prediction.row(i, t), k, schedule);
      for (int c = 0; c < kCategories; ++c) {
        if (q[c] <= 0.0) continue;
        total += q[c] * (std::log(q[c]) - std::log(std::max(kFloor, p[c])));
      }
    }
  return total / (static_cast<double>(x0.agents) * x0.steps);
}

struct GenerativeLoss {
  double aux = 0.0;
  double kl = 0.0;
  double total = 0.0;  // aux + kKlWeight * kl
};

inline GenerativeLoss generative_loss(const JointActionTensor& x0, int k,
                                      const Predictor& predictor,
                                      const DiffusionSchedule& schedule,
                                      std::uint64_t seed) {
  GenerativeLoss loss;
  const JointActionTensor xk = forward_sample(x0, k, schedule, seed);
  loss.aux = aux_loss(x0, predictor(xk, k));
  loss.kl = kl_loss(x0, k, predictor, schedule, seed);
  loss.total = loss.aux + kKlWeight * loss.kl;
  return loss;
}

}  // namespace difflns::d3pm
