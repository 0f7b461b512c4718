#pragma once

// MAPF-conditioned clean-state predictor: the full forward pass of the
// conditional denoiser (condition encoding, FiLM-modulated map pyramid,
// inferred trajectories, diffusion-aware sparse social attention, windowed
// temporal attention with strided anchors, entropy-scaled environment
// sensing), plus a training-free greedy predictor used for end-to-end runs.
//
// Parameters are plain named tensors; there is no training here — weights are
// loaded, seeded, or hand-built by tests.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "difflns/action_tensor.hpp"
#include "difflns/d3pm.hpp"
#include "difflns/grid.hpp"
#include "difflns/instance_gen.hpp"
#include "difflns/rng.hpp"
#include "difflns/single_agent.hpp"

namespace difflns {

struct DenoiserDims {
  int hidden = 128;          // D
  int heads = 4;
  int blocks = 4;            // L
  int scales = 3;            // S
  int sample_points = 8;     // P
  int temporal_window = 32;  // W_t
  int anchor_stride = 16;    // S_t
  int env_channels = 32;     // conv backbone width, projected to D per scale
  int bias_hidden = 16;      // geometric-bias MLP width
  int ffn_multiplier = 4;
  int diffusion_steps = 100;  // K, drives the neighbor-ratio schedule

  int head_dim() const { return hidden / heads; }
  int ffn_hidden() const { return ffn_multiplier * hidden; }
};

inline constexpr double kGreedyBeta = 4.0;  // heuristic-predictor temperature

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct Linear {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const {
    return weight * x + bias;
  }
};

struct AttentionParams {
  Eigen::MatrixXd query;  // D x D, no bias
  Eigen::MatrixXd key;
  Eigen::MatrixXd value;
};

struct GeometricBias {  // 2 -> bias_hidden -> heads
  Linear hidden;
  Linear out;

  Eigen::VectorXd operator()(const Eigen::Vector2d& relative) const {
    return out(hidden(relative).array().tanh().matrix());
  }
};

struct EnvSenseParams {
  Eigen::MatrixXd offset;  // (2P) x D
  Eigen::MatrixXd weight;  // (S*P) x D
  Linear project;          // D -> D
};

struct BlockParams {
  Linear ada;  // D -> 2D, shared by the four AdaLN applications of the block
  AttentionParams temporal;
  AttentionParams social;
  GeometricBias bias;
  EnvSenseParams env;
  Linear ffn_in;
  Linear ffn_out;
};

struct ConvLayer {
  Eigen::MatrixXd weight;  // out x (in * 9), 3x3 kernels
  Eigen::VectorXd bias;
};

struct PyramidParams {
  ConvLayer stem;              // 3 -> E
  ConvLayer down1;             // E -> E, stride 2
  ConvLayer down2;             // E -> E, stride 2
  Eigen::MatrixXd up;          // E x E, 1x1 on the upsampled path
  Linear film0, film1, film2;  // D -> 2E FiLM generators per stage
  Linear project0, project1, project2;  // E -> D per scale
};

struct DenoiserParams {
  DenoiserDims dims;
  Linear action_embed;    // C -> D
  Linear start_embed;     // 2 -> D
  Linear goal_embed;      // 2 -> D
  Linear relative_embed;  // 2 -> D
  Linear step_embed;      // D -> D, applied to the sinusoidal PE of k
  Linear size_embed;      // 2 -> D, applied to log map size
  Linear density_embed;   // 1 -> D
  Linear global_fuse;     // 2D -> D
  Linear agent_fuse;      // 4D -> D
  Linear scale_gate;      // D -> S
  PyramidParams pyramid;
  std::vector<BlockParams> blocks;
  Eigen::MatrixXd base_radius;  // 1x1, the learned sensing radius r0
  Linear head;                  // D -> C
};

namespace detail {

// Visits every tensor with a stable name, in a fixed order. The same walk
// backs initialization, serialization and validation.
template <typename Fn>
void visit_tensors(DenoiserParams& params, Fn&& fn) {
  const auto linear = [&](const std::string& name, Linear& l) {
    fn(name + ".weight", l.weight);
    fn(name + ".bias", l.bias);
  };
  const auto attention = [&](const std::string& name, AttentionParams& a) {
    fn(name + ".query", a.query);
    fn(name + ".key", a.key);
    fn(name + ".value", a.value);
  };
  const auto conv = [&](const std::string& name, ConvLayer& c) {
    fn(name + ".weight", c.weight);
    fn(name + ".bias", c.bias);
  };
  linear("action_embed", params.action_embed);
  linear("start_embed", params.start_embed);
  linear("goal_embed", params.goal_embed);
  linear("relative_embed", params.relative_embed);
  linear("step_embed", params.step_embed);
  linear("size_embed", params.size_embed);
  linear("density_embed", params.density_embed);
  linear("global_fuse", params.global_fuse);
  linear("agent_fuse", params.agent_fuse);
  linear("scale_gate", params.scale_gate);
  conv("pyramid.stem", params.pyramid.stem);
  conv("pyramid.down1", params.pyramid.down1);
  conv("pyramid.down2", params.pyramid.down2);
  fn("pyramid.up", params.pyramid.up);
  linear("pyramid.film0", params.pyramid.film0);
  linear("pyramid.film1", params.pyramid.film1);
  linear("pyramid.film2", params.pyramid.film2);
  linear("pyramid.project0", params.pyramid.project0);
  linear("pyramid.project1", params.pyramid.project1);
  linear("pyramid.project2", params.pyramid.project2);
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b);
    BlockParams& block = params.blocks[b];
    linear(prefix + ".ada", block.ada);
    attention(prefix + ".temporal", block.temporal);
    attention(prefix + ".social", block.social);
    linear(prefix + ".bias.hidden", block.bias.hidden);
    linear(prefix + ".bias.out", block.bias.out);
    fn(prefix + ".env.offset", block.env.offset);
    fn(prefix + ".env.weight", block.env.weight);
    linear(prefix + ".env.project", block.env.project);
    linear(prefix + ".ffn_in", block.ffn_in);
    linear(prefix + ".ffn_out", block.ffn_out);
  }
  fn("base_radius", params.base_radius);
  linear("head", params.head);
}

template <typename Fn>
void visit_tensors(const DenoiserParams& params, Fn&& fn) {
  visit_tensors(const_cast<DenoiserParams&>(params),
                [&](const std::string& name, auto& tensor) {
                  fn(name, const_cast<const std::decay_t<decltype(tensor)>&>(tensor));
                });
}

inline void shape_params(DenoiserParams& params) {
  const DenoiserDims& d = params.dims;
  if (d.hidden % d.heads != 0)
    throw std::invalid_argument("denoiser: hidden must divide into heads");
  const auto linear = [](Linear& l, int out, int in) {
    l.weight.setZero(out, in);
    l.bias.setZero(out);
  };
  linear(params.action_embed, d.hidden, kNumActions);
  linear(params.start_embed, d.hidden, 2);
  linear(params.goal_embed, d.hidden, 2);
  linear(params.relative_embed, d.hidden, 2);
  linear(params.step_embed, d.hidden, d.hidden);
  linear(params.size_embed, d.hidden, 2);
  linear(params.density_embed, d.hidden, 1);
  linear(params.global_fuse, d.hidden, 2 * d.hidden);
  linear(params.agent_fuse, d.hidden, 4 * d.hidden);
  linear(params.scale_gate, d.scales, d.hidden);
  const int e = d.env_channels;
  params.pyramid.stem.weight.setZero(e, 3 * 9);
  params.pyramid.stem.bias.setZero(e);
  params.pyramid.down1.weight.setZero(e, e * 9);
  params.pyramid.down1.bias.setZero(e);
  params.pyramid.down2.weight.setZero(e, e * 9);
  params.pyramid.down2.bias.setZero(e);
  params.pyramid.up.setZero(e, e);
  linear(params.pyramid.film0, 2 * e, d.hidden);
  linear(params.pyramid.film1, 2 * e, d.hidden);
  linear(params.pyramid.film2, 2 * e, d.hidden);
  linear(params.pyramid.project0, d.hidden, e);
  linear(params.pyramid.project1, d.hidden, e);
  linear(params.pyramid.project2, d.hidden, e);
  params.blocks.resize(d.blocks);
  for (BlockParams& block : params.blocks) {
    linear(block.ada, 2 * d.hidden, d.hidden);
    for (auto* attn : {&block.temporal, &block.social}) {
      attn->query.setZero(d.hidden, d.hidden);
      attn->key.setZero(d.hidden, d.hidden);
      attn->value.setZero(d.hidden, d.hidden);
    }
    linear(block.bias.hidden, d.bias_hidden, 2);
    linear(block.bias.out, d.heads, d.bias_hidden);
    block.env.offset.setZero(2 * d.sample_points, d.hidden);
    block.env.weight.setZero(d.scales * d.sample_points, d.hidden);
    linear(block.env.project, d.hidden, d.hidden);
    linear(block.ffn_in, d.ffn_hidden(), d.hidden);
    linear(block.ffn_out, d.hidden, d.ffn_hidden());
  }
  params.base_radius.setZero(1, 1);
  linear(params.head, kNumActions, d.hidden);
}

}  // namespace detail

inline bool params_finite(const DenoiserParams& params) {
  bool finite = true;
  detail::visit_tensors(params, [&](const std::string&, const auto& tensor) {
    if (!tensor.allFinite()) finite = false;
  });
  return finite;
}

// Deterministic scaled-Gaussian initialization: weight tensors use a
// 1/sqrt(fan_in) scale, vectors a small one; the sensing radius starts as a
// small positive prior.
inline DenoiserParams init_params(std::uint64_t seed,
                                  const DenoiserDims& dims = {}) {
  DenoiserParams params;
  params.dims = dims;
  detail::shape_params(params);
  Rng rng(mix_seed(seed, 0x64656eu));
  detail::visit_tensors(params, [&](const std::string&, auto& tensor) {
    const double scale = tensor.cols() > 1 ? 1.0 / std::sqrt(double(tensor.cols()))
                                           : 0.02;
    for (Eigen::Index i = 0; i < tensor.rows(); ++i)
      for (Eigen::Index j = 0; j < tensor.cols(); ++j)
        tensor(i, j) = scale * rng.normal();
  });
  params.base_radius(0, 0) = 0.15 + 0.05 * std::abs(rng.normal());
  return params;
}

// ---------------------------------------------------------------------------
// Condition
// ---------------------------------------------------------------------------

inline double normalized_coord(int value, int extent) {
  return extent > 1 ? 2.0 * value / (extent - 1) - 1.0 : 0.0;
}

struct Condition {
  int height = 0;
  int width = 0;
  Eigen::Vector2d map_size;  // (W, H)
  double density = 0.0;      // rho = log(1 + N / |V_free|)
  std::vector<Eigen::Vector2d> starts;  // normalized (row, col)
  std::vector<Eigen::Vector2d> goals;
  std::array<Eigen::MatrixXd, 3> raster;  // obstacle, free, goal channels
};

inline Condition make_condition(const Instance& instance) {
  Condition cond;
  const GridMap& map = instance.map;
  cond.height = map.height();
  cond.width = map.width();
  cond.map_size = Eigen::Vector2d(map.width(), map.height());
  cond.density = density_feature(instance);
  for (auto& channel : cond.raster)
    channel.setZero(map.height(), map.width());
  for (int r = 0; r < map.height(); ++r)
    for (int c = 0; c < map.width(); ++c)
      cond.raster[map.obstacle(Cell{r, c}) ? 0 : 1](r, c) = 1.0;
  for (int i = 0; i < instance.agent_count(); ++i) {
    cond.starts.emplace_back(
        normalized_coord(instance.starts[i].row, map.height()),
        normalized_coord(instance.starts[i].col, map.width()));
    cond.goals.emplace_back(
        normalized_coord(instance.goals[i].row, map.height()),
        normalized_coord(instance.goals[i].col, map.width()));
    cond.raster[2](instance.goals[i].row, instance.goals[i].col) = 1.0;
  }
  return cond;
}

inline Eigen::VectorXd sinusoidal_embedding(int k, int dim) {
  Eigen::VectorXd pe(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::exp(-std::log(10000.0) * (2.0 * i / dim));
    pe[2 * i] = std::sin(k * freq);
    pe[2 * i + 1] = std::cos(k * freq);
  }
  if (dim % 2 == 1) pe[dim - 1] = 0.0;
  return pe;
}

struct EncodedCondition {
  Eigen::VectorXd global;                 // c_g
  std::vector<Eigen::VectorXd> agent;     // c_i
  Eigen::VectorXd scale_gate;             // eta, softmax over scales
};

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double peak = logits.maxCoeff();
  Eigen::VectorXd out = (logits.array() - peak).exp();
  return out / out.sum();
}

inline EncodedCondition encode_condition(const Condition& cond, int k,
                                         const DenoiserParams& params) {
  EncodedCondition enc;
  const Eigen::VectorXd step = params.step_embed(
      sinusoidal_embedding(k, params.dims.hidden));
  const Eigen::VectorXd size = params.size_embed(
      cond.map_size.array().log().matrix());
  const Eigen::VectorXd density =
      params.density_embed(Eigen::VectorXd::Constant(1, cond.density));
  Eigen::VectorXd fused(2 * params.dims.hidden);
  fused << step, (size + density);
  enc.global = params.global_fuse(fused);
  enc.scale_gate = softmax(params.scale_gate(enc.global));
  enc.agent.reserve(cond.starts.size());
  for (std::size_t i = 0; i < cond.starts.size(); ++i) {
    Eigen::VectorXd joined(4 * params.dims.hidden);
    joined << enc.global, params.start_embed(cond.starts[i]),
        params.goal_embed(cond.goals[i]),
        params.relative_embed(cond.goals[i] - cond.starts[i]);
    enc.agent.push_back(params.agent_fuse(joined));
  }
  return enc;
}

// ---------------------------------------------------------------------------
// Inferred trajectories, entropy, social graph
// ---------------------------------------------------------------------------

// Soft positions in normalized coordinates: the start plus the prefix sum of
// expected displacements, each rescaled by (2/(H-1), 2/(W-1)).
inline std::vector<std::vector<Eigen::Vector2d>> inferred_trajectory(
    const JointActionTensor& x, const Condition& cond) {
  std::vector<std::vector<Eigen::Vector2d>> positions(x.agents);
  const double row_scale = cond.height > 1 ? 2.0 / (cond.height - 1) : 0.0;
  const double col_scale = cond.width > 1 ? 2.0 / (cond.width - 1) : 0.0;
  for (int i = 0; i < x.agents; ++i) {
    Eigen::Vector2d pos = cond.starts[i];
    positions[i].reserve(x.steps);
    for (int t = 0; t < x.steps; ++t) {
      const double* row = x.row(i, t);
      double drow = 0.0, dcol = 0.0;
      for (int a = 0; a < kNumActions; ++a) {
        drow += row[a] * kActionDelta[a][0];
        dcol += row[a] * kActionDelta[a][1];
      }
      pos += Eigen::Vector2d(drow * row_scale, dcol * col_scale);
      positions[i].push_back(pos);
    }
  }
  return positions;
}

// Normalized action-distribution entropy, in [0, 1]; 0 log 0 counts as 0.
inline Eigen::MatrixXd action_entropy(const JointActionTensor& x) {
  Eigen::MatrixXd entropy(x.agents, x.steps);
  const double log_c = std::log(double(kNumActions));
  for (int i = 0; i < x.agents; ++i)
    for (int t = 0; t < x.steps; ++t) {
      double h = 0.0;
      for (int a = 0; a < kNumActions; ++a) {
        const double p = x.at(i, t, a);
        if (p > 0.0) h -= p * std::log(p);
      }
      entropy(i, t) = h / log_c;
    }
  return entropy;
}

// Step-dependent sparse neighborhoods: self plus the top-M_k nearest agents
// by minimum inferred-trajectory L1 distance, with the non-self ratio
// scheduled from 0.10 (k = 0) to 0.25 (k = K). Distance ties break toward
// the lower agent index.
inline std::vector<std::vector<int>> build_social_graph(
    const std::vector<std::vector<Eigen::Vector2d>>& positions, int k,
    int diffusion_steps, int agents) {
  std::vector<std::vector<int>> neighborhoods(agents);
  if (agents == 1) {
    neighborhoods[0] = {0};
    return neighborhoods;
  }
  const double ratio =
      0.10 + 0.15 * (static_cast<double>(k) / diffusion_steps);
  const int want = static_cast<int>(std::lround(ratio * agents));
  const int m = std::min(std::max(want, 1), agents - 1);

  Eigen::MatrixXd distance(agents, agents);
  const int steps = static_cast<int>(positions[0].size());
  for (int i = 0; i < agents; ++i) {
    distance(i, i) = 0.0;
    for (int j = i + 1; j < agents; ++j) {
      double best = std::numeric_limits<double>::infinity();
      for (int t = 0; t < steps; ++t) {
        const double d = (positions[i][t] - positions[j][t]).lpNorm<1>();
        if (d < best) best = d;
      }
      distance(i, j) = distance(j, i) = best;
    }
  }
  for (int i = 0; i < agents; ++i) {
    std::vector<int> order;
    order.reserve(agents - 1);
    for (int j = 0; j < agents; ++j)
      if (j != i) order.push_back(j);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (distance(i, a) != distance(i, b))
        return distance(i, a) < distance(i, b);
      return a < b;
    });
    neighborhoods[i].push_back(i);
    neighborhoods[i].insert(neighborhoods[i].end(), order.begin(),
                            order.begin() + m);
  }
  return neighborhoods;
}

// ---------------------------------------------------------------------------
// Attention and sensing modules. Each returns the residual update; callers
// add it to the token stream.
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::VectorXd layer_norm(const Eigen::VectorXd& x) {
  const double mean = x.mean();
  const double variance = (x.array() - mean).square().mean();
  return ((x.array() - mean) / std::sqrt(variance + 1e-6)).matrix();
}

inline Eigen::MatrixXd ada_layer_norm(const Eigen::MatrixXd& tokens, int agents,
                                      int steps, const Linear& ada,
                                      const std::vector<Eigen::VectorXd>& cond) {
  const int hidden = static_cast<int>(tokens.cols());
  Eigen::MatrixXd out(tokens.rows(), hidden);
  for (int i = 0; i < agents; ++i) {
    const Eigen::VectorXd gamma_beta = ada(cond[i]);
    const auto gamma = gamma_beta.head(hidden).array();
    const auto beta = gamma_beta.tail(hidden).array();
    for (int t = 0; t < steps; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * steps + t;
      const Eigen::VectorXd normed = layer_norm(tokens.row(row).transpose());
      out.row(row) = ((1.0 + gamma) * normed.array() + beta).matrix().transpose();
    }
  }
  return out;
}

}  // namespace detail

// Per-agent attention along the time axis. Each query attends over its
// blocked local window of size W_t together with the strided anchor tokens as
// extra keys/values under one softmax; with T <= W_t this is exactly full
// self-attention.
inline Eigen::MatrixXd temporal_attention(const Eigen::MatrixXd& tokens,
                                          int agents, int steps,
                                          const AttentionParams& attn,
                                          const DenoiserDims& dims) {
  const int head_dim = dims.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(double(head_dim));
  Eigen::MatrixXd out(tokens.rows(), dims.hidden);
  std::vector<int> keys;
  for (int i = 0; i < agents; ++i) {
    const auto block = tokens.middleRows(static_cast<Eigen::Index>(i) * steps,
                                         steps);
    const Eigen::MatrixXd q = block * attn.query.transpose();
    const Eigen::MatrixXd k = block * attn.key.transpose();
    const Eigen::MatrixXd v = block * attn.value.transpose();
    for (int t = 0; t < steps; ++t) {
      keys.clear();
      const int window_start = (t / dims.temporal_window) * dims.temporal_window;
      const int window_end = std::min(window_start + dims.temporal_window, steps);
      for (int u = window_start; u < window_end; ++u) keys.push_back(u);
      for (int u = 0; u < steps; u += dims.anchor_stride)
        if (u < window_start || u >= window_end) keys.push_back(u);
      Eigen::VectorXd result(dims.hidden);
      for (int h = 0; h < dims.heads; ++h) {
        const int lo = h * head_dim;
        Eigen::VectorXd logits(keys.size());
        for (std::size_t n = 0; n < keys.size(); ++n)
          logits[n] = q.row(t).segment(lo, head_dim)
                          .dot(k.row(keys[n]).segment(lo, head_dim)) *
                      inv_sqrt;
        const Eigen::VectorXd weights = softmax(logits);
        Eigen::VectorXd mixed = Eigen::VectorXd::Zero(head_dim);
        for (std::size_t n = 0; n < keys.size(); ++n)
          mixed += weights[n] * v.row(keys[n]).segment(lo, head_dim).transpose();
        result.segment(lo, head_dim) = mixed;
      }
      out.row(static_cast<Eigen::Index>(i) * steps + t) = result.transpose();
    }
  }
  return out;
}

// Sparse social attention at each timestep: queries attend only over their
// dynamic neighborhood, with a learned geometric bias on relative inferred
// positions added to the logits.
inline Eigen::MatrixXd sparse_social_attention(
    const Eigen::MatrixXd& tokens, int agents, int steps,
    const std::vector<std::vector<Eigen::Vector2d>>& positions,
    const std::vector<std::vector<int>>& neighborhoods,
    const AttentionParams& attn, const GeometricBias& bias,
    const DenoiserDims& dims) {
  const int head_dim = dims.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(double(head_dim));
  Eigen::MatrixXd out(tokens.rows(), dims.hidden);
  Eigen::MatrixXd q(agents, dims.hidden), k(agents, dims.hidden),
      v(agents, dims.hidden);
  for (int t = 0; t < steps; ++t) {
    for (int i = 0; i < agents; ++i) {
      const auto token =
          tokens.row(static_cast<Eigen::Index>(i) * steps + t).transpose();
      q.row(i) = (attn.query * token).transpose();
      k.row(i) = (attn.key * token).transpose();
      v.row(i) = (attn.value * token).transpose();
    }
    for (int i = 0; i < agents; ++i) {
      const auto& members = neighborhoods[i];
      Eigen::MatrixXd biases(dims.heads, members.size());
      for (std::size_t n = 0; n < members.size(); ++n)
        biases.col(n) = bias(positions[i][t] - positions[members[n]][t]);
      Eigen::VectorXd result(dims.hidden);
      for (int h = 0; h < dims.heads; ++h) {
        const int lo = h * head_dim;
        Eigen::VectorXd logits(members.size());
        for (std::size_t n = 0; n < members.size(); ++n)
          logits[n] = q.row(i).segment(lo, head_dim)
                          .dot(k.row(members[n]).segment(lo, head_dim)) *
                          inv_sqrt +
                      biases(h, n);
        const Eigen::VectorXd weights = softmax(logits);
        Eigen::VectorXd mixed = Eigen::VectorXd::Zero(head_dim);
        for (std::size_t n = 0; n < members.size(); ++n)
          mixed +=
              weights[n] * v.row(members[n]).segment(lo, head_dim).transpose();
        result.segment(lo, head_dim) = mixed;
      }
      out.row(static_cast<Eigen::Index>(i) * steps + t) = result.transpose();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Environment pyramid and sensing
// ---------------------------------------------------------------------------

struct FeaturePyramid {
  struct Level {
    int height = 0;
    int width = 0;
    Eigen::MatrixXd features;  // (height * width) x D, row-major pixels
  };
  std::vector<Level> levels;  // finest first
};

namespace detail {

// 3x3 convolution with zero padding; features are (pixels x channels).
inline Eigen::MatrixXd conv3x3(const Eigen::MatrixXd& input, int height,
                               int width, const ConvLayer& layer, int stride,
                               int* out_height, int* out_width) {
  const int in_channels = static_cast<int>(input.cols());
  const int out_channels = static_cast<int>(layer.weight.rows());
  const int oh = (height + stride - 1) / stride;
  const int ow = (width + stride - 1) / stride;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(oh) * ow, out_channels);
  Eigen::VectorXd patch(in_channels * 9);
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      patch.setZero();
      const int cr = r * stride, cc = c * stride;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int sr = cr + dr, sc = cc + dc;
          if (sr < 0 || sr >= height || sc < 0 || sc >= width) continue;
          const int tap = (dr + 1) * 3 + (dc + 1);
          for (int ch = 0; ch < in_channels; ++ch)
            patch[ch * 9 + tap] = input(static_cast<Eigen::Index>(sr) * width + sc, ch);
        }
      out.row(static_cast<Eigen::Index>(r) * ow + c) =
          (layer.weight * patch + layer.bias).transpose();
    }
  }
  *out_height = oh;
  *out_width = ow;
  return out;
}

inline void film_relu_inplace(Eigen::MatrixXd& features, const Linear& film,
                              const Eigen::VectorXd& global_cond) {
  features = features.cwiseMax(0.0);
  const Eigen::VectorXd gamma_beta = film(global_cond);
  const int channels = static_cast<int>(features.cols());
  const auto gamma = gamma_beta.head(channels).transpose().array();
  const auto beta = gamma_beta.tail(channels).transpose().array();
  features = ((features.array().rowwise() * (1.0 + gamma)).rowwise() + beta)
                 .matrix();
}

}  // namespace detail

// Three scales from two strided downsampling stages; one nearest-neighbor
// upsampling stage feeds scale 1. Every conv stage is FiLM-modulated by the
// global condition, then each scale is projected to the hidden dimension.
inline FeaturePyramid build_env_pyramid(const Condition& cond,
                                        const Eigen::VectorXd& global_cond,
                                        const DenoiserParams& params) {
  const int height = cond.height, width = cond.width;
  Eigen::MatrixXd raster(static_cast<Eigen::Index>(height) * width, 3);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c)
        raster(static_cast<Eigen::Index>(r) * width + c, ch) =
            cond.raster[ch](r, c);

  const PyramidParams& py = params.pyramid;
  int h0, w0, h1, w1, h2, w2;
  Eigen::MatrixXd a0 =
      detail::conv3x3(raster, height, width, py.stem, 1, &h0, &w0);
  detail::film_relu_inplace(a0, py.film0, global_cond);
  Eigen::MatrixXd a1 = detail::conv3x3(a0, h0, w0, py.down1, 2, &h1, &w1);
  detail::film_relu_inplace(a1, py.film1, global_cond);
  Eigen::MatrixXd a2 = detail::conv3x3(a1, h1, w1, py.down2, 2, &h2, &w2);
  detail::film_relu_inplace(a2, py.film2, global_cond);

  // Partial upsampling path into the finest scale.
  for (int r = 0; r < h0; ++r)
    for (int c = 0; c < w0; ++c) {
      const int sr = std::min(r / 2, h1 - 1);
      const int sc = std::min(c / 2, w1 - 1);
      a0.row(static_cast<Eigen::Index>(r) * w0 + c) +=
          (py.up * a1.row(static_cast<Eigen::Index>(sr) * w1 + sc).transpose())
              .transpose();
    }

  FeaturePyramid pyramid;
  const auto project = [](const Eigen::MatrixXd& features, const Linear& proj,
                          int h, int w) {
    FeaturePyramid::Level level;
    level.height = h;
    level.width = w;
    level.features = (features * proj.weight.transpose()).rowwise() +
                     proj.bias.transpose();
    return level;
  };
  pyramid.levels.push_back(project(a0, py.project0, h0, w0));
  pyramid.levels.push_back(project(a1, py.project1, h1, w1));
  pyramid.levels.push_back(project(a2, py.project2, h2, w2));
  return pyramid;
}

namespace detail {

// Bilinear sample at a normalized [-1, 1]^2 location; out-of-bounds clamps
// to the border.
inline Eigen::VectorXd bilinear_sample(const FeaturePyramid::Level& level,
                                       const Eigen::Vector2d& at) {
  const auto to_pixel = [](double v, int extent) {
    if (extent <= 1) return 0.0;
    const double p = (v + 1.0) * 0.5 * (extent - 1);
    return std::min(std::max(p, 0.0), double(extent - 1));
  };
  const double pr = to_pixel(at[0], level.height);
  const double pc = to_pixel(at[1], level.width);
  const int r0 = static_cast<int>(std::floor(pr));
  const int c0 = static_cast<int>(std::floor(pc));
  const int r1 = std::min(r0 + 1, level.height - 1);
  const int c1 = std::min(c0 + 1, level.width - 1);
  const double fr = pr - r0;
  const double fc = pc - c0;
  const auto row = [&](int r, int c) {
    return level.features.row(static_cast<Eigen::Index>(r) * level.width + c);
  };
  return ((1 - fr) * (1 - fc) * row(r0, c0) + (1 - fr) * fc * row(r0, c1) +
          fr * (1 - fc) * row(r1, c0) + fr * fc * row(r1, c1))
      .transpose();
}

}  // namespace detail

// Deformable environment sensing: P offset points around the inferred
// position, expanded by the action-distribution entropy, sampled from each
// pyramid scale, combined under the (scale, point) softmax and the scale
// gate, then projected back to the hidden dimension.
inline Eigen::MatrixXd env_sense(const Eigen::MatrixXd& tokens, int agents,
                                 int steps,
                                 const std::vector<std::vector<Eigen::Vector2d>>& positions,
                                 const Eigen::MatrixXd& entropy,
                                 const FeaturePyramid& pyramid,
                                 const Eigen::VectorXd& scale_gate,
                                 const EnvSenseParams& env, double base_radius,
                                 const DenoiserDims& dims) {
  Eigen::MatrixXd out(tokens.rows(), dims.hidden);
  const int points = dims.sample_points;
  const int scales = dims.scales;
  for (int i = 0; i < agents; ++i)
    for (int t = 0; t < steps; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * steps + t;
      const Eigen::VectorXd token = tokens.row(row).transpose();
      const Eigen::VectorXd offsets = (env.offset * token).array().tanh();
      const Eigen::VectorXd weights = softmax(env.weight * token);
      const double radius = base_radius * (1.0 + 0.2 * entropy(i, t));
      Eigen::VectorXd context = Eigen::VectorXd::Zero(dims.hidden);
      for (int p = 0; p < points; ++p) {
        const Eigen::Vector2d at =
            positions[i][t] + radius * offsets.segment<2>(2 * p);
        for (int s = 0; s < scales; ++s)
          context += weights[s * points + p] * scale_gate[s] *
                     detail::bilinear_sample(pyramid.levels[s], at);
      }
      out.row(row) = env.project(context).transpose();
    }
  return out;
}

// ---------------------------------------------------------------------------
// Full forward pass
// ---------------------------------------------------------------------------

namespace detail {

inline Eigen::VectorXd gelu(const Eigen::VectorXd& x) {
  Eigen::VectorXd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] / 1.4142135623730951));
  return out;
}

}  // namespace detail

inline JointActionTensor denoiser_forward(const JointActionTensor& x_k,
                                          const Instance& instance, int k,
                                          const DenoiserParams& params) {
  const DenoiserDims& dims = params.dims;
  if (x_k.agents != instance.agent_count())
    throw std::invalid_argument("denoiser_forward: agent count mismatch");
  if (k < 1 || k > dims.diffusion_steps)
    throw std::invalid_argument("denoiser_forward: k out of range");
  if (!params_finite(params))
    throw std::invalid_argument("denoiser_forward: non-finite parameter");

  const int agents = x_k.agents;
  const int steps = x_k.steps;
  const Condition cond = make_condition(instance);
  const EncodedCondition enc = encode_condition(cond, k, params);
  const FeaturePyramid pyramid = build_env_pyramid(cond, enc.global, params);
  const auto positions = inferred_trajectory(x_k, cond);
  const Eigen::MatrixXd entropy = action_entropy(x_k);
  const auto neighborhoods =
      build_social_graph(positions, k, dims.diffusion_steps, agents);

  // Initial tokens: embedded noisy action plus start/goal/relative-goal.
  Eigen::MatrixXd tokens(static_cast<Eigen::Index>(agents) * steps, dims.hidden);
  for (int i = 0; i < agents; ++i) {
    const Eigen::VectorXd agent_part =
        params.start_embed(cond.starts[i]) + params.goal_embed(cond.goals[i]) +
        params.relative_embed(cond.goals[i] - cond.starts[i]);
    for (int t = 0; t < steps; ++t) {
      Eigen::VectorXd action(kNumActions);
      for (int a = 0; a < kNumActions; ++a) action[a] = x_k.at(i, t, a);
      tokens.row(static_cast<Eigen::Index>(i) * steps + t) =
          (params.action_embed(action) + agent_part).transpose();
    }
  }

  const double base_radius = params.base_radius(0, 0);
  for (const BlockParams& block : params.blocks) {
    tokens += temporal_attention(
        detail::ada_layer_norm(tokens, agents, steps, block.ada, enc.agent),
        agents, steps, block.temporal, dims);
    tokens += sparse_social_attention(
        detail::ada_layer_norm(tokens, agents, steps, block.ada, enc.agent),
        agents, steps, positions, neighborhoods, block.social, block.bias,
        dims);
    tokens += env_sense(
        detail::ada_layer_norm(tokens, agents, steps, block.ada, enc.agent),
        agents, steps, positions, entropy, pyramid, enc.scale_gate, block.env,
        base_radius, dims);
    const Eigen::MatrixXd pre_ffn =
        detail::ada_layer_norm(tokens, agents, steps, block.ada, enc.agent);
    for (Eigen::Index row = 0; row < tokens.rows(); ++row)
      tokens.row(row) += block.ffn_out(detail::gelu(
                              block.ffn_in(pre_ffn.row(row).transpose())))
                             .transpose();
  }

  JointActionTensor probs(agents, steps);
  for (int i = 0; i < agents; ++i)
    for (int t = 0; t < steps; ++t) {
      const Eigen::VectorXd logits = params.head(detail::layer_norm(
          tokens.row(static_cast<Eigen::Index>(i) * steps + t).transpose()));
      const Eigen::VectorXd row = softmax(logits);
      for (int a = 0; a < kNumActions; ++a) probs.at(i, t, a) = row[a];
    }
  if (!rows_normalized(probs, 1e-6))
    throw std::runtime_error("denoiser_forward: non-finite output");
  return probs;
}

// ---------------------------------------------------------------------------
// Heuristic predictor (training-free oracle)
// ---------------------------------------------------------------------------

// Greedy rollout toward the goal: at each visited position, the emitted row
// is the softmax of -beta * goal distance over the valid next cells (invalid
// actions carry zero mass), and the rollout advances along the row argmax.
// Agents at their goal emit one-hot stay.
inline JointActionTensor heuristic_predictor(
    const JointActionTensor& x_k, const Instance& instance,
    const std::vector<DistanceField>& goal_fields) {
  JointActionTensor probs(x_k.agents, x_k.steps);
  for (int i = 0; i < x_k.agents; ++i) {
    const DistanceField& field = goal_fields[i];
    if (!field.reachable(instance.starts[i]))
      throw std::runtime_error("heuristic_predictor: unreachable goal");
    Cell pos = instance.starts[i];
    for (int t = 0; t < x_k.steps; ++t) {
      if (pos == instance.goals[i]) {
        probs.set_one_hot(i, t, static_cast<int>(Action::kStay));
        continue;
      }
      std::array<double, kNumActions> weight{};
      double total = 0.0;
      for (int a = 0; a < kNumActions; ++a) {
        const auto next = apply_action(pos, static_cast<Action>(a), instance.map);
        if (!next || !field.reachable(*next)) continue;
        weight[a] = std::exp(-kGreedyBeta * field.at(*next));
        total += weight[a];
      }
      for (int a = 0; a < kNumActions; ++a)
        probs.at(i, t, a) = weight[a] / total;
      pos = *apply_action(pos, static_cast<Action>(probs.argmax_action(i, t)),
                          instance.map);
    }
  }
  return probs;
}

inline d3pm::Predictor make_heuristic_predictor(const Instance& instance) {
  auto fields = std::make_shared<std::vector<DistanceField>>(
      goal_distance_fields(instance));
  return [&instance, fields](const JointActionTensor& x_k, int) {
    return heuristic_predictor(x_k, instance, *fields);
  };
}

inline d3pm::Predictor make_denoiser_predictor(
    const Instance& instance, std::shared_ptr<const DenoiserParams> params) {
  return [&instance, params](const JointActionTensor& x_k, int k) {
    return denoiser_forward(x_k, instance, k, *params);
  };
}

// ---------------------------------------------------------------------------
// Weight files: versioned header, JSON manifest (names, shapes, dtype, byte
// offsets), then a flat little-endian IEEE-754 payload. Round trips are
// bit-exact.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kWeightMagic[4] = {'D', 'L', 'N', 'W'};
inline constexpr std::uint32_t kWeightVersion = 1;

inline void write_u32(std::ostream& out, std::uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[i]) << (8 * i);
  return v;
}

inline void write_doubles(std::ostream& out, const double* data,
                          std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &data[i], 8);
    write_u64(out, bits);
  }
}

inline void read_doubles(std::istream& in, double* data, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t bits = read_u64(in);
    std::memcpy(&data[i], &bits, 8);
  }
}

}  // namespace detail

inline void save_params(const DenoiserParams& params, const std::string& path) {
  nlohmann::json manifest;
  manifest["dims"] = {{"hidden", params.dims.hidden},
                      {"heads", params.dims.heads},
                      {"blocks", params.dims.blocks},
                      {"scales", params.dims.scales},
                      {"sample_points", params.dims.sample_points},
                      {"temporal_window", params.dims.temporal_window},
                      {"anchor_stride", params.dims.anchor_stride},
                      {"env_channels", params.dims.env_channels},
                      {"bias_hidden", params.dims.bias_hidden},
                      {"ffn_multiplier", params.dims.ffn_multiplier},
                      {"diffusion_steps", params.dims.diffusion_steps}};
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  detail::visit_tensors(params, [&](const std::string& name, const auto& tensor) {
    const std::uint64_t count =
        static_cast<std::uint64_t>(tensor.rows()) * tensor.cols();
    manifest["tensors"].push_back({{"name", name},
                                   {"rows", tensor.rows()},
                                   {"cols", tensor.cols()},
                                   {"dtype", "f64"},
                                   {"offset", offset}});
    offset += count * 8;
  });
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_params: cannot write " + path);
  out.write(detail::kWeightMagic, 4);
  detail::write_u32(out, detail::kWeightVersion);
  const std::string manifest_text = manifest.dump();
  detail::write_u64(out, manifest_text.size());
  out.write(manifest_text.data(),
            static_cast<std::streamsize>(manifest_text.size()));
  detail::visit_tensors(params, [&](const std::string&, const auto& tensor) {
    detail::write_doubles(out, tensor.data(),
                          static_cast<std::size_t>(tensor.rows()) * tensor.cols());
  });
  if (!out) throw std::runtime_error("save_params: write failed for " + path);
}

inline DenoiserParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_params: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kWeightMagic, 4) != 0)
    throw std::runtime_error("load_params: bad magic in " + path);
  const std::uint32_t version = detail::read_u32(in);
  if (version != detail::kWeightVersion)
    throw std::runtime_error("load_params: unsupported version");
  const std::uint64_t manifest_len = detail::read_u64(in);
  std::string manifest_text(manifest_len, '\0');
  in.read(manifest_text.data(), static_cast<std::streamsize>(manifest_len));
  const nlohmann::json manifest = nlohmann::json::parse(manifest_text);

  DenoiserParams params;
  const auto& dims = manifest.at("dims");
  params.dims.hidden = dims.at("hidden");
  params.dims.heads = dims.at("heads");
  params.dims.blocks = dims.at("blocks");
  params.dims.scales = dims.at("scales");
  params.dims.sample_points = dims.at("sample_points");
  params.dims.temporal_window = dims.at("temporal_window");
  params.dims.anchor_stride = dims.at("anchor_stride");
  params.dims.env_channels = dims.at("env_channels");
  params.dims.bias_hidden = dims.at("bias_hidden");
  params.dims.ffn_multiplier = dims.at("ffn_multiplier");
  params.dims.diffusion_steps = dims.at("diffusion_steps");
  detail::shape_params(params);

  std::size_t cursor = 0;
  const auto& tensors = manifest.at("tensors");
  detail::visit_tensors(params, [&](const std::string& name, auto& tensor) {
    const auto& entry = tensors.at(cursor++);
    if (entry.at("name") != name ||
        entry.at("rows") != tensor.rows() || entry.at("cols") != tensor.cols())
      throw std::runtime_error("load_params: manifest mismatch at " + name);
    detail::read_doubles(in, tensor.data(),
                         static_cast<std::size_t>(tensor.rows()) * tensor.cols());
  });
  if (!in) throw std::runtime_error("load_params: truncated payload");
  if (!params_finite(params))
    throw std::runtime_error("load_params: non-finite parameter");
  return params;
}

}  // namespace difflns
