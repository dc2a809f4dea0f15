// Copyright 2026 The FGAI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ostream>
#include <vector>

#include "fgai/dataset_io.hpp"
#include "fgai/gat.hpp"
#include "fgai/topk.hpp"
#include "fgai/train.hpp"

namespace fgai {

enum class OuterOptimizer { kAdam, kSgd };

/// Hyperparameters of the minimax fine-tuning loop.
struct FgaiConfig {
  double lambda1 = 0.8;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  std::size_t K = 0;       // top-k size; 0 = half the attention vector length
  double R = 0.0;          // l1 radius; 0 = 0.05 * |E'| / avg degree
  std::size_t T = 100;     // outer steps
  std::size_t P = 5;       // delta ascent steps
  std::size_t Q = 5;       // rho ascent steps
  double eta = 0.01;       // outer learning rate
  double gamma = 0.1;      // delta step, in units of R
  double tau = 0.1;        // rho step, in units of R
  double init_fraction = 0.5;  // random-start radius of the inner loops, fraction of R
  OuterOptimizer optimizer = OuterOptimizer::kAdam;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (T < 1 || P < 1 || Q < 1) throw StructuralError("FgaiConfig: T, P, Q must be >= 1");
    if (R < 0.0) throw StructuralError("FgaiConfig: R must be > 0 (0 selects the default)");
    if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0)
      throw StructuralError("FgaiConfig: lambdas must be >= 0");
    if (eta < 0.0 || gamma < 0.0 || tau < 0.0)
      throw StructuralError("FgaiConfig: step sizes must be >= 0");
    if (init_fraction < 0.0 || init_fraction > 1.0)
      throw StructuralError("FgaiConfig: init_fraction must be in [0, 1]");
  }

  std::size_t resolve_k(std::size_t length) const {
    if (K) return K;
    return std::max<std::size_t>(1, (length + 1) / 2);
  }

  double resolve_radius(const Graph& g) const {
    if (R > 0.0) return R;
    const double slots = static_cast<double>(g.num_slots());
    const double avg_degree = slots / static_cast<double>(g.num_nodes());
    return 0.05 * slots / avg_degree;
  }
};

/// Large-scale weights: lambda2 and lambda3 of order 1e5 against an L_K that
/// is divided by K ~ 1e5.
inline FgaiConfig large_scale_preset() {
  FgaiConfig c;
  c.lambda1 = 0.8;
  c.lambda2 = 1e5;
  c.lambda3 = 1e5;
  return c;
}

/// Desk-scale weights with the same effective balance (lambda / K ~ 1).
inline FgaiConfig normalized_preset() { return FgaiConfig{}; }

struct FgaiLossBreakdown {
  std::size_t step = 0;
  double closeness = 0.0;
  double similarity = 0.0;
  double pred_stability = 0.0;
  double interp_stability = 0.0;
  double total = 0.0;
  bool operator==(const FgaiLossBreakdown&) const = default;
};

inline void write_fgai_log(std::ostream& out, const std::vector<FgaiLossBreakdown>& log) {
  out << "step,closeness,similarity,pred_stability,interp_stability,total\n";
  for (const auto& r : log)
    out << r.step << ',' << detail::format_double(r.closeness) << ','
        << detail::format_double(r.similarity) << ',' << detail::format_double(r.pred_stability)
        << ',' << detail::format_double(r.interp_stability) << ','
        << detail::format_double(r.total) << '\n';
}

/// Euclidean projection onto {x : ||x||_1 <= R}: soft-thresholding at the
/// threshold found by Michelot's active-set iteration (exact, no full sort).
inline std::vector<double> project_l1_ball(std::span<const double> v, double radius) {
  if (radius <= 0.0) throw StructuralError("project_l1_ball: radius must be > 0");
  std::vector<double> out(v.begin(), v.end());
  if (l1_norm(v) <= radius) return out;
  std::vector<double> active;
  active.reserve(v.size());
  for (double x : v) active.push_back(std::abs(x));
  double theta = 0.0;
  for (;;) {
    double sum = 0.0;
    for (double a : active) sum += a;
    theta = (sum - radius) / static_cast<double>(active.size());
    const auto before = active.size();
    std::erase_if(active, [theta](double a) { return a <= theta; });
    if (active.size() == before) break;
  }
  for (double& x : out) x = sign_of(x) * std::max(std::abs(x) - theta, 0.0);
  // Rounding in theta can leave the norm a few ulps per coordinate above R.
  const double norm = l1_norm(out);
  if (norm > radius)
    for (double& x : out) x *= radius / norm;
  return out;
}

/// Masked total variation distance between two prediction matrices.
inline double tvd_loss(const PredictionMatrix& p, const PredictionMatrix& q,
                       std::span<const NodeId> nodes) {
  if (!p.probs.same_shape(q.probs)) throw StructuralError("tvd_loss: shapes differ");
  if (nodes.empty()) throw StructuralError("tvd_loss: empty node mask");
  return tvd_value(p.probs, q.probs, nodes);
}

/// Uniform draw from the l1 ball of the given radius: exponential spacings
/// with random signs.
inline std::vector<double> sample_l1_ball(std::size_t dim, double radius, Rng& rng) {
  std::vector<double> x(dim);
  double total = rng.exponential();
  for (double& v : x) total += (v = rng.exponential());
  for (double& v : x) v = (rng.uniform() < 0.5 ? -v : v) * radius / total;
  return x;
}

/// Slack of the l1-ball membership check on every projected iterate.
inline constexpr double kBallTolerance = 1e-9;

/// Counts l1-ball membership checks. Read by the acceptance suite.
inline std::atomic<std::uint64_t>& checked_ball_iterates() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

inline void check_in_ball(std::span<const double> x, double radius, const char* where) {
  const double norm = l1_norm(x);
  if (norm > radius + kBallTolerance)
    throw NumericalError(std::string(where) + ": iterate l1 norm " + std::to_string(norm) +
                         " exceeds radius " + std::to_string(radius));
  checked_ball_iterates().fetch_add(1, std::memory_order_relaxed);
}

struct InnerResult {
  Matrix value;              // heads x slots
  double start_objective = 0.0;
  double final_objective = 0.0;
  double max_norm = 0.0;     // largest l1 norm over all projected iterates
};

namespace detail {

inline void ascent_step(std::vector<double>& x, std::span<const double> grad, double step,
                        double radius) {
  double gmax = 0.0;
  for (double g : grad) gmax = std::max(gmax, std::abs(g));
  if (gmax == 0.0) return;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += step * grad[i] / gmax;
  x = project_l1_ball(x, radius);
  check_in_ball(x, radius, "inner ascent");
}

inline Matrix as_matrix(std::vector<double> v, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  m.data = std::move(v);
  return m;
}

}  // namespace detail

/// Projected ascent on D(y(w~), y(w~ + delta)) over the attention
/// perturbation delta. `nodes` is the D mask. Each step moves the largest
/// gradient coordinate by gamma * R before projecting.
inline InnerResult inner_pgd_delta(const Graph& graph, const Matrix& features,
                                   const ModelParams& params, const ForwardCache& base,
                                   const FgaiConfig& config, std::span<const NodeId> nodes,
                                   Rng& rng) {
  config.validate();
  const double radius = config.resolve_radius(graph);
  const PredictionMatrix reference{base.probs};
  const std::size_t heads = params.heads, slots = graph.num_slots();
  TvdToReference loss{&reference, {nodes.begin(), nodes.end()}};

  std::vector<double> delta =
      config.init_fraction > 0.0
          ? sample_l1_ball(heads * slots, config.init_fraction * radius, rng)
          : std::vector<double>(heads * slots, 0.0);
  check_in_ball(delta, radius, "inner delta start");
  InnerResult res;
  res.max_norm = l1_norm(delta);
  Matrix override_weights(heads, slots);
  auto objective_and_grad = [&](const std::vector<double>& d) {
    for (std::size_t k = 0; k < d.size(); ++k) override_weights.data[k] = base.attention.data[k] + d[k];
    return loss_and_grad_wrt_override(graph, features, params, override_weights, loss);
  };
  for (std::size_t p = 0; p < config.P; ++p) {
    auto [value, grad] = objective_and_grad(delta);
    if (p == 0) res.start_objective = value;
    if (!all_finite(grad.data))
      throw NumericalError("inner delta ascent: non-finite gradient at step " + std::to_string(p + 1));
    detail::ascent_step(delta, grad.data, config.gamma * radius, radius);
    res.max_norm = std::max(res.max_norm, l1_norm(delta));
  }
  res.final_objective = objective_and_grad(delta).first;
  res.value = detail::as_matrix(std::move(delta), heads, slots);
  return res;
}

inline InnerResult inner_pgd_delta(const Graph& graph, const Matrix& features,
                                   const ModelParams& params, const FgaiConfig& config,
                                   std::span<const NodeId> nodes, Rng& rng) {
  return inner_pgd_delta(graph, features, params, forward_cached(graph, features, params), config,
                         nodes, rng);
}

/// Projected ascent on L_K(w~, w~ + rho) with frozen selections.
inline InnerResult inner_pgd_rho(std::span<const double> attention, std::size_t heads,
                                 double radius, const FgaiConfig& config, Rng& rng) {
  config.validate();
  if (radius <= 0.0) throw StructuralError("inner_pgd_rho: radius must be > 0");
  const std::size_t k = config.resolve_k(attention.size());
  const auto in_att = top_k_mask(attention, k);
  std::vector<double> rho = config.init_fraction > 0.0
                                ? sample_l1_ball(attention.size(), config.init_fraction * radius, rng)
                                : std::vector<double>(attention.size(), 0.0);
  check_in_ball(rho, radius, "inner rho start");
  InnerResult res;
  res.max_norm = l1_norm(rho);
  std::vector<double> shifted(attention.size());
  auto shift = [&] {
    for (std::size_t i = 0; i < rho.size(); ++i) shifted[i] = attention[i] + rho[i];
  };
  for (std::size_t q = 0; q < config.Q; ++q) {
    shift();
    const auto in_shifted = top_k_mask(shifted, k);
    if (q == 0) res.start_objective = surrogate_loss(attention, shifted, in_att, in_shifted, k);
    const auto g =
        surrogate_loss_grad(attention, shifted, in_att, in_shifted, k, SurrogateWrt::kSecond);
    if (!all_finite(g.d_second))
      throw NumericalError("inner rho ascent: non-finite gradient at step " + std::to_string(q + 1));
    detail::ascent_step(rho, g.d_second, config.tau * radius, radius);
    res.max_norm = std::max(res.max_norm, l1_norm(rho));
  }
  shift();
  res.final_objective = surrogate_loss(attention, shifted, in_att, top_k_mask(shifted, k), k);
  res.value = detail::as_matrix(std::move(rho), heads, attention.size() / heads);
  return res;
}

struct FgaiResult {
  ModelParams params;
  std::vector<FgaiLossBreakdown> log;
  double max_delta_norm = 0.0;
  double max_rho_norm = 0.0;
  double radius = 0.0;
  std::size_t k = 0;
};

/// Minimax fine-tuning. The trainable model starts as a copy of `vanilla`;
/// each outer step runs both inner ascents against the current model, then
/// descends
///   D(y~, y) + l1 L_K(w, w~) + l2 D(y~, y(w~ + delta*)) + l3 L_K(w~, w~ + rho*).
inline FgaiResult fgai_train(const Dataset& data, const ModelParams& vanilla,
                             const FgaiConfig& config) {
  config.validate();
  data.validate();
  vanilla.validate();
  const auto& graph = data.graph;
  const auto nodes = data.split.train_val_nodes();
  const std::size_t heads = vanilla.heads, slots = graph.num_slots();

  const auto ref = forward_cached(graph, data.features, vanilla);
  const std::vector<double>& w_vanilla = ref.attention.data;
  const std::size_t k_res = config.resolve_k(heads * slots);
  const auto in_vanilla = top_k_mask(w_vanilla, k_res);

  FgaiResult res;
  res.radius = config.resolve_radius(graph);
  res.k = k_res;
  res.params = vanilla;
  Adam adam(vanilla, config.eta, config.weight_decay);
  Rng rng(config.seed ^ 0xf6a1c0de5eedull);

  for (std::size_t t = 1; t <= config.T; ++t) {
    auto& params = res.params;
    const auto nat = forward_cached(graph, data.features, params);
    const std::vector<double>& w_tilde = nat.attention.data;

    const auto delta = inner_pgd_delta(graph, data.features, params, nat, config, nodes, rng);
    const auto rho = inner_pgd_rho(w_tilde, heads, res.radius, config, rng);
    res.max_delta_norm = std::max(res.max_delta_norm, delta.max_norm);
    res.max_rho_norm = std::max(res.max_rho_norm, rho.max_norm);

    const auto pert = forward_cached(graph, data.features, params,
                                     AttentionSource::additive(delta.value));
    std::vector<double> w_rho(w_tilde.size());
    for (std::size_t i = 0; i < w_rho.size(); ++i) w_rho[i] = w_tilde[i] + rho.value.data[i];

    const auto in_tilde = top_k_mask(w_tilde, res.k);
    const auto in_rho = top_k_mask(w_rho, res.k);

    FgaiLossBreakdown row;
    row.step = t;
    row.closeness = tvd_value(nat.probs, ref.probs, nodes);
    row.similarity = surrogate_loss(w_vanilla, w_tilde, in_vanilla, in_tilde, res.k);
    row.pred_stability = tvd_value(nat.probs, pert.probs, nodes);
    row.interp_stability = surrogate_loss(w_tilde, w_rho, in_tilde, in_rho, res.k);
    row.total = row.closeness + config.lambda1 * row.similarity +
                config.lambda2 * row.pred_stability + config.lambda3 * row.interp_stability;
    if (!std::isfinite(row.total))
      throw TrainingError("fgai_train: non-finite objective at step " + std::to_string(t));
    res.log.push_back(row);

    // Output-side gradients of both forward passes.
    Matrix d_nat = tvd_grad_first(nat.probs, ref.probs, nodes);
    const Matrix d_pair = tvd_grad_first(nat.probs, pert.probs, nodes, config.lambda2);
    Matrix d_pert(d_pair.rows, d_pair.cols);
    for (std::size_t k = 0; k < d_nat.data.size(); ++k) {
      d_nat.data[k] += d_pair.data[k];
      d_pert.data[k] = -d_pair.data[k];
    }
    // Attention-side gradients of both surrogate terms.
    Matrix d_att(heads, slots);
    const auto g_sim = surrogate_loss_grad(w_vanilla, w_tilde, in_vanilla, in_tilde, res.k,
                                           SurrogateWrt::kSecond);
    const auto g_rob = surrogate_loss_grad(w_tilde, w_rho, in_tilde, in_rho, res.k, SurrogateWrt::kBoth);
    for (std::size_t k = 0; k < d_att.data.size(); ++k)
      d_att.data[k] = config.lambda1 * g_sim.d_second[k] +
                      config.lambda3 * (g_rob.d_first[k] + g_rob.d_second[k]);

    auto grads = backward(graph, params, nat, softmax_backward(nat.probs, d_nat), &d_att).d_params;
    add_into(grads, backward(graph, params, pert, softmax_backward(pert.probs, d_pert)).d_params);

    if (config.optimizer == OuterOptimizer::kAdam) {
      adam.step(params, grads);
    } else {
      add_into(params, grads, -config.eta);
    }
  }
  return res;
}

struct FaithfulnessReport {
  double beta1 = 0.0;   // V_K(w~, w)
  double beta2 = 0.0;   // min over trials of V_K(w~, w~ + rho)
  double alpha1 = 0.0;  // D(y~, y)
  double alpha2 = 0.0;  // max over trials of D(y~, y(w~ + delta))
  double per_node_beta1 = 0.0;  // diagnostic: mean per-neighbourhood overlap
  std::size_t k = 0;
  double radius = 0.0;
};

/// Mean over nodes of the top-k overlap restricted to each neighbourhood,
/// with k_i = ceil(deg_i / 2).
inline double per_node_overlap(const Graph& graph, std::span<const double> a,
                               std::span<const double> b) {
  const auto offsets = graph.row_offsets();
  double sum = 0.0;
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    const std::size_t lo = offsets[i], deg = offsets[i + 1] - lo;
    sum += top_k_overlap(a.subspan(lo, deg), b.subspan(lo, deg), (deg + 1) / 2).ratio;
  }
  return sum / static_cast<double>(graph.num_nodes());
}

/// Measures the four conditions on head-averaged attention with random
/// perturbations drawn uniformly from the l1 ball.
inline FaithfulnessReport monitor_faithfulness(const Dataset& data, const ModelParams& vanilla,
                                             const ModelParams& fgai, const FgaiConfig& config,
                                             std::size_t trials, std::uint64_t seed) {
  if (trials < 1) throw StructuralError("monitor_faithfulness: trials must be >= 1");
  const auto& graph = data.graph;
  const auto nodes = data.split.train_val_nodes();
  const auto [att_v, pred_v] = forward(graph, data.features, vanilla);
  const auto [att_f, pred_f] = forward(graph, data.features, fgai);

  FaithfulnessReport rep;
  rep.k = config.K ? config.K : std::max<std::size_t>(1, (graph.num_slots() + 1) / 2);
  rep.radius = config.resolve_radius(graph);
  rep.beta1 = top_k_overlap(att_f.averaged, att_v.averaged, rep.k).ratio;
  rep.per_node_beta1 = per_node_overlap(graph, att_f.averaged, att_v.averaged);
  rep.alpha1 = tvd_loss(pred_f, pred_v, nodes);
  rep.beta2 = 1.0;
  rep.alpha2 = 0.0;
  Rng rng(seed);
  const std::size_t dim = att_f.per_head.data.size();
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const auto rho = sample_l1_ball(dim, rep.radius, rng);
    Matrix shifted = att_f.per_head;
    for (std::size_t k = 0; k < dim; ++k) shifted.data[k] += rho[k];
    rep.beta2 = std::min(rep.beta2,
                         top_k_overlap(att_f.averaged, attention_state(shifted).averaged, rep.k).ratio);

    const auto delta = sample_l1_ball(dim, rep.radius, rng);
    Matrix perturbed = att_f.per_head;
    for (std::size_t k = 0; k < dim; ++k) perturbed.data[k] += delta[k];
    const auto y = forward_with_override(graph, data.features, fgai, perturbed);
    rep.alpha2 = std::max(rep.alpha2, tvd_loss(pred_f, y, nodes));
  }
  return rep;
}

}  // namespace fgai
