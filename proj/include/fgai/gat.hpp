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

#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fgai/common.hpp"
#include "fgai/graph.hpp"

namespace fgai {

enum class Variant { kGat, kGatV2 };

inline std::string to_string(Variant v) { return v == Variant::kGat ? "GAT" : "GATv2"; }
inline Variant parse_variant(const std::string& s) {
  if (s == "GAT" || s == "gat") return Variant::kGat;
  if (s == "GATv2" || s == "gatv2") return Variant::kGatV2;
  throw StructuralError("unknown model variant '" + s + "'");
}

/// One multi-head attention layer followed by ELU and a linear classifier.
///
/// Scores per head h, for target i and neighbor j, with z = W h:
///   GAT:   e_ij = LeakyReLU(a_src . z_i + a_dst . z_j)
///   GATv2: e_ij = [a_src | a_dst] . LeakyReLU([z_i | z_j])
struct ModelParams {
  Variant variant = Variant::kGat;
  std::size_t in_dim = 0;
  std::size_t heads = 8;
  std::size_t hidden = 8;
  std::size_t classes = 0;
  double leaky_slope = 0.2;

  Matrix W;      // in_dim x (heads * hidden); head h owns columns [h*hidden, (h+1)*hidden)
  Matrix att;    // heads x (2 * hidden); row h is [a_src | a_dst]
  Matrix out_W;  // (heads * hidden) x classes
  Matrix out_b;  // 1 x classes

  std::size_t width() const { return heads * hidden; }

  static ModelParams zeros(Variant variant, std::size_t in_dim, std::size_t heads,
                           std::size_t hidden, std::size_t classes) {
    ModelParams p;
    p.variant = variant;
    p.in_dim = in_dim;
    p.heads = heads;
    p.hidden = hidden;
    p.classes = classes;
    p.W = Matrix(in_dim, heads * hidden);
    p.att = Matrix(heads, 2 * hidden);
    p.out_W = Matrix(heads * hidden, classes);
    p.out_b = Matrix(1, classes);
    return p;
  }

  ModelParams zeros_like() const {
    auto p = zeros(variant, in_dim, heads, hidden, classes);
    p.leaky_slope = leaky_slope;
    return p;
  }

  template <typename F>
  void for_each_tensor(F&& f) {
    f("W", W);
    f("att", att);
    f("out_W", out_W);
    f("out_b", out_b);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    f("W", W);
    f("att", att);
    f("out_W", out_W);
    f("out_b", out_b);
  }

  void validate() const {
    if (heads == 0 || hidden == 0) throw StructuralError("heads and hidden must be >= 1");
    if (classes < 2) throw StructuralError("classifier needs >= 2 classes");
    if (W.rows != in_dim || W.cols != width() || att.rows != heads ||
        att.cols != 2 * hidden || out_W.rows != width() || out_W.cols != classes ||
        out_b.rows != 1 || out_b.cols != classes)
      throw StructuralError("ModelParams tensor shapes are inconsistent");
    for_each_tensor([](const char* name, const Matrix& m) {
      if (!all_finite(m.data))
        throw NumericalError(std::string("non-finite entry in parameter ") + name);
    });
  }

  bool operator==(const ModelParams&) const = default;
};

/// Glorot-uniform weights, zero classifier bias.
inline ModelParams init_params(Variant variant, std::size_t in_dim, std::size_t heads,
                               std::size_t hidden, std::size_t classes, std::uint64_t seed) {
  auto p = ModelParams::zeros(variant, in_dim, heads, hidden, classes);
  Rng rng(seed);
  auto glorot = [&rng](Matrix& m, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : m.data) v = rng.uniform(-limit, limit);
  };
  glorot(p.W, static_cast<double>(in_dim), static_cast<double>(hidden));
  glorot(p.att, static_cast<double>(2 * hidden), 1.0);
  glorot(p.out_W, static_cast<double>(p.width()), static_cast<double>(classes));
  return p;
}

/// Post-softmax attention, one row per head, one column per edge slot.
struct AttentionState {
  Matrix per_head;
  std::vector<double> averaged;
};

struct PredictionMatrix {
  Matrix probs;  // N x C, row-stochastic
  bool operator==(const PredictionMatrix&) const = default;
};

struct GradientBundle {
  ModelParams d_params;
  std::optional<Matrix> d_attention;
};

/// How the aggregation weights of a forward pass are obtained.
struct AttentionSource {
  enum class Kind { kNatural, kAdditive, kOverride };
  Kind kind = Kind::kNatural;
  const Matrix* values = nullptr;  // heads x slots for kAdditive / kOverride

  static AttentionSource natural() { return {}; }
  static AttentionSource additive(const Matrix& delta) { return {Kind::kAdditive, &delta}; }
  static AttentionSource override_with(const Matrix& w) { return {Kind::kOverride, &w}; }
};

/// Feature and attention dropout masks (already scaled by 1/(1-p)).
struct DropoutMasks {
  Matrix features;   // N x F, empty when unused
  Matrix attention;  // heads x slots, empty when unused
};

/// Every intermediate needed by `backward`.
struct ForwardCache {
  AttentionSource::Kind kind = AttentionSource::Kind::kNatural;
  Matrix x;          // features after dropout
  Matrix z;          // N x (H*F')
  Matrix lz;         // LeakyReLU(z), GATv2 only
  Matrix score_pre;  // H x E, argument of LeakyReLU (GAT) or e itself (GATv2)
  Matrix attention;  // H x E softmax output (empty for override)
  Matrix weights;    // H x E aggregation weights actually used
  Matrix agg;        // N x (H*F')
  Matrix hidden;     // ELU(agg)
  Matrix logits;
  Matrix probs;
  const DropoutMasks* dropout = nullptr;
};

namespace detail {

inline double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }
inline double leaky_grad(double x, double slope) { return x > 0.0 ? 1.0 : slope; }
inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

inline void check_stage(const Matrix& m, const char* stage) {
  if (!all_finite(m.data))
    throw NumericalError(std::string("non-finite value in forward stage '") + stage + "'");
}

// out = a * b (row-major, plain triple loop in a fixed order).
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* o = out.data.data() + i * out.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += aik * bk[j];
    }
  }
  return out;
}

// out = a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* ak = a.data.data() + k * a.cols;
    const double* bk = b.data.data() + k * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* o = out.data.data() + i * out.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += aki * bk[j];
    }
  }
  return out;
}

// out = a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  return out;
}

inline void softmax_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto r = m.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double& v : r) sum += (v = std::exp(v - mx));
    for (double& v : r) v /= sum;
  }
}

}  // namespace detail

/// Tolerance of the per-node attention-sum and prediction-row-sum checks.
inline constexpr double kSumTolerance = 1e-9;

/// Counts forward passes whose sum checks ran. Read by the acceptance suite.
inline std::atomic<std::uint64_t>& checked_forward_passes() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

inline void check_dims(const Graph& graph, const Matrix& features, const ModelParams& params) {
  if (features.rows != graph.num_nodes())
    throw StructuralError("feature rows != graph node count");
  if (features.cols != params.in_dim)
    throw StructuralError("feature dim " + std::to_string(features.cols) +
                          " != model input dim " + std::to_string(params.in_dim));
}

/// Full forward pass keeping intermediates.
inline ForwardCache forward_cached(const Graph& graph, const Matrix& features,
                                   const ModelParams& params,
                                   AttentionSource source = AttentionSource::natural(),
                                   const DropoutMasks* dropout = nullptr) {
  using Kind = AttentionSource::Kind;
  check_dims(graph, features, params);
  const std::size_t n = graph.num_nodes(), slots = graph.num_slots();
  const std::size_t heads = params.heads, hid = params.hidden;
  const double slope = params.leaky_slope;
  if (source.kind != Kind::kNatural &&
      (source.values == nullptr || source.values->rows != heads || source.values->cols != slots))
    throw StructuralError("attention override/perturbation must be heads x slots (" +
                          std::to_string(heads) + " x " + std::to_string(slots) + ")");

  ForwardCache c;
  c.kind = source.kind;
  c.dropout = dropout;
  c.x = features;
  if (dropout && !dropout->features.data.empty())
    for (std::size_t k = 0; k < c.x.data.size(); ++k) c.x.data[k] *= dropout->features.data[k];
  c.z = detail::matmul(c.x, params.W);
  detail::check_stage(c.z, "linear transform");

  const auto src_of = graph.sources();
  const auto dst_of = graph.col_indices();

  if (source.kind == Kind::kOverride) {
    c.weights = *source.values;
  } else {
    // Per-node halves of the score.
    Matrix src_term(n, heads), dst_term(n, heads);
    const Matrix* feat = &c.z;
    if (params.variant == Variant::kGatV2) {
      c.lz = c.z;
      for (double& v : c.lz.data) v = detail::leaky(v, slope);
      feat = &c.lz;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t h = 0; h < heads; ++h) {
        double s = 0.0, d = 0.0;
        for (std::size_t k = 0; k < hid; ++k) {
          const double zk = (*feat)(i, h * hid + k);
          s += params.att(h, k) * zk;
          d += params.att(h, hid + k) * zk;
        }
        src_term(i, h) = s;
        dst_term(i, h) = d;
      }
    c.score_pre = Matrix(heads, slots);
    c.attention = Matrix(heads, slots);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t s = 0; s < slots; ++s) {
        const double pre = src_term(src_of[s], h) + dst_term(dst_of[s], h);
        c.score_pre(h, s) = pre;
        c.attention(h, s) =
            params.variant == Variant::kGat ? detail::leaky(pre, slope) : pre;
      }
    detail::check_stage(c.attention, "attention score");
    const auto offsets = graph.row_offsets();
    for (std::size_t h = 0; h < heads; ++h) {
      auto e = c.attention.row(h);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t b = offsets[i], en = offsets[i + 1];
        double mx = e[b];
        for (std::size_t s = b + 1; s < en; ++s) mx = std::max(mx, e[s]);
        double sum = 0.0;
        for (std::size_t s = b; s < en; ++s) sum += (e[s] = std::exp(e[s] - mx));
        double total = 0.0;
        for (std::size_t s = b; s < en; ++s) total += (e[s] /= sum);
        if (std::abs(total - 1.0) > kSumTolerance)
          throw NumericalError("attention softmax: node " + std::to_string(i) + " head " +
                               std::to_string(h) + " sums to " + std::to_string(total));
      }
    }
    detail::check_stage(c.attention, "attention softmax");
    c.weights = c.attention;
    if (source.kind == Kind::kAdditive)
      for (std::size_t k = 0; k < c.weights.data.size(); ++k)
        c.weights.data[k] += source.values->data[k];
  }
  if (dropout && !dropout->attention.data.empty())
    for (std::size_t k = 0; k < c.weights.data.size(); ++k)
      c.weights.data[k] *= dropout->attention.data[k];

  c.agg = Matrix(n, params.width());
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t s = 0; s < slots; ++s) {
      const double w = c.weights(h, s);
      if (w == 0.0) continue;
      double* out = &c.agg(src_of[s], h * hid);
      const double* zj = &c.z(dst_of[s], h * hid);
      for (std::size_t k = 0; k < hid; ++k) out[k] += w * zj[k];
    }
  detail::check_stage(c.agg, "aggregation");

  c.hidden = c.agg;
  for (double& v : c.hidden.data) v = detail::elu(v);
  c.logits = detail::matmul(c.hidden, params.out_W);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < params.classes; ++k) c.logits(i, k) += params.out_b(0, k);
  detail::check_stage(c.logits, "classifier");
  c.probs = c.logits;
  detail::softmax_rows(c.probs);
  detail::check_stage(c.probs, "output softmax");
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (double v : c.probs.row(i)) total += v;
    if (std::abs(total - 1.0) > kSumTolerance)
      throw NumericalError("output softmax: row " + std::to_string(i) + " sums to " +
                           std::to_string(total));
  }
  checked_forward_passes().fetch_add(1, std::memory_order_relaxed);
  return c;
}

inline AttentionState attention_state(const Matrix& per_head) {
  AttentionState a;
  a.per_head = per_head;
  a.averaged.assign(per_head.cols, 0.0);
  for (std::size_t h = 0; h < per_head.rows; ++h)
    for (std::size_t s = 0; s < per_head.cols; ++s) a.averaged[s] += per_head(h, s);
  for (double& v : a.averaged) v /= static_cast<double>(per_head.rows);
  return a;
}

inline std::pair<AttentionState, PredictionMatrix> forward(const Graph& graph,
                                                           const Matrix& features,
                                                           const ModelParams& params) {
  auto c = forward_cached(graph, features, params);
  return {attention_state(c.attention), PredictionMatrix{std::move(c.probs)}};
}

/// Uses `override` directly as aggregation weights; no renormalization.
inline PredictionMatrix forward_with_override(const Graph& graph, const Matrix& features,
                                              const ModelParams& params,
                                              const Matrix& override_weights) {
  auto c = forward_cached(graph, features, params,
                          AttentionSource::override_with(override_weights));
  return PredictionMatrix{std::move(c.probs)};
}

/// Gradient of a scalar with respect to output probabilities, turned into a
/// gradient with respect to logits.
inline Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs) {
  Matrix d(probs.rows, probs.cols);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    double dot = 0.0;
    for (std::size_t k = 0; k < probs.cols; ++k) dot += probs(i, k) * d_probs(i, k);
    for (std::size_t k = 0; k < probs.cols; ++k)
      d(i, k) = probs(i, k) * (d_probs(i, k) - dot);
  }
  return d;
}

struct BackwardResult {
  ModelParams d_params;
  Matrix d_weights;   // heads x slots, gradient w.r.t. the aggregation weights
  Matrix d_features;  // N x F, only when requested
};

/// Reverse pass through classifier, ELU, aggregation, softmax and scores.
/// `d_attention_extra` is added to the gradient at the softmax output (it is
/// ignored for override passes, which have no softmax).
inline BackwardResult backward(const Graph& graph, const ModelParams& params,
                               const ForwardCache& c, const Matrix& d_logits,
                               const Matrix* d_attention_extra = nullptr,
                               bool want_features = false) {
  const std::size_t n = graph.num_nodes(), slots = graph.num_slots();
  const std::size_t heads = params.heads, hid = params.hidden;
  const double slope = params.leaky_slope;
  const auto src_of = graph.sources();
  const auto dst_of = graph.col_indices();

  BackwardResult r;
  r.d_params = params.zeros_like();
  auto& g = r.d_params;

  g.out_W = detail::matmul_tn(c.hidden, d_logits);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < params.classes; ++k) g.out_b(0, k) += d_logits(i, k);
  Matrix d_agg = detail::matmul_nt(d_logits, params.out_W);
  for (std::size_t k = 0; k < d_agg.data.size(); ++k) d_agg.data[k] *= detail::elu_grad(c.agg.data[k]);

  Matrix d_z(n, params.width());
  r.d_weights = Matrix(heads, slots);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t s = 0; s < slots; ++s) {
      const double* da = &d_agg(src_of[s], h * hid);
      const double* zj = &c.z(dst_of[s], h * hid);
      double dw = 0.0;
      for (std::size_t k = 0; k < hid; ++k) dw += da[k] * zj[k];
      r.d_weights(h, s) = dw;
      const double w = c.weights(h, s);
      if (w != 0.0) {
        double* dzj = &d_z(dst_of[s], h * hid);
        for (std::size_t k = 0; k < hid; ++k) dzj[k] += w * da[k];
      }
    }
  if (c.dropout && !c.dropout->attention.data.empty())
    for (std::size_t k = 0; k < r.d_weights.data.size(); ++k)
      r.d_weights.data[k] *= c.dropout->attention.data[k];

  if (c.kind != AttentionSource::Kind::kOverride) {
    // d(softmax output); additive perturbations pass gradient through unchanged.
    Matrix d_att = r.d_weights;
    if (d_attention_extra) {
      if (!d_attention_extra->same_shape(d_att))
        throw StructuralError("extra attention gradient must be heads x slots");
      for (std::size_t k = 0; k < d_att.data.size(); ++k)
        d_att.data[k] += d_attention_extra->data[k];
    }
    const auto offsets = graph.row_offsets();
    Matrix d_src(n, heads), d_dst(n, heads);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t b = offsets[i], en = offsets[i + 1];
        double dot = 0.0;
        for (std::size_t s = b; s < en; ++s) dot += c.attention(h, s) * d_att(h, s);
        for (std::size_t s = b; s < en; ++s) {
          double de = c.attention(h, s) * (d_att(h, s) - dot);
          if (params.variant == Variant::kGat) de *= detail::leaky_grad(c.score_pre(h, s), slope);
          d_src(i, h) += de;
          d_dst(dst_of[s], h) += de;
        }
      }
    const Matrix& feat = params.variant == Variant::kGat ? c.z : c.lz;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t h = 0; h < heads; ++h) {
        const double ds = d_src(i, h), dd = d_dst(i, h);
        if (ds == 0.0 && dd == 0.0) continue;
        for (std::size_t k = 0; k < hid; ++k) {
          const std::size_t col = h * hid + k;
          g.att(h, k) += ds * feat(i, col);
          g.att(h, hid + k) += dd * feat(i, col);
          double dfeat = ds * params.att(h, k) + dd * params.att(h, hid + k);
          if (params.variant == Variant::kGatV2) dfeat *= detail::leaky_grad(c.z(i, col), slope);
          d_z(i, col) += dfeat;
        }
      }
  }

  g.W = detail::matmul_tn(c.x, d_z);
  if (want_features) {
    r.d_features = detail::matmul_nt(d_z, params.W);
    if (c.dropout && !c.dropout->features.data.empty())
      for (std::size_t k = 0; k < r.d_features.data.size(); ++k)
        r.d_features.data[k] *= c.dropout->features.data[k];
  }
  return r;
}

inline void add_into(ModelParams& acc, const ModelParams& g, double scale = 1.0) {
  auto add = [scale](Matrix& a, const Matrix& b) {
    for (std::size_t k = 0; k < a.data.size(); ++k) a.data[k] += scale * b.data[k];
  };
  add(acc.W, g.W);
  add(acc.att, g.att);
  add(acc.out_W, g.out_W);
  add(acc.out_b, g.out_b);
}

/// Mean cross-entropy over `nodes` (duplicates allowed) and its analytic gradient.
inline std::pair<double, GradientBundle> loss_and_grad(const Graph& graph,
                                                       const Matrix& features,
                                                       const ModelParams& params,
                                                       const LabelVector& labels,
                                                       std::span<const NodeId> nodes,
                                                       const DropoutMasks* dropout = nullptr) {
  if (nodes.empty()) throw StructuralError("loss_and_grad: empty node mask");
  const auto c = forward_cached(graph, features, params, AttentionSource::natural(), dropout);
  const double inv = 1.0 / static_cast<double>(nodes.size());
  double loss = 0.0;
  Matrix d_logits(c.probs.rows, c.probs.cols);
  for (NodeId i : nodes) {
    const auto y = static_cast<std::size_t>(labels.labels[i]);
    // log-softmax from logits for accuracy at confident predictions
    const auto lr = c.logits.row(i);
    const double mx = *std::max_element(lr.begin(), lr.end());
    double sum = 0.0;
    for (double v : lr) sum += std::exp(v - mx);
    loss -= (lr[y] - mx - std::log(sum)) * inv;
    for (std::size_t k = 0; k < c.probs.cols; ++k)
      d_logits(i, k) += (c.probs(i, k) - (k == y ? 1.0 : 0.0)) * inv;
  }
  auto r = backward(graph, params, c, d_logits);
  return {loss, GradientBundle{std::move(r.d_params), std::nullopt}};
}

/// Scalar objectives of a prediction matrix whose gradient with respect to an
/// attention override is requested.
struct TvdToReference {
  const PredictionMatrix* reference;
  std::vector<NodeId> nodes;
};
struct CrossEntropyLoss {
  const LabelVector* labels;
  std::vector<NodeId> nodes;
};
using ScalarLossSpec = std::variant<TvdToReference, CrossEntropyLoss>;

/// (1 / 2|nodes|) sum_i sum_c |p_ic - q_ic| and d/dp (sign 0 at ties).
inline double tvd_value(const Matrix& p, const Matrix& q, std::span<const NodeId> nodes) {
  if (nodes.empty()) throw StructuralError("TVD over an empty node set");
  double s = 0.0;
  for (NodeId i : nodes)
    for (std::size_t k = 0; k < p.cols; ++k) s += std::abs(p(i, k) - q(i, k));
  return s / (2.0 * static_cast<double>(nodes.size()));
}

inline Matrix tvd_grad_first(const Matrix& p, const Matrix& q, std::span<const NodeId> nodes,
                             double scale = 1.0) {
  Matrix d(p.rows, p.cols);
  const double inv = scale / (2.0 * static_cast<double>(nodes.size()));
  for (NodeId i : nodes)
    for (std::size_t k = 0; k < p.cols; ++k) d(i, k) += inv * sign_of(p(i, k) - q(i, k));
  return d;
}

/// Value and gradient of the scalar with respect to every override entry.
inline std::pair<double, Matrix> loss_and_grad_wrt_override(const Graph& graph,
                                                            const Matrix& features,
                                                            const ModelParams& params,
                                                            const Matrix& override_weights,
                                                            const ScalarLossSpec& loss) {
  const auto c = forward_cached(graph, features, params,
                                AttentionSource::override_with(override_weights));
  double value = 0.0;
  Matrix d_logits;
  if (const auto* tvd = std::get_if<TvdToReference>(&loss)) {
    if (!tvd->reference->probs.same_shape(c.probs))
      throw StructuralError("TVD reference shape differs from predictions");
    value = tvd_value(c.probs, tvd->reference->probs, tvd->nodes);
    d_logits = softmax_backward(c.probs, tvd_grad_first(c.probs, tvd->reference->probs, tvd->nodes));
  } else {
    const auto& ce = std::get<CrossEntropyLoss>(loss);
    if (ce.nodes.empty()) throw StructuralError("cross-entropy over an empty node set");
    const double inv = 1.0 / static_cast<double>(ce.nodes.size());
    d_logits = Matrix(c.probs.rows, c.probs.cols);
    for (NodeId i : ce.nodes) {
      const auto y = static_cast<std::size_t>(ce.labels->labels[i]);
      const auto lr = c.logits.row(i);
      const double mx = *std::max_element(lr.begin(), lr.end());
      double sum = 0.0;
      for (double v : lr) sum += std::exp(v - mx);
      value -= (lr[y] - mx - std::log(sum)) * inv;
      for (std::size_t k = 0; k < c.probs.cols; ++k)
        d_logits(i, k) += (c.probs(i, k) - (k == y ? 1.0 : 0.0)) * inv;
    }
  }
  auto r = backward(graph, params, c, d_logits);
  return {value, std::move(r.d_weights)};
}

inline Matrix grad_wrt_override(const Graph& graph, const Matrix& features,
                                const ModelParams& params, const Matrix& override_weights,
                                const ScalarLossSpec& loss) {
  return loss_and_grad_wrt_override(graph, features, params, override_weights, loss).second;
}

inline std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out(probs.rows);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    const auto r = probs.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

/// Micro-averaged F1, which for single-label multiclass equals accuracy.
inline double micro_f1(const PredictionMatrix& preds, const LabelVector& labels,
                       std::span<const NodeId> nodes) {
  if (nodes.empty()) throw StructuralError("micro_f1: empty node mask");
  std::size_t correct = 0;
  for (NodeId i : nodes) {
    const auto r = preds.probs.row(i);
    const auto pred = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    correct += pred == labels.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

/// Largest deviation of any per-node, per-head attention sum from 1.
inline double attention_sum_error(const Graph& graph, const Matrix& per_head) {
  double worst = 0.0;
  const auto offsets = graph.row_offsets();
  for (std::size_t h = 0; h < per_head.rows; ++h)
    for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
      double s = 0.0;
      for (std::size_t k = offsets[i]; k < offsets[i + 1]; ++k) s += per_head(h, k);
      worst = std::max(worst, std::abs(s - 1.0));
    }
  return worst;
}

inline double row_sum_error(const Matrix& probs) {
  double worst = 0.0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    double s = 0.0;
    for (double v : probs.row(i)) s += v;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

}  // namespace fgai
