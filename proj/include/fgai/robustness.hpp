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
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "fgai/gat.hpp"
#include "fgai/graph.hpp"

namespace fgai {

/// Node-injection attack: n new nodes, e random edges each joining an injected
/// node to an original node, then l-inf PGD on the injected features.
struct AttackSpec {
  std::size_t n = 20;
  std::size_t e = 20;
  double feature_bound = 0.1;  // fraction of max |X|
  std::size_t pgd_steps = 20;
  double pgd_step_size = 0.0;  // 0 = bound / 5
  std::uint64_t seed = 0;

  void validate() const {
    if (n == 0 || e == 0) throw StructuralError("AttackSpec: n and e must be >= 1");
    if (!(feature_bound > 0.0)) throw StructuralError("AttackSpec: feature_bound must be > 0");
    if (pgd_step_size < 0.0) throw StructuralError("AttackSpec: pgd_step_size must be >= 0");
  }
};

struct AttackResult {
  Dataset perturbed;
  std::vector<std::size_t> edge_map;
  std::vector<NodeId> injected_nodes;
  double start_g_tvd = 0.0;  // after wiring, before feature optimization
  double final_g_tvd = 0.0;
};

inline std::vector<NodeId> iota_nodes(std::size_t n) {
  std::vector<NodeId> v(n);
  std::iota(v.begin(), v.end(), NodeId{0});
  return v;
}

/// (1 / 2|scope|) sum_i ||y_i - y~_i||_1 over original-node rows.
inline double g_tvd(const PredictionMatrix& before, const PredictionMatrix& after,
                    std::span<const NodeId> scope) {
  if (scope.empty()) throw StructuralError("g_tvd: empty node scope");
  if (before.probs.cols != after.probs.cols) throw StructuralError("g_tvd: class counts differ");
  for (NodeId i : scope)
    if (i >= before.probs.rows || i >= after.probs.rows)
      throw StructuralError("g_tvd: node " + std::to_string(i) + " outside both matrices");
  return tvd_value(after.probs, before.probs, scope);
}

/// Jensen-Shannon divergence over the slots common to both graphs, divided by
/// the number of compared slots. Entries are floored at 1e-12; natural log.
inline double g_jsd(std::span<const double> w_before, std::span<const double> w_after,
                    std::span<const std::size_t> edge_map) {
  if (edge_map.empty()) throw StructuralError("g_jsd: no common edge slots");
  if (edge_map.size() != w_before.size())
    throw StructuralError("g_jsd: edge map must cover every slot of the original vector");
  constexpr double kFloor = 1e-12;
  double kl_p = 0.0, kl_q = 0.0;
  for (std::size_t s = 0; s < edge_map.size(); ++s) {
    if (edge_map[s] >= w_after.size()) throw StructuralError("g_jsd: edge map out of range");
    const double p = std::max(w_before[s], kFloor);
    const double q = std::max(w_after[edge_map[s]], kFloor);
    const double m = 0.5 * (p + q);
    kl_p += p * std::log(p / m);
    kl_q += q * std::log(q / m);
  }
  return (kl_p + kl_q) / (2.0 * static_cast<double>(edge_map.size()));
}

inline AttackResult inject_attack(const Dataset& data, const ModelParams& victim,
                                  const AttackSpec& spec) {
  spec.validate();
  data.validate();
  check_dims(data.graph, data.features, victim);
  const std::size_t n0 = data.num_nodes(), f = data.feature_dim();
  const std::size_t total = n0 + spec.n;
  if (spec.e > spec.n * n0) throw StructuralError("AttackSpec: more edges than possible pairs");
  Rng rng(spec.seed ^ 0xa77ac4ull);

  AttackResult res;
  for (std::size_t k = 0; k < spec.n; ++k) res.injected_nodes.push_back(n0 + k);

  auto edges = data.graph.undirected_pairs();
  std::set<EdgePair> added;
  while (added.size() < spec.e) {
    const NodeId inj = n0 + rng.index(spec.n);
    const NodeId orig = rng.index(n0);
    added.emplace(orig, inj);
  }
  edges.insert(edges.end(), added.begin(), added.end());

  Dataset& p = res.perturbed;
  p.name = data.name + "-attacked";
  p.graph = Graph::from_edges(total, edges);
  p.labels = data.labels;
  p.labels.labels.resize(total, 0);
  p.split = data.split;
  p.split.train.resize(total, 0);
  p.split.val.resize(total, 0);
  p.split.test.resize(total, 0);

  std::vector<double> mean(f, 0.0), lo(f, 0.0), hi(f, 0.0);
  double max_abs = 0.0;
  for (std::size_t c = 0; c < f; ++c) {
    lo[c] = hi[c] = data.features(0, c);
    for (std::size_t i = 0; i < n0; ++i) {
      const double v = data.features(i, c);
      mean[c] += v;
      lo[c] = std::min(lo[c], v);
      hi[c] = std::max(hi[c], v);
      max_abs = std::max(max_abs, std::abs(v));
    }
    mean[c] /= static_cast<double>(n0);
  }
  p.features = Matrix(total, f);
  std::copy(data.features.data.begin(), data.features.data.end(), p.features.data.begin());
  for (std::size_t i = n0; i < total; ++i)
    for (std::size_t c = 0; c < f; ++c) p.features(i, c) = mean[c];

  const double bound = spec.feature_bound * max_abs;
  const double step = spec.pgd_step_size > 0.0 ? spec.pgd_step_size : bound / 5.0;
  const auto before = forward_cached(data.graph, data.features, victim);
  const auto scope = iota_nodes(n0);

  auto evaluate = [&](bool with_grad, Matrix* d_features) {
    const auto after = forward_cached(p.graph, p.features, victim);
    const double value = tvd_value(after.probs, before.probs, scope);
    if (with_grad) {
      Matrix d_probs(after.probs.rows, after.probs.cols);
      const double inv = 1.0 / (2.0 * static_cast<double>(n0));
      for (NodeId i : scope)
        for (std::size_t k = 0; k < after.probs.cols; ++k)
          d_probs(i, k) = inv * sign_of(after.probs(i, k) - before.probs(i, k));
      *d_features = backward(p.graph, victim, after, softmax_backward(after.probs, d_probs),
                             nullptr, true)
                        .d_features;
    }
    return value;
  };

  Matrix grad;
  for (std::size_t s = 0; s < spec.pgd_steps; ++s) {
    const double value = evaluate(true, &grad);
    if (s == 0) res.start_g_tvd = value;
    for (std::size_t i = n0; i < total; ++i)
      for (std::size_t c = 0; c < f; ++c) {
        double v = p.features(i, c) + step * sign_of(grad(i, c));
        v = std::clamp(v, mean[c] - bound, mean[c] + bound);
        p.features(i, c) = std::clamp(v, lo[c], hi[c]);
      }
  }
  res.final_g_tvd = evaluate(false, nullptr);
  if (spec.pgd_steps == 0) res.start_g_tvd = res.final_g_tvd;
  res.edge_map = edge_index_map(data.graph, p.graph);
  p.validate();
  return res;
}

/// Ordinary least squares slope of y against x.
inline double ols_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw StructuralError("ols_slope: need >= 2 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw StructuralError("ols_slope: x values are all equal");
  return sxy / sxx;
}

inline const std::vector<double>& default_ratios() {
  static const std::vector<double> r{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  return r;
}

struct FidelityCurve {
  std::vector<double> ratios;
  std::vector<double> f_plus;
  std::vector<double> f_minus;
  double slope_plus = 0.0;
  double slope_minus = 0.0;
  std::size_t correct_nodes = 0;  // |T|
  std::size_t pairs = 0;          // removable undirected pairs
};

/// Undirected non-loop pairs ranked by the mean of their two directed
/// head-averaged weights, most important first (ties: lower pair index).
inline std::vector<std::size_t> rank_pairs(const Graph& graph, std::span<const double> averaged,
                                           std::vector<EdgePair>& pairs_out) {
  pairs_out = graph.undirected_pairs();
  std::vector<double> score(pairs_out.size());
  for (std::size_t k = 0; k < pairs_out.size(); ++k) {
    const auto [u, v] = pairs_out[k];
    score[k] = 0.5 * (averaged[*graph.slot(u, v)] + averaged[*graph.slot(v, u)]);
  }
  std::vector<std::size_t> order(pairs_out.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&score](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  return order;
}

inline std::size_t pairs_removed(double ratio, std::size_t pairs) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(pairs) + 1e-9));
}

/// Graph with the listed pairs removed; self-loops always stay.
inline Graph without_pairs(const Graph& graph, const std::vector<EdgePair>& pairs,
                           std::span<const std::size_t> removed) {
  std::vector<std::uint8_t> drop(pairs.size(), 0);
  for (std::size_t k : removed) drop[k] = 1;
  std::vector<EdgePair> kept;
  for (std::size_t k = 0; k < pairs.size(); ++k)
    if (!drop[k]) kept.push_back(pairs[k]);
  return Graph::from_edges(graph.num_nodes(), kept);
}

/// Retained accuracy on the correctly classified test nodes after removing
/// the most (F+) or least (F-) attended edge pairs.
inline FidelityCurve fidelity_curve(const Dataset& data, const ModelParams& params,
                                    const AttentionState& attention,
                                    std::span<const double> ratios = default_ratios()) {
  if (attention.averaged.size() != data.graph.num_slots())
    throw StructuralError("fidelity_curve: attention does not match the graph");
  for (double r : ratios)
    if (r < 0.0 || r > 0.5) throw StructuralError("fidelity_curve: ratios must lie in [0, 0.5]");
  const auto base = forward(data.graph, data.features, params).second;
  const auto preds = argmax_rows(base.probs);
  std::vector<NodeId> correct;
  for (NodeId i : data.split.test_nodes())
    if (preds[i] == data.labels.labels[i]) correct.push_back(i);
  if (correct.empty()) throw EvaluationError("fidelity_curve: no correctly classified test node");

  std::vector<EdgePair> pairs;
  const auto order = rank_pairs(data.graph, attention.averaged, pairs);

  FidelityCurve curve;
  curve.ratios.assign(ratios.begin(), ratios.end());
  curve.correct_nodes = correct.size();
  curve.pairs = pairs.size();
  auto retained = [&](std::span<const std::size_t> removed) {
    const Graph g = without_pairs(data.graph, pairs, removed);
    const auto y = argmax_rows(forward(g, data.features, params).second.probs);
    std::size_t kept = 0;
    for (NodeId i : correct) kept += y[i] == data.labels.labels[i];
    return static_cast<double>(kept) / static_cast<double>(correct.size());
  };
  for (double r : ratios) {
    const std::size_t m = pairs_removed(r, pairs.size());
    const std::span<const std::size_t> all(order);
    curve.f_plus.push_back(retained(all.first(m)));
    curve.f_minus.push_back(retained(all.last(m)));
  }
  curve.slope_plus = ols_slope(curve.ratios, curve.f_plus);
  curve.slope_minus = ols_slope(curve.ratios, curve.f_minus);
  return curve;
}

/// Diagnostic: same protocol with uniformly random pairs, averaged over seeds.
inline std::vector<double> random_removal_curve(const Dataset& data, const ModelParams& params,
                                                std::span<const double> ratios,
                                                std::span<const std::uint64_t> seeds) {
  const auto base = argmax_rows(forward(data.graph, data.features, params).second.probs);
  std::vector<NodeId> correct;
  for (NodeId i : data.split.test_nodes())
    if (base[i] == data.labels.labels[i]) correct.push_back(i);
  if (correct.empty()) throw EvaluationError("random_removal_curve: no correct test node");
  const auto pairs = data.graph.undirected_pairs();
  std::vector<double> out(ratios.size(), 0.0);
  for (std::uint64_t seed : seeds) {
    Rng rng(seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t k = 0; k < ratios.size(); ++k) {
      const std::size_t m = pairs_removed(ratios[k], pairs.size());
      const Graph g = without_pairs(data.graph, pairs, std::span<const std::size_t>(order).first(m));
      const auto y = argmax_rows(forward(g, data.features, params).second.probs);
      std::size_t kept = 0;
      for (NodeId i : correct) kept += y[i] == data.labels.labels[i];
      out[k] += static_cast<double>(kept) / static_cast<double>(correct.size());
    }
  }
  for (double& v : out) v /= static_cast<double>(seeds.size());
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> values;
};

/// Sample standard deviation; 0 for a single value.
inline MeanStd mean_std(std::vector<double> values) {
  MeanStd m;
  m.values = std::move(values);
  if (m.values.empty()) return m;
  const double n = static_cast<double>(m.values.size());
  m.mean = std::accumulate(m.values.begin(), m.values.end(), 0.0) / n;
  if (m.values.size() > 1) {
    double ss = 0.0;
    for (double v : m.values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / (n - 1.0));
  }
  return m;
}

struct StabilityRun {
  std::uint64_t seed = 0;
  double f1 = 0.0;
  double f1_attacked = 0.0;
  double g_tvd = 0.0;
  double g_jsd = 0.0;
};

struct StabilityReport {
  std::vector<StabilityRun> runs;
  MeanStd f1, f1_attacked, g_tvd, g_jsd;
};

inline StabilityRun stability_run(const Dataset& data, const ModelParams& params,
                                  const AttackResult& attack, std::uint64_t seed) {
  const auto test = data.split.test_nodes();
  const auto [att0, pred0] = forward(data.graph, data.features, params);
  const auto [att1, pred1] = forward(attack.perturbed.graph, attack.perturbed.features, params);
  StabilityRun run;
  run.seed = seed;
  run.f1 = micro_f1(pred0, data.labels, test);
  run.f1_attacked = micro_f1(pred1, attack.perturbed.labels, test);
  run.g_tvd = g_tvd(pred0, pred1, iota_nodes(data.num_nodes()));
  run.g_jsd = g_jsd(att0.averaged, att1.averaged, attack.edge_map);
  return run;
}

inline StabilityReport aggregate(std::vector<StabilityRun> runs) {
  StabilityReport rep;
  std::vector<double> f1, f1a, tvd, jsd;
  for (const auto& r : runs) {
    f1.push_back(r.f1);
    f1a.push_back(r.f1_attacked);
    tvd.push_back(r.g_tvd);
    jsd.push_back(r.g_jsd);
  }
  rep.runs = std::move(runs);
  rep.f1 = mean_std(f1);
  rep.f1_attacked = mean_std(f1a);
  rep.g_tvd = mean_std(tvd);
  rep.g_jsd = mean_std(jsd);
  return rep;
}

/// Attacks the model once per seed and reports clean/attacked test F1 and
/// the two divergences, with mean and sample std across seeds.
inline StabilityReport stability_report(const Dataset& data, const ModelParams& params,
                                        AttackSpec spec, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw StructuralError("stability_report: empty seed list");
  std::vector<StabilityRun> runs;
  for (std::uint64_t s : seeds) {
    spec.seed = s;
    runs.push_back(stability_run(data, params, inject_attack(data, params, spec), s));
  }
  return aggregate(std::move(runs));
}

}  // namespace fgai
