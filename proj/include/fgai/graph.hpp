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
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fgai/common.hpp"

namespace fgai {

using NodeId = std::size_t;
using EdgePair = std::pair<NodeId, NodeId>;

/// Immutable CSR adjacency. Every undirected edge is stored as two directed
/// slots and every node carries exactly one self-loop slot. Slots are ordered
/// by (row, col); the slot position is the stable edge id.
class Graph {
 public:
  Graph() = default;

  /// Symmetrizes `edges`, collapses duplicates and adds one self-loop per node.
  static Graph from_edges(std::size_t num_nodes, std::span<const EdgePair> edges) {
    std::vector<EdgePair> slots;
    slots.reserve(2 * edges.size() + num_nodes);
    for (const auto& [u, v] : edges) {
      if (u >= num_nodes || v >= num_nodes)
        throw StructuralError("edge (" + std::to_string(u) + "," + std::to_string(v) +
                              ") references a node outside [0, " +
                              std::to_string(num_nodes) + ")");
      slots.emplace_back(u, v);
      slots.emplace_back(v, u);
    }
    for (NodeId i = 0; i < num_nodes; ++i) slots.emplace_back(i, i);
    std::sort(slots.begin(), slots.end());
    slots.erase(std::unique(slots.begin(), slots.end()), slots.end());

    Graph g;
    g.num_nodes_ = num_nodes;
    g.row_offsets_.assign(num_nodes + 1, 0);
    g.col_indices_.reserve(slots.size());
    g.sources_.reserve(slots.size());
    for (const auto& [u, v] : slots) {
      ++g.row_offsets_[u + 1];
      g.col_indices_.push_back(v);
      g.sources_.push_back(u);
    }
    for (std::size_t i = 0; i < num_nodes; ++i) g.row_offsets_[i + 1] += g.row_offsets_[i];
    return g;
  }

  std::size_t num_nodes() const noexcept { return num_nodes_; }
  /// Directed slot count |E'|, self-loops included.
  std::size_t num_slots() const noexcept { return col_indices_.size(); }

  std::span<const std::size_t> row_offsets() const noexcept { return row_offsets_; }
  std::span<const NodeId> col_indices() const noexcept { return col_indices_; }
  /// Row (target node i of e_ij) for every slot.
  std::span<const NodeId> sources() const noexcept { return sources_; }

  std::span<const NodeId> neighbors(NodeId i) const {
    return std::span<const NodeId>(col_indices_).subspan(
        row_offsets_[i], row_offsets_[i + 1] - row_offsets_[i]);
  }
  std::size_t degree(NodeId i) const { return row_offsets_[i + 1] - row_offsets_[i]; }

  /// Slot id of the directed pair (u, v), if present.
  std::optional<std::size_t> slot(NodeId u, NodeId v) const {
    if (u >= num_nodes_) return std::nullopt;
    const auto nbrs = neighbors(u);
    const auto it = std::lower_bound(nbrs.begin(), nbrs.end(), v);
    if (it == nbrs.end() || *it != v) return std::nullopt;
    return row_offsets_[u] + static_cast<std::size_t>(it - nbrs.begin());
  }

  /// Undirected non-self-loop pairs (u < v) in slot order.
  std::vector<EdgePair> undirected_pairs() const {
    std::vector<EdgePair> pairs;
    for (std::size_t s = 0; s < num_slots(); ++s)
      if (sources_[s] < col_indices_[s]) pairs.emplace_back(sources_[s], col_indices_[s]);
    return pairs;
  }

  bool operator==(const Graph&) const = default;

 private:
  std::size_t num_nodes_ = 0;
  std::vector<std::size_t> row_offsets_{0};
  std::vector<NodeId> col_indices_;
  std::vector<NodeId> sources_;
};

struct LabelVector {
  std::vector<int> labels;
  int num_classes = 0;

  bool operator==(const LabelVector&) const = default;
};

struct SplitMask {
  std::vector<std::uint8_t> train, val, test;

  static std::vector<NodeId> nodes_of(std::span<const std::uint8_t> mask) {
    std::vector<NodeId> out;
    for (NodeId i = 0; i < mask.size(); ++i)
      if (mask[i]) out.push_back(i);
    return out;
  }
  std::vector<NodeId> train_nodes() const { return nodes_of(train); }
  std::vector<NodeId> val_nodes() const { return nodes_of(val); }
  std::vector<NodeId> test_nodes() const { return nodes_of(test); }
  std::vector<NodeId> train_val_nodes() const {
    std::vector<NodeId> out;
    for (NodeId i = 0; i < train.size(); ++i)
      if (train[i] || val[i]) out.push_back(i);
    return out;
  }

  bool operator==(const SplitMask&) const = default;
};

/// Features are stored as an N x F `Matrix`.
struct Dataset {
  std::string name;
  Graph graph;
  Matrix features;
  LabelVector labels;
  SplitMask split;

  std::size_t num_nodes() const { return graph.num_nodes(); }
  std::size_t feature_dim() const { return features.cols; }
  int num_classes() const { return labels.num_classes; }

  void validate() const {
    const std::size_t n = graph.num_nodes();
    if (features.rows != n)
      throw StructuralError("feature rows (" + std::to_string(features.rows) +
                            ") != node count (" + std::to_string(n) + ")");
    if (!all_finite(features.data)) throw StructuralError("non-finite feature value");
    if (labels.labels.size() != n)
      throw StructuralError("label count (" + std::to_string(labels.labels.size()) +
                            ") != node count (" + std::to_string(n) + ")");
    if (labels.num_classes < 2) throw StructuralError("class count must be >= 2");
    for (int y : labels.labels)
      if (y < 0 || y >= labels.num_classes)
        throw StructuralError("label " + std::to_string(y) + " outside [0, C)");
    if (split.train.size() != n || split.val.size() != n || split.test.size() != n)
      throw StructuralError("split mask length != node count");
    bool any_train = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (split.train[i] + split.val[i] + split.test[i] > 1)
        throw StructuralError("split masks overlap at node " + std::to_string(i));
      any_train = any_train || split.train[i];
    }
    if (!any_train) throw StructuralError("train split is empty");
  }

  bool operator==(const Dataset&) const = default;
};

/// Seeded per-class 10/10/80 split.
inline SplitMask stratified_split(const LabelVector& labels, std::uint64_t seed) {
  const std::size_t n = labels.labels.size();
  SplitMask split{std::vector<std::uint8_t>(n, 0), std::vector<std::uint8_t>(n, 0),
                  std::vector<std::uint8_t>(n, 0)};
  Rng rng(seed ^ 0x5bd1e995ull);
  for (int c = 0; c < labels.num_classes; ++c) {
    std::vector<NodeId> members;
    for (NodeId i = 0; i < n; ++i)
      if (labels.labels[i] == c) members.push_back(i);
    rng.shuffle(members);
    const auto tenth = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < members.size(); ++k) {
      if (k < tenth)
        split.train[members[k]] = 1;
      else if (k < 2 * tenth)
        split.val[members[k]] = 1;
      else
        split.test[members[k]] = 1;
    }
  }
  return split;
}

struct SbmParams {
  std::size_t blocks = 2;
  std::size_t nodes_per_block = 50;
  double p_in = 0.2;
  double p_out = 0.01;
  std::size_t feature_dim = 8;
  double feature_shift = 1.0;
  std::uint64_t seed = 0;
};

/// Stochastic block model with Gaussian features. The block id is the label;
/// block b's feature mean is `feature_shift` along axis b.
inline Dataset generate_sbm(const SbmParams& p) {
  if (p.blocks < 2) throw StructuralError("SBM needs at least 2 blocks");
  if (p.nodes_per_block == 0) throw StructuralError("nodes_per_block must be >= 1");
  if (!(p.p_out >= 0.0 && p.p_out < p.p_in && p.p_in <= 1.0) &&
      !(p.p_in == 0.0 && p.p_out == 0.0))
    throw StructuralError("SBM requires 0 <= p_out < p_in <= 1");
  if (!(p.feature_shift > 0.0)) throw StructuralError("feature_shift must be > 0");
  if (p.feature_dim < p.blocks)
    throw StructuralError("feature_dim must be >= blocks so block means are distinct");

  const std::size_t n = p.blocks * p.nodes_per_block;
  Rng rng(p.seed);

  LabelVector labels;
  labels.num_classes = static_cast<int>(p.blocks);
  labels.labels.resize(n);
  for (NodeId i = 0; i < n; ++i) labels.labels[i] = static_cast<int>(i / p.nodes_per_block);

  std::vector<EdgePair> edges;
  for (NodeId u = 0; u < n; ++u)
    for (NodeId v = u + 1; v < n; ++v) {
      const double prob = labels.labels[u] == labels.labels[v] ? p.p_in : p.p_out;
      if (rng.uniform() < prob) edges.emplace_back(u, v);
    }

  Matrix x(n, p.feature_dim);
  for (NodeId i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < p.feature_dim; ++f) x(i, f) = rng.normal();
    x(i, static_cast<std::size_t>(labels.labels[i])) += p.feature_shift;
  }

  Dataset d;
  d.name = "sbm-" + std::to_string(p.blocks) + "x" + std::to_string(p.nodes_per_block) +
           "-s" + std::to_string(p.seed);
  d.graph = Graph::from_edges(n, edges);
  d.features = std::move(x);
  d.labels = std::move(labels);
  d.split = stratified_split(d.labels, p.seed);
  d.validate();
  return d;
}

/// Maps every slot of `before` to the slot holding the same (u, v) in `after`.
inline std::vector<std::size_t> edge_index_map(const Graph& before, const Graph& after) {
  if (after.num_nodes() < before.num_nodes())
    throw StructuralError("edge_index_map: `after` has fewer nodes than `before`");
  std::vector<std::size_t> map(before.num_slots());
  for (std::size_t s = 0; s < before.num_slots(); ++s) {
    const NodeId u = before.sources()[s];
    const NodeId v = before.col_indices()[s];
    const auto t = after.slot(u, v);
    if (!t)
      throw StructuralError("edge_index_map: edge (" + std::to_string(u) + "," +
                            std::to_string(v) + ") missing from the perturbed graph");
    map[s] = *t;
  }
  return map;
}

}  // namespace fgai
