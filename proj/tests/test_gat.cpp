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

#include <gtest/gtest.h>

#include <sstream>

#include "fgai/gat.hpp"
#include "fgai/model_io.hpp"
#include "fgai/robustness.hpp"
#include "fgai/train.hpp"
#include "test_util.hpp"

namespace fgai {
namespace {

using testing_util::fd_relative_error;
using testing_util::random_dataset;

constexpr double kFdTolerance = 1e-4;

ModelParams random_params(Variant v, const Dataset& d, std::uint64_t seed, std::size_t heads = 3,
                          std::size_t hidden = 4) {
  auto p = init_params(v, d.feature_dim(), heads, hidden,
                       static_cast<std::size_t>(d.num_classes()), seed);
  Rng rng(seed + 100);
  for (double& b : p.out_b.data) b = rng.uniform(-0.5, 0.5);
  return p;
}

std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> v;
  p.for_each_tensor([&v](const char*, const Matrix& m) { v.insert(v.end(), m.data.begin(), m.data.end()); });
  return v;
}

void unflatten(const std::vector<double>& v, ModelParams& p) {
  std::size_t k = 0;
  p.for_each_tensor([&](const char*, Matrix& m) {
    for (double& x : m.data) x = v[k++];
  });
}

class GradientCheck : public ::testing::TestWithParam<Variant> {};

TEST_P(GradientCheck, ParametersMatchFiniteDifferences) {
  const auto d = random_dataset(3, 30, 5, 3);
  auto params = random_params(GetParam(), d, 4);
  const auto nodes = d.split.train_val_nodes();
  const auto analytic = flatten(loss_and_grad(d.graph, d.features, params, d.labels, nodes).second.d_params);
  auto x = flatten(params);
  const double err = fd_relative_error(x, analytic, [&] {
    unflatten(x, params);
    return loss_and_grad(d.graph, d.features, params, d.labels, nodes).first;
  });
  EXPECT_LE(err, kFdTolerance);
}

TEST_P(GradientCheck, OverrideMatchesFiniteDifferencesForTvd) {
  const auto d = random_dataset(5, 30, 4, 3);
  const auto params = random_params(GetParam(), d, 6);
  const auto other = random_params(GetParam(), d, 7);
  const auto reference = forward(d.graph, d.features, other).second;
  const auto [att, pred] = forward(d.graph, d.features, params);
  Matrix w = att.per_head;
  Rng rng(8);
  for (double& v : w.data) v += rng.uniform(-0.05, 0.05);
  const TvdToReference loss{&reference, d.split.train_val_nodes()};
  const auto analytic = grad_wrt_override(d.graph, d.features, params, w, loss);
  const double err = fd_relative_error(w.data, analytic.data, [&] {
    return tvd_value(forward_with_override(d.graph, d.features, params, w).probs,
                     reference.probs, loss.nodes);
  });
  EXPECT_LE(err, kFdTolerance);
}

TEST_P(GradientCheck, OverrideMatchesFiniteDifferencesForCrossEntropy) {
  const auto d = random_dataset(9, 25, 4, 2);
  const auto params = random_params(GetParam(), d, 10);
  Matrix w = forward(d.graph, d.features, params).first.per_head;
  const CrossEntropyLoss loss{&d.labels, d.split.train_nodes()};
  const auto analytic = grad_wrt_override(d.graph, d.features, params, w, loss);
  const double err = fd_relative_error(w.data, analytic.data, [&] {
    return loss_and_grad_wrt_override(d.graph, d.features, params, w, loss).first;
  });
  EXPECT_LE(err, kFdTolerance);
}

TEST_P(GradientCheck, FeaturesMatchFiniteDifferences) {
  const auto d = random_dataset(11, 20, 3, 3);
  const auto params = random_params(GetParam(), d, 12);
  Matrix x = d.features;
  const auto nodes = d.split.train_nodes();
  auto ce = [&](const Matrix& feats) {
    const auto c = forward_cached(d.graph, feats, params);
    double loss = 0.0;
    Matrix dl(c.probs.rows, c.probs.cols);
    for (NodeId i : nodes) {
      const auto y = static_cast<std::size_t>(d.labels.labels[i]);
      loss -= std::log(c.probs(i, y)) / static_cast<double>(nodes.size());
      for (std::size_t k = 0; k < c.probs.cols; ++k)
        dl(i, k) += (c.probs(i, k) - (k == y ? 1.0 : 0.0)) / static_cast<double>(nodes.size());
    }
    return std::make_pair(loss, backward(d.graph, params, c, dl, nullptr, true).d_features);
  };
  const auto analytic = ce(x).second;
  const double err = fd_relative_error(x.data, analytic.data, [&] { return ce(x).first; });
  EXPECT_LE(err, kFdTolerance);
}

TEST_P(GradientCheck, AttentionExtraGradientFlowsThroughSoftmax) {
  // Scalar s = sum(c .* w) for a fixed random c; d s / d w = c.
  const auto d = random_dataset(13, 20, 3, 2);
  auto params = random_params(GetParam(), d, 14);
  Matrix coef(params.heads, d.graph.num_slots());
  Rng rng(15);
  for (double& v : coef.data) v = rng.uniform(-1.0, 1.0);
  auto scalar = [&] {
    const auto w = forward_cached(d.graph, d.features, params).attention;
    double s = 0.0;
    for (std::size_t k = 0; k < w.data.size(); ++k) s += coef.data[k] * w.data[k];
    return s;
  };
  const auto c = forward_cached(d.graph, d.features, params);
  const Matrix zero_logits(c.probs.rows, c.probs.cols);
  const auto analytic = flatten(backward(d.graph, params, c, zero_logits, &coef).d_params);
  auto x = flatten(params);
  const double err = fd_relative_error(x, analytic, [&] {
    unflatten(x, params);
    return scalar();
  });
  EXPECT_LE(err, kFdTolerance);
}

INSTANTIATE_TEST_SUITE_P(Variants, GradientCheck, ::testing::Values(Variant::kGat, Variant::kGatV2),
                         [](const auto& info) { return to_string(info.param) == "GAT" ? std::string("Gat") : std::string("GatV2"); });

TEST(Forward, SingletonNodeHasUnitAttention) {
  const auto g = Graph::from_edges(1, {});
  Matrix x(1, 2, 0.5);
  const auto params = init_params(Variant::kGat, 2, 8, 8, 2, 1);
  const auto att = forward(g, x, params).first;
  for (double w : att.per_head.data) EXPECT_EQ(w, 1.0);
}

TEST(Forward, IdenticalNeighborsShareAttentionEqually) {
  const std::vector<EdgePair> edges{{0, 1}, {0, 2}};
  const auto g = Graph::from_edges(3, edges);
  Matrix x(3, 4, 0.3);
  for (auto v : {Variant::kGat, Variant::kGatV2}) {
    const auto params = init_params(v, 4, 8, 8, 2, 2);
    const auto att = forward(g, x, params).first;
    for (std::size_t h = 0; h < 8; ++h)
      for (std::size_t s = 0; s < 3; ++s) EXPECT_NEAR(att.per_head(h, s), 1.0 / 3.0, 1e-15);
  }
}

TEST(Forward, AttentionAndPredictionsAreNormalized) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto d = random_dataset(seed, 40, 6, 4);
    for (auto v : {Variant::kGat, Variant::kGatV2}) {
      const auto [att, pred] = forward(d.graph, d.features, random_params(v, d, seed));
      EXPECT_LE(attention_sum_error(d.graph, att.per_head), 1e-9);
      EXPECT_LE(row_sum_error(pred.probs), 1e-9);
      for (double w : att.per_head.data) {
        EXPECT_GE(w, 0.0);
        EXPECT_LE(w, 1.0);
      }
      for (std::size_t s = 0; s < att.averaged.size(); ++s) {
        double mean = 0.0;
        for (std::size_t h = 0; h < att.per_head.rows; ++h) mean += att.per_head(h, s);
        EXPECT_DOUBLE_EQ(att.averaged[s], mean / static_cast<double>(att.per_head.rows));
      }
    }
  }
}

TEST(Forward, OwnAttentionOverrideIsBitwiseIdentical) {
  for (auto v : {Variant::kGat, Variant::kGatV2}) {
    const auto d = random_dataset(21, 30, 5, 3);
    const auto params = random_params(v, d, 22);
    const auto [att, pred] = forward(d.graph, d.features, params);
    EXPECT_EQ(forward_with_override(d.graph, d.features, params, att.per_head), pred);
    const Matrix zero(params.heads, d.graph.num_slots());
    const auto c = forward_cached(d.graph, d.features, params, AttentionSource::additive(zero));
    EXPECT_EQ(c.probs, pred.probs);
  }
}

TEST(Forward, ZeroOverrideLeavesBiasPath) {
  const auto d = random_dataset(23, 30, 5, 3);
  const auto params = random_params(Variant::kGat, d, 24);
  const Matrix zero(params.heads, d.graph.num_slots());
  const auto pred = forward_with_override(d.graph, d.features, params, zero);
  Matrix bias = params.out_b;
  detail::softmax_rows(bias);
  for (std::size_t i = 0; i < d.num_nodes(); ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(pred.probs(i, k), bias(0, k));
  EXPECT_LE(row_sum_error(pred.probs), 1e-9);
}

TEST(Forward, BumpedOverrideChangesPredictions) {
  const auto d = random_dataset(25, 30, 5, 3);
  const auto params = random_params(Variant::kGat, d, 26);
  const auto [att, pred] = forward(d.graph, d.features, params);
  Matrix bumped = att.per_head;
  bumped(0, 0) += 0.1;
  const auto after = forward_with_override(d.graph, d.features, params, bumped);
  EXPECT_GT(g_tvd(pred, after, iota_nodes(d.num_nodes())), 0.0);
}

TEST(Forward, OverrideShapeMismatchIsStructural) {
  const auto d = random_dataset(27, 10, 3, 2);
  const auto params = random_params(Variant::kGat, d, 28);
  EXPECT_THROW(forward_with_override(d.graph, d.features, params, Matrix(params.heads, 3)),
               StructuralError);
  EXPECT_THROW(forward(d.graph, Matrix(10, 4), params), StructuralError);
}

TEST(Forward, NonFiniteParameterNamesStage) {
  const auto d = random_dataset(29, 10, 3, 2);
  auto params = random_params(Variant::kGat, d, 30);
  params.W(0, 0) = std::numeric_limits<double>::infinity();
  try {
    forward(d.graph, d.features, params);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("linear transform"), std::string::npos);
  }
}

TEST(Forward, VariantsAgreeWhenLeakyReluIsLinear) {
  // Positive features and weights keep every pre-activation positive.
  const std::vector<EdgePair> edges{{0, 1}, {1, 2}, {2, 3}, {0, 3}};
  const auto g = Graph::from_edges(4, edges);
  Matrix x(4, 3);
  Rng rng(31);
  for (double& v : x.data) v = rng.uniform(0.1, 1.0);
  auto gat = init_params(Variant::kGat, 3, 2, 4, 2, 32);
  for (double& v : gat.W.data) v = std::abs(v);
  for (double& v : gat.att.data) v = std::abs(v);
  auto v2 = gat;
  v2.variant = Variant::kGatV2;
  gat.leaky_slope = v2.leaky_slope = 1.0;
  const auto a = forward(g, x, gat);
  const auto b = forward(g, x, v2);
  for (std::size_t k = 0; k < a.first.per_head.data.size(); ++k)
    EXPECT_NEAR(a.first.per_head.data[k], b.first.per_head.data[k], 1e-15);
}

TEST(Loss, EmptyMaskIsStructural) {
  const auto d = random_dataset(33, 10, 3, 2);
  const auto params = random_params(Variant::kGat, d, 34);
  EXPECT_THROW(loss_and_grad(d.graph, d.features, params, d.labels, std::vector<NodeId>{}),
               StructuralError);
}

TEST(Loss, DuplicatedMaskGivesSameLoss) {
  const auto d = random_dataset(35, 20, 3, 2);
  const auto params = random_params(Variant::kGat, d, 36);
  auto nodes = d.split.train_nodes();
  const double once = loss_and_grad(d.graph, d.features, params, d.labels, nodes).first;
  nodes.insert(nodes.end(), nodes.begin(), nodes.end());
  EXPECT_NEAR(loss_and_grad(d.graph, d.features, params, d.labels, nodes).first, once, 1e-15);
}

TEST(Loss, ConfidentCorrectPredictionsHaveVanishingLossAndGradient) {
  const auto d = random_dataset(37, 12, 3, 2);
  auto params = random_params(Variant::kGat, d, 38);
  for (double& v : params.out_W.data) v = 0.0;
  // Node i's bias pushes every node toward class 0; keep only class-0 nodes.
  params.out_b(0, 0) = 60.0;
  std::vector<NodeId> zeros;
  for (NodeId i = 0; i < d.num_nodes(); ++i)
    if (d.labels.labels[i] == 0) zeros.push_back(i);
  const auto [loss, g] = loss_and_grad(d.graph, d.features, params, d.labels, zeros);
  EXPECT_LT(loss, 1e-20);
  for (double v : flatten(g.d_params)) EXPECT_LT(std::abs(v), 1e-20);
}

TEST(Loss, TvdSubgradientAtTiesIsFinite) {
  const auto d = random_dataset(39, 20, 3, 2);
  const auto params = random_params(Variant::kGat, d, 40);
  const auto [att, pred] = forward(d.graph, d.features, params);
  const TvdToReference loss{&pred, d.split.train_val_nodes()};
  const auto g = grad_wrt_override(d.graph, d.features, params, att.per_head, loss);
  EXPECT_TRUE(all_finite(g.data));
  for (double v : g.data) EXPECT_EQ(v, 0.0);
}

TEST(Loss, ZeroFeaturesGiveZeroOverrideGradient) {
  const auto d = random_dataset(41, 20, 3, 2);
  const auto params = random_params(Variant::kGat, d, 42);
  const Matrix x(d.num_nodes(), d.feature_dim());
  const auto w = forward(d.graph, x, params).first.per_head;
  const CrossEntropyLoss loss{&d.labels, d.split.train_nodes()};
  for (double v : grad_wrt_override(d.graph, x, params, w, loss).data) EXPECT_EQ(v, 0.0);
}

TEST(Metrics, MicroF1Counts) {
  PredictionMatrix p{Matrix(4, 2)};
  for (std::size_t i = 0; i < 4; ++i) p.probs(i, i % 2) = 1.0;
  LabelVector right{{0, 1, 0, 1}, 2}, wrong{{1, 0, 1, 0}, 2}, three{{0, 1, 0, 0}, 2};
  const std::vector<NodeId> all{0, 1, 2, 3};
  EXPECT_EQ(micro_f1(p, right, all), 1.0);
  EXPECT_EQ(micro_f1(p, wrong, all), 0.0);
  EXPECT_EQ(micro_f1(p, three, all), 0.75);
  EXPECT_THROW(micro_f1(p, right, std::vector<NodeId>{}), StructuralError);
}

TEST(ModelIo, RoundTripIsExact) {
  const auto d = random_dataset(43, 10, 3, 2);
  for (auto v : {Variant::kGat, Variant::kGatV2}) {
    const auto params = random_params(v, d, 44);
    const auto back = params_from_json(nlohmann::json::parse(params_to_json(params).dump()));
    EXPECT_EQ(back, params);
  }
}

TEST(ModelIo, RejectsWrongVersionAndShapes) {
  const auto d = random_dataset(45, 10, 3, 2);
  auto j = nlohmann::json::parse(params_to_json(random_params(Variant::kGat, d, 46)).dump());
  auto bad_version = j;
  bad_version["version"] = 99;
  EXPECT_THROW(params_from_json(bad_version), StructuralError);
  auto bad_shape = j;
  bad_shape["heads"] = 7;
  EXPECT_THROW(params_from_json(bad_shape), StructuralError);
}

TEST(Training, SeparableSbmReachesHighValidationF1) {
  SbmParams p;
  p.blocks = 2;
  p.nodes_per_block = 50;
  p.p_in = 0.2;
  p.p_out = 0.01;
  p.feature_shift = 1.0;
  p.seed = 7;
  const auto d = generate_sbm(p);
  TrainHyper h;
  h.seed = 7;
  const auto res = train_vanilla(d, h);
  EXPECT_GE(res.best_val_f1, 0.9);
  EXPECT_EQ(res.log.size(), 200u);
  const auto pred = forward(d.graph, d.features, res.params).second;
  EXPECT_EQ(micro_f1(pred, d.labels, d.split.val_nodes()), res.best_val_f1);
}

TEST(Training, DeterministicUnderSeed) {
  const auto d = random_dataset(47, 30, 4, 3);
  TrainHyper h;
  h.epochs = 15;
  h.seed = 3;
  const auto a = train_vanilla(d, h);
  const auto b = train_vanilla(d, h);
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(a.params, b.params);
  h.dropout = 0.5;
  EXPECT_EQ(train_vanilla(d, h).log, train_vanilla(d, h).log);
}

TEST(Training, RejectsZeroEpochsAndReportsDivergence) {
  const auto d = random_dataset(49, 20, 3, 2);
  TrainHyper h;
  h.epochs = 0;
  EXPECT_THROW(train_vanilla(d, h), StructuralError);
  h.epochs = 5;
  h.lr = 1e300;
  EXPECT_THROW(train_vanilla(d, h), NumericalError);
}

TEST(Training, LogCsvHeader) {
  std::ostringstream out;
  write_train_log(out, {{1, 0.5, 0.25, 0.75}});
  EXPECT_EQ(out.str(), "epoch,loss,train_f1,val_f1\n1,0.5,0.25,0.75\n");
}

}  // namespace
}  // namespace fgai
