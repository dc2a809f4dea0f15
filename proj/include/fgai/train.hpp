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
#include <ostream>
#include <vector>

#include "fgai/dataset_io.hpp"
#include "fgai/gat.hpp"

namespace fgai {

/// Adam with L2 regularization folded into the gradient.
class Adam {
 public:
  Adam(const ModelParams& shape, double lr, double weight_decay = 0.0, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps),
        m_(shape.zeros_like()), v_(shape.zeros_like()) {}

  void step(ModelParams& params, const ModelParams& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    auto update = [&](Matrix& p, const Matrix& g, Matrix& m, Matrix& v) {
      for (std::size_t k = 0; k < p.data.size(); ++k) {
        const double gk = g.data[k] + wd_ * p.data[k];
        m.data[k] = b1_ * m.data[k] + (1.0 - b1_) * gk;
        v.data[k] = b2_ * v.data[k] + (1.0 - b2_) * gk * gk;
        p.data[k] -= lr_ * (m.data[k] / c1) / (std::sqrt(v.data[k] / c2) + eps_);
      }
    };
    update(params.W, grads.W, m_.W, v_.W);
    update(params.att, grads.att, m_.att, v_.att);
    update(params.out_W, grads.out_W, m_.out_W, v_.out_W);
    update(params.out_b, grads.out_b, m_.out_b, v_.out_b);
  }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  ModelParams m_, v_;
  long t_ = 0;
};

struct TrainHyper {
  Variant variant = Variant::kGat;
  std::size_t heads = 8;
  std::size_t hidden = 8;
  double lr = 0.01;
  double weight_decay = 5e-4;
  std::size_t epochs = 200;
  double dropout = 0.0;
  std::uint64_t seed = 0;
};

struct TrainLogRow {
  std::size_t epoch;
  double loss, train_f1, val_f1;
  bool operator==(const TrainLogRow&) const = default;
};

struct TrainResult {
  ModelParams params;
  std::vector<TrainLogRow> log;
  double best_val_f1 = 0.0;
};

inline void write_train_log(std::ostream& out, const std::vector<TrainLogRow>& log) {
  out << "epoch,loss,train_f1,val_f1\n";
  for (const auto& r : log)
    out << r.epoch << ',' << detail::format_double(r.loss) << ','
        << detail::format_double(r.train_f1) << ',' << detail::format_double(r.val_f1) << '\n';
}

inline DropoutMasks draw_dropout(Rng& rng, std::size_t n, std::size_t f, std::size_t heads,
                                 std::size_t slots, double p) {
  DropoutMasks m;
  if (p <= 0.0) return m;
  const double keep = 1.0 / (1.0 - p);
  m.features = Matrix(n, f);
  for (double& v : m.features.data) v = rng.uniform() < p ? 0.0 : keep;
  m.attention = Matrix(heads, slots);
  for (double& v : m.attention.data) v = rng.uniform() < p ? 0.0 : keep;
  return m;
}

/// Full-batch Adam on train-mask cross-entropy. Returns the parameters with
/// the best validation micro-F1 (earliest epoch on ties).
inline TrainResult train_vanilla(const Dataset& data, const TrainHyper& hyper) {
  if (hyper.epochs < 1) throw StructuralError("train_vanilla: epochs must be >= 1");
  if (hyper.dropout < 0.0 || hyper.dropout >= 1.0)
    throw StructuralError("train_vanilla: dropout must be in [0, 1)");
  data.validate();
  const auto train_nodes = data.split.train_nodes();
  auto val_nodes = data.split.val_nodes();
  if (val_nodes.empty()) val_nodes = train_nodes;

  TrainResult res;
  auto params = init_params(hyper.variant, data.feature_dim(), hyper.heads, hyper.hidden,
                            static_cast<std::size_t>(data.num_classes()), hyper.seed);
  Adam opt(params, hyper.lr, hyper.weight_decay);
  Rng drop_rng(hyper.seed ^ 0x9e3779b97f4a7c15ull);
  res.params = params;
  res.best_val_f1 = -1.0;

  for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
    const auto masks = draw_dropout(drop_rng, data.num_nodes(), data.feature_dim(), hyper.heads,
                                    data.graph.num_slots(), hyper.dropout);
    const auto [loss, grads] = loss_and_grad(data.graph, data.features, params, data.labels,
                                             train_nodes, hyper.dropout > 0.0 ? &masks : nullptr);
    if (!std::isfinite(loss) || !all_finite(grads.d_params.W.data))
      throw TrainingError("training diverged at epoch " + std::to_string(epoch));

    const auto [att, preds] = forward(data.graph, data.features, params);
    const double train_f1 = micro_f1(preds, data.labels, train_nodes);
    const double val_f1 = micro_f1(preds, data.labels, val_nodes);
    res.log.push_back({epoch, loss, train_f1, val_f1});
    if (val_f1 > res.best_val_f1) {
      res.best_val_f1 = val_f1;
      res.params = params;
    }
    opt.step(params, grads.d_params);
  }
  return res;
}

}  // namespace fgai
