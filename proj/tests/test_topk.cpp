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

#include "fgai/topk.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fgai {
namespace {

using testing_util::fd_relative_error;

std::vector<std::size_t> idx(std::initializer_list<std::size_t> v) { return v; }

TEST(TopK, WorkedExamples) {
  EXPECT_EQ(top_k_indices(std::vector<double>{0.5, 0.3, 0.2}, 2).indices, idx({0, 1}));
  EXPECT_EQ(top_k_indices(std::vector<double>{0.4, 0.4, 0.2}, 1).indices, idx({0}));
  EXPECT_EQ(top_k_indices(std::vector<double>{0.4, 0.4, 0.2}, 5).indices, idx({0, 1, 2}));
  EXPECT_THROW(top_k_indices(std::vector<double>{1.0}, 0), StructuralError);
}

TEST(TopK, MatchesBruteForceForAllSmallSizes) {
  Rng rng(1);
  for (std::size_t n = 1; n <= 12; ++n) {
    for (int trial = 0; trial < 6; ++trial) {
      std::vector<double> x(n);
      // Even trials use small integers so ties are frequent and sums exact.
      for (double& v : x)
        v = trial % 2 == 0 ? static_cast<double>(rng.index(4)) : rng.uniform(-1.0, 1.0);
      for (std::size_t k = 1; k <= n + 1; ++k)
        ASSERT_EQ(top_k_indices(x, k).indices, oracle::brute_force_top_k(x, k)) << "n=" << n << " k=" << k;
    }
  }
}

TEST(TopK, SelectionIsInvariantToPositiveAffineMaps) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(20);
    for (double& v : x) v = static_cast<double>(rng.index(6));
    std::vector<double> y(x.size());
    // Power-of-two scale and integer shift keep the map exact.
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = 4.0 * x[i] - 3.0;
    const std::size_t k = 1 + rng.index(20);
    EXPECT_EQ(top_k_indices(x, k).indices, top_k_indices(y, k).indices);
  }
}

TEST(Overlap, WorkedExamples) {
  EXPECT_EQ(top_k_overlap(std::vector<double>{0.5, 0.3, 0.2}, std::vector<double>{0.9, 0.051, 0.049}, 2).ratio, 1.0);
  EXPECT_EQ(top_k_overlap(std::vector<double>{0.6, 0.4}, std::vector<double>{0.4, 0.6}, 1).ratio, 0.0);
  EXPECT_EQ(top_k_overlap(std::vector<double>{0.1, 0.4, 0.5}, std::vector<double>{0.5, 0.4, 0.1}, 2).ratio, 0.5);
}

TEST(Overlap, SymmetricAndReflexive) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.index(30);
    std::vector<double> x(n), y(n);
    for (double& v : x) v = rng.uniform();
    for (double& v : y) v = rng.uniform();
    const std::size_t k = 1 + rng.index(n);
    EXPECT_EQ(top_k_overlap(x, y, k).ratio, top_k_overlap(y, x, k).ratio);
    EXPECT_EQ(top_k_overlap(x, x, k).ratio, 1.0);
    const double r = top_k_overlap(x, y, k).ratio;
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST(Overlap, DifferentLengthsUseSharedRange) {
  const std::vector<double> x{0.9, 0.1, 0.5};
  const std::vector<double> y{0.9, 0.1, 0.5, 2.0, 3.0};
  EXPECT_EQ(top_k_overlap(x, y, 2).ratio, 0.0);
  EXPECT_EQ(top_k_overlap(x, y, 3).ratio, 1.0 / 3.0);
}

TEST(Surrogate, WorkedExamples) {
  const std::vector<double> a{0.6, 0.4}, b{0.4, 0.6};
  EXPECT_NEAR(surrogate_loss(a, b, 1), 0.2, 1e-15);
  const std::vector<double> c{0.7, 0.3}, d{0.2, 0.8};
  EXPECT_NEAR(surrogate_loss(c, d, 2), 0.5, 1e-15);
  EXPECT_EQ(surrogate_loss(a, a, 1), 0.0);
  EXPECT_THROW(surrogate_loss(a, std::vector<double>{1.0}, 1), StructuralError);
  EXPECT_THROW(surrogate_loss_grad(a, std::vector<double>{1.0}, 1, SurrogateWrt::kSecond),
               StructuralError);
}

TEST(Surrogate, ZeroExactlyWhenTopSetsAgree) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.index(15);
    const std::size_t k = 1 + rng.index(n);
    std::vector<double> w(n);
    for (double& v : w) v = rng.uniform();
    auto wt = w;
    // Perturb a random subset; some trials touch only entries outside both sets.
    for (std::size_t i = 0; i < n; ++i)
      if (rng.uniform() < 0.3) wt[i] = rng.uniform() * 0.5 * (trial % 3 == 0 ? 0.01 : 1.0);
    const auto in_w = top_k_mask(w, k), in_wt = top_k_mask(wt, k);
    bool agree = true;
    for (std::size_t i = 0; i < n; ++i)
      if ((in_w[i] || in_wt[i]) && w[i] != wt[i]) agree = false;
    EXPECT_EQ(surrogate_loss(w, wt, k) == 0.0, agree);
    if (agree) {
      // Strict separation of w's top set implies full overlap.
      double min_in = 2.0, max_out = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (in_w[i]) min_in = std::min(min_in, w[i]);
        else max_out = std::max(max_out, w[i]);
      }
      if (min_in > max_out) {
        EXPECT_EQ(top_k_overlap(w, wt, k).ratio, 1.0);
      }
    }
  }
}

TEST(SurrogateGrad, EqualVectorsGiveZero) {
  const std::vector<double> w{0.3, 0.2, 0.5};
  const auto g = surrogate_loss_grad(w, w, 2, SurrogateWrt::kBoth);
  for (double v : g.d_second) EXPECT_EQ(v, 0.0);
  for (double v : g.d_first) EXPECT_EQ(v, 0.0);
}

TEST(SurrogateGrad, EntriesOutsideBothSetsAreZero) {
  const std::vector<double> w{0.9, 0.8, 0.1, 0.2}, wt{0.7, 0.95, 0.15, 0.05};
  const auto g = surrogate_loss_grad(w, wt, 2, SurrogateWrt::kBoth);
  EXPECT_EQ(g.d_second[2], 0.0);
  EXPECT_EQ(g.d_second[3], 0.0);
  EXPECT_NE(g.d_second[0], 0.0);
  EXPECT_TRUE(g.d_first.size() == 4);
  EXPECT_EQ(surrogate_loss_grad(w, wt, 2, SurrogateWrt::kSecond).d_first.size(), 0u);
}

bool near_boundary(const std::vector<double>& x, std::size_t k, double h) {
  std::vector<double> s = x;
  std::sort(s.begin(), s.end(), std::greater<>());
  return k < s.size() && s[k - 1] - s[k] < 4.0 * h;
}

TEST(SurrogateGrad, MatchesFiniteDifferencesAwayFromTies) {
  Rng rng(5);
  constexpr double h = 1e-5;
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 40; ++trial) {
    std::vector<double> w(10), wt(10);
    for (double& v : w) v = rng.uniform();
    for (double& v : wt) v = rng.uniform();
    bool tie = near_boundary(w, 4, h) || near_boundary(wt, 4, h);
    for (std::size_t i = 0; i < 10; ++i) tie = tie || std::abs(w[i] - wt[i]) < 4.0 * h;
    if (tie) continue;
    ++checked;
    const auto g = surrogate_loss_grad(w, wt, 4, SurrogateWrt::kBoth);
    EXPECT_LE(fd_relative_error(wt, g.d_second, [&] { return surrogate_loss(w, wt, 4); }), 1e-4);
    EXPECT_LE(fd_relative_error(w, g.d_first, [&] { return surrogate_loss(w, wt, 4); }), 1e-4);
  }
  EXPECT_EQ(checked, 40);
}

TEST(SurrogateGrad, MaskedOverloadMatches) {
  Rng rng(6);
  std::vector<double> w(50), wt(50);
  for (double& v : w) v = rng.uniform();
  for (double& v : wt) v = rng.uniform();
  const auto a = surrogate_loss_grad(w, wt, 17, SurrogateWrt::kBoth);
  const auto b = surrogate_loss_grad(w, wt, top_k_mask(w, 17), top_k_mask(wt, 17), 17,
                                     SurrogateWrt::kBoth);
  EXPECT_EQ(a.d_first, b.d_first);
  EXPECT_EQ(a.d_second, b.d_second);
  EXPECT_EQ(surrogate_loss(w, wt, 17),
            surrogate_loss(w, wt, top_k_mask(w, 17), top_k_mask(wt, 17), 17));
}

}  // namespace
}  // namespace fgai
