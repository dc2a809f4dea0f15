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
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "fgai/common.hpp"

namespace fgai {

/// Indices of the k largest entries, ascending by index.
struct TopKSet {
  std::size_t k = 0;
  std::vector<std::size_t> indices;
};

struct OverlapReport {
  std::size_t k = 0;
  double ratio = 0.0;
};

/// Membership mask of the k largest entries. Ties at the k-th value go to the
/// lower indices; k larger than the vector selects everything.
inline std::vector<std::uint8_t> top_k_mask(std::span<const double> x, std::size_t k) {
  if (k == 0) throw StructuralError("top_k_indices: k must be >= 1");
  std::vector<std::uint8_t> in(x.size(), 0);
  if (k >= x.size()) {
    std::fill(in.begin(), in.end(), std::uint8_t{1});
    return in;
  }
  std::vector<double> values(x.begin(), x.end());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   values.end(), std::greater<>());
  const double kth = values[k - 1];
  std::size_t taken = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > kth) {
      in[i] = 1;
      ++taken;
    }
  for (std::size_t i = 0; i < x.size() && taken < k; ++i)
    if (x[i] == kth) {
      in[i] = 1;
      ++taken;
    }
  return in;
}

inline TopKSet top_k_indices(std::span<const double> x, std::size_t k) {
  const auto in = top_k_mask(x, k);
  TopKSet out;
  out.k = k;
  for (std::size_t i = 0; i < in.size(); ++i)
    if (in[i]) out.indices.push_back(i);
  return out;
}

/// V_k(x, x') = |T_k(x) ∩ T_k(x')| / k. The vectors may differ in length.
inline OverlapReport top_k_overlap(std::span<const double> x, std::span<const double> xp,
                                   std::size_t k) {
  const auto a = top_k_indices(x, k);
  const auto b = top_k_indices(xp, k);
  std::vector<std::size_t> common;
  std::set_intersection(a.indices.begin(), a.indices.end(), b.indices.begin(), b.indices.end(),
                        std::back_inserter(common));
  return {k, static_cast<double>(common.size()) / static_cast<double>(k)};
}

namespace detail {

inline void check_surrogate_sizes(const char* what, std::size_t w, std::size_t wt,
                                  std::size_t in_w, std::size_t in_wt, std::size_t k) {
  if (w != wt || in_w != w || in_wt != w)
    throw StructuralError(std::string(what) + ": vectors differ in length (" + std::to_string(w) +
                          " vs " + std::to_string(wt) + ")");
  if (k == 0) throw StructuralError(std::string(what) + ": k must be >= 1");
}

}  // namespace detail

/// L_k(w, w~) with the two top-k membership masks supplied by the caller.
inline double surrogate_loss(std::span<const double> w, std::span<const double> wt,
                             std::span<const std::uint8_t> in_w,
                             std::span<const std::uint8_t> in_wt, std::size_t k) {
  detail::check_surrogate_sizes("surrogate_loss", w.size(), wt.size(), in_w.size(), in_wt.size(), k);
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    s += static_cast<double>(in_w[i] + in_wt[i]) * std::abs(w[i] - wt[i]);
  return s / (2.0 * static_cast<double>(k));
}

/// L_k(w, w~) = (1/2k) (||w_S - w~_S||_1 + ||w~_S~ - w_S~||_1), with S and S~
/// the top-k index sets of w and w~.
inline double surrogate_loss(std::span<const double> w, std::span<const double> wt,
                             std::size_t k) {
  detail::check_surrogate_sizes("surrogate_loss", w.size(), wt.size(), w.size(), w.size(), k);
  return surrogate_loss(w, wt, top_k_mask(w, k), top_k_mask(wt, k), k);
}

enum class SurrogateWrt { kSecond, kBoth };

struct SurrogateGrad {
  std::vector<double> d_first;   // empty unless kBoth
  std::vector<double> d_second;
};

inline SurrogateGrad surrogate_loss_grad(std::span<const double> w, std::span<const double> wt,
                                         std::span<const std::uint8_t> in_w,
                                         std::span<const std::uint8_t> in_wt, std::size_t k,
                                         SurrogateWrt wrt) {
  detail::check_surrogate_sizes("surrogate_loss_grad", w.size(), wt.size(), in_w.size(),
                                in_wt.size(), k);
  const double scale = 1.0 / (2.0 * static_cast<double>(k));
  SurrogateGrad g;
  g.d_second.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    g.d_second[i] = scale * static_cast<double>(in_w[i] + in_wt[i]) * sign_of(wt[i] - w[i]);
  if (wrt == SurrogateWrt::kBoth) {
    g.d_first.resize(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) g.d_first[i] = -g.d_second[i];
  }
  return g;
}

/// Subgradient of `surrogate_loss` with both index sets held fixed and
/// sign(0) = 0, so equal entries contribute nothing.
inline SurrogateGrad surrogate_loss_grad(std::span<const double> w, std::span<const double> wt,
                                         std::size_t k, SurrogateWrt wrt) {
  detail::check_surrogate_sizes("surrogate_loss_grad", w.size(), wt.size(), w.size(), w.size(), k);
  return surrogate_loss_grad(w, wt, top_k_mask(w, k), top_k_mask(wt, k), k, wrt);
}

}  // namespace fgai
