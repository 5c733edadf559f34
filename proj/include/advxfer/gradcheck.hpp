#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "advxfer/rng.hpp"
#include "advxfer/tensor.hpp"

namespace advxfer {

// Compares the autodiff gradient of a scalar-valued function against central
// finite differences, coordinate by coordinate. `fn` must rebuild its graph
// from the current leaf values on every call and be deterministic. Returns
// the maximum relative error, |g_ad - g_fd| / max(|g_ad|, |g_fd|, floor).
//
// With max_coords > 0 a seeded random subset of at least 50 coordinates is
// checked instead of all of them.
template <typename S>
double finite_diff_check(const std::function<Tensor<S>()>& fn, Tensor<S>& input, double step,
                         int max_coords = 0, uint64_t coord_seed = 0,
                         double denom_floor = 1e-3) {
  if (!input.requires_grad()) throw ConfigError("finite_diff_check: input must require grad");
  input.zero_grad();
  Tensor<S> loss = fn();
  loss.backward();
  if (!input.has_grad()) throw ConfigError("finite_diff_check: fn does not reach the input");
  std::vector<double> g_ad(input.grad().begin(), input.grad().end());

  std::vector<int64_t> coords(static_cast<size_t>(input.size()));
  std::iota(coords.begin(), coords.end(), 0);
  if (max_coords > 0 && static_cast<int64_t>(coords.size()) > max_coords) {
    int64_t want = std::max<int64_t>(50, max_coords);
    Rng rng(coord_seed);
    for (int64_t i = 0; i < want && i < static_cast<int64_t>(coords.size()); ++i) {
      int64_t j = rng.uniform_int(i, static_cast<int64_t>(coords.size()) - 1);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(static_cast<size_t>(std::min<int64_t>(want, coords.size())));
  }

  double max_err = 0.0;
  auto& v = input.values();
  for (int64_t idx : coords) {
    S saved = v[idx];
    v[idx] = saved + static_cast<S>(step);
    double f_plus = static_cast<double>(fn().item());
    v[idx] = saved - static_cast<S>(step);
    double f_minus = static_cast<double>(fn().item());
    v[idx] = saved;
    double g_fd = (f_plus - f_minus) / (2.0 * step);
    double denom = std::max({std::abs(g_ad[idx]), std::abs(g_fd), denom_floor});
    max_err = std::max(max_err, std::abs(g_ad[idx] - g_fd) / denom);
  }
  return max_err;
}

}  // namespace advxfer
