#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cscope/rng.hpp"
#include "cscope/tensor.hpp"

namespace cscope {

/// Central-finite-difference verification of the analytic gradients of a
/// scalar-valued function. For each probed coordinate the relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-2); the maximum over
/// all probes is returned. The function must be deterministic: any internal
/// randomness (dropout masks) has to be re-seeded identically per call.
inline double grad_check(const std::function<Tensor(std::vector<Tensor>&)>& f, std::vector<Tensor>& inputs,
                         double h = 1e-5, int max_coords_per_input = 64, uint64_t seed = 1234) {
  for (auto& t : inputs)
    if (t.requires_grad()) t.zero_grad();

  Tensor out = f(inputs);
  out.backward();

  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.push_back(t.grad());

  Rng rng(seed);
  double max_rel = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    if (!inputs[ti].requires_grad()) continue;
    auto& vals = inputs[ti].values();
    const int n = static_cast<int>(vals.size());
    std::vector<int> coords;
    if (n <= max_coords_per_input) {
      for (int i = 0; i < n; ++i) coords.push_back(i);
    } else {
      coords = rng.sample_indices(n, max_coords_per_input);
    }
    for (int c : coords) {
      const double keep = vals[static_cast<size_t>(c)];
      vals[static_cast<size_t>(c)] = keep + h;
      const double f_plus = f(inputs).scalar();
      vals[static_cast<size_t>(c)] = keep - h;
      const double f_minus = f(inputs).scalar();
      vals[static_cast<size_t>(c)] = keep;
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[ti][static_cast<size_t>(c)];
      const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-2});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace cscope
