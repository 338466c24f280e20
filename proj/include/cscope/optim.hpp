#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cscope/error.hpp"
#include "cscope/tensor.hpp"

namespace cscope {

enum class OptKind { sgd, adam };

/// Optimizer state shared across steps. Adam moments are allocated lazily to
/// match the parameter list on the first step.
struct OptimizerState {
  OptKind kind = OptKind::sgd;
  double learning_rate = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int64_t step_count = 0;
  std::vector<std::vector<double>> m, v;

  static OptimizerState sgd(double lr) {
    OptimizerState s;
    s.kind = OptKind::sgd;
    s.learning_rate = lr;
    return s;
  }
  static OptimizerState adam(double lr) {
    OptimizerState s;
    s.kind = OptKind::adam;
    s.learning_rate = lr;
    return s;
  }
};

/// One update over the parameter list using each tensor's accumulated grad.
/// SGD: p -= lr*g. Adam: bias-corrected first/second moments.
inline void optimizer_step(std::vector<Tensor>& params, OptimizerState& st) {
  if (st.kind == OptKind::adam) {
    if (st.m.empty()) {
      for (const auto& p : params) {
        st.m.emplace_back(p.values().size(), 0.0);
        st.v.emplace_back(p.values().size(), 0.0);
      }
    }
    if (st.m.size() != params.size()) fail(errc::shape_mismatch, "optimizer state tracks a different parameter list");
  }
  st.step_count += 1;

  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values();
    const auto& g = params[pi].grad();
    if (st.kind == OptKind::sgd) {
      for (size_t i = 0; i < vals.size(); ++i) vals[i] -= st.learning_rate * g[i];
    } else {
      auto& m = st.m[pi];
      auto& v = st.v[pi];
      if (m.size() != vals.size()) fail(errc::shape_mismatch, "moment size does not match parameter");
      const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
      const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
      for (size_t i = 0; i < vals.size(); ++i) {
        m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
        v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        vals[i] -= st.learning_rate * mhat / (std::sqrt(vhat) + st.epsilon);
      }
    }
  }
}

}  // namespace cscope
