#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "cscope/error.hpp"
#include "cscope/rng.hpp"

namespace cscope {

using Shape = std::vector<int64_t>;

inline int64_t shape_product(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

inline void accumulate(const std::shared_ptr<TensorNode>& node, const std::vector<double>& delta) {
  node->ensure_grad();
  for (size_t i = 0; i < delta.size(); ++i) node->grad[i] += delta[i];
}

}  // namespace detail

/// Reverse-mode autodiff value: an n-dimensional array plus the graph edge
/// that produced it. Copying a Tensor copies the handle, not the data.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  static Tensor filled(Shape shape, double value, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->values.assign(static_cast<size_t>(shape_product(t.node_->shape)), value);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (static_cast<size_t>(shape_product(shape)) != values.size())
      fail(errc::shape_mismatch, "value count does not match shape " + shape_string(shape));
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return static_cast<int64_t>(node_->values.size()); }
  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

  double scalar() const {
    if (node_->values.size() != 1) fail(errc::shape_mismatch, "scalar() on tensor of size " + std::to_string(size()));
    return node_->values[0];
  }

  /// Backpropagate from this scalar through the graph that produced it.
  void backward() {
    if (node_->values.size() != 1) fail(errc::shape_mismatch, "backward() requires a scalar root");
    // Topological order by iterative post-order DFS.
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> seen;
    std::vector<std::pair<detail::TensorNode*, size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, child] = stack.back();
      if (child < n->parents.size()) {
        detail::TensorNode* p = n->parents[child++].get();
        if (seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::TensorNode* n = *it;
      if (n->backward_fn) {
        n->ensure_grad();
        n->backward_fn(*n);
      }
    }
  }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

private:
  std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  bool rg = false;
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    rg = rg || p.node()->requires_grad || !p.node()->parents.empty();
  }
  n->requires_grad = false;
  if (rg) n->backward_fn = std::move(backward_fn);
  return Tensor::wrap(n);
}

// ---------------------------------------------------------------------------
// Row-major GEMM kernels with fixed summation order (bitwise reproducible).
// ---------------------------------------------------------------------------

/// C[m x n] = A[m x k] * B[k x n] (+= when accumulate).
inline void gemm(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    if (!accumulate)
      for (int64_t j = 0; j < n; ++j) c[j] = 0.0;
    const double* a = A + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      const double* b = B + p * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

/// C[k x n] = A^T * B for A[m x k], B[m x n] (+= when accumulate).
inline void gemm_at(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n, bool accumulate) {
  if (!accumulate)
    for (int64_t i = 0; i < k * n; ++i) C[i] = 0.0;
  for (int64_t r = 0; r < m; ++r) {
    const double* a = A + r * k;
    const double* b = B + r * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      double* c = C + p * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

/// C[m x k] = A * B^T for A[m x n], B[k x n] (+= when accumulate).
inline void gemm_bt(const double* A, const double* B, double* C, int64_t m, int64_t n, int64_t k, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    const double* a = A + i * n;
    double* c = C + i * k;
    for (int64_t j = 0; j < k; ++j) {
      const double* b = B + j * n;
      double dot = 0;
      for (int64_t p = 0; p < n; ++p) dot += a[p] * b[p];
      if (accumulate)
        c[j] += dot;
      else
        c[j] = dot;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core layers
// ---------------------------------------------------------------------------

/// Fully connected layer: out[B,O] = x[B,I] * w[I,O] + b[O].
inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || b.shape().size() != 1)
    fail(errc::shape_mismatch, "dense expects x[B,I], w[I,O], b[O]");
  const int64_t B = x.shape()[0], I = x.shape()[1], O = w.shape()[1];
  if (w.shape()[0] != I || b.shape()[0] != O)
    fail(errc::shape_mismatch, "dense shapes disagree: x" + shape_string(x.shape()) + " w" + shape_string(w.shape()));

  std::vector<double> out(static_cast<size_t>(B * O));
  detail::gemm(x.values().data(), w.values().data(), out.data(), B, I, O, false);
  for (int64_t i = 0; i < B; ++i)
    for (int64_t j = 0; j < O; ++j) out[static_cast<size_t>(i * O + j)] += b.values()[static_cast<size_t>(j)];

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return detail::make_op(
      {B, O}, std::move(out), {x, w, b}, [xn, wn, bn, B, I, O](detail::TensorNode& n) {
        xn->ensure_grad();
        wn->ensure_grad();
        bn->ensure_grad();
        // dx = dout * w^T ; dw = x^T * dout ; db = column sums of dout
        detail::gemm_bt(n.grad.data(), wn->values.data(), xn->grad.data(), B, O, I, true);
        detail::gemm_at(xn->values.data(), n.grad.data(), wn->grad.data(), B, I, O, true);
        for (int64_t i = 0; i < B; ++i)
          for (int64_t j = 0; j < O; ++j) bn->grad[static_cast<size_t>(j)] += n.grad[static_cast<size_t>(i * O + j)];
      });
}

namespace detail {

struct ConvDims {
  int64_t B, Cin, D, H, W, Cout, kd, kh, kw, od, oh, ow;
  int64_t K() const { return Cin * kd * kh * kw; }
  int64_t N() const { return od * oh * ow; }
};

inline ConvDims conv_dims(const Shape& xs, const Shape& ks) {
  if (xs.size() != 5 || ks.size() != 5) fail(errc::shape_mismatch, "conv3d expects x[B,C,D,H,W], k[Co,Ci,kd,kh,kw]");
  ConvDims d{xs[0], xs[1], xs[2], xs[3], xs[4], ks[0], ks[2], ks[3], ks[4], 0, 0, 0};
  if (ks[1] != d.Cin) fail(errc::shape_mismatch, "kernel input channels disagree with input");
  if (d.D < d.kd || d.H < d.kh || d.W < d.kw)
    fail(errc::input_too_small, "input " + shape_string(xs) + " smaller than kernel " + shape_string(ks));
  d.od = d.D - d.kd + 1;
  d.oh = d.H - d.kh + 1;
  d.ow = d.W - d.kw + 1;
  return d;
}

/// Unfold one sample into a [K x N] patch matrix.
inline void im2col(const double* x, const ConvDims& d, std::vector<double>& cols) {
  cols.resize(static_cast<size_t>(d.K() * d.N()));
  const int64_t N = d.N();
  int64_t r = 0;
  for (int64_t ci = 0; ci < d.Cin; ++ci)
    for (int64_t dz = 0; dz < d.kd; ++dz)
      for (int64_t dy = 0; dy < d.kh; ++dy)
        for (int64_t dx = 0; dx < d.kw; ++dx, ++r) {
          double* dst = cols.data() + r * N;
          for (int64_t z = 0; z < d.od; ++z)
            for (int64_t y = 0; y < d.oh; ++y) {
              const double* src = x + ((ci * d.D + z + dz) * d.H + y + dy) * d.W + dx;
              double* row = dst + (z * d.oh + y) * d.ow;
              for (int64_t w = 0; w < d.ow; ++w) row[w] = src[w];
            }
        }
}

/// Scatter-add a [K x N] patch-gradient matrix back onto one sample.
inline void col2im_add(const std::vector<double>& cols, const ConvDims& d, double* gx) {
  const int64_t N = d.N();
  int64_t r = 0;
  for (int64_t ci = 0; ci < d.Cin; ++ci)
    for (int64_t dz = 0; dz < d.kd; ++dz)
      for (int64_t dy = 0; dy < d.kh; ++dy)
        for (int64_t dx = 0; dx < d.kw; ++dx, ++r) {
          const double* src = cols.data() + r * N;
          for (int64_t z = 0; z < d.od; ++z)
            for (int64_t y = 0; y < d.oh; ++y) {
              double* dst = gx + ((ci * d.D + z + dz) * d.H + y + dy) * d.W + dx;
              const double* row = src + (z * d.oh + y) * d.ow;
              for (int64_t w = 0; w < d.ow; ++w) dst[w] += row[w];
            }
        }
}

}  // namespace detail

/// Valid (no-padding) stride-1 3D cross-correlation:
/// out[B,Co,D-kd+1,H-kh+1,W-kw+1] from x[B,Ci,D,H,W] and k[Co,Ci,kd,kh,kw].
inline Tensor conv3d(const Tensor& x, const Tensor& k, const Tensor& b) {
  const detail::ConvDims d = detail::conv_dims(x.shape(), k.shape());
  if (b.shape().size() != 1 || b.shape()[0] != d.Cout) fail(errc::shape_mismatch, "conv3d bias must be [Cout]");

  const int64_t K = d.K(), N = d.N();
  std::vector<double> out(static_cast<size_t>(d.B * d.Cout * N));
  std::vector<double> cols;
  for (int64_t s = 0; s < d.B; ++s) {
    detail::im2col(x.values().data() + s * d.Cin * d.D * d.H * d.W, d, cols);
    double* os = out.data() + s * d.Cout * N;
    detail::gemm(k.values().data(), cols.data(), os, d.Cout, K, N, false);
    for (int64_t co = 0; co < d.Cout; ++co) {
      const double bias = b.values()[static_cast<size_t>(co)];
      double* row = os + co * N;
      for (int64_t j = 0; j < N; ++j) row[j] += bias;
    }
  }

  auto xn = x.node();
  auto kn = k.node();
  auto bn = b.node();
  return detail::make_op(
      {d.B, d.Cout, d.od, d.oh, d.ow}, std::move(out), {x, k, b}, [xn, kn, bn, d](detail::TensorNode& n) {
        xn->ensure_grad();
        kn->ensure_grad();
        bn->ensure_grad();
        const int64_t K = d.K(), N = d.N();
        std::vector<double> cols, dcols(static_cast<size_t>(K * N));
        for (int64_t s = 0; s < d.B; ++s) {
          const double* dout = n.grad.data() + s * d.Cout * N;
          detail::im2col(xn->values.data() + s * d.Cin * d.D * d.H * d.W, d, cols);
          // dW += dout * cols^T ; dcols = W^T * dout ; db += row sums
          detail::gemm_bt(dout, cols.data(), kn->grad.data(), d.Cout, N, K, true);
          detail::gemm_at(kn->values.data(), dout, dcols.data(), d.Cout, K, N, false);
          detail::col2im_add(dcols, d, xn->grad.data() + s * d.Cin * d.D * d.H * d.W);
          for (int64_t co = 0; co < d.Cout; ++co) {
            double sum = 0;
            const double* row = dout + co * N;
            for (int64_t j = 0; j < N; ++j) sum += row[j];
            bn->grad[static_cast<size_t>(co)] += sum;
          }
        }
      });
}

/// Non-overlapping max pooling with cubic window `size`; trailing odd slices
/// are dropped. Gradient flows to the first maximal element in scan order.
inline Tensor maxpool3d(const Tensor& x, int64_t size = 2) {
  if (x.shape().size() != 5) fail(errc::shape_mismatch, "maxpool3d expects x[B,C,D,H,W]");
  const int64_t B = x.shape()[0], C = x.shape()[1], D = x.shape()[2], H = x.shape()[3], W = x.shape()[4];
  if (D < size || H < size || W < size) fail(errc::input_too_small, "input smaller than the pooling window");
  const int64_t od = D / size, oh = H / size, ow = W / size;

  std::vector<double> out(static_cast<size_t>(B * C * od * oh * ow));
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  const double* xv = x.values().data();
  size_t oi = 0;
  for (int64_t s = 0; s < B; ++s)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t z = 0; z < od; ++z)
        for (int64_t y = 0; y < oh; ++y)
          for (int64_t w = 0; w < ow; ++w, ++oi) {
            double best = -std::numeric_limits<double>::infinity();
            int64_t best_idx = -1;
            for (int64_t dz = 0; dz < size; ++dz)
              for (int64_t dy = 0; dy < size; ++dy)
                for (int64_t dx = 0; dx < size; ++dx) {
                  int64_t idx = (((s * C + c) * D + z * size + dz) * H + y * size + dy) * W + w * size + dx;
                  if (xv[idx] > best) {  // strict: first occurrence wins ties
                    best = xv[idx];
                    best_idx = idx;
                  }
                }
            out[oi] = best;
            (*argmax)[oi] = best_idx;
          }

  auto xn = x.node();
  return detail::make_op({B, C, od, oh, ow}, std::move(out), {x}, [xn, argmax](detail::TensorNode& n) {
    xn->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) xn->grad[static_cast<size_t>((*argmax)[i])] += n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

enum class Mode { train, eval };

/// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
  std::vector<double> mean, var;

  explicit BatchNormStats(int64_t channels = 0)
      : mean(static_cast<size_t>(channels), 0.0), var(static_cast<size_t>(channels), 1.0) {}
};

/// Per-feature normalization for x[B,F], per-channel for x[B,C,D,H,W].
/// Train mode normalizes with batch statistics (population variance) and
/// updates the running stats in place; eval mode uses the running stats.
inline Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                        Mode mode, double momentum = 0.1, double epsilon = 1e-5) {
  const auto& xs = x.shape();
  int64_t C, spatial;
  if (xs.size() == 2) {
    C = xs[1];
    spatial = 1;
  } else if (xs.size() == 5) {
    C = xs[1];
    spatial = xs[2] * xs[3] * xs[4];
  } else {
    fail(errc::shape_mismatch, "batchnorm expects x[B,F] or x[B,C,D,H,W]");
  }
  const int64_t B = xs[0];
  if (gamma.size() != C || beta.size() != C) fail(errc::shape_mismatch, "gamma/beta must have one entry per channel");
  if (static_cast<int64_t>(stats.mean.size()) != C) fail(errc::shape_mismatch, "running stats sized for a different channel count");
  if (mode == Mode::train && B < 2) fail(errc::batch_too_small, "batchnorm needs a batch of at least 2 in train mode");

  const int64_t M = B * spatial;  // reduction size per channel
  const double* xv = x.values().data();
  auto channel_of = [C, spatial](int64_t i) { return (i / spatial) % C; };

  std::vector<double> mu(static_cast<size_t>(C), 0.0), varv(static_cast<size_t>(C), 0.0);
  if (mode == Mode::train) {
    for (int64_t i = 0; i < static_cast<int64_t>(x.values().size()); ++i) mu[static_cast<size_t>(channel_of(i))] += xv[i];
    for (auto& m : mu) m /= static_cast<double>(M);
    for (int64_t i = 0; i < static_cast<int64_t>(x.values().size()); ++i) {
      const double dlt = xv[i] - mu[static_cast<size_t>(channel_of(i))];
      varv[static_cast<size_t>(channel_of(i))] += dlt * dlt;
    }
    for (auto& v : varv) v /= static_cast<double>(M);
    for (int64_t c = 0; c < C; ++c) {
      stats.mean[static_cast<size_t>(c)] = (1.0 - momentum) * stats.mean[static_cast<size_t>(c)] + momentum * mu[static_cast<size_t>(c)];
      stats.var[static_cast<size_t>(c)] = (1.0 - momentum) * stats.var[static_cast<size_t>(c)] + momentum * varv[static_cast<size_t>(c)];
    }
  } else {
    mu = stats.mean;
    varv = stats.var;
  }

  auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) (*invstd)[static_cast<size_t>(c)] = 1.0 / std::sqrt(varv[static_cast<size_t>(c)] + epsilon);

  auto xhat = std::make_shared<std::vector<double>>(x.values().size());
  std::vector<double> out(x.values().size());
  for (int64_t i = 0; i < static_cast<int64_t>(out.size()); ++i) {
    const auto c = static_cast<size_t>(channel_of(i));
    (*xhat)[static_cast<size_t>(i)] = (xv[i] - mu[c]) * (*invstd)[c];
    out[static_cast<size_t>(i)] = gamma.values()[c] * (*xhat)[static_cast<size_t>(i)] + beta.values()[c];
  }

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  const bool train = mode == Mode::train;
  return detail::make_op(
      xs, std::move(out), {x, gamma, beta},
      [xn, gn, bn, xhat, invstd, C, spatial, M, train, channel_of](detail::TensorNode& n) {
        xn->ensure_grad();
        gn->ensure_grad();
        bn->ensure_grad();
        const size_t total = n.grad.size();
        std::vector<double> sum_dy(static_cast<size_t>(C), 0.0), sum_dy_xhat(static_cast<size_t>(C), 0.0);
        for (size_t i = 0; i < total; ++i) {
          const auto c = static_cast<size_t>(channel_of(static_cast<int64_t>(i)));
          sum_dy[c] += n.grad[i];
          sum_dy_xhat[c] += n.grad[i] * (*xhat)[i];
        }
        for (int64_t c = 0; c < C; ++c) {
          gn->grad[static_cast<size_t>(c)] += sum_dy_xhat[static_cast<size_t>(c)];
          bn->grad[static_cast<size_t>(c)] += sum_dy[static_cast<size_t>(c)];
        }
        if (train) {
          // dx = gamma*invstd/M * (M*dy - sum(dy) - xhat*sum(dy*xhat))
          for (size_t i = 0; i < total; ++i) {
            const auto c = static_cast<size_t>(channel_of(static_cast<int64_t>(i)));
            const double g = gn->values[c] * (*invstd)[c] / static_cast<double>(M);
            xn->grad[i] += g * (static_cast<double>(M) * n.grad[i] - sum_dy[c] - (*xhat)[i] * sum_dy_xhat[c]);
          }
        } else {
          for (size_t i = 0; i < total; ++i) {
            const auto c = static_cast<size_t>(channel_of(static_cast<int64_t>(i)));
            xn->grad[i] += n.grad[i] * gn->values[c] * (*invstd)[c];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

namespace selu_constants {
constexpr double lambda = 1.0507009873554805;
constexpr double alpha = 1.6732632423543772;
}  // namespace selu_constants

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0 ? x.values()[i] : 0.0;
  auto xn = x.node();
  return detail::make_op(x.shape(), std::move(out), {x}, [xn](detail::TensorNode& n) {
    xn->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (xn->values[i] > 0) xn->grad[i] += n.grad[i];
  });
}

inline Tensor selu(const Tensor& x) {
  using namespace selu_constants;
  std::vector<double> out(x.values().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = v > 0 ? lambda * v : lambda * alpha * (std::exp(v) - 1.0);
  }
  auto xn = x.node();
  return detail::make_op(x.shape(), std::move(out), {x}, [xn](detail::TensorNode& n) {
    xn->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      const double v = xn->values[i];
      xn->grad[i] += n.grad[i] * (v > 0 ? lambda : lambda * alpha * std::exp(v));
    }
  });
}

inline double sigmoid_scalar(double v) {
  // branch form avoids overflow in exp for large |v|
  if (v >= 0) {
    const double e = std::exp(-v);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(x.values()[i]);
  auto xn = x.node();
  auto saved = std::make_shared<std::vector<double>>(out);
  return detail::make_op(x.shape(), std::move(out), {x}, [xn, saved](detail::TensorNode& n) {
    xn->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      const double s = (*saved)[i];
      xn->grad[i] += n.grad[i] * s * (1.0 - s);
    }
  });
}

/// Inverted dropout: zero with probability `rate`, scale survivors by
/// 1/(1-rate). Eval mode is the identity. The mask is held for backward.
inline Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(errc::range_error, "dropout rate must be in [0,1)");
  if (mode == Mode::eval || rate == 0.0) {
    auto xn = x.node();
    return detail::make_op(x.shape(), x.values(), {x}, [xn](detail::TensorNode& n) {
      xn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i];
    });
  }
  const double scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.values().size());
  std::vector<double> out(x.values().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double m = rng.uniform() < rate ? 0.0 : scale;
    (*mask)[i] = m;
    out[i] = x.values()[i] * m;
  }
  auto xn = x.node();
  return detail::make_op(x.shape(), std::move(out), {x}, [xn, mask](detail::TensorNode& n) {
    xn->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// Losses and penalties
// ---------------------------------------------------------------------------

constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy over the batch; probabilities are clamped to
/// [1e-7, 1-1e-7] and the clamp blocks gradient outside that band.
inline Tensor bce_loss(const Tensor& p, const std::vector<double>& y) {
  const int64_t B = p.shape()[0];
  if (p.size() != static_cast<int64_t>(y.size()) || B != static_cast<int64_t>(y.size()))
    fail(errc::shape_mismatch, "bce_loss needs one probability per label");
  constexpr double eps = kBceClamp;
  double loss = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    const double pc = std::clamp(p.values()[i], eps, 1.0 - eps);
    loss += -(y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc));
  }
  loss /= static_cast<double>(B);

  auto pn = p.node();
  auto labels = std::make_shared<std::vector<double>>(y);
  return detail::make_op({1}, {loss}, {p}, [pn, labels, B](detail::TensorNode& n) {
    pn->ensure_grad();
    const double g = n.grad[0] / static_cast<double>(B);
    for (size_t i = 0; i < labels->size(); ++i) {
      const double pv = pn->values[i];
      if (pv < kBceClamp || pv > 1.0 - kBceClamp) continue;  // clamped: no gradient
      pn->grad[i] += g * (-(*labels)[i] / pv + (1.0 - (*labels)[i]) / (1.0 - pv));
    }
  });
}

/// coefficient * sum |t|; subgradient 0 at exact zeros.
inline Tensor l1_penalty(const Tensor& t, double coefficient) {
  double s = 0;
  for (double v : t.values()) s += std::fabs(v);
  auto tn = t.node();
  return detail::make_op({1}, {coefficient * s}, {t}, [tn, coefficient](detail::TensorNode& n) {
    tn->ensure_grad();
    for (size_t i = 0; i < tn->values.size(); ++i) {
      const double v = tn->values[i];
      if (v != 0.0) tn->grad[i] += n.grad[0] * (v > 0 ? coefficient : -coefficient);
    }
  });
}

/// Mean squared error over all elements.
inline Tensor mse_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) fail(errc::shape_mismatch, "mse_loss shapes disagree");
  const auto n_elems = static_cast<double>(a.values().size());
  double s = 0;
  for (size_t i = 0; i < a.values().size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    s += d * d;
  }
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op({1}, {s / n_elems}, {a, b}, [an, bn, n_elems](detail::TensorNode& n) {
    an->ensure_grad();
    bn->ensure_grad();
    const double g = 2.0 * n.grad[0] / n_elems;
    for (size_t i = 0; i < an->values.size(); ++i) {
      const double d = an->values[i] - bn->values[i];
      an->grad[i] += g * d;
      bn->grad[i] -= g * d;
    }
  });
}

// ---------------------------------------------------------------------------
// Plumbing ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_product(shape) != x.size())
    fail(errc::shape_mismatch, "reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  auto xn = x.node();
  return detail::make_op(std::move(shape), x.values(), {x}, [xn](detail::TensorNode& n) {
    xn->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i];
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) fail(errc::shape_mismatch, "add shapes disagree");
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::TensorNode& n) {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      an->grad[i] += n.grad[i];
      bn->grad[i] += n.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) fail(errc::shape_mismatch, "mul shapes disagree");
  std::vector<double> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op(a.shape(), std::move(out), {a, b}, [an, bn](detail::TensorNode& n) {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      an->grad[i] += n.grad[i] * bn->values[i];
      bn->grad[i] += n.grad[i] * an->values[i];
    }
  });
}

inline Tensor sum(const Tensor& x) {
  double s = 0;
  for (double v : x.values()) s += v;
  auto xn = x.node();
  return detail::make_op({1}, {s}, {x}, [xn](detail::TensorNode& n) {
    xn->ensure_grad();
    for (size_t i = 0; i < xn->values.size(); ++i) xn->grad[i] += n.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  double s = 0;
  for (double v : x.values()) s += v;
  const auto n_elems = static_cast<double>(x.values().size());
  auto xn = x.node();
  return detail::make_op({1}, {s / n_elems}, {x}, [xn, n_elems](detail::TensorNode& n) {
    xn->ensure_grad();
    for (size_t i = 0; i < xn->values.size(); ++i) xn->grad[i] += n.grad[0] / n_elems;
  });
}

inline Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = c * x.values()[i];
  auto xn = x.node();
  return detail::make_op(x.shape(), std::move(out), {x}, [xn, c](detail::TensorNode& n) {
    xn->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += c * n.grad[i];
  });
}

}  // namespace cscope
