#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "demonet/common.hpp"

#ifdef DEMONET_USE_BLAS
#include <cblas.h>
#endif

namespace demonet::nn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Thread-local autograd switch; NoGradGuard turns recording off in a scope
// (frozen-model forwards).
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
};

// Global NaN/Inf fail-fast toggle (checked by the compute-heavy ops).
inline bool& finite_checks_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void()> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<std::size_t>(numel_of(n->shape)), T(0));
    n->requires_grad = requires_grad && grad_mode_flag();
    return Tensor(std::move(n));
  }

  static Tensor from_values(Shape shape, std::vector<T> values,
                            bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    require(static_cast<std::int64_t>(values.size()) == numel_of(n->shape),
            "Tensor: value count does not match shape " + shape_str(n->shape));
    n->value = std::move(values);
    n->requires_grad = requires_grad && grad_mode_flag();
    return Tensor(std::move(n));
  }

  static Tensor randn(Shape shape, Rng& rng, T stddev, bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.values()) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::int64_t numel() const { return numel_of(n_->shape); }
  std::int64_t dim(std::size_t i) const { return n_->shape[i]; }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }

  std::vector<T>& values() { return n_->value; }
  const std::vector<T>& values() const { return n_->value; }
  std::vector<T>& grad() { return n_->ensure_grad(); }
  bool has_grad() const { return n_->grad.size() == n_->value.size(); }
  void clear_grad() { n_->grad.clear(); }

  T item() const {
    require(numel() == 1, "Tensor::item: tensor is not scalar, shape " +
                              shape_str(n_->shape));
    return n_->value[0];
  }

  std::shared_ptr<Node<T>>& node() { return n_; }
  const std::shared_ptr<Node<T>>& node() const { return n_; }

  // Detached copy (same values, no history).
  Tensor detach() const {
    auto n = std::make_shared<Node<T>>();
    n->shape = n_->shape;
    n->value = n_->value;
    n->requires_grad = false;
    return Tensor(std::move(n));
  }

 private:
  std::shared_ptr<Node<T>> n_;
};

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!finite_checks_flag()) return;
  for (const T v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      fail(std::string("numeric failure: non-finite value after ") + op);
    }
  }
}

// --- GEMM ---------------------------------------------------------------------
// C[M,N] = alpha * op(A) * op(B) + beta * C, all row-major.

inline void gemm_impl(bool ta, bool tb, std::int64_t M, std::int64_t N,
                      std::int64_t K, float alpha, const float* A, const float* B,
                      float beta, float* C) {
#ifdef DEMONET_USE_BLAS
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, static_cast<int>(M),
              static_cast<int>(N), static_cast<int>(K), alpha, A,
              static_cast<int>(ta ? M : K), B, static_cast<int>(tb ? K : N), beta,
              C, static_cast<int>(N));
#else
  for (std::int64_t i = 0; i < M; ++i)
    for (std::int64_t j = 0; j < N; ++j) {
      float acc = 0.f;
      for (std::int64_t k = 0; k < K; ++k) {
        const float a = ta ? A[k * M + i] : A[i * K + k];
        const float b = tb ? B[j * K + k] : B[k * N + j];
        acc += a * b;
      }
      C[i * N + j] = alpha * acc + beta * C[i * N + j];
    }
#endif
}

inline void gemm_impl(bool ta, bool tb, std::int64_t M, std::int64_t N,
                      std::int64_t K, double alpha, const double* A,
                      const double* B, double beta, double* C) {
#ifdef DEMONET_USE_BLAS
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, static_cast<int>(M),
              static_cast<int>(N), static_cast<int>(K), alpha, A,
              static_cast<int>(ta ? M : K), B, static_cast<int>(tb ? K : N), beta,
              C, static_cast<int>(N));
#else
  for (std::int64_t i = 0; i < M; ++i)
    for (std::int64_t j = 0; j < N; ++j) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < K; ++k) {
        const double a = ta ? A[k * M + i] : A[i * K + k];
        const double b = tb ? B[j * K + k] : B[k * N + j];
        acc += a * b;
      }
      C[i * N + j] = alpha * acc + beta * C[i * N + j];
    }
#endif
}

// --- autograd driver ------------------------------------------------------------

template <typename T>
void backward(Tensor<T>& loss) {
  require(loss.numel() == 1,
          "backward: loss must be scalar, got " + shape_str(loss.shape()));
  // Topological order by DFS (iterative to survive deep graphs).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next].get();
      ++next;
      if (!seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && node->grad.size() == node->value.size()) {
      node->backward_fn();
    }
  }
}

// --- op helpers -----------------------------------------------------------------

template <typename T>
Tensor<T> make_op_output(Shape shape, std::vector<const Tensor<T>*> inputs) {
  auto out = Tensor<T>::zeros(std::move(shape));
  bool track = grad_mode_flag();
  bool any = false;
  for (const auto* in : inputs) any = any || (*in).requires_grad();
  if (track && any) {
    out.node()->requires_grad = true;
    for (const auto* in : inputs) out.node()->parents.push_back(in->node());
  }
  return out;
}

template <typename T>
bool tracked(const Tensor<T>& out) {
  return out.node()->requires_grad;
}

// --- elementwise ----------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  auto out = make_op_output<T>(a.shape(), {&a, &b});
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (tracked(out)) {
    auto an = a.node(), bn = b.node();
    auto on = out.node().get();
    out.node()->backward_fn = [an, bn, on] {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  auto out = make_op_output<T>(a.shape(), {&a, &b});
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (tracked(out)) {
    auto an = a.node(), bn = b.node();
    auto on = out.node().get();
    out.node()->backward_fn = [an, bn, on] {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += bn->value[i] * on->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += an->value[i] * on->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  auto out = make_op_output<T>(a.shape(), {&a});
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  if (tracked(out)) {
    auto an = a.node();
    auto on = out.node().get();
    out.node()->backward_fn = [an, on, c] {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * on->grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  auto out = make_op_output<T>(x.shape(), {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
  if (tracked(out)) {
    auto xn = x.node();
    auto on = out.node().get();
    out.node()->backward_fn = [xn, on] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xn->value[i] > T(0)) g[i] += on->grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> tanh_act(const Tensor<T>& x) {
  auto out = make_op_output<T>(x.shape(), {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::tanh(xv[i]);
  if (tracked(out)) {
    auto xn = x.node();
    auto on = out.node().get();
    out.node()->backward_fn = [xn, on] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T y = on->value[i];
        g[i] += (T(1) - y * y) * on->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto out = make_op_output<T>(x.shape(), {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i)
    ov[i] = T(1) / (T(1) + std::exp(-xv[i]));
  if (tracked(out)) {
    auto xn = x.node();
    auto on = out.node().get();
    out.node()->backward_fn = [xn, on] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T y = on->value[i];
        g[i] += y * (T(1) - y) * on->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  auto out = make_op_output<T>({1}, {&x});
  T acc = T(0);
  for (const T v : x.values()) acc += v;
  out.values()[0] = acc;
  if (tracked(out)) {
    auto xn = x.node();
    auto on = out.node().get();
    out.node()->backward_fn = [xn, on] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[0];
    };
  }
  return out;
}

// --- shape ops ------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel_of(shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto out = make_op_output<T>(std::move(shape), {&x});
  out.values() = x.values();
  if (tracked(out)) {
    auto xn = x.node();
    auto on = out.node().get();
    out.node()->backward_fn = [xn, on] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  require(x.shape().size() >= 1, "flatten: scalar input");
  const std::int64_t n = x.dim(0);
  return reshape(x, {n, x.numel() / n});
}

// Channel slice of an NCHW tensor: channels [c0, c1).
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t c0, std::int64_t c1) {
  require(x.shape().size() == 4, "slice_channels: expected NCHW");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(0 <= c0 && c0 < c1 && c1 <= C, "slice_channels: bad channel range");
  const std::int64_t Cs = c1 - c0, hw = H * W;
  auto out = make_op_output<T>({N, Cs, H, W}, {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < Cs; ++c)
      std::copy_n(xv.begin() + ((n * C + c0 + c) * hw), hw,
                  ov.begin() + ((n * Cs + c) * hw));
  if (tracked(out)) {
    auto xn = x.node();
    auto on = out.node().get();
    out.node()->backward_fn = [xn, on, N, C, Cs, c0, hw] {
      auto& g = xn->ensure_grad();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < Cs; ++c) {
          const T* src = on->grad.data() + (n * Cs + c) * hw;
          T* dst = g.data() + ((n * C + c0 + c) * hw);
          for (std::int64_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
    };
  }
  return out;
}

// Row gather along dim 0 (used to regroup batches per expert).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::int64_t> rows) {
  require(!x.shape().empty(), "gather_rows: scalar input");
  const std::int64_t R = x.dim(0);
  const std::int64_t stride = x.numel() / R;
  Shape shape = x.shape();
  shape[0] = static_cast<std::int64_t>(rows.size());
  for (auto r : rows) require(0 <= r && r < R, "gather_rows: index out of range");
  auto out = make_op_output<T>(std::move(shape), {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.begin() + rows[i] * stride, stride,
                ov.begin() + static_cast<std::int64_t>(i) * stride);
  if (tracked(out)) {
    auto xn = x.node();
    auto on = out.node().get();
    auto idx = std::move(rows);
    out.node()->backward_fn = [xn, on, idx, stride] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const T* src = on->grad.data() + static_cast<std::int64_t>(i) * stride;
        T* dst = g.data() + idx[i] * stride;
        for (std::int64_t k = 0; k < stride; ++k) dst[k] += src[k];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  Shape shape = parts.front().shape();
  std::int64_t rows = 0;
  const std::int64_t stride = parts.front().numel() / parts.front().dim(0);
  for (const auto& p : parts) {
    Shape s = p.shape();
    require(s.size() == shape.size(), "concat_rows: rank mismatch");
    for (std::size_t i = 1; i < s.size(); ++i)
      require(s[i] == shape[i], "concat_rows: trailing shape mismatch");
    rows += s[0];
  }
  shape[0] = rows;
  std::vector<const Tensor<T>*> ins;
  ins.reserve(parts.size());
  for (const auto& p : parts) ins.push_back(&p);
  auto out = make_op_output<T>(std::move(shape), ins);
  auto& ov = out.values();
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), ov.begin() + offset);
    offset += p.numel();
  }
  if (tracked(out)) {
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node().get();
    out.node()->backward_fn = [nodes, on, stride] {
      (void)stride;
      std::int64_t offset = 0;
      for (auto& pn : nodes) {
        const auto n = static_cast<std::int64_t>(pn->value.size());
        if (pn->requires_grad) {
          auto& g = pn->ensure_grad();
          for (std::int64_t i = 0; i < n; ++i) g[i] += on->grad[offset + i];
        }
        offset += n;
      }
    };
  }
  return out;
}

// --- linear ---------------------------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require(x.shape().size() == 2 && w.shape().size() == 2,
          "linear: expected 2-D input and weight");
  const std::int64_t N = x.dim(0), F = x.dim(1), O = w.dim(0);
  require(w.dim(1) == F, "linear: weight " + shape_str(w.shape()) +
                             " does not match input " + shape_str(x.shape()));
  require(b.numel() == O, "linear: bias size mismatch");
  auto out = make_op_output<T>({N, O}, {&x, &w, &b});
  gemm_impl(false, true, N, O, F, T(1), x.values().data(), w.values().data(), T(0),
            out.values().data());
  auto& ov = out.values();
  const auto& bv = b.values();
  for (std::int64_t i = 0; i < N; ++i)
    for (std::int64_t j = 0; j < O; ++j) ov[i * O + j] += bv[j];
  check_finite(out, "linear");
  if (tracked(out)) {
    auto xn = x.node(), wn = w.node(), bn = b.node();
    auto on = out.node().get();
    out.node()->backward_fn = [xn, wn, bn, on, N, F, O] {
      if (xn->requires_grad) {
        auto& g = xn->ensure_grad();
        gemm_impl(false, false, N, F, O, T(1), on->grad.data(), wn->value.data(),
                  T(1), g.data());
      }
      if (wn->requires_grad) {
        auto& g = wn->ensure_grad();
        gemm_impl(true, false, O, F, N, T(1), on->grad.data(), xn->value.data(),
                  T(1), g.data());
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::int64_t i = 0; i < N; ++i)
          for (std::int64_t j = 0; j < O; ++j) g[j] += on->grad[i * O + j];
      }
    };
  }
  return out;
}

// --- convolution ----------------------------------------------------------------

struct ConvGeom {
  std::int64_t C, H, W;       // input
  std::int64_t kh, kw;        // kernel
  std::int64_t stride, pad;
  std::int64_t Ho, Wo;        // output
};

inline ConvGeom conv_geom(std::int64_t C, std::int64_t H, std::int64_t W,
                          std::int64_t kh, std::int64_t kw, std::int64_t stride,
                          std::int64_t pad) {
  ConvGeom g{C, H, W, kh, kw, stride, pad, 0, 0};
  g.Ho = (H + 2 * pad - kh) / stride + 1;
  g.Wo = (W + 2 * pad - kw) / stride + 1;
  require(H + 2 * pad >= kh && W + 2 * pad >= kw,
          "conv: spatial dims too small for the kernel (input " +
              std::to_string(H) + "x" + std::to_string(W) + ", kernel " +
              std::to_string(kh) + "x" + std::to_string(kw) + ")");
  return g;
}

// col is [(C*kh*kw) x (Ho*Wo)].
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::int64_t owo = g.Ho * g.Wo;
  for (std::int64_t c = 0; c < g.C; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        T* dst = col + ((c * g.kh + ki) * g.kw + kj) * owo;
        for (std::int64_t oh = 0; oh < g.Ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + ki;
          for (std::int64_t ow = 0; ow < g.Wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kj;
            dst[oh * g.Wo + ow] =
                (ih >= 0 && ih < g.H && iw >= 0 && iw < g.W)
                    ? x[(c * g.H + ih) * g.W + iw]
                    : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <typename T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  const std::int64_t owo = g.Ho * g.Wo;
  for (std::int64_t c = 0; c < g.C; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const T* src = col + ((c * g.kh + ki) * g.kw + kj) * owo;
        for (std::int64_t oh = 0; oh < g.Ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.H) continue;
          for (std::int64_t ow = 0; ow < g.Wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.pad + kj;
            if (iw < 0 || iw >= g.W) continue;
            x[(c * g.H + ih) * g.W + iw] += src[oh * g.Wo + ow];
          }
        }
      }
    }
  }
}

// x: [N, Cin, H, W]; w: [Cout, Cin, kh, kw]; b: [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::int64_t stride, std::int64_t pad) {
  require(x.shape().size() == 4 && w.shape().size() == 4,
          "conv2d: expected NCHW input " + shape_str(x.shape()) + " and OIHW weight " +
              shape_str(w.shape()));
  const std::int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  require(w.dim(1) == Cin, "conv2d: channel mismatch, input " + shape_str(x.shape()) +
                               " vs weight " + shape_str(w.shape()));
  require(b.numel() == Cout, "conv2d: bias size mismatch");
  const ConvGeom g = conv_geom(Cin, H, W, kh, kw, stride, pad);
  const std::int64_t K = Cin * kh * kw, owo = g.Ho * g.Wo;

  auto out = make_op_output<T>({N, Cout, g.Ho, g.Wo}, {&x, &w, &b});
  std::vector<T> col(static_cast<std::size_t>(K * owo));
  for (std::int64_t n = 0; n < N; ++n) {
    im2col(x.values().data() + n * Cin * H * W, g, col.data());
    T* o = out.values().data() + n * Cout * owo;
    gemm_impl(false, false, Cout, owo, K, T(1), w.values().data(), col.data(), T(0), o);
    for (std::int64_t c = 0; c < Cout; ++c) {
      const T bias = b.values()[c];
      for (std::int64_t i = 0; i < owo; ++i) o[c * owo + i] += bias;
    }
  }
  check_finite(out, "conv2d");
  if (tracked(out)) {
    auto xn = x.node(), wn = w.node(), bn = b.node();
    auto on = out.node().get();
    out.node()->backward_fn = [xn, wn, bn, on, g, N, Cin, Cout, K, owo, H, W] {
      std::vector<T> col(static_cast<std::size_t>(K * owo));
      for (std::int64_t n = 0; n < N; ++n) {
        const T* go = on->grad.data() + n * Cout * owo;
        if (wn->requires_grad || bn->requires_grad) {
          if (bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (std::int64_t c = 0; c < Cout; ++c)
              for (std::int64_t i = 0; i < owo; ++i) gb[c] += go[c * owo + i];
          }
          if (wn->requires_grad) {
            im2col(xn->value.data() + n * Cin * H * W, g, col.data());
            auto& gw = wn->ensure_grad();
            gemm_impl(false, true, Cout, K, owo, T(1), go, col.data(), T(1),
                      gw.data());
          }
        }
        if (xn->requires_grad) {
          gemm_impl(true, false, K, owo, Cout, T(1), wn->value.data(), go, T(0),
                    col.data());
          auto& gx = xn->ensure_grad();
          col2im(col.data(), g, gx.data() + n * Cin * H * W);
        }
      }
    };
  }
  return out;
}

// x: [N, Cin, H, W]; w: [Cin, Cout, kh, kw] (the conv2d weight viewed from the
// other side, so conv_transpose2d(., w) is the exact adjoint of conv2d(., w)).
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& b, std::int64_t stride,
                           std::int64_t pad, std::int64_t output_pad = 0) {
  require(x.shape().size() == 4 && w.shape().size() == 4,
          "conv_transpose2d: expected NCHW input and IOHW weight");
  const std::int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  require(w.dim(0) == Cin,
          "conv_transpose2d: channel mismatch, input " + shape_str(x.shape()) +
              " vs weight " + shape_str(w.shape()));
  require(b.numel() == Cout, "conv_transpose2d: bias size mismatch");
  require(output_pad >= 0 && output_pad < stride,
          "conv_transpose2d: output_pad must be in [0, stride)");
  const std::int64_t Ho = (H - 1) * stride - 2 * pad + kh + output_pad;
  const std::int64_t Wo = (W - 1) * stride - 2 * pad + kw + output_pad;
  require(Ho >= 1 && Wo >= 1, "conv_transpose2d: empty output for input " +
                                  shape_str(x.shape()));
  // Geometry of the adjoint conv: maps the (Ho, Wo) image to (H, W) patches.
  ConvGeom g{Cout, Ho, Wo, kh, kw, stride, pad, H, W};
  const std::int64_t K = Cout * kh * kw, hw = H * W;

  auto out = make_op_output<T>({N, Cout, Ho, Wo}, {&x, &w, &b});
  std::vector<T> col(static_cast<std::size_t>(K * hw));
  for (std::int64_t n = 0; n < N; ++n) {
    // col = w^T [K x Cin] * x_n [Cin x HW]
    gemm_impl(true, false, K, hw, Cin, T(1), w.values().data(),
              x.values().data() + n * Cin * hw, T(0), col.data());
    T* o = out.values().data() + n * Cout * Ho * Wo;
    col2im(col.data(), g, o);
    for (std::int64_t c = 0; c < Cout; ++c) {
      const T bias = b.values()[c];
      for (std::int64_t i = 0; i < Ho * Wo; ++i) o[c * Ho * Wo + i] += bias;
    }
  }
  check_finite(out, "conv_transpose2d");
  if (tracked(out)) {
    auto xn = x.node(), wn = w.node(), bn = b.node();
    auto on = out.node().get();
    out.node()->backward_fn = [xn, wn, bn, on, g, N, Cin, Cout, K, hw, Ho, Wo] {
      std::vector<T> col(static_cast<std::size_t>(K * hw));
      for (std::int64_t n = 0; n < N; ++n) {
        const T* go = on->grad.data() + n * Cout * Ho * Wo;
        im2col(go, g, col.data());  // [K x HW] patches of the output gradient
        if (xn->requires_grad) {
          auto& gx = xn->ensure_grad();
          gemm_impl(false, false, Cin, hw, K, T(1), wn->value.data(), col.data(),
                    T(1), gx.data() + n * Cin * hw);
        }
        if (wn->requires_grad) {
          auto& gw = wn->ensure_grad();
          gemm_impl(false, true, Cin, K, hw, T(1), xn->value.data() + n * Cin * hw,
                    col.data(), T(1), gw.data());
        }
        if (bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (std::int64_t c = 0; c < Cout; ++c)
            for (std::int64_t i = 0; i < Ho * Wo; ++i)
              gb[c] += go[c * Ho * Wo + i];
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::int64_t k, std::int64_t stride,
                    std::int64_t pad) {
  require(x.shape().size() == 4, "maxpool2d: expected NCHW");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const ConvGeom g = conv_geom(C, H, W, k, k, stride, pad);
  auto out = make_op_output<T>({N, C, g.Ho, g.Wo}, {&x});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(N * C * g.Ho * g.Wo));
  auto& ov = out.values();
  const auto& xv = x.values();
  std::int64_t oi = 0;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* plane = xv.data() + (n * C + c) * H * W;
      for (std::int64_t oh = 0; oh < g.Ho; ++oh)
        for (std::int64_t ow = 0; ow < g.Wo; ++ow, ++oi) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (std::int64_t ki = 0; ki < k; ++ki) {
            const std::int64_t ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= H) continue;
            for (std::int64_t kj = 0; kj < k; ++kj) {
              const std::int64_t iw = ow * stride - pad + kj;
              if (iw < 0 || iw >= W) continue;
              const T v = plane[ih * W + iw];
              if (v > best) {  // strict: first maximum wins
                best = v;
                best_idx = (n * C + c) * H * W + ih * W + iw;
              }
            }
          }
          require(best_idx >= 0, "maxpool2d: window without valid samples");
          ov[oi] = best;
          (*argmax)[oi] = best_idx;
        }
    }
  if (tracked(out)) {
    auto xn = x.node();
    auto on = out.node().get();
    out.node()->backward_fn = [xn, on, argmax] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < argmax->size(); ++i)
        g[static_cast<std::size_t>((*argmax)[i])] += on->grad[i];
    };
  }
  return out;
}

// Global average pool to (1, 1).
template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x) {
  require(x.shape().size() == 4, "adaptive_avg_pool2d: expected NCHW");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t hw = H * W;
  auto out = make_op_output<T>({N, C, 1, 1}, {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t i = 0; i < N * C; ++i) {
    T acc = T(0);
    for (std::int64_t j = 0; j < hw; ++j) acc += xv[i * hw + j];
    ov[i] = acc / static_cast<T>(hw);
  }
  if (tracked(out)) {
    auto xn = x.node();
    auto on = out.node().get();
    out.node()->backward_fn = [xn, on, N, C, hw] {
      auto& g = xn->ensure_grad();
      for (std::int64_t i = 0; i < N * C; ++i) {
        const T gi = on->grad[i] / static_cast<T>(hw);
        for (std::int64_t j = 0; j < hw; ++j) g[i * hw + j] += gi;
      }
    };
  }
  return out;
}

// --- losses ---------------------------------------------------------------------

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mse: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  auto out = make_op_output<T>({1}, {&a, &b});
  const auto& av = a.values();
  const auto& bv = b.values();
  const T inv_n = T(1) / static_cast<T>(av.size());
  T acc = T(0);
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    acc += d * d;
  }
  out.values()[0] = acc * inv_n;
  check_finite(out, "mse");
  if (tracked(out)) {
    auto an = a.node(), bn = b.node();
    auto on = out.node().get();
    out.node()->backward_fn = [an, bn, on, inv_n] {
      const T g = on->grad[0];
      for (std::size_t i = 0; i < an->value.size(); ++i) {
        const T d = T(2) * (an->value[i] - bn->value[i]) * inv_n * g;
        if (an->requires_grad) an->ensure_grad()[i] += d;
        if (bn->requires_grad) bn->ensure_grad()[i] -= d;
      }
    };
  }
  return out;
}

// Mean over batch of -log softmax(logits)[label], max-stabilized.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  require(logits.shape().size() == 2, "cross_entropy: expected [B x C] logits");
  const std::int64_t B = logits.dim(0), C = logits.dim(1);
  require(static_cast<std::int64_t>(labels.size()) == B,
          "cross_entropy: label count mismatch");
  for (int y : labels)
    require(0 <= y && y < C, "cross_entropy: label " + std::to_string(y) +
                                 " outside class range [0, " + std::to_string(C) + ")");
  auto out = make_op_output<T>({1}, {&logits});
  auto softmax = std::make_shared<std::vector<T>>(logits.values().size());
  const auto& lv = logits.values();
  T loss = T(0);
  for (std::int64_t i = 0; i < B; ++i) {
    const T* row = lv.data() + i * C;
    T mx = row[0];
    for (std::int64_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::int64_t j = 0; j < C; ++j) denom += std::exp(row[j] - mx);
    const T lse = mx + std::log(denom);
    loss += lse - row[labels[static_cast<std::size_t>(i)]];
    for (std::int64_t j = 0; j < C; ++j)
      (*softmax)[i * C + j] = std::exp(row[j] - lse);
  }
  out.values()[0] = loss / static_cast<T>(B);
  check_finite(out, "cross_entropy");
  if (tracked(out)) {
    auto ln = logits.node();
    auto on = out.node().get();
    auto lab = labels;
    out.node()->backward_fn = [ln, on, softmax, lab, B, C] {
      auto& g = ln->ensure_grad();
      const T gout = on->grad[0] / static_cast<T>(B);
      for (std::int64_t i = 0; i < B; ++i)
        for (std::int64_t j = 0; j < C; ++j) {
          T v = (*softmax)[i * C + j];
          if (j == lab[static_cast<std::size_t>(i)]) v -= T(1);
          g[i * C + j] += v * gout;
        }
    };
  }
  return out;
}

// KL(N(mu, sigma^2) || N(0, I)) averaged over the batch (dim 0):
// 0.5/B * sum(mu^2 + exp(logvar) - logvar - 1).
template <typename T>
Tensor<T> kl_gaussian(const Tensor<T>& mu, const Tensor<T>& logvar) {
  require(mu.shape() == logvar.shape(), "kl: mu/logvar shape mismatch");
  require(!mu.shape().empty(), "kl: scalar stats");
  const std::int64_t B = mu.dim(0);
  auto out = make_op_output<T>({1}, {&mu, &logvar});
  const auto& mv = mu.values();
  const auto& lv = logvar.values();
  T acc = T(0);
  for (std::size_t i = 0; i < mv.size(); ++i) {
    acc += mv[i] * mv[i] + std::exp(lv[i]) - lv[i] - T(1);
  }
  out.values()[0] = acc * T(0.5) / static_cast<T>(B);
  check_finite(out, "kl_gaussian");
  if (tracked(out)) {
    auto mn = mu.node(), ln = logvar.node();
    auto on = out.node().get();
    out.node()->backward_fn = [mn, ln, on, B] {
      const T g = on->grad[0] / static_cast<T>(B);
      for (std::size_t i = 0; i < mn->value.size(); ++i) {
        if (mn->requires_grad) mn->ensure_grad()[i] += g * mn->value[i];
        if (ln->requires_grad)
          ln->ensure_grad()[i] += g * T(0.5) * (std::exp(ln->value[i]) - T(1));
      }
    };
  }
  return out;
}

// z = mu + exp(logvar / 2) * eps, eps held constant.
template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar,
                         const std::vector<T>& eps) {
  require(mu.shape() == logvar.shape(), "reparameterize: shape mismatch");
  require(eps.size() == mu.values().size(), "reparameterize: eps size mismatch");
  auto out = make_op_output<T>(mu.shape(), {&mu, &logvar});
  const auto& mv = mu.values();
  const auto& lv = logvar.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i)
    ov[i] = mv[i] + std::exp(lv[i] * T(0.5)) * eps[i];
  if (tracked(out)) {
    auto mn = mu.node(), ln = logvar.node();
    auto on = out.node().get();
    auto e = std::make_shared<std::vector<T>>(eps);
    out.node()->backward_fn = [mn, ln, on, e] {
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        if (mn->requires_grad) mn->ensure_grad()[i] += on->grad[i];
        if (ln->requires_grad)
          ln->ensure_grad()[i] += on->grad[i] * T(0.5) *
                                  std::exp(ln->value[i] * T(0.5)) * (*e)[i];
      }
    };
  }
  return out;
}

// Rows scaled to sum 1 (used by the balance loss on sigmoid outputs).
template <typename T>
Tensor<T> row_normalize(const Tensor<T>& x) {
  require(x.shape().size() == 2, "row_normalize: expected [B x N]");
  const std::int64_t B = x.dim(0), N = x.dim(1);
  auto out = make_op_output<T>(x.shape(), {&x});
  auto sums = std::make_shared<std::vector<T>>(static_cast<std::size_t>(B));
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::int64_t i = 0; i < B; ++i) {
    T s = T(0);
    for (std::int64_t j = 0; j < N; ++j) s += xv[i * N + j];
    require(s > T(0), "row_normalize: non-positive row sum");
    (*sums)[static_cast<std::size_t>(i)] = s;
    for (std::int64_t j = 0; j < N; ++j) ov[i * N + j] = xv[i * N + j] / s;
  }
  if (tracked(out)) {
    auto xn = x.node();
    auto on = out.node().get();
    out.node()->backward_fn = [xn, on, sums, B, N] {
      auto& g = xn->ensure_grad();
      for (std::int64_t i = 0; i < B; ++i) {
        const T s = (*sums)[static_cast<std::size_t>(i)];
        T dot = T(0);
        for (std::int64_t j = 0; j < N; ++j)
          dot += on->grad[i * N + j] * on->value[i * N + j];
        for (std::int64_t j = 0; j < N; ++j)
          g[i * N + j] += (on->grad[i * N + j] - dot) / s;
      }
    };
  }
  return out;
}

// sum_ij col_weights[j] * x[i][j] (per-column weights held constant).
template <typename T>
Tensor<T> weighted_colsum(const Tensor<T>& x, const std::vector<T>& col_weights) {
  require(x.shape().size() == 2, "weighted_colsum: expected [B x N]");
  const std::int64_t B = x.dim(0), N = x.dim(1);
  require(static_cast<std::int64_t>(col_weights.size()) == N,
          "weighted_colsum: weight count mismatch");
  auto out = make_op_output<T>({1}, {&x});
  const auto& xv = x.values();
  T acc = T(0);
  for (std::int64_t i = 0; i < B; ++i)
    for (std::int64_t j = 0; j < N; ++j) acc += col_weights[static_cast<std::size_t>(j)] * xv[i * N + j];
  out.values()[0] = acc;
  if (tracked(out)) {
    auto xn = x.node();
    auto on = out.node().get();
    auto w = std::make_shared<std::vector<T>>(col_weights);
    out.node()->backward_fn = [xn, on, w, B, N] {
      auto& g = xn->ensure_grad();
      const T gout = on->grad[0];
      for (std::int64_t i = 0; i < B; ++i)
        for (std::int64_t j = 0; j < N; ++j)
          g[i * N + j] += (*w)[static_cast<std::size_t>(j)] * gout;
    };
  }
  return out;
}

}  // namespace demonet::nn
