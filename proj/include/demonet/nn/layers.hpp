#pragma once

#include <string>
#include <utility>
#include <vector>

#include "demonet/nn/tensor.hpp"

namespace demonet::nn {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using NamedTensors = std::vector<NamedTensor<T>>;

// He-normal weights (variance 2 / fan_in), zero biases.
template <typename T>
Tensor<T> he_normal(Shape shape, std::int64_t fan_in, Rng& rng) {
  const T stddev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  return Tensor<T>::randn(std::move(shape), rng, stddev, /*requires_grad=*/true);
}

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [Cout, Cin, k, k]
  Tensor<T> bias;    // [Cout]
  std::int64_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t stride_,
         std::int64_t pad_, Rng& rng)
      : weight(he_normal<T>({cout, cin, k, k}, cin * k * k, rng)),
        bias(Tensor<T>::zeros({cout}, true)),
        stride(stride_),
        pad(pad_) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, weight, bias, stride, pad);
  }
  void params(const std::string& prefix, NamedTensors<T>& out) {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct ConvTranspose2d {
  Tensor<T> weight;  // [Cin, Cout, k, k]
  Tensor<T> bias;    // [Cout]
  std::int64_t stride = 1, pad = 0, output_pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(std::int64_t cin, std::int64_t cout, std::int64_t k,
                  std::int64_t stride_, std::int64_t pad_, Rng& rng)
      : weight(he_normal<T>({cin, cout, k, k}, cin * k * k, rng)),
        bias(Tensor<T>::zeros({cout}, true)),
        stride(stride_),
        pad(pad_) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv_transpose2d(x, weight, bias, stride, pad, output_pad);
  }
  void params(const std::string& prefix, NamedTensors<T>& out) {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng)
      : weight(he_normal<T>({out, in}, in, rng)),
        bias(Tensor<T>::zeros({out}, true)) {}

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void params(const std::string& prefix, NamedTensors<T>& out) {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

// Batch normalization over (N, H, W) per channel. Training mode normalizes by
// batch statistics (population variance) and updates running stats with the
// unbiased batch variance; eval mode applies the running stats.
template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;          // learnable
  std::vector<T> running_mean, running_var;  // buffers
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::int64_t channels)
      : gamma(Tensor<T>::from_values({channels},
                                     std::vector<T>(static_cast<std::size_t>(channels), T(1)),
                                     true)),
        beta(Tensor<T>::zeros({channels}, true)),
        running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    require(x.shape().size() == 4, "batchnorm2d: expected NCHW, got " +
                                       shape_str(x.shape()));
    const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(C == gamma.numel(), "batchnorm2d: channel mismatch, input " +
                                    shape_str(x.shape()) + " vs " +
                                    std::to_string(gamma.numel()) + " channels");
    const std::int64_t hw = H * W;
    const std::int64_t M = N * hw;
    auto out = make_op_output<T>(x.shape(), {&x, &gamma, &beta});
    auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));
    auto invstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));
    const auto& xv = x.values();
    if (training) {
      require(M >= 2, "batchnorm2d: batch too small for training statistics");
      for (std::int64_t c = 0; c < C; ++c) {
        T mu = T(0);
        for (std::int64_t n = 0; n < N; ++n) {
          const T* p = xv.data() + (n * C + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) mu += p[i];
        }
        mu /= static_cast<T>(M);
        T var = T(0);
        for (std::int64_t n = 0; n < N; ++n) {
          const T* p = xv.data() + (n * C + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) var += (p[i] - mu) * (p[i] - mu);
        }
        var /= static_cast<T>(M);
        (*mean)[static_cast<std::size_t>(c)] = mu;
        (*invstd)[static_cast<std::size_t>(c)] = T(1) / std::sqrt(var + eps);
        const T unbiased = var * static_cast<T>(M) / static_cast<T>(M - 1);
        running_mean[static_cast<std::size_t>(c)] =
            (T(1) - momentum) * running_mean[static_cast<std::size_t>(c)] + momentum * mu;
        running_var[static_cast<std::size_t>(c)] =
            (T(1) - momentum) * running_var[static_cast<std::size_t>(c)] + momentum * unbiased;
      }
    } else {
      for (std::int64_t c = 0; c < C; ++c) {
        (*mean)[static_cast<std::size_t>(c)] = running_mean[static_cast<std::size_t>(c)];
        (*invstd)[static_cast<std::size_t>(c)] =
            T(1) / std::sqrt(running_var[static_cast<std::size_t>(c)] + eps);
      }
    }
    auto& ov = out.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        const T mu = (*mean)[static_cast<std::size_t>(c)];
        const T is = (*invstd)[static_cast<std::size_t>(c)];
        const T* p = xv.data() + (n * C + c) * hw;
        T* o = ov.data() + (n * C + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) o[i] = (p[i] - mu) * is * gv[c] + bv[c];
      }
    check_finite(out, "batchnorm2d");
    if (tracked(out)) {
      auto xn = x.node();
      auto gn = gamma.node();
      auto bn = beta.node();
      auto on = out.node().get();
      out.node()->backward_fn = [xn, gn, bn, on, mean, invstd, training, N, C, hw] {
        const std::int64_t M = N * hw;
        for (std::int64_t c = 0; c < C; ++c) {
          const T mu = (*mean)[static_cast<std::size_t>(c)];
          const T is = (*invstd)[static_cast<std::size_t>(c)];
          const T gam = gn->value[static_cast<std::size_t>(c)];
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (std::int64_t n = 0; n < N; ++n) {
            const T* dy = on->grad.data() + (n * C + c) * hw;
            const T* xp = xn->value.data() + (n * C + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              sum_dy += dy[i];
              sum_dy_xhat += dy[i] * (xp[i] - mu) * is;
            }
          }
          if (gn->requires_grad)
            gn->ensure_grad()[static_cast<std::size_t>(c)] += sum_dy_xhat;
          if (bn->requires_grad)
            bn->ensure_grad()[static_cast<std::size_t>(c)] += sum_dy;
          if (xn->requires_grad) {
            auto& gx = xn->ensure_grad();
            for (std::int64_t n = 0; n < N; ++n) {
              const T* dy = on->grad.data() + (n * C + c) * hw;
              const T* xp = xn->value.data() + (n * C + c) * hw;
              T* gp = gx.data() + (n * C + c) * hw;
              if (training) {
                const T invM = T(1) / static_cast<T>(M);
                for (std::int64_t i = 0; i < hw; ++i) {
                  const T xhat = (xp[i] - mu) * is;
                  gp[i] += gam * is * (dy[i] - invM * sum_dy - xhat * invM * sum_dy_xhat);
                }
              } else {
                for (std::int64_t i = 0; i < hw; ++i) gp[i] += gam * is * dy[i];
              }
            }
          }
        }
      };
    }
    return out;
  }

  void params(const std::string& prefix, NamedTensors<T>& out) {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
  // Running stats live outside the autodiff graph; exposed for checkpoints.
  void buffers(const std::string& prefix,
               std::vector<std::pair<std::string, std::vector<T>*>>& out) {
    out.push_back({prefix + ".running_mean", &running_mean});
    out.push_back({prefix + ".running_var", &running_var});
  }
};

}  // namespace demonet::nn
