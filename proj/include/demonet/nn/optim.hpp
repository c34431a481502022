#pragma once

#include <cmath>
#include <memory>
#include <unordered_map>
#include <vector>

#include "demonet/nn/layers.hpp"

namespace demonet::nn {

// Cosine annealing with linear warm-up: 0 -> max_lr over warmup_epochs, then a
// half cosine down to 0 at total_epochs.
inline double lr_schedule(int epoch, double max_lr = 5e-3, int warmup_epochs = 5,
                          int total_epochs = 200) {
  require(total_epochs >= 1 && warmup_epochs >= 0 && warmup_epochs < total_epochs,
          "lr_schedule: bad epoch budget");
  require(epoch >= 0 && epoch < total_epochs,
          "lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
              std::to_string(total_epochs) + ")");
  if (epoch < warmup_epochs) {
    return max_lr * static_cast<double>(epoch) / static_cast<double>(warmup_epochs);
  }
  const double t = static_cast<double>(epoch - warmup_epochs) /
                   static_cast<double>(total_epochs - warmup_epochs);
  return max_lr * 0.5 * (1.0 + std::cos(kPi * t));
}

// AdamW with decoupled weight decay. Moments and step counts are kept per
// parameter, keyed by the parameter's node, so sparsely-updated parameters
// (inactive experts) advance their bias correction only when they
// participate in a step.
template <typename T>
class AdamW {
 public:
  AdamW(double lr = 5e-3, double weight_decay = 1e-3, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  // Steps exactly the given parameters; every one of them must have a
  // populated gradient.
  void step(const std::vector<Tensor<T>*>& params) {
    for (Tensor<T>* p : params) {
      require(p->has_grad(),
              "adamw_step: missing gradient for a tracked parameter");
      auto& st = state_[p->node().get()];
      auto& v = p->values();
      auto& g = p->grad();
      if (st.m.size() != v.size()) {
        st.m.assign(v.size(), T(0));
        st.v.assign(v.size(), T(0));
        st.t = 0;
      }
      ++st.t;
      const double bc1 = 1.0 - std::pow(beta1_, st.t);
      const double bc2 = 1.0 - std::pow(beta2_, st.t);
      for (std::size_t i = 0; i < v.size(); ++i) {
        // Decoupled decay: applied to the weights, not folded into the grad.
        v[i] -= static_cast<T>(lr_ * weight_decay_) * v[i];
        st.m[i] = static_cast<T>(beta1_) * st.m[i] + static_cast<T>(1.0 - beta1_) * g[i];
        st.v[i] = static_cast<T>(beta2_) * st.v[i] + static_cast<T>(1.0 - beta2_) * g[i] * g[i];
        const double mhat = static_cast<double>(st.m[i]) / bc1;
        const double vhat = static_cast<double>(st.v[i]) / bc2;
        v[i] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  void zero_grad(const std::vector<Tensor<T>*>& params) {
    for (Tensor<T>* p : params) p->clear_grad();
  }

  struct ParamState {
    std::vector<T> m, v;
    long t = 0;
  };

  // Serialization access (checkpointing).
  std::unordered_map<Node<T>*, ParamState>& state() { return state_; }
  double weight_decay() const { return weight_decay_; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }

 private:
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  std::unordered_map<Node<T>*, ParamState> state_;
};

}  // namespace demonet::nn
