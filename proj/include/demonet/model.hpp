#pragma once

#include <string>
#include <vector>

#include "demonet/nn/layers.hpp"
#include "demonet/nn/optim.hpp"
#include "demonet/nn/tensor.hpp"

namespace demonet::model {

using nn::NamedTensors;
using nn::Shape;
using nn::Tensor;

template <typename T>
struct LatentStats {
  Tensor<T> mu;      // [B, 128, 1, W']
  Tensor<T> logvar;  // [B, 128, 1, W']
};

// Cross-temporal VAE. Encoder: 4 conv + BN stages (ReLU between, none after
// the last BN); the 256-channel output chunks into (mu, logvar). Decoder
// mirrors it with transposed convolutions and a final Tanh.
template <typename T>
struct VaeModel {
  nn::Conv2d<T> enc1, enc2, enc3, enc4;
  nn::BatchNorm2d<T> ebn1, ebn2, ebn3, ebn4;
  nn::ConvTranspose2d<T> dec1, dec2, dec3, dec4;
  nn::BatchNorm2d<T> dbn1, dbn2, dbn3;
  bool training = true;

  explicit VaeModel(Rng& rng)
      : enc1(1, 64, 4, 2, 1, rng),
        enc2(64, 64, 4, 2, 1, rng),
        enc3(64, 64, 5, 1, 0, rng),
        enc4(64, 256, 3, 1, 0, rng),
        ebn1(64),
        ebn2(64),
        ebn3(64),
        ebn4(256),
        dec1(128, 64, 3, 1, 0, rng),
        dec2(64, 64, 5, 1, 0, rng),
        dec3(64, 64, 4, 2, 1, rng),
        dec4(64, 1, 4, 2, 1, rng),
        dbn1(64),
        dbn2(64),
        dbn3(64) {}

  LatentStats<T> encode(const Tensor<T>& x) {
    require(x.shape().size() == 4 && x.dim(1) == 1,
            "vae encode: expected [B x 1 x S x M] input, got " +
                nn::shape_str(x.shape()));
    auto h = nn::relu(ebn1.forward(enc1.forward(x), training));
    h = nn::relu(ebn2.forward(enc2.forward(h), training));
    h = nn::relu(ebn3.forward(enc3.forward(h), training));
    auto v = ebn4.forward(enc4.forward(h), training);
    return {nn::slice_channels(v, 0, 128), nn::slice_channels(v, 128, 256)};
  }

  Tensor<T> decode(const Tensor<T>& z) {
    require(z.shape().size() == 4 && z.dim(1) == 128,
            "vae decode: expected [B x 128 x 1 x W'] latent, got " +
                nn::shape_str(z.shape()));
    auto h = nn::relu(dbn1.forward(dec1.forward(z), training));
    h = nn::relu(dbn2.forward(dec2.forward(h), training));
    h = nn::relu(dbn3.forward(dec3.forward(h), training));
    return nn::tanh_act(dec4.forward(h));
  }

  // z = mu + exp(logvar / 2) * eps; eps ~ N(0, 1) when sampling, 0 otherwise.
  Tensor<T> sample_latent(const LatentStats<T>& stats, Rng& rng, bool sample) {
    std::vector<T> eps(stats.mu.values().size(), T(0));
    if (sample) {
      for (auto& e : eps) e = static_cast<T>(rng.normal());
    }
    return nn::reparameterize(stats.mu, stats.logvar, eps);
  }

  NamedTensors<T> named_params() {
    NamedTensors<T> out;
    enc1.params("encoder.conv1", out);
    ebn1.params("encoder.bn1", out);
    enc2.params("encoder.conv2", out);
    ebn2.params("encoder.bn2", out);
    enc3.params("encoder.conv3", out);
    ebn3.params("encoder.bn3", out);
    enc4.params("encoder.conv4", out);
    ebn4.params("encoder.bn4", out);
    dec1.params("decoder.conv1", out);
    dbn1.params("decoder.bn1", out);
    dec2.params("decoder.conv2", out);
    dbn2.params("decoder.bn2", out);
    dec3.params("decoder.conv3", out);
    dbn3.params("decoder.bn3", out);
    dec4.params("decoder.conv4", out);
    return out;
  }

  std::vector<std::pair<std::string, std::vector<T>*>> named_buffers() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    ebn1.buffers("encoder.bn1", out);
    ebn2.buffers("encoder.bn2", out);
    ebn3.buffers("encoder.bn3", out);
    ebn4.buffers("encoder.bn4", out);
    dbn1.buffers("decoder.bn1", out);
    dbn2.buffers("decoder.bn2", out);
    dbn3.buffers("decoder.bn3", out);
    return out;
  }
};

// MSE(target, recon) + KL(N(mu, sigma^2) || N(0, I)).
template <typename T>
Tensor<T> vae_loss(const Tensor<T>& target, const Tensor<T>& recon,
                   const LatentStats<T>& stats) {
  require(target.shape() == recon.shape(),
          "vae_loss: target " + nn::shape_str(target.shape()) +
              " vs reconstruction " + nn::shape_str(recon.shape()));
  return nn::add(nn::mse(target, recon), nn::kl_gaussian(stats.mu, stats.logvar));
}

template <typename T>
struct RoutingOutput {
  Tensor<T> probs;                    // [B, N], sigmoid outputs (tracked)
  std::vector<int> selected;          // argmax per row, lowest index on ties
  std::vector<int> per_expert_counts; // length N, sums to B
};

template <typename T>
struct Expert {
  nn::Conv2d<T> conv;
  nn::BatchNorm2d<T> bn;

  Expert() = default;
  explicit Expert(Rng& rng) : conv(1, 64, 7, 2, 3, rng), bn(64) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return nn::maxpool2d(nn::relu(bn.forward(conv.forward(x), training)), 3, 2, 1);
  }
  void params(const std::string& prefix, NamedTensors<T>& out) {
    conv.params(prefix + ".conv", out);
    bn.params(prefix + ".bn", out);
  }
  void buffers(const std::string& prefix,
               std::vector<std::pair<std::string, std::vector<T>*>>& out) {
    bn.buffers(prefix + ".bn", out);
  }
};

template <typename T>
struct BasicBlock {
  nn::Conv2d<T> conv1, conv2;
  nn::BatchNorm2d<T> bn1, bn2;
  bool downsample = false;
  nn::Conv2d<T> down_conv;
  nn::BatchNorm2d<T> down_bn;

  BasicBlock() = default;
  BasicBlock(std::int64_t cin, std::int64_t cout, std::int64_t stride, Rng& rng)
      : conv1(cin, cout, 3, stride, 1, rng),
        conv2(cout, cout, 3, 1, 1, rng),
        bn1(cout),
        bn2(cout),
        downsample(stride != 1 || cin != cout) {
    if (downsample) {
      down_conv = nn::Conv2d<T>(cin, cout, 1, stride, 0, rng);
      down_bn = nn::BatchNorm2d<T>(cout);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    auto h = nn::relu(bn1.forward(conv1.forward(x), training));
    h = bn2.forward(conv2.forward(h), training);
    auto shortcut = downsample ? down_bn.forward(down_conv.forward(x), training) : x;
    return nn::relu(nn::add(h, shortcut));
  }
  void params(const std::string& prefix, NamedTensors<T>& out) {
    conv1.params(prefix + ".conv1", out);
    bn1.params(prefix + ".bn1", out);
    conv2.params(prefix + ".conv2", out);
    bn2.params(prefix + ".bn2", out);
    if (downsample) {
      down_conv.params(prefix + ".down.conv", out);
      down_bn.params(prefix + ".down.bn", out);
    }
  }
  void buffers(const std::string& prefix,
               std::vector<std::pair<std::string, std::vector<T>*>>& out) {
    bn1.buffers(prefix + ".bn1", out);
    bn2.buffers(prefix + ".bn2", out);
    if (downsample) down_bn.buffers(prefix + ".down.bn", out);
  }
};

// Routing layer + N structurally identical experts + ResNet-18-style backbone.
template <typename T>
struct DemonetModel {
  int n_experts = 5;
  int n_classes = 0;
  std::int64_t routing_in = 0;
  nn::Linear<T> routing;
  std::vector<Expert<T>> experts;
  std::vector<BasicBlock<T>> blocks;
  nn::Linear<T> head;
  bool training = true;

  DemonetModel(std::int64_t routing_in_dim, int experts_n, int classes, Rng& rng)
      : n_experts(experts_n),
        n_classes(classes),
        routing_in(routing_in_dim),
        routing(routing_in_dim, experts_n, rng),
        head(512, classes, rng) {
    require(experts_n >= 1 && classes >= 2, "demonet: need >= 1 expert, >= 2 classes");
    experts.reserve(static_cast<std::size_t>(experts_n));
    for (int i = 0; i < experts_n; ++i) experts.emplace_back(rng);
    const std::int64_t ch[5] = {64, 64, 128, 256, 512};
    for (int stage = 1; stage <= 4; ++stage) {
      const std::int64_t cin = ch[stage - 1], cout = ch[stage];
      const std::int64_t stride = (stage == 1) ? 1 : 2;
      blocks.emplace_back(cin, cout, stride, rng);
      blocks.emplace_back(cout, cout, 1, rng);
    }
  }

  // Sigmoid routing probabilities and top-1 assignment.
  RoutingOutput<T> route(const Tensor<T>& d1) {
    require(d1.shape().size() == 2 && d1.dim(1) == routing_in,
            "route: expected [B x " + std::to_string(routing_in) + "], got " +
                nn::shape_str(d1.shape()));
    RoutingOutput<T> out;
    out.probs = nn::sigmoid(routing.forward(d1));
    const std::int64_t B = d1.dim(0);
    out.selected.resize(static_cast<std::size_t>(B));
    out.per_expert_counts.assign(static_cast<std::size_t>(n_experts), 0);
    const auto& pv = out.probs.values();
    for (std::int64_t i = 0; i < B; ++i) {
      int best = 0;
      for (int j = 1; j < n_experts; ++j) {
        if (pv[i * n_experts + j] > pv[i * n_experts + best]) best = j;  // ties: lowest
      }
      out.selected[static_cast<std::size_t>(i)] = best;
      ++out.per_expert_counts[static_cast<std::size_t>(best)];
    }
    return out;
  }

  // Each sample passes through exactly its selected expert, then the shared
  // backbone. Logits come back in the original batch order.
  Tensor<T> forward(const Tensor<T>& spect, const RoutingOutput<T>& routing_out) {
    require(spect.shape().size() == 4 && spect.dim(1) == 1,
            "demonet forward: expected [B x 1 x H x W] spectrograms, got " +
                nn::shape_str(spect.shape()));
    const std::int64_t B = spect.dim(0);
    require(static_cast<std::size_t>(B) == routing_out.selected.size(),
            "demonet forward: routing computed for a different batch");
    for (int s : routing_out.selected)
      require(0 <= s && s < n_experts,
              "demonet forward: expert index " + std::to_string(s) + " out of range");

    // Group rows per expert, keeping the original positions for un-permuting.
    std::vector<Tensor<T>> parts;
    std::vector<std::int64_t> order;
    order.reserve(static_cast<std::size_t>(B));
    for (int e = 0; e < n_experts; ++e) {
      std::vector<std::int64_t> idx;
      for (std::int64_t i = 0; i < B; ++i) {
        if (routing_out.selected[static_cast<std::size_t>(i)] == e) idx.push_back(i);
      }
      if (idx.empty()) continue;
      for (auto i : idx) order.push_back(i);
      auto group = nn::gather_rows(spect, idx);
      parts.push_back(experts[static_cast<std::size_t>(e)].forward(group, training));
    }
    auto feat = parts.size() == 1 ? parts.front() : nn::concat_rows(parts);
    for (auto& block : blocks) feat = block.forward(feat, training);
    auto pooled = nn::flatten(nn::adaptive_avg_pool2d(feat));
    auto logits_perm = head.forward(pooled);
    // order[k] = original row at permuted position k; invert it.
    std::vector<std::int64_t> inverse(order.size());
    for (std::size_t k = 0; k < order.size(); ++k)
      inverse[static_cast<std::size_t>(order[k])] = static_cast<std::int64_t>(k);
    return nn::gather_rows(logits_perm, inverse);
  }

  NamedTensors<T> named_params() {
    NamedTensors<T> out;
    routing.params("routing", out);
    for (int e = 0; e < n_experts; ++e)
      experts[static_cast<std::size_t>(e)].params("expert" + std::to_string(e + 1), out);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].params("backbone.block" + std::to_string(i + 1), out);
    head.params("backbone.head", out);
    return out;
  }

  NamedTensors<T> expert_params(int e) {
    NamedTensors<T> out;
    experts[static_cast<std::size_t>(e)].params("expert" + std::to_string(e + 1), out);
    return out;
  }

  // Routing + backbone + head: always trained, regardless of expert selection.
  NamedTensors<T> shared_params() {
    NamedTensors<T> out;
    routing.params("routing", out);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].params("backbone.block" + std::to_string(i + 1), out);
    head.params("backbone.head", out);
    return out;
  }

  std::vector<std::pair<std::string, std::vector<T>*>> named_buffers() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    for (int e = 0; e < n_experts; ++e)
      experts[static_cast<std::size_t>(e)].buffers("expert" + std::to_string(e + 1), out);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].buffers("backbone.block" + std::to_string(i + 1), out);
    return out;
  }
};

// Switch-style load balance: N * sum_j frac_j * Pbar_j, where frac_j is the
// fraction of the batch assigned to expert j and Pbar_j the batch mean of
// row-normalized routing probabilities. 1 at uniform routing, N at collapse.
template <typename T>
Tensor<T> balance_loss(const RoutingOutput<T>& routing_out, int n_experts) {
  const std::int64_t B = routing_out.probs.dim(0);
  require(B > 0, "balance_loss: empty batch");
  require(routing_out.probs.dim(1) == n_experts, "balance_loss: width mismatch");
  std::vector<T> col_weights(static_cast<std::size_t>(n_experts));
  for (int j = 0; j < n_experts; ++j) {
    const T frac = static_cast<T>(routing_out.per_expert_counts[static_cast<std::size_t>(j)]) /
                   static_cast<T>(B);
    col_weights[static_cast<std::size_t>(j)] =
        static_cast<T>(n_experts) * frac / static_cast<T>(B);
  }
  return nn::weighted_colsum(nn::row_normalize(routing_out.probs), col_weights);
}

// cross_entropy + alpha * balance_loss.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                     const RoutingOutput<T>& routing_out, int n_experts, T alpha) {
  auto task = nn::cross_entropy(logits, labels);
  if (alpha == T(0)) return task;
  return nn::add(task, nn::scale(balance_loss(routing_out, n_experts), alpha));
}

}  // namespace demonet::model
