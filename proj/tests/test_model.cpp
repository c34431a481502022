#include <cmath>
#include <vector>

#include "demonet/common.hpp"
#include "demonet/model.hpp"
#include "doctest.h"

using namespace demonet;
using namespace demonet::model;
using nn::Shape;

namespace {

template <typename T>
std::vector<T> snapshot(nn::NamedTensors<T>& params) {
  std::vector<T> out;
  for (auto& p : params)
    out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

}  // namespace

TEST_CASE("vae: reference shape chain 1x28x1172 -> 256x1x287 -> 1x28x1172") {
  Rng rng(1);
  VaeModel<float> vae(rng);
  auto x = nn::Tensor<float>::randn({1, 1, 28, 1172}, rng, 1.0f);
  auto stats = vae.encode(x);
  CHECK(stats.mu.shape() == Shape{1, 128, 1, 287});
  CHECK(stats.logvar.shape() == Shape{1, 128, 1, 287});
  auto z = vae.sample_latent(stats, rng, true);
  CHECK(z.shape() == Shape{1, 128, 1, 287});
  auto recon = vae.decode(z);
  CHECK(recon.shape() == x.shape());
  for (float v : recon.values()) {
    CHECK(v <= 1.0f);
    CHECK(v >= -1.0f);
  }
}

TEST_CASE("vae: eval-mode encode is deterministic") {
  Rng rng(2);
  VaeModel<float> vae(rng);
  vae.training = false;
  auto x = nn::Tensor<float>::randn({2, 1, 28, 64}, rng, 1.0f);
  nn::NoGradGuard guard;
  auto a = vae.encode(x);
  auto b = vae.encode(x);
  CHECK(a.mu.values() == b.mu.values());
  CHECK(a.logvar.values() == b.logvar.values());
}

TEST_CASE("reparameterize: zero-noise identity and Monte-Carlo moments") {
  Rng rng(3);
  VaeModel<double> vae(rng);
  LatentStats<double> stats{nn::Tensor<double>::randn({1, 128, 1, 3}, rng, 1.0),
                            nn::Tensor<double>::randn({1, 128, 1, 3}, rng, 0.3)};
  auto z0 = vae.sample_latent(stats, rng, false);
  CHECK(z0.values() == stats.mu.values());

  // mu = 0, logvar = 0: sample mean ~ 0 and variance ~ 1.
  const std::size_t n = 100000;
  auto mu = nn::Tensor<double>::zeros({1, static_cast<std::int64_t>(n)});
  auto lv = nn::Tensor<double>::zeros({1, static_cast<std::int64_t>(n)});
  std::vector<double> eps(n);
  Rng erng(4);
  for (auto& e : eps) e = erng.normal();
  auto z = nn::reparameterize(mu, lv, eps);
  double mean = 0.0;
  for (double v : z.values()) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : z.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("reparameterize: gradient reaches both mu and logvar") {
  auto mu = nn::Tensor<double>::from_values({1, 2}, {0.3, -0.2}, true);
  auto lv = nn::Tensor<double>::from_values({1, 2}, {0.1, 0.4}, true);
  std::vector<double> eps = {0.7, -1.3};
  auto z = nn::reparameterize(mu, lv, eps);
  auto loss = nn::sum_all(nn::mul(z, z));
  nn::backward(loss);
  for (double g : mu.grad()) CHECK(g != 0.0);
  for (double g : lv.grad()) CHECK(g != 0.0);
}

TEST_CASE("vae_loss: sum of reconstruction and KL terms") {
  Rng rng(5);
  auto target = nn::Tensor<double>::randn({2, 1, 4, 4}, rng, 0.5);
  LatentStats<double> stats{nn::Tensor<double>::zeros({2, 128, 1, 1}),
                            nn::Tensor<double>::zeros({2, 128, 1, 1})};
  // Reconstruction identical to the target and standard-normal stats: loss 0.
  CHECK(vae_loss(target, target, stats).item() == 0.0);
  auto recon = nn::Tensor<double>::randn({2, 1, 4, 4}, rng, 0.5);
  const double expect = nn::mse(target, recon).item();
  CHECK(vae_loss(target, recon, stats).item() == doctest::Approx(expect).epsilon(1e-12));
  auto bad = nn::Tensor<double>::zeros({2, 1, 4, 5});
  CHECK_THROWS_AS(vae_loss(target, bad, stats), Error);
}

TEST_CASE("route: worked example, tie-break, and equivariances") {
  Rng rng(6);
  DemonetModel<float> m(8, 5, 3, rng);

  SUBCASE("bias-encoded probabilities reproduce the worked assignment") {
    for (auto& v : m.routing.weight.values()) v = 0.0f;
    const double probs[5] = {0.1, 0.2, 0.3, 0.2, 0.2};
    for (int j = 0; j < 5; ++j)
      m.routing.bias.values()[static_cast<std::size_t>(j)] =
          static_cast<float>(std::log(probs[j] / (1.0 - probs[j])));
    auto d1 = nn::Tensor<float>::zeros({1, 8});
    auto out = m.route(d1);
    for (int j = 0; j < 5; ++j)
      CHECK(out.probs.values()[static_cast<std::size_t>(j)] ==
            doctest::Approx(probs[j]).epsilon(1e-5));
    CHECK(out.selected[0] == 2);  // Expert 3 in 1-based terms
  }

  SUBCASE("zero weights and bias: all probs 0.5, lowest index wins") {
    for (auto& v : m.routing.weight.values()) v = 0.0f;
    for (auto& v : m.routing.bias.values()) v = 0.0f;
    auto d1 = nn::Tensor<float>::randn({3, 8}, rng, 1.0f);
    auto out = m.route(d1);
    for (float p : out.probs.values()) CHECK(p == doctest::Approx(0.5));
    for (int s : out.selected) CHECK(s == 0);
    int total = 0;
    for (int c : out.per_expert_counts) total += c;
    CHECK(total == 3);
  }

  SUBCASE("permuting expert rows of the routing weight permutes selections") {
    auto d1 = nn::Tensor<float>::randn({6, 8}, rng, 1.0f);
    auto base = m.route(d1);
    // Rotate expert j -> j+1 (weight rows and bias entries).
    DemonetModel<float> m2(8, 5, 3, rng);
    for (int j = 0; j < 5; ++j) {
      const int src = j, dst = (j + 1) % 5;
      for (int k = 0; k < 8; ++k)
        m2.routing.weight.values()[static_cast<std::size_t>(dst * 8 + k)] =
            m.routing.weight.values()[static_cast<std::size_t>(src * 8 + k)];
      m2.routing.bias.values()[static_cast<std::size_t>(dst)] =
          m.routing.bias.values()[static_cast<std::size_t>(src)];
    }
    auto rotated = m2.route(d1);
    for (std::size_t i = 0; i < base.selected.size(); ++i)
      CHECK(rotated.selected[i] == (base.selected[i] + 1) % 5);
  }

  SUBCASE("argmax invariant to power-of-two input/weight rescaling") {
    auto d1 = nn::Tensor<float>::randn({4, 8}, rng, 1.0f);
    auto base = m.route(d1);
    DemonetModel<float> m2(8, 5, 3, rng);
    m2.routing.bias.values() = m.routing.bias.values();
    for (std::size_t i = 0; i < m.routing.weight.values().size(); ++i)
      m2.routing.weight.values()[i] = m.routing.weight.values()[i] / 4.0f;
    auto scaled_input = d1;
    for (auto& v : scaled_input.values()) v *= 4.0f;
    auto out = m2.route(scaled_input);
    CHECK(out.selected == base.selected);
  }
}

TEST_CASE("forward: single sample equals the standalone expert + backbone") {
  Rng rng(7);
  DemonetModel<float> m(8, 3, 4, rng);
  auto spect = nn::Tensor<float>::randn({1, 1, 48, 48}, rng, 1.0f);
  RoutingOutput<float> routing;
  routing.probs = nn::Tensor<float>::from_values({1, 3}, {0.1f, 0.8f, 0.2f});
  routing.selected = {1};
  routing.per_expert_counts = {0, 1, 0};
  nn::NoGradGuard guard;
  auto logits = m.forward(spect, routing);
  CHECK(logits.shape() == Shape{1, 4});

  auto feat = m.experts[1].forward(spect, m.training);
  for (auto& b : m.blocks) feat = b.forward(feat, m.training);
  auto manual = m.head.forward(nn::flatten(nn::adaptive_avg_pool2d(feat)));
  CHECK(logits.values() == manual.values());

  RoutingOutput<float> bad = routing;
  bad.selected = {7};
  CHECK_THROWS_AS(m.forward(spect, bad), Error);
}

TEST_CASE("sparse updates: unselected experts stay bit-identical") {
  Rng rng(8);
  DemonetModel<float> m(8, 3, 3, rng);
  auto spect = nn::Tensor<float>::randn({4, 1, 16, 16}, rng, 1.0f);
  auto d1 = nn::Tensor<float>::randn({4, 8}, rng, 1.0f);
  // Push every sample to expert 0 via the routing bias.
  for (auto& v : m.routing.weight.values()) v = 0.0f;
  m.routing.bias.values() = {5.0f, -5.0f, -5.0f};
  auto routing = m.route(d1);
  for (int s : routing.selected) REQUIRE(s == 0);

  auto e1 = m.expert_params(1);
  auto e2 = m.expert_params(2);
  const auto snap1 = snapshot(e1);
  const auto snap2 = snapshot(e2);

  auto logits = m.forward(spect, routing);
  auto loss = total_loss(logits, {0, 1, 2, 0}, routing, m.n_experts, 0.01f);
  nn::backward(loss);

  // Exactly-one-expert property: only expert 0 received gradients.
  for (auto& p : m.expert_params(0)) CHECK(p.tensor.has_grad());
  for (auto& p : e1) CHECK_FALSE(p.tensor.has_grad());
  for (auto& p : e2) CHECK_FALSE(p.tensor.has_grad());

  // Optimizer steps only the parameters that took part.
  nn::AdamW<float> opt(1e-3, 1e-3);
  std::vector<nn::Tensor<float>*> stepped;
  for (auto& p : m.named_params())
    if (p.tensor.has_grad()) stepped.push_back(&p.tensor);
  // shared params always participate
  CHECK(stepped.size() == m.shared_params().size() + m.expert_params(0).size());
  auto params = m.named_params();
  std::vector<nn::Tensor<float>*> ptrs;
  for (auto& p : params)
    if (p.tensor.has_grad()) ptrs.push_back(&p.tensor);
  opt.step(ptrs);

  CHECK(snapshot(e1) == snap1);
  CHECK(snapshot(e2) == snap2);
}

TEST_CASE("balance_loss: closed forms and permutation symmetry") {
  const int N = 5;

  SUBCASE("uniform assignment and probabilities give exactly 1") {
    RoutingOutput<double> r;
    r.probs = nn::Tensor<double>::from_values(
        {5, 5}, std::vector<double>(25, 0.5));  // rows normalize to 1/N
    r.selected = {0, 1, 2, 3, 4};
    r.per_expert_counts = {1, 1, 1, 1, 1};
    CHECK(balance_loss(r, N).item() == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("full collapse gives exactly N") {
    RoutingOutput<double> r;
    std::vector<double> probs(10, 0.0);
    probs[0] = 1.0;
    probs[5] = 1.0;
    r.probs = nn::Tensor<double>::from_values({2, 5}, probs);
    r.selected = {0, 0};
    r.per_expert_counts = {2, 0, 0, 0, 0};
    CHECK(balance_loss(r, N).item() == doctest::Approx(5.0).epsilon(1e-12));
  }

  SUBCASE("relabeling experts leaves the loss unchanged") {
    Rng rng(9);
    RoutingOutput<double> r;
    std::vector<double> probs(15);
    for (auto& p : probs) p = 0.1 + rng.uniform();
    r.probs = nn::Tensor<double>::from_values({3, 5}, probs);
    r.per_expert_counts = {2, 0, 1, 0, 0};
    const double base = balance_loss(r, N).item();
    // Swap experts 0 and 2 everywhere.
    RoutingOutput<double> rp;
    std::vector<double> probs_p = probs;
    for (int i = 0; i < 3; ++i) std::swap(probs_p[i * 5 + 0], probs_p[i * 5 + 2]);
    rp.probs = nn::Tensor<double>::from_values({3, 5}, probs_p);
    rp.per_expert_counts = {1, 0, 2, 0, 0};
    CHECK(balance_loss(rp, N).item() == doctest::Approx(base).epsilon(1e-12));
  }

  SUBCASE("empty batch rejected") {
    RoutingOutput<double> r;
    r.probs = nn::Tensor<double>::zeros({0, 5});
    r.per_expert_counts = {0, 0, 0, 0, 0};
    CHECK_THROWS_AS(balance_loss(r, N), Error);
  }
}

TEST_CASE("total_loss: alpha composition and balance-term gradient") {
  Rng rng(10);
  const int N = 4, C = 6;
  auto logits = nn::Tensor<double>::randn({5, C}, rng, 1.0);
  const std::vector<int> labels = {0, 2, 4, 1, 5};
  RoutingOutput<double> r;
  std::vector<double> probs(5 * N);
  for (auto& p : probs) p = 0.1 + rng.uniform();
  r.probs = nn::Tensor<double>::from_values({5, N}, probs);
  r.selected = {0, 1, 1, 3, 2};
  r.per_expert_counts = {1, 2, 1, 1};

  const double ce = nn::cross_entropy(logits, labels).item();
  CHECK(total_loss(logits, labels, r, N, 0.0).item() == doctest::Approx(ce));
  const double bal = balance_loss(r, N).item();
  CHECK(total_loss(logits, labels, r, N, 0.01).item() ==
        doctest::Approx(ce + 0.01 * bal).epsilon(1e-12));

  // Uniform logits + uniform routing: ln C + alpha * 1.
  auto u_logits = nn::Tensor<double>::zeros({4, C});
  RoutingOutput<double> ru;
  ru.probs = nn::Tensor<double>::from_values({4, 4}, std::vector<double>(16, 0.25));
  ru.per_expert_counts = {1, 1, 1, 1};
  CHECK(total_loss(u_logits, {0, 1, 2, 3}, ru, 4, 0.01).item() ==
        doctest::Approx(std::log(static_cast<double>(C)) + 0.01).epsilon(1e-12));

  // Balance-term gradient w.r.t. routing weights vs finite differences, with
  // the hard selection held fixed.
  DemonetModel<double> m(6, N, 3, rng);
  auto d1 = nn::Tensor<double>::randn({5, 6}, rng, 1.0);
  auto ref = m.route(d1);
  const auto counts = ref.per_expert_counts;
  auto f = [&]() {
    auto out = m.route(d1);
    out.per_expert_counts = counts;  // selection held fixed
    return balance_loss(out, N);
  };
  auto loss = f();
  m.routing.weight.clear_grad();
  m.routing.bias.clear_grad();
  nn::backward(loss);
  const auto wgrad = m.routing.weight.grad();
  double worst = 0.0;
  const double h = 1e-4;
  auto& wv = m.routing.weight.values();
  for (std::size_t i = 0; i < wv.size(); ++i) {
    const double keep = wv[i];
    wv[i] = keep + h;
    const double up = f().item();
    wv[i] = keep - h;
    const double dn = f().item();
    wv[i] = keep;
    const double fd = (up - dn) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - wgrad[i]) /
                                std::max({1.0, std::abs(fd), std::abs(wgrad[i])}));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("model init is seed-deterministic") {
  Rng a(42), b(42);
  DemonetModel<float> ma(16, 3, 3, a), mb(16, 3, 3, b);
  auto pa = ma.named_params();
  auto pb = mb.named_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(pa[i].tensor.values() == pb[i].tensor.values());
  }
}
