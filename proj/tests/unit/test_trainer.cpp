#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"
#include "xdistill/data.hpp"
#include "xdistill/error.hpp"
#include "xdistill/kernels.hpp"
#include "xdistill/trainer.hpp"

using namespace xdistill;

namespace {

// |a - f| / max(|a|, |f|, floor): entries far below the floor are compared absolutely.
double rel_err(double a, double f, double floor = 1e-4) {
  return std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor});
}

Tensor soft_targets(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  Tensor t({n, classes, 1, 1});
  std::uniform_real_distribution<double> ud(0.1, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += (t[i * classes + c] = ud(rng));
    for (std::size_t c = 0; c < classes; ++c) t[i * classes + c] /= s;
  }
  return t;
}

// Two classes: bright left half vs bright right half, plus noise.
Dataset separable(std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.1);
  Dataset ds;
  ds.num_classes = 2;
  ds.images = Tensor({2 * per_class, 1, 4, 4});
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const std::size_t y = i / per_class;
    ds.labels.push_back(y);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        const bool lit = (c < 2) == (y == 0);
        ds.images.at(i, 0, r, c) = std::clamp((lit ? 0.8 : 0.2) + nd(rng), 0.0, 1.0);
      }
  }
  return ds;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("single linear layer gradient is (softmax(o) - y) x input") {
  Network net({4, 1, 1}, std::vector<LayerSpec>{LayerSpec::linear(4, 3)});
  std::mt19937_64 rng(1);
  net.set_weight(0, oracle::random_tensor({3, 4, 1, 1}, rng));
  net.set_bias({0.1, -0.2, 0.3});
  const Tensor x = oracle::random_tensor({1, 4, 1, 1}, rng);
  const Tensor y({1, 3, 1, 1}, std::vector<double>{0, 1, 0});
  const BackpropResult br = backprop_grads(net, x, y);
  const Tensor o = forward_logits(net, x);
  const auto p = softmax(o.data());
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(br.grads.weights[0][i * 4 + j] == doctest::Approx((p[i] - y[i]) * x[j]).epsilon(1e-12));
    CHECK(br.grads.bias[i] == doctest::Approx(p[i] - y[i]).epsilon(1e-12));
  }
  CHECK(br.loss == doctest::Approx(softmax_cross_entropy(o.data(), std::size_t{1})).epsilon(1e-13));
}

TEST_CASE("backprop matches finite differences on a 3-layer net") {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const Network net = fixture::random_convnet({2, 5, 5}, {3, 2}, {1, 2}, 3, 3, seed);
    std::mt19937_64 rng(seed + 100);
    const Tensor x = oracle::random_uniform({2, 2, 5, 5}, rng, 0.0, 1.0);
    const Tensor y = soft_targets(2, 3, rng);
    WeightMask mask = WeightMask::ones(net);
    mask.layers[1][0] = 0.0;
    const BackpropResult br = backprop_grads(net, x, y);
    const BackpropResult masked = backprop_grads(net, x, y, &mask);
    CHECK(masked.grads.weights[1][0] == 0.0);
    CHECK(br.loss == doctest::Approx(mean_cross_entropy(net, x, y)).epsilon(1e-13));

    double worst = 0.0;
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      auto f = [&](const std::vector<double>& p) {
        Network probe = net;
        probe.set_weight(l, Tensor(net.layer(l).weight.shape(), p));
        return mean_cross_entropy(probe, x, y);
      };
      const auto fd = oracle::finite_diff(net.layer(l).weight.vec(), f);
      for (std::size_t i = 0; i < fd.size(); ++i) worst = std::max(worst, rel_err(br.grads.weights[l][i], fd[i]));
    }
    auto fb = [&](const std::vector<double>& b) {
      Network probe = net;
      probe.set_bias(b);
      return mean_cross_entropy(probe, x, y);
    };
    const auto fdb = oracle::finite_diff(net.classifier().bias, fb);
    for (std::size_t i = 0; i < fdb.size(); ++i) worst = std::max(worst, rel_err(br.grads.bias[i], fdb[i]));
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("adam") {
  std::vector<double> p{1.0, -2.0};
  AdamState zero(AdamHyper{0.1});
  adam_step(zero, p, std::vector<double>{0.0, 0.0});
  CHECK(p == std::vector<double>{1.0, -2.0});

  std::vector<double> s{0.0};
  AdamState first(AdamHyper{0.1});
  adam_step(first, s, std::vector<double>{1.0});
  CHECK(s[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-14));

  // 100 steps on f(p) = 0.5 sum a_i p_i^2 against the scalar reimplementation.
  std::vector<double> a{0.3, 2.0, 7.5, 0.01}, lib{1.0, -1.0, 0.5, 3.0}, ref = lib;
  AdamState st(AdamHyper{0.05});
  oracle::Adam other(0.05);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> g1(4), g2(4);
    for (std::size_t i = 0; i < 4; ++i) {
      g1[i] = a[i] * lib[i];
      g2[i] = a[i] * ref[i];
    }
    adam_step(st, lib, g1);
    other.step(ref, g2);
  }
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(lib[i] - ref[i]) <= 1e-12);
  CHECK(st.step == 100);
}

TEST_CASE("adam slots share one step counter") {
  std::vector<double> a{1.0}, b{2.0, 3.0};
  AdamState st(AdamHyper{0.01});
  std::vector<double> ga{0.5}, gb{-1.0, 2.0};
  std::vector<std::span<double>> params{a, b};
  std::vector<std::span<const double>> grads{ga, gb};
  adam_step(st, params, grads);
  CHECK(st.step == 1);
  CHECK(st.m.size() == 2);
  std::vector<double> wrong{0.0};
  std::vector<std::span<const double>> bad{ga, wrong};
  CHECK_THROWS_AS(adam_step(st, params, bad), ShapeError);
}

TEST_CASE("train_teacher: separable set, determinism, zero epochs") {
  const Dataset ds = separable(50, 7);
  const Network arch = make_convnet({1, 4, 4}, {4}, {1}, 3, 2);
  TrainConfig cfg{1e-3, 500, 128, 3};
  const TrainResult r = train_teacher(arch, ds, cfg);
  CHECK(r.log.back().iteration == 500);
  CHECK(evaluate_accuracy(r.net, ds).top1 >= 0.99);

  cfg.epochs = 5;
  const TrainResult a = train_teacher(arch, ds, cfg), b = train_teacher(arch, ds, cfg);
  CHECK(a.net == b.net);

  cfg.epochs = 0;
  Network init = arch;
  init_kaiming(init, cfg.seed);
  CHECK(train_teacher(arch, ds, cfg).net == init);

  Dataset wrong = ds;
  wrong.num_classes = 3;
  CHECK_THROWS_AS(train_teacher(arch, wrong, cfg), ShapeError);
}

TEST_CASE("train_teacher with minibatches is deterministic") {
  const Dataset ds = separable(150, 2);
  const Network arch = make_convnet({1, 4, 4}, {3}, {1}, 3, 2);
  const TrainConfig cfg{1e-3, 3, 64, 5};
  const TrainResult a = train_teacher(arch, ds, cfg), b = train_teacher(arch, ds, cfg);
  CHECK(a.net == b.net);
  CHECK(a.log.back().iteration == 3 * 5);
}

TEST_CASE("divergence aborts") {
  const Dataset ds = separable(4, 1);
  Network arch = make_convnet({1, 4, 4}, {2}, {1}, 3, 2);
  init_kaiming(arch, 1);
  Tensor w = arch.layer(1).weight;
  w[0] = std::numeric_limits<double>::infinity();
  arch.set_weight(1, w);
  CHECK_THROWS_AS(finetune(arch, WeightMask::ones(arch), to_soft_batch(ds), TrainConfig{1e-3, 2, 8, 1}),
                  DivergenceError);
}

TEST_CASE("finetune") {
  const Dataset ds = separable(30, 4);
  const Network arch = make_convnet({1, 4, 4}, {4, 3}, {1, 2}, 3, 2);
  const TrainConfig cfg{1e-3, 10, 128, 9};

  // All-ones mask: same trajectory as training from the same start.
  Network init = arch;
  init_kaiming(init, cfg.seed);
  const TrainResult plain = train_teacher(arch, ds, cfg);
  const TrainResult ones = finetune(init, WeightMask::ones(init), to_soft_batch(ds), cfg);
  CHECK(ones.net.layers() == plain.net.layers());

  // A fully masked layer stays at zero.
  WeightMask mask = WeightMask::ones(init);
  for (double& v : mask.layers[1].data()) v = 0.0;
  const TrainResult frozen = finetune(init, mask, to_soft_batch(ds), cfg);
  CHECK(count_nonzero(frozen.net.layer(1).weight.data()) == 0);

  // Random masks: the nonzero pattern is exactly preserved.
  std::mt19937_64 rng(13);
  std::bernoulli_distribution keep(0.5);
  for (int trial = 0; trial < 5; ++trial) {
    WeightMask m = WeightMask::ones(init);
    for (Tensor& t : m.layers)
      for (double& v : t.data()) v = keep(rng) ? 1.0 : 0.0;
    Network sparse = init;
    m.apply(sparse);
    const std::size_t before = WeightMask::from_nonzero(sparse).kept();
    const TrainResult r = finetune(sparse, m, to_soft_batch(ds), cfg);
    CHECK(WeightMask::from_nonzero(r.net).kept() == before);
    for (std::size_t l = 0; l < r.net.num_layers(); ++l)
      for (std::size_t i = 0; i < m.layers[l].size(); ++i)
        if (m.layers[l][i] == 0.0) CHECK(r.net.layer(l).weight[i] == 0.0);
  }
}

TEST_CASE("learning-rate range") {
  const int before = warning_count();
  check_learning_rate(1e-4);
  CHECK(warning_count() == before);
  check_learning_rate(1e-2);
  CHECK(warning_count() == before + 1);
  CHECK_THROWS_AS(check_learning_rate(0.0), InvalidArgument);
}

TEST_CASE("evaluate_accuracy top-1 and top-5") {
  Network net({6, 1, 1}, std::vector<LayerSpec>{LayerSpec::linear(6, 6)});
  Tensor id({6, 6, 1, 1});
  for (std::size_t i = 0; i < 6; ++i) id[i * 6 + i] = 1.0;
  net.set_weight(0, id);
  Dataset ds;
  ds.num_classes = 6;
  // One-hot inputs: sample i scores class i highest; label it i for half, i+1 otherwise.
  ds.images = Tensor({6, 6, 1, 1});
  for (std::size_t i = 0; i < 6; ++i) {
    ds.images[i * 6 + i] = 1.0;
    ds.labels.push_back(i % 2 == 0 ? i : (i + 1) % 6);
  }
  const Accuracy acc = evaluate_accuracy(net, ds, 4);
  CHECK(acc.top1 == doctest::Approx(0.5));
  // Label j has logit 0 tied with four others; rank counts lower-index ties.
  CHECK(acc.top5 >= acc.top1);
}

}  // TEST_SUITE
