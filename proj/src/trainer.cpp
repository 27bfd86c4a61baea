#include "xdistill/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "xdistill/error.hpp"
#include "xdistill/kernels.hpp"

namespace xdistill {

void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient slot counts differ");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t s = 0; s < params.size(); ++s) {
      state.m[s].assign(params[s].size(), 0.0);
      state.v[s].assign(params[s].size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: slot count changed between steps");
  ++state.step;
  const AdamHyper& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t s = 0; s < params.size(); ++s) {
    auto p = params[s];
    auto g = grads[s];
    auto& m = state.m[s];
    auto& v = state.v[s];
    if (p.size() != g.size() || p.size() != m.size()) {
      throw ShapeError("adam_step: slot " + std::to_string(s) + " changed size");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  const std::span<double> p[1] = {params};
  const std::span<const double> g[1] = {grads};
  adam_step(state, p, g);
}

namespace {

struct ConvCache {
  Im2ColMatrix cols;
  Matrix pre;  // c_out x N*P
};

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

void check_targets(const Network& net, const Tensor& x, const Tensor& targets) {
  if (targets.shape().n != x.shape().n || targets.shape().sample_size() != net.num_classes()) {
    throw ShapeError("targets " + targets.shape().str() + " do not match " + std::to_string(x.shape().n) +
                     " samples of " + std::to_string(net.num_classes()) + " classes");
  }
}

}  // namespace

BackpropResult backprop_grads(const Network& net, const Tensor& x, const Tensor& targets,
                              const WeightMask* mask) {
  check_targets(net, x, targets);
  if (mask && !mask->congruent(net)) throw ShapeError("backprop_grads: mask is not congruent to the network");
  const std::size_t n = x.shape().n;
  const std::size_t L = net.num_conv();

  std::vector<ConvCache> cache(L);
  std::vector<Tensor> acts;
  acts.reserve(L);
  const Tensor* h = &x;
  for (std::size_t l = 0; l < L; ++l) {
    const Layer& layer = net.layer(l);
    cache[l].cols = im2col(*h, layer.spec.k, layer.spec.stride, layer.spec.pad);
    cache[l].pre = conv_gemm_matrix(cache[l].cols, layer.weight);
    Matrix post = cache[l].pre;
    for (double& v : post.data) v = relu(v);
    acts.push_back(channel_major_to_tensor(post, n, cache[l].cols.out_h, cache[l].cols.out_w));
    h = &acts.back();
  }
  const Layer& fc = net.classifier();
  const Tensor logits = linear_forward(fc, *h);
  const std::size_t classes = fc.spec.out;
  const std::size_t d_in = fc.spec.in;

  BackpropResult r;
  r.grads.weights.resize(net.num_layers());
  std::vector<double> d_logits(n * classes);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto o = logits.sample(i);
    auto y = targets.sample(i);
    total += soft_cross_entropy(o, y);
    if (argmax(o) == argmax(y)) ++r.correct;
    const auto p = softmax(o);
    for (std::size_t j = 0; j < classes; ++j) d_logits[i * classes + j] = (p[j] - y[j]) / static_cast<double>(n);
  }
  r.loss = total / static_cast<double>(n);

  Tensor dfc(fc.weight.shape());
  linalg::gemm_tn(d_logits, h->data(), dfc.data(), n, classes, d_in);
  r.grads.weights[L] = std::move(dfc);
  r.grads.bias.assign(classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < classes; ++j) r.grads.bias[j] += d_logits[i * classes + j];
  }

  if (L > 0) {
    Tensor dh(h->shape());
    linalg::gemm_nn(d_logits, fc.weight.data(), dh.data(), n, classes, d_in);
    Matrix dpre = tensor_to_channel_major(dh);
    for (std::size_t l = L; l-- > 0;) {
      const Layer& layer = net.layer(l);
      const ConvCache& c = cache[l];
      for (std::size_t i = 0; i < dpre.data.size(); ++i) {
        if (!(c.pre.data[i] > 0.0)) dpre.data[i] = 0.0;
      }
      Tensor dw(layer.weight.shape());
      linalg::gemm_nt(dpre.data, c.cols.data, dw.data(), layer.spec.out, c.cols.cols, c.cols.rows);
      r.grads.weights[l] = std::move(dw);
      if (l == 0) break;
      std::vector<double> dcols(c.cols.rows * c.cols.cols);
      linalg::gemm_tn(layer.weight.data(), dpre.data, dcols, layer.spec.out, c.cols.rows, c.cols.cols);
      dpre = tensor_to_channel_major(col2im(dcols, c.cols));
    }
  }

  if (mask) {
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      auto g = r.grads.weights[l].data();
      auto m = mask->layers[l].data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (m[i] == 0.0) g[i] = 0.0;
      }
    }
  }
  return r;
}

double mean_cross_entropy(const Network& net, const Tensor& x, const Tensor& targets) {
  check_targets(net, x, targets);
  const Tensor logits = forward_logits(net, x);
  double total = 0.0;
  for (std::size_t i = 0; i < x.shape().n; ++i) total += soft_cross_entropy(logits.sample(i), targets.sample(i));
  return total / static_cast<double>(x.shape().n);
}

void check_learning_rate(double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("learning rate must be positive and finite");
  if (lr < 1e-5 || lr > 1e-3) {
    warn("learning rate " + std::to_string(lr) + " lies outside the recommended range [1e-5, 1e-3]");
  }
}

namespace {

TrainResult run_training(Network net, const WeightMask* mask, const Tensor& x, const Tensor& targets,
                         const TrainConfig& cfg) {
  check_learning_rate(cfg.lr);
  if (x.shape().n == 0) throw InvalidArgument("training set is empty");
  check_targets(net, x, targets);
  if (mask) mask->apply(net);

  const std::size_t n = x.shape().n;
  const bool full_batch = n <= 256;
  const std::size_t bs = full_batch ? n : std::max<std::size_t>(1, cfg.batch_size);
  std::mt19937_64 rng(cfg.seed ^ 0x5eed0fba7c4e5ull);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  AdamState adam(AdamHyper{cfg.lr});
  TrainResult result;
  std::size_t steps = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (!full_batch) std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      Tensor xb, yb;
      const Tensor* xp = &x;
      const Tensor* yp = &targets;
      if (!full_batch) {
        std::span<const std::size_t> idx(order.data() + start, end - start);
        xb = gather_samples(x, idx);
        yb = gather_samples(targets, idx);
        xp = &xb;
        yp = &yb;
      }
      BackpropResult br = backprop_grads(net, *xp, *yp, mask);
      if (!std::isfinite(br.loss)) {
        throw DivergenceError("training loss became non-finite at step " + std::to_string(steps) + " (epoch " +
                              std::to_string(epoch) + ")");
      }
      loss_sum += br.loss * static_cast<double>(end - start);
      correct += br.correct;

      std::vector<Tensor> weights;
      weights.reserve(net.num_layers());
      for (const Layer& layer : net.layers()) weights.push_back(layer.weight);
      std::vector<double> bias = net.classifier().bias;
      std::vector<std::span<double>> params;
      std::vector<std::span<const double>> grads;
      for (std::size_t l = 0; l < weights.size(); ++l) {
        params.push_back(weights[l].data());
        grads.push_back(br.grads.weights[l].data());
      }
      params.push_back(bias);
      grads.push_back(br.grads.bias);
      adam_step(adam, params, grads);
      for (std::size_t l = 0; l < weights.size(); ++l) net.set_weight(l, std::move(weights[l]));
      net.set_bias(std::move(bias));
      if (mask) mask->apply(net);
      ++steps;
    }
    result.log.push_back(TrainLogRow{steps, loss_sum / static_cast<double>(n),
                                     static_cast<double>(correct) / static_cast<double>(n)});
  }
  result.net = std::move(net);
  return result;
}

}  // namespace

TrainResult train_teacher(const Network& arch, const Dataset& ds, const TrainConfig& cfg) {
  ds.validate();
  if (ds.size() == 0) throw InvalidArgument("train_teacher: dataset is empty");
  if (ds.num_classes != arch.num_classes()) {
    throw ShapeError("dataset has " + std::to_string(ds.num_classes) + " classes, network outputs " +
                     std::to_string(arch.num_classes()));
  }
  Network net = arch;
  net.set_role(Role::Teacher);
  init_kaiming(net, cfg.seed);
  return run_training(std::move(net), nullptr, ds.images, one_hot(ds.labels, ds.num_classes), cfg);
}

TrainResult finetune(const Network& net, const WeightMask& mask, const SoftBatch& batch, const TrainConfig& cfg) {
  if (!mask.congruent(net)) throw ShapeError("finetune: mask is not congruent to the network");
  return run_training(net, &mask, batch.x, batch.targets, cfg);
}

Accuracy evaluate_accuracy(const Network& net, const Dataset& ds, std::size_t chunk) {
  ds.validate();
  if (ds.size() == 0) throw InvalidArgument("evaluate_accuracy: dataset is empty");
  if (chunk == 0) chunk = ds.size();
  const std::size_t classes = net.num_classes();
  const std::size_t topk = std::min<std::size_t>(5, classes);
  std::size_t hit1 = 0, hit5 = 0;
  double loss = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t end = std::min(ds.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = forward_logits(net, gather_samples(ds.images, idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto o = logits.sample(i);
      const std::size_t y = ds.labels[start + i];
      loss += softmax_cross_entropy(o, y);
      // Rank of the true class: number of logits strictly larger, ties to the lower index.
      std::size_t rank = 0;
      for (std::size_t j = 0; j < classes; ++j) {
        if (o[j] > o[y] || (o[j] == o[y] && j < y)) ++rank;
      }
      if (rank == 0) ++hit1;
      if (rank < topk) ++hit5;
    }
  }
  const double n = static_cast<double>(ds.size());
  return Accuracy{static_cast<double>(hit1) / n, static_cast<double>(hit5) / n, loss / n};
}

}  // namespace xdistill
