#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xdistill/data.hpp"
#include "xdistill/network.hpp"

namespace xdistill {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments for any number of parameter slots sharing one step counter. Slots
// are sized on first use and must keep their size afterwards.
struct AdamState {
  AdamHyper hyper;
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(AdamHyper h) : hyper(h) {}
};

// One bias-corrected Adam update over every slot:
//   p -= lr * mhat / (sqrt(vhat) + eps).
void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads);
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

struct NetworkGrads {
  std::vector<Tensor> weights;  // congruent to each layer's weight
  std::vector<double> bias;     // classifier bias
};

struct BackpropResult {
  double loss = 0.0;  // mean soft cross entropy over the batch
  NetworkGrads grads;
  std::size_t correct = 0;  // argmax(logits) == argmax(target)
};

// Exact gradients of the mean cross entropy w.r.t. every weight and the
// classifier bias. targets is (n, classes, 1, 1) with rows summing to 1.
// When a mask is given, gradients of masked entries are zero.
BackpropResult backprop_grads(const Network& net, const Tensor& x, const Tensor& targets,
                              const WeightMask* mask = nullptr);

double mean_cross_entropy(const Network& net, const Tensor& x, const Tensor& targets);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
};

struct TrainLogRow {
  std::size_t iteration = 0;  // optimizer steps taken so far
  double loss = 0.0;          // mean over the epoch's batches
  double train_acc = 0.0;     // fraction correct over the epoch's batches
};

struct TrainResult {
  Network net;
  std::vector<TrainLogRow> log;
};

// Warns when lr lies outside [1e-5, 1e-3].
void check_learning_rate(double lr);

// Kaiming-initializes `arch` from cfg.seed and trains it with Adam on the
// dataset. Full batch when N <= 256, otherwise shuffled minibatches of
// cfg.batch_size in a seeded order. Throws DivergenceError on a non-finite loss.
TrainResult train_teacher(const Network& arch, const Dataset& ds, const TrainConfig& cfg);

// Continues training `net` on soft targets. Masked weights receive no gradient
// and are re-zeroed after every step, so the zero pattern never grows back.
TrainResult finetune(const Network& net, const WeightMask& mask, const SoftBatch& batch,
                     const TrainConfig& cfg);

struct Accuracy {
  double top1 = 0.0;
  double top5 = 0.0;  // equals top1 when there are fewer than 5 classes
  double mean_loss = 0.0;
};

Accuracy evaluate_accuracy(const Network& net, const Dataset& ds, std::size_t chunk = 500);

}  // namespace xdistill
