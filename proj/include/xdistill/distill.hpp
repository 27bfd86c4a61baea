#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xdistill/data.hpp"
#include "xdistill/kernels.hpp"
#include "xdistill/network.hpp"
#include "xdistill/prox.hpp"
#include "xdistill/trainer.hpp"

namespace xdistill {

// NC regresses the student's own stream onto the teacher's (estimation loss).
// Correction and Imitation are the two pure cross connections; Cross blends
// them with mu; Soft mixes the input feature maps with (alpha, beta).
enum class DistillMode { NC, Correction, Imitation, Cross, Soft };

const char* to_string(DistillMode mode) noexcept;
DistillMode distill_mode_from_string(const std::string& name);

struct DistillConfig {
  DistillMode mode = DistillMode::NC;
  double mu = 0.6;
  double alpha = 0.9, beta = 0.3;
  // Conv layers where the cross connection applies; the rest use NC.
  // nullopt means every layer.
  std::optional<std::set<std::size_t>> cross_layers;
  std::size_t iters = 3000;
  std::size_t ramp_iters = 1000;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::size_t trace_every = 10;

  // Augmentations of the K-shot batch.
  bool mixup = false;
  std::size_t crop_pad = 0;
  double feature_noise = 0.0;  // appended noisy copy of h^S at the distilled layer

  bool finetune = false;
  std::size_t finetune_epochs = 20;
  double finetune_lr = 1e-4;

  void validate() const;
  bool crosses(std::size_t layer) const;
};

// Inputs to one conv layer. Under structured pruning the student side has
// fewer channels; in_keep / out_keep give the teacher channel of every student
// input / output channel (empty = identity).
struct LayerContext {
  Tensor h_prev_T;
  Tensor h_prev_S;
  Tensor w_T;
  Tensor w_S;
  std::size_t stride = 1, pad = 0;
  std::vector<std::size_t> in_keep;
  std::vector<std::size_t> out_keep;
};

// Mode plus the blend parameters it uses.
struct LossSpec {
  DistillMode mode = DistillMode::NC;
  double mu = 0.6, alpha = 0.9, beta = 0.3;

  static LossSpec nc() { return {DistillMode::NC}; }
  static LossSpec correction() { return {DistillMode::Correction}; }
  static LossSpec imitation() { return {DistillMode::Imitation}; }
  static LossSpec cross(double mu) { return {DistillMode::Cross, mu}; }
  static LossSpec soft(double alpha, double beta) { return {DistillMode::Soft, 0.6, alpha, beta}; }
};

// (h^T, h^S) -> (alpha h^T + (1-alpha) h^S, (1-beta) h^T + beta h^S).
// Weights of exactly 0 or 1 copy the selected map verbatim.
std::pair<Tensor, Tensor> cross_mix(const Tensor& h_T, const Tensor& h_S, double alpha, double beta);

// Every loss is ||sigma(W^T * a) - sigma(W^S * b)||_F^2 / N for some teacher
// input a and student input b; a loss with two terms (Cross) sums the scaled
// term values. The pieces that do not depend on W^S are built once.
class LayerObjective {
 public:
  LayerObjective(const LayerContext& ctx, const LossSpec& spec);

  struct Eval {
    double value = 0.0;
    Tensor grad;  // congruent to W^S
  };
  double value(const Tensor& w_S) const;
  Eval value_and_grad(const Tensor& w_S) const;

  std::size_t samples() const noexcept { return n_; }

 private:
  struct Term {
    double coef = 1.0;
    Im2ColMatrix cols;  // student-branch input patches
    Matrix target;      // sigma(W^T * a), student channel layout, c_out x N*P
  };
  double term_value(const Term& term, const Tensor& w_S, Tensor* grad) const;

  std::vector<Term> terms_;
  std::size_t n_ = 0;
  Shape w_shape_{};
};

double estimation_loss(const LayerContext& ctx);
double correction_loss(const LayerContext& ctx);
double imitation_loss(const LayerContext& ctx);
double combined_loss(const LayerContext& ctx, double mu);
double soft_cross_loss(const LayerContext& ctx, double alpha, double beta);

Tensor layer_loss_grad(const LayerContext& ctx, const LossSpec& spec);

struct TraceRow {
  std::size_t layer = 0;
  std::size_t iter = 0;
  double loss = 0.0;
  double sparsity = 0.0;  // fraction of exactly-zero weights after the step
  double lr = 0.0;
};

struct LayerDistillResult {
  Tensor weight;
  Tensor mask;  // 1 where the final weight is nonzero
  std::vector<TraceRow> trace;
  double final_loss = 0.0;  // objective at the returned weights
};

// T iterations of: objective gradient (at the quantized weights under lazy
// projection) -> Adam step -> proximal map at the scheduled level. Quantizing
// regularizers hard-project the result. Throws DivergenceError naming the layer.
LayerDistillResult distill_layer(const LayerContext& ctx, const LossSpec& spec, const DistillConfig& cfg,
                                 const Regularizer& reg, std::size_t layer_index = 0);

struct LayerReport {
  std::size_t layer = 0;
  bool skipped = false;
  DistillMode mode = DistillMode::NC;
  double final_loss = 0.0;
  double sparsity = 0.0;
};

struct CompressResult {
  Network student;
  WeightMask mask;
  ChannelMap channels;
  std::vector<LayerReport> layers;
  std::vector<TraceRow> trace;
  std::vector<TrainLogRow> finetune_log;
};

// The full layer-wise loop: layers front to back, each distilled against cached
// teacher maps while the student's inputs come from its own already-distilled
// layers. Skipped layers keep the teacher weights. The classifier is the
// teacher's. An optional finetune pass follows.
CompressResult compress_network(const Network& teacher, const Dataset& kshot, const DistillConfig& cfg,
                                const PruneScheme& scheme, const Regularizer& reg);

// Student-layout teacher maps: gather of the kept channels.
Tensor gather_teacher_channels(const Tensor& h_T, const std::vector<std::size_t>& keep);
// Teacher-layout view of a student map: kept channels from h_S, the rest from h_T.
Tensor lift_student_channels(const Tensor& h_S, const Tensor& h_T, const std::vector<std::size_t>& keep);

}  // namespace xdistill
