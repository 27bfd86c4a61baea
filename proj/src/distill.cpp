#include "xdistill/distill.hpp"

#include <algorithm>
#include <cmath>

#include "xdistill/error.hpp"
#include "xdistill/quant.hpp"

namespace xdistill {

const char* to_string(DistillMode mode) noexcept {
  switch (mode) {
    case DistillMode::NC: return "nc";
    case DistillMode::Correction: return "correction";
    case DistillMode::Imitation: return "imitation";
    case DistillMode::Cross: return "cross";
    case DistillMode::Soft: return "soft";
  }
  return "unknown";
}

DistillMode distill_mode_from_string(const std::string& name) {
  for (DistillMode m : {DistillMode::NC, DistillMode::Correction, DistillMode::Imitation, DistillMode::Cross,
                        DistillMode::Soft}) {
    if (name == to_string(m)) return m;
  }
  throw InvalidArgument("unknown distillation mode '" + name + "'");
}

namespace {

bool unit_interval(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

void DistillConfig::validate() const {
  if (!unit_interval(mu)) throw InvalidArgument("mu must lie in [0, 1]");
  if (!unit_interval(alpha) || !unit_interval(beta)) throw InvalidArgument("alpha and beta must lie in [0, 1]");
  if (iters > 0 && ramp_iters > iters) {
    throw InvalidArgument("ramp_iters (" + std::to_string(ramp_iters) + ") exceeds iters (" +
                          std::to_string(iters) + ")");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("distillation learning rate must be positive");
  if (trace_every == 0) throw InvalidArgument("trace_every must be positive");
  if (!(feature_noise >= 0.0)) throw InvalidArgument("feature noise scale must be non-negative");
  if (finetune && !(finetune_lr > 0.0)) throw InvalidArgument("finetune learning rate must be positive");
}

bool DistillConfig::crosses(std::size_t layer) const { return !cross_layers || cross_layers->count(layer) > 0; }

Tensor gather_teacher_channels(const Tensor& h_T, const std::vector<std::size_t>& keep) {
  if (keep.empty()) return h_T;
  return gather_channels(h_T, keep);
}

Tensor lift_student_channels(const Tensor& h_S, const Tensor& h_T, const std::vector<std::size_t>& keep) {
  if (keep.empty()) return h_S;
  const Shape& s = h_S.shape();
  const Shape& t = h_T.shape();
  if (s.n != t.n || s.h != t.h || s.w != t.w || s.c != keep.size()) {
    throw ShapeError("cannot lift student map " + s.str() + " into teacher layout " + t.str());
  }
  Tensor out = h_T;
  const std::size_t P = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto src = h_S.data().subspan((n * s.c + c) * P, P);
      std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>((n * t.c + keep[c]) * P));
    }
  }
  return out;
}

namespace {

// wa * a + (1 - wa) * b, copying verbatim at the endpoints.
Tensor blend(const Tensor& a, const Tensor& b, double wa) {
  if (a.shape() != b.shape()) throw ShapeError("cross_mix needs congruent maps: " + a.shape().str() + " vs " +
                                               b.shape().str());
  if (wa == 1.0) return a;
  if (wa == 0.0) return b;
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = wa * a[i] + (1.0 - wa) * b[i];
  return out;
}

}  // namespace

std::pair<Tensor, Tensor> cross_mix(const Tensor& h_T, const Tensor& h_S, double alpha, double beta) {
  if (!unit_interval(alpha) || !unit_interval(beta)) throw InvalidArgument("alpha and beta must lie in [0, 1]");
  return {blend(h_T, h_S, alpha), blend(h_S, h_T, beta)};
}

LayerObjective::LayerObjective(const LayerContext& ctx, const LossSpec& spec) : w_shape_(ctx.w_S.shape()) {
  const Shape& ts = ctx.h_prev_T.shape();
  const Shape& ss = ctx.h_prev_S.shape();
  if (ts.n != ss.n || ts.h != ss.h || ts.w != ss.w) {
    throw ShapeError("teacher and student input maps disagree: " + ts.str() + " vs " + ss.str());
  }
  const std::size_t k = ctx.w_T.shape().h;
  if (ctx.w_S.shape().h != k || ctx.w_S.shape().w != ctx.w_T.shape().w) {
    throw ShapeError("teacher and student kernels differ in spatial extent");
  }
  const std::size_t s_out = ctx.out_keep.empty() ? ctx.w_T.shape().n : ctx.out_keep.size();
  const std::size_t s_in = ctx.in_keep.empty() ? ctx.w_T.shape().c : ctx.in_keep.size();
  if (ctx.w_S.shape().n != s_out || ctx.w_S.shape().c != s_in || ss.c != s_in || ts.c != ctx.w_T.shape().c) {
    throw ShapeError("student kernel " + ctx.w_S.shape().str() + " does not fit the channel maps (teacher kernel " +
                     ctx.w_T.shape().str() + ", inputs " + ts.str() + " / " + ss.str() + ")");
  }
  n_ = ts.n;

  auto add_term = [&](double coef, const Tensor& teacher_in, const Tensor& student_in) {
    if (coef == 0.0) return;
    Term term;
    term.coef = coef;
    Matrix pre_T = conv_gemm_matrix(im2col(teacher_in, k, ctx.stride, ctx.pad), ctx.w_T);
    for (double& v : pre_T.data) v = relu(v);
    if (ctx.out_keep.empty()) {
      term.target = std::move(pre_T);
    } else {
      term.target = Matrix(ctx.out_keep.size(), pre_T.cols);
      for (std::size_t o = 0; o < ctx.out_keep.size(); ++o) {
        std::copy_n(pre_T.data.begin() + static_cast<std::ptrdiff_t>(ctx.out_keep[o] * pre_T.cols), pre_T.cols,
                    term.target.data.begin() + static_cast<std::ptrdiff_t>(o * pre_T.cols));
      }
    }
    term.cols = im2col(student_in, k, ctx.stride, ctx.pad);
    terms_.push_back(std::move(term));
  };

  const Tensor& hT = ctx.h_prev_T;
  const Tensor& hS = ctx.h_prev_S;
  switch (spec.mode) {
    case DistillMode::NC:
      add_term(1.0, hT, hS);
      break;
    case DistillMode::Correction:
      add_term(1.0, hT, gather_teacher_channels(hT, ctx.in_keep));
      break;
    case DistillMode::Imitation:
      add_term(1.0, lift_student_channels(hS, hT, ctx.in_keep), hS);
      break;
    case DistillMode::Cross:
      if (!unit_interval(spec.mu)) throw InvalidArgument("mu must lie in [0, 1]");
      add_term(spec.mu, hT, gather_teacher_channels(hT, ctx.in_keep));
      add_term(1.0 - spec.mu, lift_student_channels(hS, hT, ctx.in_keep), hS);
      break;
    case DistillMode::Soft: {
      auto mixed_T = cross_mix(hT, lift_student_channels(hS, hT, ctx.in_keep), spec.alpha, spec.beta).first;
      auto mixed_S = cross_mix(gather_teacher_channels(hT, ctx.in_keep), hS, spec.alpha, spec.beta).second;
      add_term(1.0, mixed_T, mixed_S);
      break;
    }
  }
}

double LayerObjective::term_value(const Term& term, const Tensor& w_S, Tensor* grad) const {
  const Matrix pre = conv_gemm_matrix(term.cols, w_S);
  const double inv_n = 1.0 / static_cast<double>(n_);
  double sum = 0.0;
  std::vector<double> resid;
  if (grad) resid.resize(pre.data.size());
  for (std::size_t i = 0; i < pre.data.size(); ++i) {
    const double p = pre.data[i];
    const double d = relu(p) - term.target.data[i];
    sum += d * d;
    if (grad) resid[i] = p > 0.0 ? 2.0 * inv_n * d : 0.0;
  }
  if (grad) {
    *grad = Tensor(w_shape_);
    linalg::gemm_nt(resid, term.cols.data, grad->data(), w_shape_.n, term.cols.cols, term.cols.rows);
  }
  return sum * inv_n;
}

double LayerObjective::value(const Tensor& w_S) const {
  if (w_S.shape() != w_shape_) throw ShapeError("student kernel changed shape");
  if (terms_.size() == 1 && terms_[0].coef == 1.0) return term_value(terms_[0], w_S, nullptr);
  double v = 0.0;
  for (const Term& t : terms_) v += t.coef * term_value(t, w_S, nullptr);
  return v;
}

LayerObjective::Eval LayerObjective::value_and_grad(const Tensor& w_S) const {
  if (w_S.shape() != w_shape_) throw ShapeError("student kernel changed shape");
  Eval e;
  e.grad = Tensor(w_shape_);
  if (terms_.size() == 1 && terms_[0].coef == 1.0) {
    e.value = term_value(terms_[0], w_S, &e.grad);
    return e;
  }
  Tensor g;
  for (const Term& t : terms_) {
    e.value += t.coef * term_value(t, w_S, &g);
    for (std::size_t i = 0; i < g.size(); ++i) e.grad[i] += t.coef * g[i];
  }
  return e;
}

double estimation_loss(const LayerContext& ctx) { return LayerObjective(ctx, LossSpec::nc()).value(ctx.w_S); }
double correction_loss(const LayerContext& ctx) {
  return LayerObjective(ctx, LossSpec::correction()).value(ctx.w_S);
}
double imitation_loss(const LayerContext& ctx) { return LayerObjective(ctx, LossSpec::imitation()).value(ctx.w_S); }
double combined_loss(const LayerContext& ctx, double mu) {
  return LayerObjective(ctx, LossSpec::cross(mu)).value(ctx.w_S);
}
double soft_cross_loss(const LayerContext& ctx, double alpha, double beta) {
  return LayerObjective(ctx, LossSpec::soft(alpha, beta)).value(ctx.w_S);
}

Tensor layer_loss_grad(const LayerContext& ctx, const LossSpec& spec) {
  return LayerObjective(ctx, spec).value_and_grad(ctx.w_S).grad;
}

namespace {

double zero_fraction(const Tensor& w) {
  if (w.empty()) return 0.0;
  return 1.0 - static_cast<double>(count_nonzero(w.data())) / static_cast<double>(w.size());
}

Tensor nonzero_mask(const Tensor& w) {
  Tensor m(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) m[i] = w[i] != 0.0 ? 1.0 : 0.0;
  return m;
}

}  // namespace

LayerDistillResult distill_layer(const LayerContext& ctx, const LossSpec& spec, const DistillConfig& cfg,
                                 const Regularizer& reg, std::size_t layer_index) {
  cfg.validate();
  reg.validate();
  const LayerObjective obj(ctx, spec);
  const Schedule sched{reg.target_sparsity, cfg.ramp_iters};

  Tensor w = ctx.w_S;
  AdamState adam(AdamHyper{cfg.lr});
  LayerDistillResult out;
  // Entries the prox has zeroed stay at zero, so the zero set only grows with
  // the level and lambda is nonzero only on steps where the level adds zeros.
  std::vector<char> pruned(w.size(), 0);
  const QuantRange qrange = reg.quantizes() ? quant_range(w) : QuantRange{};
  for (std::size_t t = 1; t <= cfg.iters; ++t) {
    const bool lazy = reg.kind == RegKind::QuantProject;
    auto e = lazy ? obj.value_and_grad(quantize_weights(w, reg.bits, qrange)) : obj.value_and_grad(w);
    if (!std::isfinite(e.value) || !all_finite(e.grad.data())) {
      throw DivergenceError("distillation of layer " + std::to_string(layer_index) +
                            " produced a non-finite loss at iteration " + std::to_string(t));
    }
    adam_step(adam, w.data(), e.grad.data());
    if (reg.prunes()) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (pruned[i]) w[i] = 0.0;
      }
      w = prox_at_level(w, schedule_value(sched, t), reg.kind);
      for (std::size_t i = 0; i < w.size(); ++i) pruned[i] = w[i] == 0.0;
    } else if (reg.kind == RegKind::QuantPenalty) {
      w = quant_penalty_step(w, reg.bits, reg.quant_lambda, qrange);
    }
    if (t % cfg.trace_every == 0 || t == cfg.iters) {
      out.trace.push_back(TraceRow{layer_index, t, e.value, zero_fraction(w), cfg.lr});
    }
  }
  if (reg.quantizes() && cfg.iters > 0) w = quantize_weights(w, reg.bits, qrange);
  if (!all_finite(w.data())) {
    throw DivergenceError("distillation of layer " + std::to_string(layer_index) + " produced non-finite weights");
  }
  out.final_loss = obj.value(w);
  out.mask = nonzero_mask(w);
  out.weight = std::move(w);
  return out;
}

CompressResult compress_network(const Network& teacher, const Dataset& kshot, const DistillConfig& cfg,
                                const PruneScheme& scheme, const Regularizer& reg) {
  cfg.validate();
  reg.validate();
  kshot.validate();
  if (kshot.size() == 0) throw InvalidArgument("compress_network: the K-shot set is empty");
  if (reg.quantizes() && cfg.finetune) {
    throw InvalidArgument("finetuning would undo the quantization; disable one of them");
  }
  const PruneScheme resolved = resolve_scheme(teacher, scheme);
  StudentBuild sb = build_student(teacher, resolved);
  CompressResult result;
  Network& student = sb.student;

  Tensor x = kshot.images;
  SoftBatch ft_batch = to_soft_batch(kshot);
  if (cfg.mixup) {
    const double lam = draw_mixup_lambda(cfg.seed);
    SoftBatch mixed = mixup(ft_batch, lam, cfg.seed);
    x = concat_samples(x, mixed.x);
    ft_batch.x = concat_samples(ft_batch.x, mixed.x);
    ft_batch.targets = concat_samples(ft_batch.targets, mixed.targets);
  }
  if (cfg.crop_pad > 0) x = concat_samples(x, random_crop(kshot.images, cfg.crop_pad, cfg.seed + 1));

  const ForwardResult teacher_maps = forward_collect(teacher, x);
  Tensor h_S = x;
  for (std::size_t l = 0; l < teacher.num_conv(); ++l) {
    LayerReport rep;
    rep.layer = l;
    if (resolved.skip_layers.count(l)) {
      rep.skipped = true;
      rep.sparsity = zero_fraction(student.layer(l).weight);
      result.layers.push_back(rep);
      h_S = conv_layer_forward(student.layer(l), h_S);
      continue;
    }
    LayerContext ctx;
    ctx.h_prev_T = l == 0 ? x : teacher_maps.features[l - 1];
    ctx.h_prev_S = h_S;
    ctx.w_T = teacher.layer(l).weight;
    ctx.w_S = student.layer(l).weight;
    ctx.stride = teacher.layer(l).spec.stride;
    ctx.pad = teacher.layer(l).spec.pad;
    if (l > 0 && !sb.channels.identity(l - 1)) ctx.in_keep = sb.channels.kept[l - 1];
    if (!sb.channels.identity(l)) ctx.out_keep = sb.channels.kept[l];
    if (cfg.feature_noise > 0.0) {
      ctx.h_prev_S = concat_samples(h_S, gaussian_feature_noise(h_S, cfg.feature_noise, cfg.seed * 1000003u + l));
      ctx.h_prev_T = concat_samples(ctx.h_prev_T, ctx.h_prev_T);
    }

    LossSpec spec;
    spec.mode = cfg.crosses(l) ? cfg.mode : DistillMode::NC;
    spec.mu = cfg.mu;
    spec.alpha = cfg.alpha;
    spec.beta = cfg.beta;
    LayerDistillResult lr = distill_layer(ctx, spec, cfg, reg, l);
    rep.mode = spec.mode;
    rep.final_loss = lr.final_loss;
    rep.sparsity = zero_fraction(lr.weight);
    result.trace.insert(result.trace.end(), lr.trace.begin(), lr.trace.end());
    student.set_weight(l, std::move(lr.weight));
    result.layers.push_back(rep);
    h_S = conv_layer_forward(student.layer(l), h_S);
  }

  result.mask = reg.prunes() ? WeightMask::from_nonzero(student) : WeightMask::ones(student);
  if (cfg.finetune && cfg.finetune_epochs > 0) {
    TrainConfig tc;
    tc.lr = cfg.finetune_lr;
    tc.epochs = cfg.finetune_epochs;
    tc.seed = cfg.seed;
    TrainResult ft = finetune(student, result.mask, ft_batch, tc);
    student = std::move(ft.net);
    result.finetune_log = std::move(ft.log);
  }
  student.set_role(Role::Student);
  result.student = std::move(student);
  result.channels = std::move(sb.channels);
  return result;
}

}  // namespace xdistill
