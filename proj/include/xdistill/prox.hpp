#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "xdistill/tensor.hpp"

namespace xdistill {

enum class RegKind { None, L1, Group21, QuantProject, QuantPenalty };

const char* to_string(RegKind kind) noexcept;
RegKind reg_kind_from_string(const std::string& name);

struct Regularizer {
  RegKind kind = RegKind::None;
  double target_sparsity = 0.0;  // L1 / Group21
  int bits = 2;                  // quantization modes
  double quant_lambda = 0.1;     // QuantPenalty pull strength

  bool prunes() const noexcept { return kind == RegKind::L1 || kind == RegKind::Group21; }
  bool quantizes() const noexcept { return kind == RegKind::QuantProject || kind == RegKind::QuantPenalty; }
  void validate() const;
};

// Soft threshold: sign(w) * max(|w| - lambda, 0).
Tensor prox_l1(const Tensor& w, double lambda);
void prox_l1_inplace(std::span<double> w, double lambda);

// Group shrinkage over output-channel slices (c_in x k x k):
// g -> max(1 - lambda / ||g||, 0) * g.
Tensor prox_group(const Tensor& w, double lambda);

// Number of elements (or groups) a level s zeroes out of n: ceil(s * n),
// with a 1e-9 guard against s * n landing just above an integer.
std::size_t zero_count(std::size_t n, double s);

// The threshold whose prox zeroes exactly zero_count(n, s) entries: the
// zero_count-th smallest |w| (L1) or output-channel group norm (Group21).
// Returns 0 for s = 0.
double level_to_lambda(const Tensor& w, double s, RegKind kind = RegKind::L1);

// Prox at the level-derived threshold with an exact zero count. Entries are
// ranked by (magnitude, index); the zero_count smallest become 0 and the rest
// are shrunk by lambda. A survivor whose magnitude ties lambda is left as is,
// so ties resolve in favour of zeroing the earlier index.
Tensor prox_at_level(const Tensor& w, double s, RegKind kind = RegKind::L1);

struct Schedule {
  double target = 0.0;       // r
  std::size_t ramp_iters = 1000;
};

// s_t = r * min(t / ramp, 1); a zero ramp jumps straight to r.
double schedule_value(const Schedule& sched, std::size_t t);

}  // namespace xdistill
