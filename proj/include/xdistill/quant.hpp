#pragma once

#include <span>
#include <vector>

#include "xdistill/tensor.hpp"

namespace xdistill {

// {0} and +-j / (2^(B-1) - 1) for j = 1 .. 2^(B-1) - 1, ascending.
// That is 2^B - 1 points.
std::vector<double> quant_points(int bits);

// Three-sigma truncation followed by min-max scaling into [0, 1].
// lo/hi are the truncated extremes needed to map back.
struct Normalized {
  Tensor unit;  // values in [0, 1]
  double lo = 0.0, hi = 0.0;
  bool degenerate = false;  // constant input: every value is 0.5
};

Normalized normalize_g(const Tensor& w);

// Affine pair between the unit interval and the symmetric range of Q.
inline double unit_to_symmetric(double u) noexcept { return 2.0 * u - 1.0; }
inline double symmetric_to_unit(double v) noexcept { return 0.5 * (v + 1.0); }

// Nearest point of the sorted set q; an exact midpoint goes to the point
// closer to zero.
double project_q(double v, std::span<const double> q);
Tensor project_q(const Tensor& v, std::span<const double> q);

// The (lo, hi) scale recorded by normalize_g. The distillation loop fixes it
// per layer from the initial weights; with a range recomputed from the latent
// copy at every step the grid follows the extreme weights and the lazy
// projection stops descending.
struct QuantRange {
  double lo = 0.0, hi = 0.0;
  bool degenerate() const noexcept { return !(hi > lo); }
};

QuantRange quant_range(const Tensor& w);

// Clamp to [lo, hi], min-max scale, recentre to [-1, 1], project onto
// Q(bits), map back. A degenerate range returns w unchanged.
Tensor quantize_weights(const Tensor& w, int bits, QuantRange range);
// Same with the range taken from w itself.
Tensor quantize_weights(const Tensor& w, int bits);

// ProxQuant-style partial pull toward the dequantized weights:
// w' = (w + lambda * Q(w)) / (1 + lambda).
Tensor quant_penalty_step(const Tensor& w, int bits, double lambda, QuantRange range);
Tensor quant_penalty_step(const Tensor& w, int bits, double lambda);

// Elementwise clamp to [0, 1].
Tensor clip_activations(const Tensor& h);

}  // namespace xdistill
