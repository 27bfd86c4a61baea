#include "xdistill/quant.hpp"

#include <algorithm>
#include <cmath>

#include "xdistill/error.hpp"

namespace xdistill {

std::vector<double> quant_points(int bits) {
  if (bits < 2 || bits > 16) throw InvalidArgument("quantization bits must lie in [2, 16]");
  const int levels = (1 << (bits - 1)) - 1;
  std::vector<double> q;
  q.reserve(2 * static_cast<std::size_t>(levels) + 1);
  for (int j = levels; j >= 1; --j) q.push_back(-static_cast<double>(j) / levels);
  q.push_back(0.0);
  for (int j = 1; j <= levels; ++j) q.push_back(static_cast<double>(j) / levels);
  return q;
}

Normalized normalize_g(const Tensor& w) {
  if (w.empty()) throw InvalidArgument("normalize_g: empty tensor");
  const double n = static_cast<double>(w.size());
  double mean = 0.0;
  for (double v : w.data()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : w.data()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  const double lo_cut = mean - 3.0 * sd, hi_cut = mean + 3.0 * sd;

  Normalized out;
  out.unit = Tensor(w.shape());
  double lo = 1e300, hi = -1e300;
  for (double v : w.data()) {
    const double t = std::clamp(v, lo_cut, hi_cut);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  out.lo = lo;
  out.hi = hi;
  if (!(hi > lo)) {
    warn("normalize_g: constant input, mapping every value to 0.5");
    out.degenerate = true;
    std::fill(out.unit.data().begin(), out.unit.data().end(), 0.5);
    return out;
  }
  for (std::size_t i = 0; i < w.size(); ++i) out.unit[i] = (std::clamp(w[i], lo_cut, hi_cut) - lo) / (hi - lo);
  return out;
}

double project_q(double v, std::span<const double> q) {
  if (q.empty()) throw InvalidArgument("project_q: empty point set");
  auto it = std::lower_bound(q.begin(), q.end(), v);
  if (it == q.begin()) return q.front();
  if (it == q.end()) return q.back();
  const double above = *it, below = *(it - 1);
  const double da = above - v, db = v - below;
  if (da < db) return above;
  if (db < da) return below;
  return std::abs(above) < std::abs(below) ? above : below;
}

Tensor project_q(const Tensor& v, std::span<const double> q) {
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = project_q(v[i], q);
  return out;
}

QuantRange quant_range(const Tensor& w) {
  const Normalized nz = normalize_g(w);
  if (nz.degenerate) return QuantRange{nz.lo, nz.lo};
  return QuantRange{nz.lo, nz.hi};
}

Tensor quantize_weights(const Tensor& w, int bits, QuantRange range) {
  const auto q = quant_points(bits);
  if (range.degenerate()) return w;
  const double span = range.hi - range.lo;
  Tensor out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double u = (std::clamp(w[i], range.lo, range.hi) - range.lo) / span;
    out[i] = range.lo + symmetric_to_unit(project_q(unit_to_symmetric(u), q)) * span;
  }
  return out;
}

Tensor quantize_weights(const Tensor& w, int bits) { return quantize_weights(w, bits, quant_range(w)); }

Tensor quant_penalty_step(const Tensor& w, int bits, double lambda, QuantRange range) {
  if (lambda < 0.0) throw InvalidArgument("quant_penalty_step: lambda must be non-negative");
  // The latent copy itself is not truncated, so repeated steps leave the tails alone.
  const Tensor wq = quantize_weights(w, bits, range);
  Tensor out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = (w[i] + lambda * wq[i]) / (1.0 + lambda);
  return out;
}

Tensor quant_penalty_step(const Tensor& w, int bits, double lambda) {
  return quant_penalty_step(w, bits, lambda, quant_range(w));
}

Tensor clip_activations(const Tensor& h) {
  Tensor out = h;
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace xdistill
