#include "xdistill/prox.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "xdistill/error.hpp"
#include "xdistill/kernels.hpp"

namespace xdistill {

const char* to_string(RegKind kind) noexcept {
  switch (kind) {
    case RegKind::None: return "none";
    case RegKind::L1: return "l1";
    case RegKind::Group21: return "group21";
    case RegKind::QuantProject: return "quant-project";
    case RegKind::QuantPenalty: return "quant-penalty";
  }
  return "unknown";
}

RegKind reg_kind_from_string(const std::string& name) {
  for (RegKind k : {RegKind::None, RegKind::L1, RegKind::Group21, RegKind::QuantProject, RegKind::QuantPenalty}) {
    if (name == to_string(k)) return k;
  }
  throw InvalidArgument("unknown regularizer '" + name + "'");
}

void Regularizer::validate() const {
  if (!(target_sparsity >= 0.0 && target_sparsity < 1.0)) {
    throw InvalidArgument("target sparsity must lie in [0, 1)");
  }
  if (quantizes() && (bits < 2 || bits > 16)) throw InvalidArgument("quantization bits must lie in [2, 16]");
  if (kind == RegKind::QuantPenalty && !(quant_lambda >= 0.0 && std::isfinite(quant_lambda))) {
    throw InvalidArgument("quantization penalty weight must be non-negative");
  }
}

void prox_l1_inplace(std::span<double> w, double lambda) {
  if (lambda < 0.0) throw InvalidArgument("prox_l1: lambda must be non-negative");
  for (double& v : w) {
    if (v > lambda) {
      v -= lambda;
    } else if (v < -lambda) {
      v += lambda;
    } else {
      v = 0.0;
    }
  }
}

Tensor prox_l1(const Tensor& w, double lambda) {
  Tensor out = w;
  prox_l1_inplace(out.data(), lambda);
  return out;
}

namespace {

std::vector<double> group_norms(const Tensor& w) {
  const std::size_t groups = w.shape().n;
  std::vector<double> norms(groups);
  for (std::size_t g = 0; g < groups; ++g) norms[g] = linalg::norm2(w.sample(g));
  return norms;
}

// Indices ordered by (key, index).
std::vector<std::size_t> rank_ascending(const std::vector<double>& key) {
  std::vector<std::size_t> order(key.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
  return order;
}

std::vector<double> magnitudes(const Tensor& w, RegKind kind) {
  if (kind == RegKind::Group21) return group_norms(w);
  if (kind != RegKind::L1) throw InvalidArgument("level-based prox needs an L1 or Group21 regularizer");
  std::vector<double> mags(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) mags[i] = std::abs(w[i]);
  return mags;
}

}  // namespace

Tensor prox_group(const Tensor& w, double lambda) {
  if (lambda < 0.0) throw InvalidArgument("prox_group: lambda must be non-negative");
  Tensor out = w;
  const auto norms = group_norms(w);
  for (std::size_t g = 0; g < norms.size(); ++g) {
    const double scale = norms[g] > lambda ? 1.0 - lambda / norms[g] : 0.0;
    for (double& v : out.sample(g)) v *= scale;
  }
  return out;
}

std::size_t zero_count(std::size_t n, double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw InvalidArgument("sparsity level must lie in [0, 1]");
  const double raw = std::ceil(s * static_cast<double>(n) - 1e-9);
  return std::min(n, static_cast<std::size_t>(std::max(raw, 0.0)));
}

double level_to_lambda(const Tensor& w, double s, RegKind kind) {
  const auto mags = magnitudes(w, kind);
  const std::size_t k = zero_count(mags.size(), s);
  if (k == 0) return 0.0;
  std::vector<double> sorted = mags;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
  return sorted[k - 1];
}

Tensor prox_at_level(const Tensor& w, double s, RegKind kind) {
  const auto mags = magnitudes(w, kind);
  const std::size_t k = zero_count(mags.size(), s);
  if (k == 0) return w;
  const auto order = rank_ascending(mags);
  const double lambda = mags[order[k - 1]];
  std::vector<char> zeroed(mags.size(), 0);
  for (std::size_t i = 0; i < k; ++i) zeroed[order[i]] = 1;

  Tensor out = w;
  if (kind == RegKind::L1) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      double& v = out[i];
      if (zeroed[i]) {
        v = 0.0;
      } else if (v > lambda) {
        v -= lambda;
      } else if (v < -lambda) {
        v += lambda;
      }
    }
  } else {
    for (std::size_t g = 0; g < mags.size(); ++g) {
      auto slice = out.sample(g);
      if (zeroed[g]) {
        std::fill(slice.begin(), slice.end(), 0.0);
      } else if (mags[g] > lambda) {
        const double scale = 1.0 - lambda / mags[g];
        for (double& v : slice) v *= scale;
      }
    }
  }
  return out;
}

double schedule_value(const Schedule& sched, std::size_t t) {
  if (sched.ramp_iters == 0 || t >= sched.ramp_iters) return sched.target;
  return sched.target * (static_cast<double>(t) / static_cast<double>(sched.ramp_iters));
}

}  // namespace xdistill
