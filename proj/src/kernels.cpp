#include "xdistill/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xdistill/error.hpp"

namespace xdistill {

namespace linalg {

namespace {

void check_extent(std::span<const double> s, std::size_t expected, const char* what) {
  if (s.size() != expected) throw ShapeError(std::string("gemm operand ") + what + " has wrong size");
}

// C(m x n) = sum_q A(r, q) * B(q, :), with A addressed as A[r*rs + q*qs].
// Each output row is built in column blocks that stay in L1 while the
// reduction runs over q = 0..k-1 in order. Updating one output row at a time
// keeps the stores away from 4K-aliasing between rows.
void gemm_strided(const double* __restrict A, std::size_t rs, std::size_t qs, const double* __restrict B,
                  double* __restrict C, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t JB = 256;
  for (std::size_t j0 = 0; j0 < n; j0 += JB) {
    const std::size_t jn = std::min(JB, n - j0);
    for (std::size_t i = 0; i < m; ++i) {
      double* __restrict c = C + i * n + j0;
      std::fill_n(c, jn, 0.0);
      for (std::size_t q = 0; q < k; ++q) {
        const double a = A[i * rs + q * qs];
        const double* __restrict b = B + q * n + j0;
        for (std::size_t j = 0; j < jn; ++j) c[j] += a * b[j];
      }
    }
  }
}

}  // namespace

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  check_extent(a, m * k, "a");
  check_extent(b, k * n, "b");
  if (c.size() != m * n) throw ShapeError("gemm output has wrong size");
  gemm_strided(a.data(), k, 1, b.data(), c.data(), m, k, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k) {
  check_extent(a, m * n, "a");
  check_extent(b, k * n, "b");
  if (c.size() != m * k) throw ShapeError("gemm output has wrong size");
  // 2 x 4 blocks of dot products sharing loads. Each keeps dot()'s four
  // interleaved partial sums and its final combination order.
  const double* __restrict A = a.data();
  const double* __restrict B = b.data();
  constexpr std::size_t BI = 2, BP = 4;
  std::size_t i = 0;
  for (; i + BI <= m; i += BI) {
    std::size_t p = 0;
    for (; p + BP <= k; p += BP) {
      double s[BI][BP][4] = {};
      std::size_t q = 0;
      for (; q + 4 <= n; q += 4) {
        for (std::size_t x = 0; x < BI; ++x) {
          for (std::size_t y = 0; y < BP; ++y) {
            for (std::size_t t = 0; t < 4; ++t) s[x][y][t] += A[(i + x) * n + q + t] * B[(p + y) * n + q + t];
          }
        }
      }
      for (; q < n; ++q) {
        for (std::size_t x = 0; x < BI; ++x) {
          for (std::size_t y = 0; y < BP; ++y) s[x][y][0] += A[(i + x) * n + q] * B[(p + y) * n + q];
        }
      }
      for (std::size_t x = 0; x < BI; ++x) {
        for (std::size_t y = 0; y < BP; ++y) {
          c[(i + x) * k + p + y] = (s[x][y][0] + s[x][y][1]) + (s[x][y][2] + s[x][y][3]);
        }
      }
    }
    for (; p < k; ++p) {
      for (std::size_t x = 0; x < BI; ++x) c[(i + x) * k + p] = dot(a.subspan((i + x) * n, n), b.subspan(p * n, n));
    }
  }
  for (; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) c[i * k + p] = dot(a.subspan(i * n, n), b.subspan(p * n, n));
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  check_extent(a, m * k, "a");
  check_extent(b, m * n, "b");
  if (c.size() != k * n) throw ShapeError("gemm output has wrong size");
  gemm_strided(a.data(), 1, k, b.data(), c.data(), k, m, n);
}

double dot(std::span<const double> a, std::span<const double> b) {
  // Four interleaved partial sums, combined in a fixed order.
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("squared_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace linalg

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("convolution stride must be positive");
  if (k == 0) throw ShapeError("convolution kernel extent must be positive");
  if (in + 2 * pad < k) {
    throw ShapeError("kernel extent " + std::to_string(k) + " exceeds padded input extent " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - k) / stride + 1;
}

namespace {

void check_conv_operands(const Tensor& input, const Tensor& kernel) {
  const Shape& ks = kernel.shape();
  if (ks.h != ks.w) throw ShapeError("kernel must be square, got " + ks.str());
  if (ks.c != input.shape().c) {
    throw ShapeError("kernel " + ks.str() + " expects " + std::to_string(ks.c) +
                     " input channels, input " + input.shape().str() + " has " +
                     std::to_string(input.shape().c));
  }
}

}  // namespace

Tensor conv2d_direct(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t pad) {
  check_conv_operands(input, kernel);
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  const std::size_t k = ks.h;
  const std::size_t oh = conv_out_extent(is.h, k, stride, pad);
  const std::size_t ow = conv_out_extent(is.w, k, stride, pad);
  Tensor out({is.n, ks.n, oh, ow});
  for (std::size_t n = 0; n < is.n; ++n) {
    for (std::size_t co = 0; co < ks.n; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < ks.c; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(is.h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(is.w)) continue;
                acc += kernel.at(co, ci, ky, kx) * input.at(n, ci, iy, ix);
              }
            }
          }
          out.at(n, co, oy, ox) = acc;
        }
      }
    }
  }
  return out;
}

Im2ColMatrix im2col(const Tensor& input, std::size_t k, std::size_t stride, std::size_t pad) {
  const Shape& is = input.shape();
  Im2ColMatrix m;
  m.origin = is;
  m.k = k;
  m.stride = stride;
  m.pad = pad;
  m.out_h = conv_out_extent(is.h, k, stride, pad);
  m.out_w = conv_out_extent(is.w, k, stride, pad);
  const std::size_t P = m.out_h * m.out_w;
  m.rows = is.c * k * k;
  m.cols = is.n * P;
  m.data.assign(m.rows * m.cols, 0.0);
  for (std::size_t ci = 0; ci < is.c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = m.data.data() + ((ci * k + ky) * k + kx) * m.cols;
        for (std::size_t n = 0; n < is.n; ++n) {
          for (std::size_t oy = 0; oy < m.out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(is.h)) continue;
            double* dst = row + n * P + oy * m.out_w;
            for (std::size_t ox = 0; ox < m.out_w; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(is.w)) continue;
              dst[ox] = input.at(n, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
          }
        }
      }
    }
  }
  return m;
}

Matrix conv_gemm_matrix(const Im2ColMatrix& cols, const Tensor& kernel) {
  const Shape& ks = kernel.shape();
  if (ks.h != cols.k || ks.w != cols.k || ks.c * ks.h * ks.w != cols.rows) {
    throw ShapeError("kernel " + ks.str() + " does not match im2col matrix with " +
                     std::to_string(cols.rows) + " rows (k=" + std::to_string(cols.k) + ")");
  }
  Matrix out(ks.n, cols.cols);
  linalg::gemm_nn(kernel.data(), cols.data, out.data, ks.n, cols.rows, cols.cols);
  return out;
}

Tensor channel_major_to_tensor(const Matrix& m, std::size_t n, std::size_t h, std::size_t w) {
  const std::size_t P = h * w;
  if (m.cols != n * P) throw ShapeError("channel-major matrix does not match requested extents");
  Tensor out({n, m.rows, h, w});
  for (std::size_t c = 0; c < m.rows; ++c) {
    const double* src = m.data.data() + c * m.cols;
    for (std::size_t s = 0; s < n; ++s) {
      std::copy(src + s * P, src + (s + 1) * P, out.data().data() + (s * m.rows + c) * P);
    }
  }
  return out;
}

Matrix tensor_to_channel_major(const Tensor& t) {
  const Shape& s = t.shape();
  const std::size_t P = s.plane();
  Matrix m(s.c, s.n * P);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = t.data().data() + (n * s.c + c) * P;
      std::copy(src, src + P, m.data.data() + c * m.cols + n * P);
    }
  }
  return m;
}

Tensor conv2d_gemm(const Im2ColMatrix& cols, const Tensor& kernel) {
  return channel_major_to_tensor(conv_gemm_matrix(cols, kernel), cols.origin.n, cols.out_h, cols.out_w);
}

Tensor col2im(std::span<const double> dcols, const Im2ColMatrix& g) {
  if (dcols.size() != g.rows * g.cols) throw ShapeError("col2im: gradient size does not match geometry");
  const Shape& is = g.origin;
  const std::size_t k = g.k;
  const std::size_t P = g.out_h * g.out_w;
  Tensor out(is);
  for (std::size_t ci = 0; ci < is.c; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = dcols.data() + ((ci * k + ky) * k + kx) * g.cols;
        for (std::size_t n = 0; n < is.n; ++n) {
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(is.h)) continue;
            const double* src = row + n * P + oy * g.out_w;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(is.w)) continue;
              out.at(n, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) += src[ox];
            }
          }
        }
      }
    }
  }
  return out;
}

std::size_t im2col_multiplicity(std::size_t in_h, std::size_t in_w, std::size_t k,
                                std::size_t stride, std::size_t pad) {
  auto axis_max = [&](std::size_t in) {
    const std::size_t out = conv_out_extent(in, k, stride, pad);
    std::vector<std::size_t> hits(in, 0);
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(o * stride + kk) - static_cast<std::ptrdiff_t>(pad);
        if (i >= 0 && i < static_cast<std::ptrdiff_t>(in)) ++hits[static_cast<std::size_t>(i)];
      }
    }
    return hits.empty() ? std::size_t{0} : *std::max_element(hits.begin(), hits.end());
  };
  return axis_max(in_h) * axis_max(in_w);
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = relu(src[i]);
  return out;
}

double log_sum_exp(std::span<const double> logits) {
  if (logits.empty()) throw InvalidArgument("log_sum_exp of an empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double o : logits) s += std::exp(o - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidArgument("softmax of an empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

double soft_cross_entropy(std::span<const double> logits, std::span<const double> probs) {
  if (logits.size() != probs.size()) throw ShapeError("cross entropy: logits and label differ in length");
  double total = 0.0;
  double yo = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0)) throw InvalidArgument("cross entropy: label entries must be non-negative");
    total += probs[i];
    yo += probs[i] * logits[i];
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("cross entropy: label must sum to 1");
  return -yo + log_sum_exp(logits);
}

double softmax_cross_entropy(std::span<const double> logits, std::span<const double> label) {
  std::size_t ones = 0;
  for (double y : label) {
    if (y == 1.0) {
      ++ones;
    } else if (y != 0.0) {
      throw InvalidArgument("softmax_cross_entropy: label is not one-hot");
    }
  }
  if (ones != 1) throw InvalidArgument("softmax_cross_entropy: label is not one-hot");
  return soft_cross_entropy(logits, label);
}

double softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw InvalidArgument("softmax_cross_entropy: class index out of range");
  return -logits[label] + log_sum_exp(logits);
}

namespace {

double power_iteration(const Matrix& a, std::vector<double> v) {
  const std::size_t r = a.rows, c = a.cols;
  std::vector<double> u(r), w(c);
  double estimate = 0.0;
  for (int it = 0; it < 1000; ++it) {
    linalg::gemm_nn(a.data, v, u, r, c, 1);
    const double sigma = linalg::norm2(u);
    if (sigma == 0.0) return 0.0;
    linalg::gemm_tn(a.data, u, w, r, c, 1);
    const double wn = linalg::norm2(w);
    if (wn == 0.0) return sigma;
    for (std::size_t j = 0; j < c; ++j) v[j] = w[j] / wn;
    const bool converged = it > 0 && std::abs(sigma - estimate) < 1e-10 * sigma;
    estimate = sigma;
    if (converged) break;
  }
  // Rayleigh value at the final vector.
  linalg::gemm_nn(a.data, v, u, r, c, 1);
  return std::max(estimate, linalg::norm2(u));
}

}  // namespace

double operator_norm(const Matrix& a) {
  if (a.rows == 0 || a.cols == 0) throw InvalidArgument("operator_norm of an empty matrix");
  if (a.data.size() != a.rows * a.cols) throw ShapeError("operator_norm: malformed matrix");
  const std::size_t c = a.cols;
  std::vector<double> ones(c, 1.0 / std::sqrt(static_cast<double>(c)));
  double best = power_iteration(a, ones);
  // Fixed, non-symmetric second start (deterministic).
  std::vector<double> alt(c);
  double s = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    alt[j] = std::sin(1.0 + 2.3 * static_cast<double>(j)) + 0.5 / static_cast<double>(j + 1);
    s += alt[j] * alt[j];
  }
  for (double& x : alt) x /= std::sqrt(s);
  return std::max(best, power_iteration(a, std::move(alt)));
}

}  // namespace xdistill
