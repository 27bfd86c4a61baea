#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xdistill/tensor.hpp"

namespace xdistill {

namespace linalg {

// All three products accumulate every output element in a fixed sequential
// order over the reduction index, so results are bitwise reproducible.

// c(m x n) = a(m x k) * b(k x n)
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
// c(m x k) = a(m x n) * b(k x n)^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k);
// c(k x n) = a(m x k)^T * b(m x n)
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace linalg

// floor((in + 2*pad - k) / stride) + 1; throws ShapeError for a zero stride or
// kernel, or a kernel wider than the padded input.
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);

// Unrolled receptive fields. Row r = (ci*k + ky)*k + kx, column j = n*P + oy*out_w + ox
// with P = out_h*out_w. Entries that fall into the zero padding are 0.
struct Im2ColMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;
  Shape origin{};
  std::size_t k = 0, stride = 1, pad = 0;
  std::size_t out_h = 0, out_w = 0;
};

Tensor conv2d_direct(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t pad);
Im2ColMatrix im2col(const Tensor& input, std::size_t k, std::size_t stride, std::size_t pad);
Tensor conv2d_gemm(const Im2ColMatrix& cols, const Tensor& kernel);

// Pre-activation in (c_out x N*P) layout, i.e. kernel-as-matrix times cols.
Matrix conv_gemm_matrix(const Im2ColMatrix& cols, const Tensor& kernel);
// (c x N*P) layout <-> (n, c, h, w) tensor.
Tensor channel_major_to_tensor(const Matrix& m, std::size_t n, std::size_t h, std::size_t w);
Matrix tensor_to_channel_major(const Tensor& t);

// Adjoint of im2col: scatters a (rows x cols) column gradient back onto the input.
Tensor col2im(std::span<const double> dcols, const Im2ColMatrix& geometry);

// Largest number of im2col columns any single input pixel is copied into.
std::size_t im2col_multiplicity(std::size_t in_h, std::size_t in_w, std::size_t k,
                                std::size_t stride, std::size_t pad);

Tensor relu(const Tensor& x);
// NaN passes through so divergence stays visible downstream.
inline double relu(double v) noexcept { return v > 0.0 || v != v ? v : 0.0; }

std::vector<double> softmax(std::span<const double> logits);
double log_sum_exp(std::span<const double> logits);

// -sum_i y_i o_i + logsumexp(o) for a strictly one-hot y.
double softmax_cross_entropy(std::span<const double> logits, std::span<const double> label);
double softmax_cross_entropy(std::span<const double> logits, std::size_t label);
// Same formula for any probability vector y (mixup targets).
double soft_cross_entropy(std::span<const double> logits, std::span<const double> probs);

// Spectral norm by power iteration on A^T A. Starts from the normalized
// all-ones vector; a second fixed start guards against an all-ones vector that
// is orthogonal to the leading singular direction. Stops when successive
// estimates differ by less than 1e-10 relative, or after 1000 iterations.
double operator_norm(const Matrix& a);

}  // namespace xdistill
