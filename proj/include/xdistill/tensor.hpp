#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace xdistill {

struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const noexcept { return n * c * h * w; }
  std::size_t sample_size() const noexcept { return c * h * w; }
  std::size_t plane() const noexcept { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense 4-D (n, c, h, w) array of doubles in row-major order. Used for feature
// maps, convolution kernels (c_out, c_in, k, k) and linear weights (d_out, d_in, 1, 1).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  std::span<const double> sample(std::size_t n) const {
    return std::span<const double>(data_).subspan(n * shape_.sample_size(), shape_.sample_size());
  }
  std::span<double> sample(std::size_t n) {
    return std::span<double>(data_).subspan(n * shape_.sample_size(), shape_.sample_size());
  }

  // Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

// Plain row-major matrix; the 2-D view used by the im2col/operator-norm code.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> d);

  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
};

bool all_finite(std::span<const double> values) noexcept;
std::size_t count_nonzero(std::span<const double> values) noexcept;

// Concatenates tensors along the sample axis.
Tensor concat_samples(const Tensor& a, const Tensor& b);
// Selects samples by index.
Tensor gather_samples(const Tensor& t, std::span<const std::size_t> indices);
// Selects channels by index (structured-pruning layout changes).
Tensor gather_channels(const Tensor& t, std::span<const std::size_t> channels);

}  // namespace xdistill
