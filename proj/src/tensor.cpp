#include "xdistill/tensor.hpp"

#include <cmath>
#include <sstream>

#include "xdistill/error.hpp"

namespace xdistill {

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.str());
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.size() != shape_.size()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> d)
    : rows(r), cols(c), data(std::move(d)) {
  if (data.size() != rows * cols) throw ShapeError("matrix data length does not match extents");
}

bool all_finite(std::span<const double> values) noexcept {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::size_t count_nonzero(std::span<const double> values) noexcept {
  std::size_t nz = 0;
  for (double v : values) nz += (v != 0.0);
  return nz;
}

Tensor concat_samples(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.c != sb.c || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("cannot concatenate " + sa.str() + " with " + sb.str());
  }
  std::vector<double> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor({sa.n + sb.n, sa.c, sa.h, sa.w}, std::move(data));
}

Tensor gather_samples(const Tensor& t, std::span<const std::size_t> indices) {
  Shape s = t.shape();
  Tensor out({indices.size(), s.c, s.h, s.w});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= s.n) throw ShapeError("sample index out of range");
    auto src = t.sample(indices[i]);
    std::copy(src.begin(), src.end(), out.sample(i).begin());
  }
  return out;
}

Tensor gather_channels(const Tensor& t, std::span<const std::size_t> channels) {
  const Shape& s = t.shape();
  Tensor out({s.n, channels.size(), s.h, s.w});
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t j = 0; j < channels.size(); ++j) {
      if (channels[j] >= s.c) throw ShapeError("channel index out of range");
      const double* src = t.data().data() + (n * s.c + channels[j]) * plane;
      double* dst = out.data().data() + (n * channels.size() + j) * plane;
      std::copy(src, src + plane, dst);
    }
  }
  return out;
}

}  // namespace xdistill
