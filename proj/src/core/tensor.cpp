#include "neuroclips/core/tensor.hpp"

#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "neuroclips/core/error.hpp"

namespace neuroclips {

namespace {
// Training allocates and frees many multi-megabyte buffers per step. Keeping
// them on the heap avoids an mmap/munmap round trip (and page faults) each time.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
  return true;
}();
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw InvalidArgument("tensor payload of " + std::to_string(data_.size()) +
                          " elements does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) throw InvalidArgument("index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[axis]) throw InvalidArgument("index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
double Tensor::at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size()) {
    throw InvalidArgument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

Tensor Tensor::slice0(std::size_t index) const {
  if (shape_.empty() || index >= shape_[0]) throw InvalidArgument("slice0 index out of range");
  Shape sub(shape_.begin() + 1, shape_.end());
  const std::size_t n = shape_numel(sub);
  return Tensor(sub, std::vector<double>(data_.begin() + index * n, data_.begin() + (index + 1) * n));
}

void Tensor::set_slice0(std::size_t index, const Tensor& value) {
  if (shape_.empty() || index >= shape_[0]) throw InvalidArgument("set_slice0 index out of range");
  const std::size_t n = numel() / shape_[0];
  if (value.numel() != n) throw InvalidArgument("set_slice0 size mismatch");
  std::copy(value.data_.begin(), value.data_.end(), data_.begin() + index * n);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.numel() != numel()) throw InvalidArgument("tensor += size mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  if (other.numel() != numel()) throw InvalidArgument("tensor -= size mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("dot size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw InvalidArgument("max_abs_diff size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) throw InvalidArgument("stack of zero tensors");
  Shape shape = items.front().shape();
  shape.insert(shape.begin(), items.size());
  std::vector<double> data;
  data.reserve(shape_numel(shape));
  for (const Tensor& t : items) {
    if (t.shape() != items.front().shape()) throw InvalidArgument("stack shape mismatch");
    data.insert(data.end(), t.vec().begin(), t.vec().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace neuroclips
