#include "flowsteg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace flowsteg {

namespace {

// Sums in ascending order so the result depends only on the multiset of terms.
double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double v : terms) s += v;
  return s;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<std::size_t>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape " + shape_str(a) + " vs " + shape_str(b));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

template <typename T>
Tensor<T> Tensor<T>::checked(Shape shape, std::vector<T> data) {
  Tensor t(std::move(shape), std::move(data));
  if (!t.all_finite()) throw Error("tensor input contains NaN or Inf");
  return t;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t i) const {
  if (i >= shape_.size()) throw ShapeError("dimension index out of range for " + shape_str(shape_));
  return shape_[i];
}

template <typename T>
std::size_t Tensor<T>::dim4(std::size_t i) const {
  if (shape_.size() != 4) throw ShapeError("expected rank-4 tensor, got " + shape_str(shape_));
  return shape_[i];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) noexcept {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.numel() * sizeof(T)) == 0;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template <typename T>
double l2_norm(const Tensor<T>& t) {
  std::vector<double> sq(t.numel());
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = static_cast<double>(t[i]) * static_cast<double>(t[i]);
  return std::sqrt(sorted_sum(sq));
}

template <typename T>
double l2_distance(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "l2_distance");
  std::vector<double> sq(a.numel());
  for (std::size_t i = 0; i < sq.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sq[i] = d * d;
  }
  return std::sqrt(sorted_sum(sq));
}

template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ShapeError("stack_batch: no tensors");
  Shape item = items.front().shape();
  if (item.size() != 4) throw ShapeError("stack_batch: expected rank-4 tensors");
  std::size_t total = 0;
  for (const auto& t : items) {
    if (t.rank() != 4 || t.channels() != item[1] || t.height() != item[2] || t.width() != item[3]) {
      throw ShapeError("stack_batch: inconsistent item shape " + shape_str(t.shape()));
    }
    total += t.batch();
  }
  std::vector<T> data;
  data.reserve(total * item[1] * item[2] * item[3]);
  for (const auto& t : items) data.insert(data.end(), t.values().begin(), t.values().end());
  return Tensor<T>({total, item[1], item[2], item[3]}, std::move(data));
}

template <typename T>
Tensor<T> batch_item(const Tensor<T>& t, std::size_t n) {
  if (n >= t.batch()) throw ShapeError("batch_item: index out of range");
  const std::size_t per = t.channels() * t.plane_size();
  std::vector<T> data(t.data() + n * per, t.data() + (n + 1) * per);
  return Tensor<T>({1, t.channels(), t.height(), t.width()}, std::move(data));
}

template class Tensor<float>;
template class Tensor<double>;

#define FLOWSTEG_INSTANTIATE(T)                                                   \
  template bool bit_equal<T>(const Tensor<T>&, const Tensor<T>&) noexcept;        \
  template double max_abs_diff<T>(const Tensor<T>&, const Tensor<T>&);            \
  template double l2_norm<T>(const Tensor<T>&);                                   \
  template double l2_distance<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> stack_batch<T>(std::span<const Tensor<T>>);                  \
  template Tensor<T> batch_item<T>(const Tensor<T>&, std::size_t);

FLOWSTEG_INSTANTIATE(float)
FLOWSTEG_INSTANTIATE(double)

}  // namespace flowsteg
