#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "flowsteg/error.hpp"

namespace flowsteg {

/// Tensor dimensions, outermost first. Image and feature tensors are rank 4
/// (batch, channels, height, width); parameters may use lower ranks.
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

/// Dense row-major tensor owning its storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  /// Construction path for external inputs: rejects NaN and Inf.
  static Tensor checked(Shape shape, std::vector<T> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Rank-4 accessors.
  std::size_t batch() const { return dim4(0); }
  std::size_t channels() const { return dim4(1); }
  std::size_t height() const { return dim4(2); }
  std::size_t width() const { return dim4(3); }
  std::size_t plane_size() const { return dim4(2) * dim4(3); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  /// Pointer to the H*W plane of sample n, channel c.
  T* plane(std::size_t n, std::size_t c) noexcept {
    return data_.data() + (n * shape_[1] + c) * shape_[2] * shape_[3];
  }
  const T* plane(std::size_t n, std::size_t c) const noexcept {
    return data_.data() + (n * shape_[1] + c) * shape_[2] * shape_[3];
  }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  std::size_t dim4(std::size_t i) const;

  Shape shape_;
  std::vector<T> data_;
};

/// Same shape and identical bit patterns.
template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) noexcept;

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

/// Euclidean norm of the flattened tensor. Squares are summed in double in
/// ascending order, so any permutation of the elements gives the same bits.
template <typename T>
double l2_norm(const Tensor<T>& t);

/// Norm of a - b, accumulated like l2_norm.
template <typename T>
double l2_distance(const Tensor<T>& a, const Tensor<T>& b);

/// Concatenate rank-4 tensors along the batch axis.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items);

/// Sample n of a rank-4 tensor as a batch-of-one tensor.
template <typename T>
Tensor<T> batch_item(const Tensor<T>& t, std::size_t n);

void require_same_shape(const Shape& a, const Shape& b, const char* what);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace flowsteg
