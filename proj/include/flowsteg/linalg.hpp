#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace flowsteg {

/// Partial-pivoting LU factorization of a square matrix, held in double.
/// Rows satisfy (P A) = L U with L unit lower triangular.
class LuDecomposition {
 public:
  /// `matrix` is n*n row-major. Exactly singular pivots are kept as zeros;
  /// callers check determinant() before solving.
  template <typename T>
  LuDecomposition(std::span<const T> matrix, std::size_t n);

  std::size_t size() const noexcept { return n_; }
  double determinant() const noexcept { return det_; }

  /// Solves A x = b (or A^T x = b) for `count` right-hand sides stored as
  /// planes: component i of every right-hand side is the contiguous block
  /// [i*count, (i+1)*count). In-place on `planes`.
  void solve_planes(std::span<double> planes, std::size_t count, bool transpose = false) const;

 private:
  std::size_t n_;
  std::vector<double> lu_;
  std::vector<std::size_t> perm_;
  double det_ = 1.0;
};

/// Haar-distributed random orthogonal matrix, n*n row-major: the Q factor
/// of a Gaussian matrix whose R factor has a positive diagonal.
template <typename Rng>
std::vector<double> random_orthogonal(std::size_t n, Rng& rng);

}  // namespace flowsteg

#include "flowsteg/detail/orthogonal.ipp"
