#include "flowsteg/linalg.hpp"

#include <cmath>
#include <utility>

#include "flowsteg/error.hpp"

namespace flowsteg {

template <typename T>
LuDecomposition::LuDecomposition(std::span<const T> matrix, std::size_t n)
    : n_(n), lu_(matrix.begin(), matrix.end()), perm_(n) {
  if (matrix.size() != n * n) throw ShapeError("LU: matrix is not square");
  for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    double best = std::abs(lu_[col * n + col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double v = std::abs(lu_[r * n + col]);
      if (v > best) {
        best = v;
        pivot = r;
      }
    }
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu_[col * n + j], lu_[pivot * n + j]);
      std::swap(perm_[col], perm_[pivot]);
      det_ = -det_;
    }
    const double d = lu_[col * n + col];
    det_ *= d;
    if (d == 0.0) continue;
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = lu_[r * n + col] / d;
      lu_[r * n + col] = f;
      if (f == 0.0) continue;
      for (std::size_t j = col + 1; j < n; ++j) lu_[r * n + j] -= f * lu_[col * n + j];
    }
  }
}

void LuDecomposition::solve_planes(std::span<double> planes, std::size_t count, bool transpose) const {
  const std::size_t n = n_;
  if (planes.size() != n * count) throw ShapeError("LU solve: right-hand side size mismatch");
  std::vector<double> work(n * count);
  auto row = [&](std::vector<double>& buf, std::size_t i) { return buf.data() + i * count; };
  if (!transpose) {
    // P b, then L y = P b, then U x = y.
    for (std::size_t i = 0; i < n; ++i) {
      const double* src = planes.data() + perm_[i] * count;
      std::copy(src, src + count, row(work, i));
    }
    for (std::size_t i = 0; i < n; ++i) {
      double* ri = row(work, i);
      for (std::size_t j = 0; j < i; ++j) {
        const double l = lu_[i * n + j];
        if (l == 0.0) continue;
        const double* rj = row(work, j);
        for (std::size_t p = 0; p < count; ++p) ri[p] -= l * rj[p];
      }
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double* ri = row(work, ii);
      for (std::size_t j = ii + 1; j < n; ++j) {
        const double u = lu_[ii * n + j];
        if (u == 0.0) continue;
        const double* rj = row(work, j);
        for (std::size_t p = 0; p < count; ++p) ri[p] -= u * rj[p];
      }
      const double d = lu_[ii * n + ii];
      for (std::size_t p = 0; p < count; ++p) ri[p] /= d;
    }
    std::copy(work.begin(), work.end(), planes.begin());
  } else {
    // A^T = U^T L^T P: U^T w = b, L^T u = w, x[perm[i]] = u[i].
    std::copy(planes.begin(), planes.end(), work.begin());
    for (std::size_t i = 0; i < n; ++i) {
      double* ri = row(work, i);
      for (std::size_t j = 0; j < i; ++j) {
        const double u = lu_[j * n + i];
        if (u == 0.0) continue;
        const double* rj = row(work, j);
        for (std::size_t p = 0; p < count; ++p) ri[p] -= u * rj[p];
      }
      const double d = lu_[i * n + i];
      for (std::size_t p = 0; p < count; ++p) ri[p] /= d;
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double* ri = row(work, ii);
      for (std::size_t j = ii + 1; j < n; ++j) {
        const double l = lu_[j * n + ii];
        if (l == 0.0) continue;
        const double* rj = row(work, j);
        for (std::size_t p = 0; p < count; ++p) ri[p] -= l * rj[p];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double* src = row(work, i);
      std::copy(src, src + count, planes.data() + perm_[i] * count);
    }
  }
}

template LuDecomposition::LuDecomposition(std::span<const float>, std::size_t);
template LuDecomposition::LuDecomposition(std::span<const double>, std::size_t);

}  // namespace flowsteg
