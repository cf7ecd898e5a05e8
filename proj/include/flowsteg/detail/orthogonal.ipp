#pragma once

#include <cmath>

namespace flowsteg {

template <typename Rng>
std::vector<double> random_orthogonal(std::size_t n, Rng& rng) {
  std::vector<double> a(n * n);
  for (auto& v : a) v = rng.normal();
  // Modified Gram-Schmidt on columns.
  std::vector<double> q(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = a[i * n + j];
    for (std::size_t k = 0; k < j; ++k) {
      double r = 0.0;
      for (std::size_t i = 0; i < n; ++i) r += q[i * n + k] * v[i];
      for (std::size_t i = 0; i < n; ++i) v[i] -= r * q[i * n + k];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) q[i * n + j] = v[i] / norm;
  }
  return q;
}

}  // namespace flowsteg
