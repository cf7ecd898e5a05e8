#pragma once

// Independent reference computations used as test oracles.

#include <cmath>
#include <vector>

#include "flowsteg/kernels.hpp"
#include "flowsteg/tensor.hpp"

namespace oracle {

using flowsteg::Tensor;

// Six nested loops; accumulates fma(w, x, acc) over (ci, ky, kx) from zero,
// then adds the bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& in, const Tensor<T>& k, const Tensor<T>& b, std::size_t stride, std::size_t pad) {
  const std::size_t n = in.dim(0), ci = in.dim(1), h = in.dim(2), w = in.dim(3);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  Tensor<T> out({n, co, oh, ow});
  for (std::size_t b_ = 0; b_ < n; ++b_)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          T acc = T(0);
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t dy = 0; dy < kh; ++dy)
              for (std::size_t dx = 0; dx < kw; ++dx) {
                const long iy = static_cast<long>(y * stride + dy) - static_cast<long>(pad);
                const long ix = static_cast<long>(x * stride + dx) - static_cast<long>(pad);
                const T v = (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                                ? T(0)
                                : in.at(b_, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                acc = std::fma(k.at(o, c, dy, dx), v, acc);
              }
          out.at(b_, o, y, x) = acc + b[o];
        }
  return out;
}

// Welford streaming mean / population variance per (n, c) plane.
template <typename T>
void welford(const Tensor<T>& t, std::vector<double>& mean, std::vector<double>& var) {
  const std::size_t planes = t.dim(0) * t.dim(1), hw = t.dim(2) * t.dim(3);
  mean.assign(planes, 0.0);
  var.assign(planes, 0.0);
  for (std::size_t p = 0; p < planes; ++p) {
    double m = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < hw; ++i) {
      const double x = static_cast<double>(t[p * hw + i]);
      const double d = x - m;
      m += d / static_cast<double>(i + 1);
      m2 += d * (x - m);
    }
    mean[p] = m;
    var[p] = m2 / static_cast<double>(hw);
  }
}

// y_ij = M x_ij at every pixel, accumulated in double.
template <typename T>
Tensor<T> pixel_matmul(const Tensor<T>& x, const Tensor<T>& m) {
  Tensor<T> out(x.shape());
  const std::size_t c = x.dim(1);
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t yy = 0; yy < x.dim(2); ++yy)
      for (std::size_t xx = 0; xx < x.dim(3); ++xx)
        for (std::size_t i = 0; i < c; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < c; ++j) acc += static_cast<double>(m[i * c + j]) * x.at(n, j, yy, xx);
          out.at(n, i, yy, xx) = static_cast<T>(acc);
        }
  return out;
}

template <typename T>
double max_rel(const Tensor<T>& a, const Tensor<T>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    worst = std::max(worst, d / std::max(1e-30, std::abs(static_cast<double>(b[i]))));
  }
  return worst;
}

// Relative error with an absolute floor of one, as in the gradient checks.
template <typename T>
double max_rel1(const Tensor<T>& a, const Tensor<T>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    worst = std::max(worst, d / std::max(1.0, std::abs(static_cast<double>(b[i]))));
  }
  return worst;
}

}  // namespace oracle
