#include "flowsteg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace flowsteg {
namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColTile = 32;

// R full-width rows of C starting at column j0, accumulated in registers.
template <typename T, std::size_t R>
void gemm_tile(std::size_t n, std::size_t k, const T* a, const T* b, T* c, std::size_t j0) {
  T acc[R][kColTile] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const T* bp = b + p * n + j0;
    for (std::size_t r = 0; r < R; ++r) {
      const T w = a[r * k + p];
      for (std::size_t j = 0; j < kColTile; ++j) acc[r][j] = std::fma(w, bp[j], acc[r][j]);
    }
  }
  for (std::size_t r = 0; r < R; ++r) std::copy(acc[r], acc[r] + kColTile, c + r * n + j0);
}

// C (m x n) = A (m x k) * B (k x n), row-major, C overwritten. Every C element
// accumulates fma(a, b, acc) from zero over ascending k.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i0 = 0; i0 < m; i0 += kRowBlock) {
    const std::size_t rows = std::min(kRowBlock, m - i0);
    const T* ai = a + i0 * k;
    T* ci = c + i0 * n;
    std::size_t j0 = 0;
    for (; j0 + kColTile <= n; j0 += kColTile) {
      switch (rows) {
        case 4: gemm_tile<T, 4>(n, k, ai, b, ci, j0); break;
        case 3: gemm_tile<T, 3>(n, k, ai, b, ci, j0); break;
        case 2: gemm_tile<T, 2>(n, k, ai, b, ci, j0); break;
        default: gemm_tile<T, 1>(n, k, ai, b, ci, j0); break;
      }
    }
    if (j0 == n) continue;
    const std::size_t cols = n - j0;
    T acc[kRowBlock][kColTile] = {};
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b + p * n + j0;
      for (std::size_t r = 0; r < rows; ++r) {
        const T w = ai[r * k + p];
        for (std::size_t j = 0; j < cols; ++j) acc[r][j] = std::fma(w, bp[j], acc[r][j]);
      }
    }
    for (std::size_t r = 0; r < rows; ++r) std::copy(acc[r], acc[r] + cols, ci + r * n + j0);
  }
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T part[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) part[j] = std::fma(a[i + j], b[i + j], part[j]);
  }
  T s = 0;
  for (; i < n; ++i) s = std::fma(a[i], b[i], s);
  for (std::size_t j = 0; j < kLanes; ++j) s += part[j];
  return s;
}

// R x J dot products of rows a[r] and b[j], each summed exactly like dot().
template <typename T, std::size_t R, std::size_t J>
void dot_tile(const T* const (&a)[R], const T* const (&b)[J], std::size_t n, T (&out)[R][J]) {
  constexpr std::size_t kLanes = 16;
  T part[R][J][kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < J; ++c) {
        for (std::size_t l = 0; l < kLanes; ++l) part[r][c][l] = std::fma(a[r][i + l], b[c][i + l], part[r][c][l]);
      }
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < J; ++c) {
      T s = 0;
      for (std::size_t t = i; t < n; ++t) s = std::fma(a[r][t], b[c][t], s);
      for (std::size_t l = 0; l < kLanes; ++l) s += part[r][c][l];
      out[r][c] = s;
    }
  }
}

struct ConvGeometry {
  std::size_t cin, h, w, kh, kw, oh, ow, stride, pad;
  std::size_t k() const { return cin * kh * kw; }
  std::size_t p() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// col[(ci*kh + ky)*kw + kx][oy*ow + ox] = in[ci][oy*s + ky - pad][ox*s + kx - pad], zero outside.
template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  const std::size_t p = g.p();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const T* src = in + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* dst = col + ((ci * g.kh + ky) * g.kw + kx) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          T* row = dst + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(row, row + g.ow, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            row[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : srow[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* in) {
  const std::size_t p = g.p();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    T* dst = in + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* src = col + ((ci * g.kh + ky) * g.kw + kx) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* drow = dst + static_cast<std::size_t>(iy) * g.w;
          const T* srow = src + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
ConvGeometry geometry(const Shape& in, const Shape& kernel, const Conv2dSpec& spec) {
  if (in.size() != 4) throw ShapeError("conv2d: input must be rank 4, got " + shape_str(in));
  if (kernel.size() != 4) throw ShapeError("conv2d: kernel must be rank 4, got " + shape_str(kernel));
  if (kernel[1] != in[1]) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel[1]) + " input channels, input has " +
                     std::to_string(in[1]));
  }
  if (spec.stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  ConvGeometry g{in[1], in[2], in[3], kernel[2], kernel[3], 0, 0, spec.stride, spec.padding};
  g.oh = conv_output_extent(in[2], kernel[2], spec);
  g.ow = conv_output_extent(in[3], kernel[3], spec);
  return g;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dSpec& spec) {
  if (in + 2 * spec.padding < kernel) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  return (in + 2 * spec.padding - kernel) / spec.stride + 1;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                         const Conv2dSpec& spec) {
  const ConvGeometry g = geometry<T>(input.shape(), kernel.shape(), spec);
  const std::size_t cout = kernel.dim(0);
  if (bias.numel() != cout) throw ShapeError("conv2d: bias length does not match output channels");
  const std::size_t n = input.batch();
  Tensor<T> out({n, cout, g.oh, g.ow});
  std::vector<T> col(g.pointwise() ? 0 : g.k() * g.p());
  for (std::size_t b = 0; b < n; ++b) {
    const T* src = input.plane(b, 0);
    if (!g.pointwise()) {
      im2col(src, g, col.data());
      src = col.data();
    }
    T* dst = out.plane(b, 0);
    gemm(cout, g.p(), g.k(), kernel.data(), src, dst);
    for (std::size_t co = 0; co < cout; ++co) {
      T* row = dst + co * g.p();
      const T bv = bias[co];
      for (std::size_t j = 0; j < g.p(); ++j) row[j] += bv;
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& kernel,
                                const Shape& input_shape, const Conv2dSpec& spec) {
  const ConvGeometry g = geometry<T>(input_shape, kernel.shape(), spec);
  const std::size_t cout = kernel.dim(0);
  const std::size_t k = g.k();
  const std::size_t p = g.p();
  if (grad_out.rank() != 4 || grad_out.channels() != cout || grad_out.height() != g.oh ||
      grad_out.width() != g.ow) {
    throw ShapeError("conv2d backward: gradient shape " + shape_str(grad_out.shape()));
  }
  std::vector<T> kt(k * cout);
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t j = 0; j < k; ++j) kt[j * cout + co] = kernel[co * k + j];
  }
  Tensor<T> grad_in(input_shape);
  std::vector<T> col(k * p);
  for (std::size_t b = 0; b < input_shape[0]; ++b) {
    if (g.pointwise()) {
      gemm(k, p, cout, kt.data(), grad_out.plane(b, 0), grad_in.plane(b, 0));
    } else {
      gemm(k, p, cout, kt.data(), grad_out.plane(b, 0), col.data());
      col2im_add(col.data(), g, grad_in.plane(b, 0));
    }
  }
  return grad_in;
}

template <typename T>
void conv2d_backward_params(const Tensor<T>& grad_out, const Tensor<T>& input, const Conv2dSpec& spec,
                            Tensor<T>& grad_kernel, Tensor<T>& grad_bias) {
  const ConvGeometry g = geometry<T>(input.shape(), grad_kernel.shape(), spec);
  const std::size_t cout = grad_kernel.dim(0);
  const std::size_t k = g.k();
  const std::size_t p = g.p();
  if (grad_bias.numel() != cout) throw ShapeError("conv2d backward: bias gradient length");
  std::vector<T> col(g.pointwise() ? 0 : k * p);
  for (std::size_t b = 0; b < input.batch(); ++b) {
    const T* src = input.plane(b, 0);
    if (!g.pointwise()) {
      im2col(src, g, col.data());
      src = col.data();
    }
    const T* go = grad_out.plane(b, 0);
    T* gk = grad_kernel.data();
    constexpr std::size_t kR = 4, kJ = 2;
    std::size_t co = 0;
    for (; co + kR <= cout; co += kR) {
      const T* const rows[kR] = {go + co * p, go + (co + 1) * p, go + (co + 2) * p, go + (co + 3) * p};
      std::size_t j = 0;
      for (; j + kJ <= k; j += kJ) {
        const T* const cols[kJ] = {src + j * p, src + (j + 1) * p};
        T tile[kR][kJ];
        dot_tile(rows, cols, p, tile);
        for (std::size_t r = 0; r < kR; ++r) {
          for (std::size_t c = 0; c < kJ; ++c) gk[(co + r) * k + j + c] += tile[r][c];
        }
      }
      for (; j < k; ++j) {
        for (std::size_t r = 0; r < kR; ++r) gk[(co + r) * k + j] += dot(rows[r], src + j * p, p);
      }
    }
    for (; co < cout; ++co) {
      for (std::size_t j = 0; j < k; ++j) gk[co * k + j] += dot(go + co * p, src + j * p, p);
    }
    for (co = 0; co < cout; ++co) {
      const T* grow = go + co * p;
      T s = 0;
      for (std::size_t j = 0; j < p; ++j) s += grow[j];
      grad_bias[co] += s;
    }
  }
}

template <typename T>
ChannelStats<T> channel_stats(const Tensor<T>& t, double eps) {
  if (t.rank() != 4) throw ShapeError("channel_stats: expected rank-4 tensor");
  const std::size_t n = t.batch(), c = t.channels(), hw = t.plane_size();
  if (hw == 0) throw ShapeError("channel_stats: empty spatial extent");
  ChannelStats<T> stats{Tensor<T>({n, c}), Tensor<T>({n, c})};
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = t.plane(b, ch);
      double sum = 0.0;
      for (std::size_t i = 0; i < hw; ++i) sum += p[i];
      const double mean = sum / static_cast<double>(hw);
      double sq = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
      stats.mean[b * c + ch] = static_cast<T>(mean);
      stats.std[b * c + ch] = static_cast<T>(std::sqrt(sq / static_cast<double>(hw) + eps));
    }
  }
  return stats;
}

template <typename T>
Tensor<T> squeeze(const Tensor<T>& x, std::size_t f) {
  if (x.rank() != 4) throw ShapeError("squeeze: expected rank-4 tensor");
  if (f < 1 || x.height() % f != 0 || x.width() % f != 0) {
    throw ShapeError("squeeze: spatial dims " + shape_str(x.shape()) + " not divisible by " +
                     std::to_string(f));
  }
  const std::size_t n = x.batch(), c = x.channels(), h = x.height(), w = x.width();
  const std::size_t oh = h / f, ow = w / f;
  Tensor<T> y({n, c * f * f, oh, ow});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t dy = 0; dy < f; ++dy) {
        for (std::size_t dx = 0; dx < f; ++dx) {
          T* dst = y.plane(b, ch * f * f + dy * f + dx);
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const T* src = x.plane(b, ch) + (oy * f + dy) * w + dx;
            for (std::size_t ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = src[ox * f];
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> unsqueeze(const Tensor<T>& y, std::size_t f) {
  if (y.rank() != 4) throw ShapeError("unsqueeze: expected rank-4 tensor");
  if (f < 1 || y.channels() % (f * f) != 0) {
    throw ShapeError("unsqueeze: channel count " + std::to_string(y.channels()) + " not divisible by " +
                     std::to_string(f * f));
  }
  const std::size_t n = y.batch(), c = y.channels() / (f * f), oh = y.height(), ow = y.width();
  const std::size_t w = ow * f;
  Tensor<T> x({n, c, oh * f, w});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t dy = 0; dy < f; ++dy) {
        for (std::size_t dx = 0; dx < f; ++dx) {
          const T* src = y.plane(b, ch * f * f + dy * f + dx);
          for (std::size_t oy = 0; oy < oh; ++oy) {
            T* dst = x.plane(b, ch) + (oy * f + dy) * w + dx;
            for (std::size_t ox = 0; ox < ow; ++ox) dst[ox * f] = src[oy * ow + ox];
          }
        }
      }
    }
  }
  return x;
}

#define FLOWSTEG_INSTANTIATE(T)                                                                      \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                       const Conv2dSpec&);                                            \
  template Tensor<T> conv2d_backward_input<T>(const Tensor<T>&, const Tensor<T>&, const Shape&,       \
                                              const Conv2dSpec&);                                     \
  template void conv2d_backward_params<T>(const Tensor<T>&, const Tensor<T>&, const Conv2dSpec&,      \
                                          Tensor<T>&, Tensor<T>&);                                    \
  template ChannelStats<T> channel_stats<T>(const Tensor<T>&, double);                               \
  template Tensor<T> squeeze<T>(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> unsqueeze<T>(const Tensor<T>&, std::size_t);

FLOWSTEG_INSTANTIATE(float)
FLOWSTEG_INSTANTIATE(double)

}  // namespace flowsteg
