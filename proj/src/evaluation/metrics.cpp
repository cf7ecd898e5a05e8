#include <array>
#include <cmath>
#include <vector>

#include "flowsteg/evaluation.hpp"

namespace flowsteg {

template <typename T>
double l2_metric(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "l2_metric");
  if (a.numel() == 0) throw ShapeError("l2_metric: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

namespace {

std::array<double, kSsimWindow> gaussian_window() {
  constexpr double kSigma = 1.5;
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kSsimWindow / 2);
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Separable valid-mode filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w,
                                 const std::array<double, kSsimWindow>& g) {
  const std::size_t ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kSsimWindow; ++k) acc += g[k] * src[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kSsimWindow; ++k) acc += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

template <typename T>
double ssim_metric(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "ssim_metric");
  if (a.rank() != 4 || a.height() < kSsimWindow || a.width() < kSsimWindow) {
    throw ShapeError("ssim_metric: image " + shape_str(a.shape()) + " smaller than the 11x11 window");
  }
  constexpr double kC1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double kC2 = (0.03 * 1.0) * (0.03 * 1.0);
  static const auto g = gaussian_window();

  const std::size_t h = a.height(), w = a.width(), hw = a.plane_size();
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> pa(hw), pb(hw), paa(hw), pbb(hw), pab(hw);
  for (std::size_t n = 0; n < a.batch(); ++n) {
    for (std::size_t c = 0; c < a.channels(); ++c) {
      const T* sa = a.plane(n, c);
      const T* sb = b.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        pa[i] = static_cast<double>(sa[i]);
        pb[i] = static_cast<double>(sb[i]);
        paa[i] = pa[i] * pa[i];
        pbb[i] = pb[i] * pb[i];
        pab[i] = pa[i] * pb[i];
      }
      const auto mu_a = filter_valid(pa, h, w, g);
      const auto mu_b = filter_valid(pb, h, w, g);
      const auto e_aa = filter_valid(paa, h, w, g);
      const auto e_bb = filter_valid(pbb, h, w, g);
      const auto e_ab = filter_valid(pab, h, w, g);
      for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = e_aa[i] - mu_a[i] * mu_a[i];
        const double vb = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        const double num = (2.0 * mu_a[i] * mu_b[i] + kC1) * (2.0 * cov + kC2);
        const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2);
        total += num / den;
      }
      count += mu_a.size();
    }
  }
  return total / static_cast<double>(count);
}

template double l2_metric<float>(const Tensor<float>&, const Tensor<float>&);
template double l2_metric<double>(const Tensor<double>&, const Tensor<double>&);
template double ssim_metric<float>(const Tensor<float>&, const Tensor<float>&);
template double ssim_metric<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace flowsteg
