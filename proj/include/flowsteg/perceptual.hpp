#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "flowsteg/autograd.hpp"
#include "flowsteg/flow.hpp"

namespace flowsteg {

inline constexpr std::uint64_t kDefaultExtractorSeed = 0xC0FFEE;

/// Fixed, non-trainable feature extractor standing in for a pretrained
/// classifier. Four conv3x3 + ReLU stages with widths 16/32/64/64; the first
/// keeps resolution and each later stage halves it. Every stage output is a tap.
template <typename T>
class FeatureExtractor {
 public:
  static constexpr std::size_t kTaps = 4;

  explicit FeatureExtractor(std::uint64_t seed = kDefaultExtractorSeed);

  /// Tap outputs, shallow to deep. Image extent must be divisible by 8.
  std::vector<Var<T>> extract(const Var<T>& image) const;

  std::uint64_t seed() const noexcept { return seed_; }

  template <typename U>
  FeatureExtractor<U> cast() const;

 private:
  template <typename U>
  friend class FeatureExtractor;

  std::uint64_t seed_;
  std::vector<ConvLayer<T>> layers_;
};

/// ||F(stylized) - t||_2 with F the flow encoder. Vanishes whenever
/// stylized = G(t) up to rounding, which makes it a reconstruction diagnostic.
template <typename T>
Var<T> content_loss(const Var<T>& t, const Var<T>& stylized, const FlowNetwork<T>& flow);

/// ||phi_L(I_t) - phi_L(I_c)||_2 on the deepest tap.
template <typename T>
Var<T> perceptual_content_loss(const Var<T>& stylized, const Var<T>& content, const FeatureExtractor<T>& fe);

/// Sum over taps of ||mu(phi_i(I_t)) - mu(phi_i(I_s))||_2 + ||sigma(phi_i(I_t)) - sigma(phi_i(I_s))||_2.
template <typename T>
Var<T> style_loss(const Var<T>& stylized, const Var<T>& style, const FeatureExtractor<T>& fe);

template <typename T>
template <typename U>
FeatureExtractor<U> FeatureExtractor<T>::cast() const {
  FeatureExtractor<U> out(seed_);
  for (std::size_t i = 0; i < layers_.size(); ++i) out.layers_[i] = layers_[i].template cast<U>();
  return out;
}

extern template class FeatureExtractor<float>;
extern template class FeatureExtractor<double>;

}  // namespace flowsteg
