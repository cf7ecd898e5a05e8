#include "flowsteg/perceptual.hpp"

#include <cmath>
#include <string>

#include "flowsteg/random.hpp"

namespace flowsteg {

namespace {
constexpr std::size_t kWidths[] = {16, 32, 64, 64};
}

template <typename T>
FeatureExtractor<T>::FeatureExtractor(std::uint64_t seed) : seed_(seed) {
  Rng rng(seed);
  std::size_t cin = 3;
  for (std::size_t i = 0; i < kTaps; ++i) {
    const Conv2dSpec spec{i == 0 ? std::size_t{1} : std::size_t{2}, 1};
    // Variance-preserving scale for a rectifier.
    ConvLayer<T> layer = make_conv<T>(rng, cin, kWidths[i], 3, spec, std::sqrt(2.0));
    for (auto& b : layer.bias.mutable_value().values()) b = static_cast<T>(rng.uniform(-0.1, 0.1));
    layer.kernel.set_requires_grad(false);
    layer.bias.set_requires_grad(false);
    layers_.push_back(std::move(layer));
    cin = kWidths[i];
  }
}

template <typename T>
std::vector<Var<T>> FeatureExtractor<T>::extract(const Var<T>& image) const {
  const auto& v = image.value();
  if (v.rank() != 4 || v.channels() != 3) throw ShapeError("extract: expected 3-channel image");
  const std::size_t div = std::size_t{1} << (kTaps - 1);
  if (v.height() % div != 0 || v.width() % div != 0) {
    throw ShapeError("extract: image extent " + shape_str(v.shape()) + " not divisible by " + std::to_string(div));
  }
  std::vector<Var<T>> taps;
  Var<T> h = image;
  for (const auto& layer : layers_) {
    h = leaky_relu(layer(h), T(0));
    taps.push_back(h);
  }
  return taps;
}

template <typename T>
Var<T> content_loss(const Var<T>& t, const Var<T>& stylized, const FlowNetwork<T>& flow) {
  return l2_norm(sub(flow.forward(stylized), t));
}

template <typename T>
Var<T> perceptual_content_loss(const Var<T>& stylized, const Var<T>& content, const FeatureExtractor<T>& fe) {
  require_same_shape(stylized.shape(), content.shape(), "perceptual_content_loss");
  const auto a = fe.extract(stylized);
  const auto b = fe.extract(content);
  return l2_norm(sub(a.back(), b.back()));
}

template <typename T>
Var<T> style_loss(const Var<T>& stylized, const Var<T>& style, const FeatureExtractor<T>& fe) {
  const auto a = fe.extract(stylized);
  const auto b = fe.extract(style);
  Var<T> total;
  for (std::size_t i = 0; i < a.size(); ++i) {
    Var<T> term = add(l2_norm(sub(channel_mean(a[i]), channel_mean(b[i]))),
                      l2_norm(sub(channel_std(a[i], kVarianceFloor), channel_std(b[i], kVarianceFloor))));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template class FeatureExtractor<float>;
template class FeatureExtractor<double>;

#define FLOWSTEG_INSTANTIATE(T)                                                                       \
  template Var<T> content_loss<T>(const Var<T>&, const Var<T>&, const FlowNetwork<T>&);               \
  template Var<T> perceptual_content_loss<T>(const Var<T>&, const Var<T>&, const FeatureExtractor<T>&); \
  template Var<T> style_loss<T>(const Var<T>&, const Var<T>&, const FeatureExtractor<T>&);

FLOWSTEG_INSTANTIATE(float)
FLOWSTEG_INSTANTIATE(double)

}  // namespace flowsteg
