#include "flowsteg/stego.hpp"

#include <cmath>
#include <string>

#include "flowsteg/random.hpp"

namespace flowsteg {

void StegoLossWeights::validate() const {
  if (!(image >= 0.0) || !(message >= 0.0)) throw ConfigError("stego loss weights must be non-negative");
  if (image == 0.0 && message == 0.0) throw ConfigError("stego loss weights must not both be zero");
}

template <typename T>
Var<T> payload_to_grid(const Var<T>& latent, const FlowConfig& flow) {
  if (latent.value().numel() != shape_numel(flow.latent_shape(latent.value().batch()))) {
    throw ShapeError("payload_to_grid: latent " + shape_str(latent.shape()) + " does not match flow latent " +
                     shape_str(flow.latent_shape(latent.value().batch())));
  }
  Var<T> h = latent;
  for (std::size_t b = 0; b < flow.n_blocks; ++b) h = unsqueeze(h, flow.squeeze_factor);
  return h;
}

template <typename T>
Var<T> grid_to_payload(const Var<T>& grid, const FlowConfig& flow) {
  const auto& g = grid.value();
  if (g.rank() != 4 || g.shape() != flow.image_shape(g.batch())) {
    throw ShapeError("grid_to_payload: grid " + shape_str(grid.shape()) + " does not match image layout " +
                     shape_str(flow.image_shape(g.rank() == 4 ? g.batch() : 1)));
  }
  Var<T> h = grid;
  for (std::size_t b = 0; b < flow.n_blocks; ++b) h = squeeze(h, flow.squeeze_factor);
  return h;
}

namespace {

template <typename T>
Var<T> run_stack(const std::vector<ConvLayer<T>>& layers, Var<T> h) {
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) h = leaky_relu(layers[i](h), static_cast<T>(StegoConfig::kSlope));
  return layers.back()(h);
}

}  // namespace

template <typename T>
StegoEncoder<T>::StegoEncoder(const StegoConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  const Conv2dSpec same{1, 1};
  const double gain = std::sqrt(2.0);
  const std::size_t w = config.encoder_width;
  layers_.push_back(make_conv<T>(rng, 6, w, 3, same, gain));
  for (std::size_t i = 0; i < StegoConfig::kEncoderHidden; ++i) layers_.push_back(make_conv<T>(rng, w, w, 3, same, gain));
  layers_.push_back(make_conv<T>(rng, w, 3, 3, same, 0.0));
}

template <typename T>
Var<T> StegoEncoder<T>::embed(const Var<T>& cover, const Var<T>& payload, const FlowConfig& flow) const {
  const auto& c = cover.value();
  if (c.rank() != 4 || c.shape() != flow.image_shape(c.batch())) {
    throw ShapeError("embed: cover " + shape_str(c.shape()) + " does not match configured image size");
  }
  Var<T> grid = payload_to_grid(payload, flow);
  require_same_shape(grid.shape(), c.shape(), "embed");
  Var<T> residual = run_stack(layers_, concat_channels(cover, grid));
  return add(cover, residual);
}

template <typename T>
ParamList<T> StegoEncoder<T>::parameters() const {
  ParamList<T> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].append_params(out, "stego.enc.l" + std::to_string(i));
  return out;
}

template <typename T>
StegoDecoder<T>::StegoDecoder(const StegoConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  const Conv2dSpec same{1, 1};
  const double gain = std::sqrt(2.0);
  const std::size_t w = config.decoder_width;
  layers_.push_back(make_conv<T>(rng, 3, w, 3, same, gain));
  for (std::size_t i = 0; i < StegoConfig::kDecoderHidden; ++i) layers_.push_back(make_conv<T>(rng, w, w, 3, same, gain));
  layers_.push_back(make_conv<T>(rng, w, 3, 3, same, 1.0));
}

template <typename T>
Var<T> StegoDecoder<T>::extract(const Var<T>& stego, const FlowConfig& flow) const {
  const auto& s = stego.value();
  if (s.rank() != 4 || s.shape() != flow.image_shape(s.batch())) {
    throw ShapeError("extract: image " + shape_str(s.shape()) + " does not match configured image size");
  }
  return grid_to_payload(run_stack(layers_, stego), flow);
}

template <typename T>
ParamList<T> StegoDecoder<T>::parameters() const {
  ParamList<T> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].append_params(out, "stego.dec.l" + std::to_string(i));
  return out;
}

template <typename T>
Var<T> image_loss(const Var<T>& stego, const Var<T>& cover) {
  return l2_norm(sub(stego, cover));
}

template <typename T>
Var<T> message_loss(const Var<T>& recovered, const Var<T>& payload) {
  return l2_norm(sub(recovered, payload));
}

template <typename T>
Var<T> stego_loss(const Var<T>& image, const Var<T>& message, const StegoLossWeights& w) {
  return add(scale(image, static_cast<T>(w.image)), scale(message, static_cast<T>(w.message)));
}

template class StegoEncoder<float>;
template class StegoEncoder<double>;
template class StegoDecoder<float>;
template class StegoDecoder<double>;

#define FLOWSTEG_INSTANTIATE(T)                                                       \
  template Var<T> payload_to_grid<T>(const Var<T>&, const FlowConfig&);              \
  template Var<T> grid_to_payload<T>(const Var<T>&, const FlowConfig&);              \
  template Var<T> image_loss<T>(const Var<T>&, const Var<T>&);                       \
  template Var<T> message_loss<T>(const Var<T>&, const Var<T>&);                     \
  template Var<T> stego_loss<T>(const Var<T>&, const Var<T>&, const StegoLossWeights&);

FLOWSTEG_INSTANTIATE(float)
FLOWSTEG_INSTANTIATE(double)

}  // namespace flowsteg
