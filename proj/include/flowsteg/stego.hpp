#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "flowsteg/autograd.hpp"
#include "flowsteg/flow.hpp"

namespace flowsteg {

struct StegoConfig {
  std::size_t encoder_width = 32;
  std::size_t decoder_width = 32;

  static constexpr std::size_t kEncoderHidden = 3;
  static constexpr std::size_t kDecoderHidden = 6;
  static constexpr double kSlope = 0.2;

  bool operator==(const StegoConfig&) const = default;
};

struct StegoLossWeights {
  double image = 1.0;
  double message = 1.0;

  /// Both must be >= 0 and not both zero; throws ConfigError otherwise.
  void validate() const;
};

/// Lays a flow latent out on the image grid by undoing every squeeze.
template <typename T>
Var<T> payload_to_grid(const Var<T>& latent, const FlowConfig& flow);

/// Inverse of payload_to_grid.
template <typename T>
Var<T> grid_to_payload(const Var<T>& grid, const FlowConfig& flow);

/// Hides a content latent in a cover image. Cover and payload grid are
/// concatenated along channels and passed through an input layer, three
/// hidden layers and an output layer; the output is a residual added to the
/// cover. The output layer starts at zero, so an untrained encoder returns the
/// cover unchanged.
template <typename T>
class StegoEncoder {
 public:
  StegoEncoder(const StegoConfig& config, std::uint64_t seed);

  Var<T> embed(const Var<T>& cover, const Var<T>& payload, const FlowConfig& flow) const;
  ParamList<T> parameters() const;
  std::size_t layer_count() const noexcept { return layers_.size(); }

  template <typename U>
  StegoEncoder<U> cast() const;

 private:
  StegoEncoder() = default;
  template <typename U>
  friend class StegoEncoder;
  std::vector<ConvLayer<T>> layers_;
};

/// Recovers the hidden latent (D_msg): input layer, six hidden layers and an
/// output layer producing a 3-channel grid that is mapped back to latent layout.
template <typename T>
class StegoDecoder {
 public:
  StegoDecoder(const StegoConfig& config, std::uint64_t seed);

  Var<T> extract(const Var<T>& stego, const FlowConfig& flow) const;
  ParamList<T> parameters() const;
  std::size_t layer_count() const noexcept { return layers_.size(); }

  template <typename U>
  StegoDecoder<U> cast() const;

 private:
  StegoDecoder() = default;
  template <typename U>
  friend class StegoDecoder;
  std::vector<ConvLayer<T>> layers_;
};

/// ||I_e - I_t||_2
template <typename T>
Var<T> image_loss(const Var<T>& stego, const Var<T>& cover);

/// ||z_hat - z_c||_2
template <typename T>
Var<T> message_loss(const Var<T>& recovered, const Var<T>& payload);

/// lambda_img * image + lambda_msg * message
template <typename T>
Var<T> stego_loss(const Var<T>& image, const Var<T>& message, const StegoLossWeights& w);

template <typename T>
template <typename U>
StegoEncoder<U> StegoEncoder<T>::cast() const {
  StegoEncoder<U> out;
  for (const auto& l : layers_) out.layers_.push_back(l.template cast<U>());
  return out;
}

template <typename T>
template <typename U>
StegoDecoder<U> StegoDecoder<T>::cast() const {
  StegoDecoder<U> out;
  for (const auto& l : layers_) out.layers_.push_back(l.template cast<U>());
  return out;
}

extern template class StegoEncoder<float>;
extern template class StegoEncoder<double>;
extern template class StegoDecoder<float>;
extern template class StegoDecoder<double>;

}  // namespace flowsteg
