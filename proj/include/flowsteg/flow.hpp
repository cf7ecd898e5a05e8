#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "flowsteg/autograd.hpp"

namespace flowsteg {

inline constexpr double kMinActnormScale = 1e-8;
inline constexpr double kMinInvConvDeterminant = 1e-6;
/// Variance floor used wherever a channel standard deviation is formed.
inline constexpr double kVarianceFloor = 1e-5;

struct FlowConfig {
  std::size_t n_blocks = 2;
  std::size_t steps_per_block = 8;
  std::size_t squeeze_factor = 2;
  std::size_t hidden_width = 64;
  std::size_t channels = 3;
  std::size_t image_size = 64;

  /// Throws ConfigError when the structure cannot be built.
  void validate() const;
  /// Product of all squeeze factors.
  std::size_t spatial_reduction() const;
  std::size_t block_channels(std::size_t block) const;
  std::size_t latent_channels() const { return block_channels(n_blocks - 1); }
  std::size_t latent_extent() const { return image_size / spatial_reduction(); }
  Shape image_shape(std::size_t batch) const { return {batch, channels, image_size, image_size}; }
  Shape latent_shape(std::size_t batch) const {
    return {batch, latent_channels(), latent_extent(), latent_extent()};
  }

  bool operator==(const FlowConfig&) const = default;
};

template <typename T>
struct ActNormParams {
  Var<T> scale;  // (C)
  Var<T> bias;   // (C)
  bool initialized = false;
};

template <typename T>
struct InvConvParams {
  Var<T> matrix;  // (C, C), applied as y = M x at every pixel
};

/// Subnetwork NN of the additive coupling: 3x3 conv, ReLU, 1x1 conv, ReLU,
/// 3x3 conv back to C/2 channels. The last layer starts at zero.
template <typename T>
struct CouplingParams {
  ConvLayer<T> in;
  ConvLayer<T> hidden;
  ConvLayer<T> out;
};

template <typename T>
struct FlowStep {
  ActNormParams<T> actnorm;
  InvConvParams<T> invconv;
  CouplingParams<T> coupling;
};

/// y = scale * x + bias per channel.
template <typename T>
Var<T> actnorm_forward(const Var<T>& x, const ActNormParams<T>& p);

/// x = (y - bias) / scale. Throws SingularScale if any |scale| < kMinActnormScale.
template <typename T>
Var<T> actnorm_inverse(const Var<T>& y, const ActNormParams<T>& p);

template <typename T>
Var<T> invconv_forward(const Var<T>& x, const InvConvParams<T>& p);

/// Solves M x = y per pixel through an LU factorization (in double).
/// Throws SingularMatrix when |det M| < kMinInvConvDeterminant.
template <typename T>
Var<T> invconv_inverse(const Var<T>& y, const InvConvParams<T>& p);

template <typename T>
double invconv_determinant(const InvConvParams<T>& p);

template <typename T>
Var<T> coupling_subnet(const Var<T>& xa, const CouplingParams<T>& p);

/// (x_a, x_b) = channel halves; y = concat(x_a, NN(x_a) + x_b).
template <typename T>
Var<T> coupling_forward(const Var<T>& x, const CouplingParams<T>& p);

/// x = concat(y_a, y_b - NN(y_a)).
template <typename T>
Var<T> coupling_inverse(const Var<T>& y, const CouplingParams<T>& p);

template <typename T>
CouplingParams<T> make_coupling(Rng& rng, std::size_t channels, std::size_t hidden_width);

/// Reversible feature network: per block one squeeze followed by
/// steps_per_block x (actnorm, invertible 1x1 conv, additive coupling).
/// forward() is the encoder F, inverse() the decoder G.
template <typename T>
class FlowNetwork {
 public:
  using Blocks = std::vector<std::vector<FlowStep<T>>>;

  /// Random orthogonal 1x1 convolutions, zero-output couplings and actnorm
  /// awaiting data-dependent initialization.
  FlowNetwork(const FlowConfig& config, std::uint64_t seed);

  /// Every matrix the identity, couplings zero, actnorm uninitialized: the
  /// whole network reduces to the squeeze permutations.
  static FlowNetwork identity(const FlowConfig& config);

  const FlowConfig& config() const noexcept { return config_; }
  Blocks& blocks() noexcept { return blocks_; }
  const Blocks& blocks() const noexcept { return blocks_; }

  Var<T> forward(const Var<T>& image) const;
  /// Raw inverse; no clamping to the image range.
  Var<T> inverse(const Var<T>& latent) const;

  Tensor<T> encode(const Tensor<T>& image) const { return forward(Var<T>(image)).value(); }
  Tensor<T> decode(const Tensor<T>& latent) const { return inverse(Var<T>(latent)).value(); }

  /// Data-dependent actnorm initialization: each not-yet-initialized actnorm
  /// layer is set so its output has zero mean and unit variance per channel on
  /// `batch`, pooled over samples and positions. sigma is floored at
  /// sqrt(kVarianceFloor) for near-constant channels.
  void initialize_actnorm(const Tensor<T>& batch);
  bool actnorm_initialized() const;

  /// Replaces every parameter with random values: actnorm scale in
  /// [0.5, 1.5] and bias in [-0.5, 0.5], fresh orthogonal matrices, and
  /// coupling output layers drawn with the given gain. Marks actnorm as
  /// initialized. Used to exercise the nonlinear paths in tests.
  void randomize(std::uint64_t seed, double coupling_gain = 0.1);

  ParamList<T> parameters() const;

  /// Throws SingularMatrix (with block/step) if any determinant is too small.
  void check_determinants() const;

  template <typename U>
  FlowNetwork<U> cast() const;

 private:
  FlowNetwork() = default;
  template <typename U>
  friend class FlowNetwork;

  FlowConfig config_;
  Blocks blocks_;
};

template <typename T>
template <typename U>
FlowNetwork<U> FlowNetwork<T>::cast() const {
  FlowNetwork<U> out;
  out.config_ = config_;
  for (const auto& block : blocks_) {
    auto& dst = out.blocks_.emplace_back();
    for (const auto& s : block) {
      FlowStep<U> step;
      step.actnorm.scale = Var<U>(s.actnorm.scale.value().template cast<U>(), s.actnorm.scale.requires_grad());
      step.actnorm.bias = Var<U>(s.actnorm.bias.value().template cast<U>(), s.actnorm.bias.requires_grad());
      step.actnorm.initialized = s.actnorm.initialized;
      step.invconv.matrix = Var<U>(s.invconv.matrix.value().template cast<U>(), s.invconv.matrix.requires_grad());
      step.coupling.in = s.coupling.in.template cast<U>();
      step.coupling.hidden = s.coupling.hidden.template cast<U>();
      step.coupling.out = s.coupling.out.template cast<U>();
      dst.push_back(std::move(step));
    }
  }
  return out;
}

extern template class FlowNetwork<float>;
extern template class FlowNetwork<double>;

}  // namespace flowsteg
