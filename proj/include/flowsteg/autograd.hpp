#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "flowsteg/kernels.hpp"
#include "flowsteg/tensor.hpp"

// Tape-based reverse-mode differentiation over Tensor values. Every operation
// records its inputs and a backward closure when at least one input requires a
// gradient; otherwise it returns a plain constant, so inference runs through the
// same code without bookkeeping.

namespace flowsteg {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor<T>& g);
};

template <typename T>
class Var {
 public:
  using value_type = T;

  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);

  /// A leaf that collects gradients.
  static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  /// Mutable access for optimizers and initializers; only meaningful on leaves.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  /// Freezes or unfreezes a leaf.
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient, or zeros of the value's shape if none arrived.
  Tensor<T> grad() const;
  void zero_grad() { node_->grad = Tensor<T>(); }

  /// Constant copy of the current value, cut from the tape.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Seeds d(root)/d(root) = 1 for a single-element root and propagates to every
/// reachable node that requires a gradient.
template <typename T>
void backward(const Var<T>& root);

/// Whether operations on this thread record the tape.
bool grad_enabled() noexcept;

/// Disables taping on this thread for its lifetime, even when parameters
/// require gradients. Used for evaluation passes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds a result node. `fn` receives the result node and must push
/// gradients into the parents that require them.
template <typename T>
Var<T> make_op(Tensor<T> value, const std::vector<Var<T>>& inputs, std::function<void(Node<T>&)> fn);

// ---- differentiable operations -------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias, Conv2dSpec spec);

/// slope 0 gives a plain rectifier.
template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T s);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count);

template <typename T>
Var<T> squeeze(const Var<T>& x, std::size_t factor);

template <typename T>
Var<T> unsqueeze(const Var<T>& x, std::size_t factor);

/// Spatial mean per (sample, channel), shaped (N, C, 1, 1).
template <typename T>
Var<T> channel_mean(const Var<T>& x);

/// sqrt(population variance + eps) per (sample, channel), shaped (N, C, 1, 1).
template <typename T>
Var<T> channel_std(const Var<T>& x, double eps);

enum class ChannelOp { Add, Sub, Mul, Div };

/// x (N, C, H, W) combined elementwise with a per-(sample, channel) value s
/// shaped (N, C, 1, 1).
template <typename T>
Var<T> channel_apply(const Var<T>& x, const Var<T>& s, ChannelOp op);

/// Euclidean norm of all elements, shaped (1). The gradient at zero is taken as zero.
template <typename T>
Var<T> l2_norm(const Var<T>& x);

template <typename T>
Var<T> sum_squares(const Var<T>& x);

/// 2x2 max pooling with stride 2.
template <typename T>
Var<T> max_pool2(const Var<T>& x);

/// Nearest-neighbour 2x upsampling.
template <typename T>
Var<T> upsample2(const Var<T>& x);

/// Scalar value of a single-element Var.
template <typename T>
double scalar(const Var<T>& v);

/// Parameter with a stable checkpoint name.
enum class ParamKind { Generic, InvConvMatrix };

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
  ParamKind kind = ParamKind::Generic;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

/// Convolution layer parameters: kernel (Cout, Cin, k, k) and bias (Cout).
template <typename T>
struct ConvLayer {
  Var<T> kernel;
  Var<T> bias;
  Conv2dSpec spec;

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, kernel, bias, spec); }
  void append_params(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".w", kernel});
    out.push_back({prefix + ".b", bias});
  }
  template <typename U>
  ConvLayer<U> cast() const {
    return {Var<U>(kernel.value().template cast<U>(), kernel.requires_grad()),
            Var<U>(bias.value().template cast<U>(), bias.requires_grad()), spec};
  }
};

class Rng;

/// Kernel entries ~ N(0, gain^2 / fan_in), zero bias. gain 0 gives an all-zero layer.
template <typename T>
ConvLayer<T> make_conv(Rng& rng, std::size_t cin, std::size_t cout, std::size_t k, Conv2dSpec spec,
                       double gain = 1.0);

}  // namespace flowsteg
