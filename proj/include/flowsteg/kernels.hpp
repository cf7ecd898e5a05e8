#pragma once

#include <cstddef>

#include "flowsteg/tensor.hpp"

// Raw numeric kernels over Tensor storage. These carry no gradient bookkeeping;
// the differentiable wrappers live in autograd.hpp.

namespace flowsteg {

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Output spatial extent for one axis: floor((in + 2p - k) / s) + 1.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dSpec& spec);

/// Cross-correlation (no kernel flip) with zero padding.
///
/// input (N, Cin, H, W), kernel (Cout, Cin, kh, kw), bias (Cout). Each output
/// element accumulates `acc = fma(w, x, acc)` from zero over (ci, ky, kx) in
/// ascending order and then adds the bias, so results are reproducible against
/// a plain nested-loop evaluation using the same convention.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                         const Conv2dSpec& spec);

/// Gradient of conv2d_forward with respect to its input.
template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& kernel,
                                const Shape& input_shape, const Conv2dSpec& spec);

/// Gradients with respect to kernel and bias; results are accumulated into
/// the provided tensors, which must already have the right shapes.
template <typename T>
void conv2d_backward_params(const Tensor<T>& grad_out, const Tensor<T>& input, const Conv2dSpec& spec,
                            Tensor<T>& grad_kernel, Tensor<T>& grad_bias);

/// Per-(sample, channel) mean and standard deviation, both shaped (N, C).
template <typename T>
struct ChannelStats {
  Tensor<T> mean;
  Tensor<T> std;
};

/// Population statistics over the spatial positions of each channel:
/// std = sqrt(var + eps). Accumulation is two-pass in double.
template <typename T>
ChannelStats<T> channel_stats(const Tensor<T>& t, double eps);

/// Space-to-channel rearrangement: (N, C, H, W) -> (N, C*f*f, H/f, W/f).
/// Output channel c*f*f + dy*f + dx holds sub-pixel offset (dy, dx) of channel c.
template <typename T>
Tensor<T> squeeze(const Tensor<T>& x, std::size_t factor);

/// Exact inverse permutation of squeeze.
template <typename T>
Tensor<T> unsqueeze(const Tensor<T>& y, std::size_t factor);

}  // namespace flowsteg
