#pragma once

#include <functional>
#include <string>

#include "flowsteg/autograd.hpp"
#include "flowsteg/flow.hpp"
#include "flowsteg/kernels.hpp"

namespace flowsteg {

/// StdOnly rescales by the standard-deviation ratio only (content factor f/sigma);
/// MeanStd also re-centres to the style mean (content factor (f - mu)/sigma).
enum class TransferMode { StdOnly, MeanStd };

std::string to_string(TransferMode mode);
/// Accepts "std_only" and "mean_std"; throws ConfigError otherwise.
TransferMode parse_transfer_mode(const std::string& text);

template <typename T>
Var<T> content_factor(const Var<T>& f, TransferMode mode, double eps = kVarianceFloor);

/// Style factor as (N, C) statistics. StdOnly leaves the mean field at zero.
template <typename T>
ChannelStats<T> style_factor(const Tensor<T>& f, TransferMode mode, double eps = kVarianceFloor);

/// Adaptive instance normalization. Style statistics come from f_s's own
/// spatial grid, so content and style extents may differ; channel counts and
/// batch sizes must match.
template <typename T>
Var<T> adain(const Var<T>& f_c, const Var<T>& f_s, TransferMode mode, double eps = kVarianceFloor);

struct UnbiasednessReport {
  double style_residual = 0.0;    // ||S(f_cs) - S(f_s)|| / ||S(f_s)||
  double content_residual = 0.0;  // ||C(f_cs) - C(f_c)|| / ||C(f_c)||
  double sigma_residual = 0.0;    // ||sigma(f_cs) - sigma(f_s)|| / ||sigma(f_s)||
  std::size_t degenerate_channels = 0;
  bool passed = false;
};

template <typename T>
using TransferFn = std::function<Tensor<T>(const Tensor<T>&, const Tensor<T>&)>;

/// Checks that a transfer keeps the content factor of f_c and takes the style
/// factor of f_s. Content channels whose population variance does not exceed
/// the variance floor carry no content factor and are left out of all three
/// residuals; their count is reported. `transfer` defaults to adain in `mode`.
template <typename T>
UnbiasednessReport verify_unbiased(const Tensor<T>& f_c, const Tensor<T>& f_s, TransferMode mode, double tol,
                                   TransferFn<T> transfer = {});

template <typename T>
struct Stylization {
  Var<T> image;         // I_t = G(t)
  Var<T> latent;        // t = adain(F(I_c), F(I_s))
  Var<T> content_code;  // z_c = F(I_c)
  Var<T> style_code;    // z_s = F(I_s)
};

template <typename T>
Stylization<T> stylize(const FlowNetwork<T>& flow, const Var<T>& content, const Var<T>& style, TransferMode mode);

/// Stylization starting from an already-encoded content latent.
template <typename T>
Stylization<T> stylize_latent(const FlowNetwork<T>& flow, const Var<T>& content_code, const Var<T>& style,
                              TransferMode mode);

}  // namespace flowsteg
