#include "flowsteg/transfer.hpp"

#include <cmath>
#include <vector>

namespace flowsteg {

std::string to_string(TransferMode mode) {
  return mode == TransferMode::StdOnly ? "std_only" : "mean_std";
}

TransferMode parse_transfer_mode(const std::string& text) {
  if (text == "std_only") return TransferMode::StdOnly;
  if (text == "mean_std") return TransferMode::MeanStd;
  throw ConfigError("unknown transfer mode '" + text + "' (expected std_only or mean_std)");
}

template <typename T>
Var<T> content_factor(const Var<T>& f, TransferMode mode, double eps) {
  Var<T> sigma = channel_std(f, eps);
  Var<T> centred = mode == TransferMode::MeanStd ? channel_apply(f, channel_mean(f), ChannelOp::Sub) : f;
  return channel_apply(centred, sigma, ChannelOp::Div);
}

template <typename T>
ChannelStats<T> style_factor(const Tensor<T>& f, TransferMode mode, double eps) {
  ChannelStats<T> stats = channel_stats(f, eps);
  if (mode == TransferMode::StdOnly) stats.mean = Tensor<T>(stats.mean.shape());
  return stats;
}

template <typename T>
Var<T> adain(const Var<T>& f_c, const Var<T>& f_s, TransferMode mode, double eps) {
  const auto& c = f_c.value();
  const auto& s = f_s.value();
  if (c.rank() != 4 || s.rank() != 4 || c.channels() != s.channels() || c.batch() != s.batch()) {
    throw ShapeError("adain: content " + shape_str(c.shape()) + " and style " + shape_str(s.shape()) +
                     " disagree in batch or channel count");
  }
  Var<T> out = channel_apply(content_factor(f_c, mode, eps), channel_std(f_s, eps), ChannelOp::Mul);
  if (mode == TransferMode::MeanStd) out = channel_apply(out, channel_mean(f_s), ChannelOp::Add);
  return out;
}

namespace {

// Relative residual over the (sample, channel) entries flagged in `keep`.
template <typename T>
double masked_relative(const Tensor<T>& a, const Tensor<T>& b, const std::vector<bool>& keep, std::size_t hw) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) continue;
    for (std::size_t j = 0; j < hw; ++j) {
      const double d = static_cast<double>(a[i * hw + j]) - static_cast<double>(b[i * hw + j]);
      num += d * d;
      den += static_cast<double>(b[i * hw + j]) * static_cast<double>(b[i * hw + j]);
    }
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::sqrt(num);
  return std::sqrt(num / den);
}

}  // namespace

template <typename T>
UnbiasednessReport verify_unbiased(const Tensor<T>& f_c, const Tensor<T>& f_s, TransferMode mode, double tol,
                                   TransferFn<T> transfer) {
  if (!transfer) {
    transfer = [mode](const Tensor<T>& c, const Tensor<T>& s) {
      return adain(Var<T>(c), Var<T>(s), mode).value();
    };
  }
  const Tensor<T> f_cs = transfer(f_c, f_s);
  require_same_shape(f_cs.shape(), f_c.shape(), "verify_unbiased");

  const auto raw = channel_stats(f_c, 0.0);
  std::vector<bool> keep(raw.std.numel());
  UnbiasednessReport report;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const double var = static_cast<double>(raw.std[i]) * static_cast<double>(raw.std[i]);
    keep[i] = var > kVarianceFloor;
    if (!keep[i]) ++report.degenerate_channels;
  }

  const auto s_cs = style_factor(f_cs, mode);
  const auto s_s = style_factor(f_s, mode);
  report.sigma_residual = masked_relative(s_cs.std, s_s.std, keep, 1);
  if (mode == TransferMode::MeanStd) {
    const std::size_t m = keep.size();
    Tensor<T> joint_cs({2 * m}), joint_s({2 * m});
    std::vector<bool> keep2(2 * m);
    for (std::size_t i = 0; i < m; ++i) {
      joint_cs[2 * i] = s_cs.mean[i];
      joint_cs[2 * i + 1] = s_cs.std[i];
      joint_s[2 * i] = s_s.mean[i];
      joint_s[2 * i + 1] = s_s.std[i];
      keep2[2 * i] = keep2[2 * i + 1] = keep[i];
    }
    report.style_residual = masked_relative(joint_cs, joint_s, keep2, 1);
  } else {
    report.style_residual = report.sigma_residual;
  }

  const Tensor<T> c_cs = content_factor(Var<T>(f_cs), mode).value();
  const Tensor<T> c_c = content_factor(Var<T>(f_c), mode).value();
  report.content_residual = masked_relative(c_cs, c_c, keep, f_c.plane_size());

  report.passed = report.style_residual <= tol && report.content_residual <= tol && report.sigma_residual <= tol;
  return report;
}

template <typename T>
Stylization<T> stylize_latent(const FlowNetwork<T>& flow, const Var<T>& content_code, const Var<T>& style,
                              TransferMode mode) {
  Stylization<T> out;
  out.content_code = content_code;
  out.style_code = flow.forward(style);
  out.latent = adain(out.content_code, out.style_code, mode);
  out.image = flow.inverse(out.latent);
  return out;
}

template <typename T>
Stylization<T> stylize(const FlowNetwork<T>& flow, const Var<T>& content, const Var<T>& style, TransferMode mode) {
  return stylize_latent(flow, flow.forward(content), style, mode);
}

#define FLOWSTEG_INSTANTIATE(T)                                                                           \
  template Var<T> content_factor<T>(const Var<T>&, TransferMode, double);                                 \
  template ChannelStats<T> style_factor<T>(const Tensor<T>&, TransferMode, double);                       \
  template Var<T> adain<T>(const Var<T>&, const Var<T>&, TransferMode, double);                           \
  template UnbiasednessReport verify_unbiased<T>(const Tensor<T>&, const Tensor<T>&, TransferMode, double, \
                                                 TransferFn<T>);                                          \
  template Stylization<T> stylize_latent<T>(const FlowNetwork<T>&, const Var<T>&, const Var<T>&,          \
                                            TransferMode);                                                \
  template Stylization<T> stylize<T>(const FlowNetwork<T>&, const Var<T>&, const Var<T>&, TransferMode);

FLOWSTEG_INSTANTIATE(float)
FLOWSTEG_INSTANTIATE(double)

}  // namespace flowsteg
