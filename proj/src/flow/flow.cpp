#include "flowsteg/flow.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "flowsteg/linalg.hpp"
#include "flowsteg/random.hpp"

namespace flowsteg {

void FlowConfig::validate() const {
  if (n_blocks < 1) throw ConfigError("flow: n_blocks must be >= 1");
  if (steps_per_block < 1) throw ConfigError("flow: steps_per_block must be >= 1");
  if (squeeze_factor < 2) throw ConfigError("flow: squeeze_factor must be >= 2");
  if (hidden_width < 1) throw ConfigError("flow: hidden_width must be >= 1");
  if (channels < 1) throw ConfigError("flow: channels must be >= 1");
  if (image_size == 0 || image_size % spatial_reduction() != 0) {
    throw ConfigError("flow: image_size " + std::to_string(image_size) + " not divisible by " +
                      std::to_string(spatial_reduction()));
  }
}

std::size_t FlowConfig::spatial_reduction() const {
  std::size_t r = 1;
  for (std::size_t b = 0; b < n_blocks; ++b) r *= squeeze_factor;
  return r;
}

std::size_t FlowConfig::block_channels(std::size_t block) const {
  std::size_t c = channels;
  for (std::size_t b = 0; b <= block; ++b) c *= squeeze_factor * squeeze_factor;
  return c;
}

namespace {

template <typename T>
void require_channels(const Tensor<T>& x, std::size_t c, const char* what) {
  if (x.rank() != 4 || x.channels() != c) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(c) + " channels, got " +
                     shape_str(x.shape()));
  }
}

template <typename T>
Tensor<T> as_kernel(const Tensor<T>& m) {
  const std::size_t c = m.dim(0);
  return m.reshaped({c, c, 1, 1});
}

}  // namespace

template <typename T>
Var<T> actnorm_forward(const Var<T>& x, const ActNormParams<T>& p) {
  const auto& xv = x.value();
  const std::size_t c = p.scale.value().numel();
  require_channels(xv, c, "actnorm");
  const std::size_t n = xv.batch(), hw = xv.plane_size();
  Tensor<T> out(xv.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T w = p.scale.value()[ch], bias = p.bias.value()[ch];
      const T* src = xv.plane(b, ch);
      T* dst = out.plane(b, ch);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = w * src[i] + bias;
    }
  }
  return make_op<T>(std::move(out), {x, p.scale, p.bias}, [n, c, hw](Node<T>& self) {
    const auto& xin = self.parents[0]->value;
    const auto& w = self.parents[1]->value;
    const auto& g = self.grad;
    if (self.parents[0]->requires_grad) {
      Tensor<T> gx(xin.shape());
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T* src = g.plane(b, ch);
          T* dst = gx.plane(b, ch);
          for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * w[ch];
        }
      }
      self.parents[0]->accumulate(gx);
    }
    Tensor<T> gw({c}), gb({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sw = 0.0, sb = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* gp = g.plane(b, ch);
        const T* xp = xin.plane(b, ch);
        for (std::size_t i = 0; i < hw; ++i) {
          sw += static_cast<double>(gp[i]) * xp[i];
          sb += gp[i];
        }
      }
      gw[ch] = static_cast<T>(sw);
      gb[ch] = static_cast<T>(sb);
    }
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(gw);
    if (self.parents[2]->requires_grad) self.parents[2]->accumulate(gb);
  });
}

template <typename T>
Var<T> actnorm_inverse(const Var<T>& y, const ActNormParams<T>& p) {
  const auto& yv = y.value();
  const std::size_t c = p.scale.value().numel();
  require_channels(yv, c, "actnorm inverse");
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (!(std::abs(static_cast<double>(p.scale.value()[ch])) >= kMinActnormScale)) {
      throw SingularScale("actnorm inverse: scale of channel " + std::to_string(ch) + " is " +
                          std::to_string(static_cast<double>(p.scale.value()[ch])));
    }
  }
  const std::size_t n = yv.batch(), hw = yv.plane_size();
  Tensor<T> out(yv.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T w = p.scale.value()[ch], bias = p.bias.value()[ch];
      const T* src = yv.plane(b, ch);
      T* dst = out.plane(b, ch);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = (src[i] - bias) / w;
    }
  }
  Tensor<T> xout = out;
  return make_op<T>(std::move(out), {y, p.scale, p.bias}, [n, c, hw, xout](Node<T>& self) {
    const auto& w = self.parents[1]->value;
    const auto& g = self.grad;
    if (self.parents[0]->requires_grad) {
      Tensor<T> gy(g.shape());
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T* src = g.plane(b, ch);
          T* dst = gy.plane(b, ch);
          for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] / w[ch];
        }
      }
      self.parents[0]->accumulate(gy);
    }
    Tensor<T> gw({c}), gb({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sw = 0.0, sb = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* gp = g.plane(b, ch);
        const T* xp = xout.plane(b, ch);
        for (std::size_t i = 0; i < hw; ++i) {
          sw += static_cast<double>(gp[i]) * xp[i];
          sb += gp[i];
        }
      }
      gw[ch] = static_cast<T>(-sw / static_cast<double>(w[ch]));
      gb[ch] = static_cast<T>(-sb / static_cast<double>(w[ch]));
    }
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(gw);
    if (self.parents[2]->requires_grad) self.parents[2]->accumulate(gb);
  });
}

template <typename T>
Var<T> invconv_forward(const Var<T>& x, const InvConvParams<T>& p) {
  const auto& m = p.matrix.value();
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) throw ShapeError("invconv: matrix must be square");
  const std::size_t c = m.dim(0);
  require_channels(x.value(), c, "invconv");
  const Conv2dSpec spec{1, 0};
  Tensor<T> out = conv2d_forward(x.value(), as_kernel(m), Tensor<T>({c}), spec);
  return make_op<T>(std::move(out), {x, p.matrix}, [c, spec](Node<T>& self) {
    const auto& xin = self.parents[0]->value;
    const Tensor<T> k = as_kernel(self.parents[1]->value);
    if (self.parents[0]->requires_grad) {
      self.parents[0]->accumulate(conv2d_backward_input(self.grad, k, xin.shape(), spec));
    }
    if (self.parents[1]->requires_grad) {
      Tensor<T> gk(k.shape()), gb({c});
      conv2d_backward_params(self.grad, xin, spec, gk, gb);
      self.parents[1]->accumulate(gk.reshaped({c, c}));
    }
  });
}

template <typename T>
double invconv_determinant(const InvConvParams<T>& p) {
  const auto& m = p.matrix.value();
  return LuDecomposition(m.values(), m.dim(0)).determinant();
}

template <typename T>
Var<T> invconv_inverse(const Var<T>& y, const InvConvParams<T>& p) {
  const auto& m = p.matrix.value();
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) throw ShapeError("invconv inverse: matrix must be square");
  const std::size_t c = m.dim(0);
  const auto& yv = y.value();
  require_channels(yv, c, "invconv inverse");
  auto lu = std::make_shared<LuDecomposition>(m.values(), c);
  if (!(std::abs(lu->determinant()) >= kMinInvConvDeterminant)) {
    throw SingularMatrix("invconv inverse: |det M| = " + std::to_string(std::abs(lu->determinant())) +
                         " below threshold");
  }
  const std::size_t n = yv.batch(), hw = yv.plane_size();
  Tensor<T> out(yv.shape());
  std::vector<double> planes(c * hw);
  for (std::size_t b = 0; b < n; ++b) {
    std::copy(yv.plane(b, 0), yv.plane(b, 0) + c * hw, planes.begin());
    lu->solve_planes(planes, hw);
    std::copy(planes.begin(), planes.end(), out.plane(b, 0));
  }
  Tensor<T> xout = out;
  return make_op<T>(std::move(out), {y, p.matrix}, [lu, n, c, hw, xout](Node<T>& self) {
    // x = M^-1 y: dL/dy = M^-T dL/dx, dL/dM = -sum_p (dL/dy)_p x_p^T.
    Tensor<T> gy(self.grad.shape());
    std::vector<double> planes(c * hw);
    std::vector<double> gm(c * c, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
      std::copy(self.grad.plane(b, 0), self.grad.plane(b, 0) + c * hw, planes.begin());
      lu->solve_planes(planes, hw, /*transpose=*/true);
      std::copy(planes.begin(), planes.end(), gy.plane(b, 0));
      for (std::size_t i = 0; i < c; ++i) {
        const double* gi = planes.data() + i * hw;
        for (std::size_t j = 0; j < c; ++j) {
          const T* xj = xout.plane(b, j);
          double s = 0.0;
          for (std::size_t q = 0; q < hw; ++q) s += gi[q] * xj[q];
          gm[i * c + j] -= s;
        }
      }
    }
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(gy);
    if (self.parents[1]->requires_grad) {
      self.parents[1]->accumulate(Tensor<T>({c, c}, std::vector<T>(gm.begin(), gm.end())));
    }
  });
}

template <typename T>
Var<T> coupling_subnet(const Var<T>& xa, const CouplingParams<T>& p) {
  Var<T> h = leaky_relu(p.in(xa), T(0));
  h = leaky_relu(p.hidden(h), T(0));
  return p.out(h);
}

namespace {

template <typename T>
std::size_t half_channels(const Var<T>& x, const char* what) {
  const auto& v = x.value();
  if (v.rank() != 4 || v.channels() % 2 != 0) {
    throw ShapeError(std::string(what) + ": channel count must be even, got " + shape_str(v.shape()));
  }
  return v.channels() / 2;
}

}  // namespace

template <typename T>
Var<T> coupling_forward(const Var<T>& x, const CouplingParams<T>& p) {
  const std::size_t half = half_channels(x, "coupling");
  Var<T> xa = slice_channels(x, 0, half);
  Var<T> xb = slice_channels(x, half, half);
  return concat_channels(xa, add(coupling_subnet(xa, p), xb));
}

template <typename T>
Var<T> coupling_inverse(const Var<T>& y, const CouplingParams<T>& p) {
  const std::size_t half = half_channels(y, "coupling inverse");
  Var<T> ya = slice_channels(y, 0, half);
  Var<T> yb = slice_channels(y, half, half);
  return concat_channels(ya, sub(yb, coupling_subnet(ya, p)));
}

template <typename T>
CouplingParams<T> make_coupling(Rng& rng, std::size_t channels, std::size_t hidden_width) {
  if (channels % 2 != 0) throw ShapeError("coupling: channel count must be even");
  const std::size_t half = channels / 2;
  CouplingParams<T> p;
  p.in = make_conv<T>(rng, half, hidden_width, 3, {1, 1});
  p.hidden = make_conv<T>(rng, hidden_width, hidden_width, 1, {1, 0});
  p.out = make_conv<T>(rng, hidden_width, half, 3, {1, 1}, 0.0);
  return p;
}

template <typename T>
FlowNetwork<T>::FlowNetwork(const FlowConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  for (std::size_t b = 0; b < config_.n_blocks; ++b) {
    const std::size_t c = config_.block_channels(b);
    auto& block = blocks_.emplace_back();
    for (std::size_t s = 0; s < config_.steps_per_block; ++s) {
      FlowStep<T> step;
      step.actnorm.scale = Var<T>::parameter(Tensor<T>({c}, T(1)));
      step.actnorm.bias = Var<T>::parameter(Tensor<T>({c}));
      const auto q = random_orthogonal(c, rng);
      step.invconv.matrix = Var<T>::parameter(Tensor<T>({c, c}, std::vector<T>(q.begin(), q.end())));
      step.coupling = make_coupling<T>(rng, c, config_.hidden_width);
      block.push_back(std::move(step));
    }
  }
}

template <typename T>
FlowNetwork<T> FlowNetwork<T>::identity(const FlowConfig& config) {
  FlowNetwork net(config, 0);
  for (auto& block : net.blocks_) {
    for (auto& step : block) {
      auto& m = step.invconv.matrix.mutable_value();
      const std::size_t c = m.dim(0);
      m = Tensor<T>({c, c});
      for (std::size_t i = 0; i < c; ++i) m[i * c + i] = T(1);
    }
  }
  return net;
}

template <typename T>
Var<T> FlowNetwork<T>::forward(const Var<T>& image) const {
  const auto& v = image.value();
  if (v.rank() != 4 || v.channels() != config_.channels) {
    throw ShapeError("flow forward: expected " + std::to_string(config_.channels) + "-channel image, got " +
                     shape_str(v.shape()));
  }
  Var<T> h = image;
  for (const auto& block : blocks_) {
    h = squeeze(h, config_.squeeze_factor);
    for (const auto& step : block) {
      h = actnorm_forward(h, step.actnorm);
      h = invconv_forward(h, step.invconv);
      h = coupling_forward(h, step.coupling);
    }
  }
  return h;
}

template <typename T>
Var<T> FlowNetwork<T>::inverse(const Var<T>& latent) const {
  const auto& v = latent.value();
  if (v.rank() != 4 || v.channels() != config_.latent_channels()) {
    throw ShapeError("flow inverse: expected " + std::to_string(config_.latent_channels()) +
                     "-channel latent, got " + shape_str(v.shape()));
  }
  Var<T> h = latent;
  for (std::size_t b = blocks_.size(); b-- > 0;) {
    const auto& block = blocks_[b];
    for (std::size_t s = block.size(); s-- > 0;) {
      const auto& step = block[s];
      h = coupling_inverse(h, step.coupling);
      try {
        h = invconv_inverse(h, step.invconv);
      } catch (const SingularMatrix& e) {
        throw SingularMatrix(std::string(e.what()) + " in block " + std::to_string(b) + " step " +
                                 std::to_string(s),
                             b, s);
      }
      h = actnorm_inverse(h, step.actnorm);
    }
    h = unsqueeze(h, config_.squeeze_factor);
  }
  return h;
}

template <typename T>
void FlowNetwork<T>::initialize_actnorm(const Tensor<T>& batch) {
  Var<T> h(batch);
  for (auto& block : blocks_) {
    h = squeeze(h.detach(), config_.squeeze_factor);
    for (auto& step : block) {
      if (!step.actnorm.initialized) {
        const auto& x = h.value();
        const std::size_t n = x.batch(), c = x.channels(), hw = x.plane_size();
        auto& scale = step.actnorm.scale.mutable_value();
        auto& bias = step.actnorm.bias.mutable_value();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const T* p = x.plane(b, ch);
            for (std::size_t i = 0; i < hw; ++i) sum += p[i];
          }
          const double mean = sum / static_cast<double>(n * hw);
          double sq = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const T* p = x.plane(b, ch);
            for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mean) * (p[i] - mean);
          }
          const double sigma =
              std::max(std::sqrt(sq / static_cast<double>(n * hw)), std::sqrt(kVarianceFloor));
          scale[ch] = static_cast<T>(1.0 / sigma);
          bias[ch] = static_cast<T>(-mean / sigma);
        }
        step.actnorm.initialized = true;
      }
      h = actnorm_forward(h.detach(), step.actnorm).detach();
      h = invconv_forward(h, step.invconv).detach();
      h = coupling_forward(h, step.coupling).detach();
    }
  }
}

template <typename T>
bool FlowNetwork<T>::actnorm_initialized() const {
  for (const auto& block : blocks_) {
    for (const auto& step : block) {
      if (!step.actnorm.initialized) return false;
    }
  }
  return true;
}

template <typename T>
void FlowNetwork<T>::randomize(std::uint64_t seed, double coupling_gain) {
  Rng rng(seed);
  for (auto& block : blocks_) {
    for (auto& step : block) {
      for (auto& v : step.actnorm.scale.mutable_value().values()) v = static_cast<T>(rng.uniform(0.5, 1.5));
      for (auto& v : step.actnorm.bias.mutable_value().values()) v = static_cast<T>(rng.uniform(-0.5, 0.5));
      step.actnorm.initialized = true;
      auto& m = step.invconv.matrix.mutable_value();
      const auto q = random_orthogonal(m.dim(0), rng);
      std::copy(q.begin(), q.end(), m.data());
      auto fill = [&](ConvLayer<T>& layer, double gain) {
        auto& k = layer.kernel.mutable_value();
        const double fan_in = static_cast<double>(k.dim(1) * k.dim(2) * k.dim(3));
        for (auto& v : k.values()) v = static_cast<T>(rng.normal() * gain / std::sqrt(fan_in));
        for (auto& v : layer.bias.mutable_value().values()) v = static_cast<T>(rng.uniform(-0.1, 0.1) * gain);
      };
      fill(step.coupling.in, 1.0);
      fill(step.coupling.hidden, 1.0);
      fill(step.coupling.out, coupling_gain);
    }
  }
}

template <typename T>
ParamList<T> FlowNetwork<T>::parameters() const {
  ParamList<T> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t s = 0; s < blocks_[b].size(); ++s) {
      const auto& step = blocks_[b][s];
      const std::string prefix = "flow.b" + std::to_string(b) + ".s" + std::to_string(s);
      out.push_back({prefix + ".actnorm.scale", step.actnorm.scale});
      out.push_back({prefix + ".actnorm.bias", step.actnorm.bias});
      out.push_back({prefix + ".invconv.matrix", step.invconv.matrix, ParamKind::InvConvMatrix});
      step.coupling.in.append_params(out, prefix + ".coupling.in");
      step.coupling.hidden.append_params(out, prefix + ".coupling.hidden");
      step.coupling.out.append_params(out, prefix + ".coupling.out");
    }
  }
  return out;
}

template <typename T>
void FlowNetwork<T>::check_determinants() const {
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t s = 0; s < blocks_[b].size(); ++s) {
      const double det = invconv_determinant(blocks_[b][s].invconv);
      if (!(std::abs(det) >= kMinInvConvDeterminant)) {
        throw SingularMatrix("invconv determinant " + std::to_string(det) + " below threshold in block " +
                                 std::to_string(b) + " step " + std::to_string(s),
                             b, s);
      }
    }
  }
}

#define FLOWSTEG_INSTANTIATE(T)                                                             \
  template Var<T> actnorm_forward<T>(const Var<T>&, const ActNormParams<T>&);              \
  template Var<T> actnorm_inverse<T>(const Var<T>&, const ActNormParams<T>&);              \
  template Var<T> invconv_forward<T>(const Var<T>&, const InvConvParams<T>&);              \
  template Var<T> invconv_inverse<T>(const Var<T>&, const InvConvParams<T>&);              \
  template double invconv_determinant<T>(const InvConvParams<T>&);                         \
  template Var<T> coupling_subnet<T>(const Var<T>&, const CouplingParams<T>&);             \
  template Var<T> coupling_forward<T>(const Var<T>&, const CouplingParams<T>&);            \
  template Var<T> coupling_inverse<T>(const Var<T>&, const CouplingParams<T>&);            \
  template CouplingParams<T> make_coupling<T>(Rng&, std::size_t, std::size_t);            \
  template class FlowNetwork<T>;

FLOWSTEG_INSTANTIATE(float)
FLOWSTEG_INSTANTIATE(double)

}  // namespace flowsteg
