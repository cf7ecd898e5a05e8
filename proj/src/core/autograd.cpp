#include "flowsteg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "flowsteg/random.hpp"

namespace flowsteg {

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
  if (grad.empty()) {
    require_same_shape(value.shape(), g.shape(), "gradient accumulation");
    grad = g;
    return;
  }
  require_same_shape(grad.shape(), g.shape(), "gradient accumulation");
  T* dst = grad.data();
  const T* src = g.data();
  for (std::size_t i = 0; i < grad.numel(); ++i) dst[i] += src[i];
}

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  if (node_->grad.empty()) return Tensor<T>(node_->value.shape());
  return node_->grad;
}

template <typename T>
void backward(const Var<T>& root) {
  if (!root.defined() || root.value().numel() != 1) {
    throw ShapeError("backward: root must be a single-element value");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; reversed it is a valid topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Tensor<T>(root.value().shape(), T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) {
      node->backward(*node);
      // Interior gradients are no longer needed once propagated.
      if (!node->parents.empty()) node->grad = Tensor<T>();
    }
  }
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Var<T> make_op(Tensor<T> value, const std::vector<Var<T>>& inputs, std::function<void(Node<T>&)> fn) {
  Var<T> out(std::move(value), false);
  const bool track = g_grad_enabled &&
                     std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
  if (track) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.parents.reserve(inputs.size());
    for (const auto& v : inputs) node.parents.push_back(v.node());
    node.backward = std::move(fn);
  }
  return out;
}

namespace {

template <typename T>
bool wants(const Node<T>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

template <typename T>
void require_channel_value(const Tensor<T>& x, const Tensor<T>& s, const char* what) {
  if (x.rank() != 4 || s.rank() != 4 || s.batch() != x.batch() || s.channels() != x.channels() ||
      s.height() != 1 || s.width() != 1) {
    throw ShapeError(std::string(what) + ": per-channel operand " + shape_str(s.shape()) +
                     " incompatible with " + shape_str(x.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias, Conv2dSpec spec) {
  Tensor<T> out = conv2d_forward(x.value(), kernel.value(), bias.value(), spec);
  return make_op<T>(std::move(out), {x, kernel, bias}, [spec](Node<T>& self) {
    const auto& xin = self.parents[0]->value;
    const auto& k = self.parents[1]->value;
    if (wants(self, 0)) self.parents[0]->accumulate(conv2d_backward_input(self.grad, k, xin.shape(), spec));
    if (wants(self, 1) || wants(self, 2)) {
      Tensor<T> gk(k.shape());
      Tensor<T> gb(self.parents[2]->value.shape());
      conv2d_backward_params(self.grad, xin, spec, gk, gb);
      if (wants(self, 1)) self.parents[1]->accumulate(gk);
      if (wants(self, 2)) self.parents[2]->accumulate(gb);
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T(0) ? v : v * slope;
  return make_op<T>(std::move(out), {x}, [slope](Node<T>& self) {
    const auto& xin = self.parents[0]->value;
    Tensor<T> g = self.grad;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (!(xin[i] > T(0))) g[i] *= slope;
    }
    self.parents[0]->accumulate(g);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) {
      Tensor<T> g = self.grad;
      for (auto& v : g.values()) v = -v;
      self.parents[1]->accumulate(g);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return make_op<T>(std::move(out), {a}, [s](Node<T>& self) {
    Tensor<T> g = self.grad;
    for (auto& v : g.values()) v *= s;
    self.parents[0]->accumulate(g);
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 4 || bv.rank() != 4 || av.batch() != bv.batch() || av.height() != bv.height() ||
      av.width() != bv.width()) {
    throw ShapeError("concat_channels: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const std::size_t n = av.batch(), ca = av.channels(), cb = bv.channels(), hw = av.plane_size();
  Tensor<T> out({n, ca + cb, av.height(), av.width()});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(av.plane(i, 0), av.plane(i, 0) + ca * hw, out.plane(i, 0));
    std::copy(bv.plane(i, 0), bv.plane(i, 0) + cb * hw, out.plane(i, ca));
  }
  return make_op<T>(std::move(out), {a, b}, [n, ca, cb, hw](Node<T>& self) {
    for (std::size_t part = 0; part < 2; ++part) {
      if (!wants(self, part)) continue;
      const std::size_t c = part == 0 ? ca : cb;
      const std::size_t offset = part == 0 ? 0 : ca;
      Tensor<T> g(self.parents[part]->value.shape());
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = self.grad.plane(i, offset);
        std::copy(src, src + c * hw, g.plane(i, 0));
      }
      self.parents[part]->accumulate(g);
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count) {
  const auto& xv = x.value();
  if (xv.rank() != 4 || begin + count > xv.channels()) {
    throw ShapeError("slice_channels: range out of bounds for " + shape_str(xv.shape()));
  }
  const std::size_t n = xv.batch(), hw = xv.plane_size();
  Tensor<T> out({n, count, xv.height(), xv.width()});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(xv.plane(i, begin), xv.plane(i, begin) + count * hw, out.plane(i, 0));
  }
  return make_op<T>(std::move(out), {x}, [n, begin, count, hw](Node<T>& self) {
    Tensor<T> g(self.parents[0]->value.shape());
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(self.grad.plane(i, 0), self.grad.plane(i, 0) + count * hw, g.plane(i, begin));
    }
    self.parents[0]->accumulate(g);
  });
}

template <typename T>
Var<T> squeeze(const Var<T>& x, std::size_t factor) {
  return make_op<T>(squeeze(x.value(), factor), {x}, [factor](Node<T>& self) {
    self.parents[0]->accumulate(unsqueeze(self.grad, factor));
  });
}

template <typename T>
Var<T> unsqueeze(const Var<T>& x, std::size_t factor) {
  return make_op<T>(unsqueeze(x.value(), factor), {x}, [factor](Node<T>& self) {
    self.parents[0]->accumulate(squeeze(self.grad, factor));
  });
}

template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  const auto stats = channel_stats(x.value(), 0.0);
  const std::size_t n = x.value().batch(), c = x.value().channels();
  Tensor<T> out = stats.mean.reshaped({n, c, 1, 1});
  return make_op<T>(std::move(out), {x}, [n, c](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const std::size_t hw = xv.plane_size();
    Tensor<T> g(xv.shape());
    for (std::size_t i = 0; i < n * c; ++i) {
      const T v = self.grad[i] / static_cast<T>(hw);
      std::fill(g.data() + i * hw, g.data() + (i + 1) * hw, v);
    }
    self.parents[0]->accumulate(g);
  });
}

template <typename T>
Var<T> channel_std(const Var<T>& x, double eps) {
  const auto stats = channel_stats(x.value(), eps);
  const std::size_t n = x.value().batch(), c = x.value().channels();
  Tensor<T> mean = stats.mean;
  Tensor<T> out = stats.std.reshaped({n, c, 1, 1});
  return make_op<T>(out, {x}, [n, c, mean, out](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const std::size_t hw = xv.plane_size();
    Tensor<T> g(xv.shape());
    for (std::size_t i = 0; i < n * c; ++i) {
      const T k = self.grad[i] / (static_cast<T>(hw) * out[i]);
      const T* src = xv.data() + i * hw;
      T* dst = g.data() + i * hw;
      for (std::size_t j = 0; j < hw; ++j) dst[j] = k * (src[j] - mean[i]);
    }
    self.parents[0]->accumulate(g);
  });
}

template <typename T>
Var<T> channel_apply(const Var<T>& x, const Var<T>& s, ChannelOp op) {
  require_channel_value(x.value(), s.value(), "channel_apply");
  const auto& xv = x.value();
  const auto& sv = s.value();
  const std::size_t planes = xv.batch() * xv.channels(), hw = xv.plane_size();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < planes; ++i) {
    const T* src = xv.data() + i * hw;
    T* dst = out.data() + i * hw;
    const T k = sv[i];
    switch (op) {
      case ChannelOp::Add: for (std::size_t j = 0; j < hw; ++j) dst[j] = src[j] + k; break;
      case ChannelOp::Sub: for (std::size_t j = 0; j < hw; ++j) dst[j] = src[j] - k; break;
      case ChannelOp::Mul: for (std::size_t j = 0; j < hw; ++j) dst[j] = src[j] * k; break;
      case ChannelOp::Div: for (std::size_t j = 0; j < hw; ++j) dst[j] = src[j] / k; break;
    }
  }
  return make_op<T>(std::move(out), {x, s}, [op, planes, hw](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const auto& sv = self.parents[1]->value;
    const auto& g = self.grad;
    if (wants(self, 0)) {
      Tensor<T> gx = g;
      if (op == ChannelOp::Mul || op == ChannelOp::Div) {
        for (std::size_t i = 0; i < planes; ++i) {
          T* dst = gx.data() + i * hw;
          for (std::size_t j = 0; j < hw; ++j) dst[j] = op == ChannelOp::Mul ? dst[j] * sv[i] : dst[j] / sv[i];
        }
      }
      self.parents[0]->accumulate(gx);
    }
    if (wants(self, 1)) {
      Tensor<T> gs(sv.shape());
      for (std::size_t i = 0; i < planes; ++i) {
        const T* gp = g.data() + i * hw;
        const T* xp = xv.data() + i * hw;
        double acc = 0.0;
        switch (op) {
          case ChannelOp::Add: for (std::size_t j = 0; j < hw; ++j) acc += gp[j]; break;
          case ChannelOp::Sub: for (std::size_t j = 0; j < hw; ++j) acc -= gp[j]; break;
          case ChannelOp::Mul: for (std::size_t j = 0; j < hw; ++j) acc += gp[j] * xp[j]; break;
          case ChannelOp::Div:
            for (std::size_t j = 0; j < hw; ++j) acc -= gp[j] * xp[j];
            acc /= static_cast<double>(sv[i]) * static_cast<double>(sv[i]);
            break;
        }
        gs[i] = static_cast<T>(acc);
      }
      self.parents[1]->accumulate(gs);
    }
  });
}

template <typename T>
Var<T> l2_norm(const Var<T>& x) {
  const double norm = l2_norm(x.value());
  return make_op<T>(Tensor<T>({1}, static_cast<T>(norm)), {x}, [norm](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    Tensor<T> g(xv.shape());
    if (norm > 0.0) {
      const T k = static_cast<T>(static_cast<double>(self.grad[0]) / norm);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] = k * xv[i];
    }
    self.parents[0]->accumulate(g);
  });
}

template <typename T>
Var<T> sum_squares(const Var<T>& x) {
  double s = 0.0;
  for (T v : x.value().values()) s += static_cast<double>(v) * static_cast<double>(v);
  return make_op<T>(Tensor<T>({1}, static_cast<T>(s)), {x}, [](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    Tensor<T> g(xv.shape());
    const T k = T(2) * self.grad[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] = k * xv[i];
    self.parents[0]->accumulate(g);
  });
}

template <typename T>
Var<T> max_pool2(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() != 4 || xv.height() % 2 != 0 || xv.width() % 2 != 0) {
    throw ShapeError("max_pool2: spatial dims must be even, got " + shape_str(xv.shape()));
  }
  const std::size_t planes = xv.batch() * xv.channels(), h = xv.height(), w = xv.width();
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out({xv.batch(), xv.channels(), oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = p * oh * ow + oy * ow + ox;
        out[o] = src[best];
        argmax[o] = p * h * w + best;
      }
    }
  }
  return make_op<T>(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& self) {
    Tensor<T> g(self.parents[0]->value.shape());
    for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
    self.parents[0]->accumulate(g);
  });
}

template <typename T>
Var<T> upsample2(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("upsample2: expected rank-4 tensor");
  const std::size_t planes = xv.batch() * xv.channels(), h = xv.height(), w = xv.width();
  Tensor<T> out({xv.batch(), xv.channels(), 2 * h, 2 * w});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * h * w;
    T* dst = out.data() + p * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
    }
  }
  return make_op<T>(std::move(out), {x}, [planes, h, w](Node<T>& self) {
    Tensor<T> g(self.parents[0]->value.shape());
    for (std::size_t p = 0; p < planes; ++p) {
      const T* src = self.grad.data() + p * 4 * h * w;
      T* dst = g.data() + p * h * w;
      for (std::size_t y = 0; y < 2 * h; ++y) {
        for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
      }
    }
    self.parents[0]->accumulate(g);
  });
}

template <typename T>
double scalar(const Var<T>& v) {
  if (v.value().numel() != 1) throw ShapeError("scalar: value has " + std::to_string(v.value().numel()) + " elements");
  return static_cast<double>(v.value()[0]);
}

template <typename T>
ConvLayer<T> make_conv(Rng& rng, std::size_t cin, std::size_t cout, std::size_t k, Conv2dSpec spec, double gain) {
  const double stddev = gain / std::sqrt(static_cast<double>(cin * k * k));
  Tensor<T> kernel({cout, cin, k, k});
  if (gain != 0.0) kernel = rng.normal_tensor<T>({cout, cin, k, k}, stddev);
  return {Var<T>::parameter(std::move(kernel)), Var<T>::parameter(Tensor<T>({cout})), spec};
}

#define FLOWSTEG_INSTANTIATE(T)                                                                   \
  template struct Node<T>;                                                                         \
  template class Var<T>;                                                                           \
  template void backward<T>(const Var<T>&);                                                        \
  template Var<T> make_op<T>(Tensor<T>, const std::vector<Var<T>>&, std::function<void(Node<T>&)>); \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, Conv2dSpec);              \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                                 \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                            \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                            \
  template Var<T> scale<T>(const Var<T>&, T);                                                      \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> slice_channels<T>(const Var<T>&, std::size_t, std::size_t);                      \
  template Var<T> squeeze<T>(const Var<T>&, std::size_t);                                          \
  template Var<T> unsqueeze<T>(const Var<T>&, std::size_t);                                        \
  template Var<T> channel_mean<T>(const Var<T>&);                                                  \
  template Var<T> channel_std<T>(const Var<T>&, double);                                           \
  template Var<T> channel_apply<T>(const Var<T>&, const Var<T>&, ChannelOp);                       \
  template Var<T> l2_norm<T>(const Var<T>&);                                                       \
  template Var<T> sum_squares<T>(const Var<T>&);                                                   \
  template Var<T> max_pool2<T>(const Var<T>&);                                                     \
  template Var<T> upsample2<T>(const Var<T>&);                                                     \
  template double scalar<T>(const Var<T>&);                                                        \
  template ConvLayer<T> make_conv<T>(Rng&, std::size_t, std::size_t, std::size_t, Conv2dSpec, double);

FLOWSTEG_INSTANTIATE(float)
FLOWSTEG_INSTANTIATE(double)

}  // namespace flowsteg
