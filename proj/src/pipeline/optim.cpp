#include "flowsteg/optim.hpp"

#include <cmath>
#include <string>

#include "flowsteg/flow.hpp"
#include "flowsteg/linalg.hpp"

namespace flowsteg {

template <typename T>
Adam<T>::Adam(ParamList<T> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0) || !(config_.beta1 >= 0.0 && config_.beta1 < 1.0) ||
      !(config_.beta2 >= 0.0 && config_.beta2 < 1.0) || !(config_.eps > 0.0)) {
    throw ConfigError("invalid optimizer settings");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.var.value().numel(), 0.0);
    v_.emplace_back(p.var.value().numel(), 0.0);
  }
}

template <typename T>
void Adam<T>::step() {
  const std::size_t t = t_ + 1;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t));

  std::vector<Tensor<T>> next_value(params_.size());
  std::vector<std::vector<double>> next_m(params_.size()), next_v(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Var<T>& p = params_[i].var;
    next_value[i] = p.value();
    next_m[i] = m_[i];
    next_v[i] = v_[i];
    if (!p.has_grad()) {
      // Zero gradient: moments decay, parameter moves by the decayed momentum.
      for (auto& m : next_m[i]) m *= config_.beta1;
      for (auto& v : next_v[i]) v *= config_.beta2;
    } else {
      const Tensor<T> g = p.grad();
      for (std::size_t j = 0; j < g.numel(); ++j) {
        const double gj = static_cast<double>(g[j]);
        next_m[i][j] = config_.beta1 * next_m[i][j] + (1.0 - config_.beta1) * gj;
        next_v[i][j] = config_.beta2 * next_v[i][j] + (1.0 - config_.beta2) * gj * gj;
      }
    }
    T* dst = next_value[i].data();
    for (std::size_t j = 0; j < next_value[i].numel(); ++j) {
      const double mh = next_m[i][j] / c1;
      const double vh = next_v[i][j] / c2;
      dst[j] = static_cast<T>(static_cast<double>(dst[j]) - config_.lr * mh / (std::sqrt(vh) + config_.eps));
    }
    if (params_[i].kind == ParamKind::InvConvMatrix) {
      const std::size_t n = next_value[i].dim(0);
      const double det = LuDecomposition(std::span<const T>(next_value[i].values()), n).determinant();
      if (!(std::abs(det) >= kMinInvConvDeterminant)) {
        throw SingularMatrix("update would make " + params_[i].name + " singular (det " + std::to_string(det) + ")");
      }
    }
  }

  for (std::size_t i = 0; i < params_.size(); ++i) {
    params_[i].var.mutable_value() = std::move(next_value[i]);
    m_[i] = std::move(next_m[i]);
    v_[i] = std::move(next_v[i]);
  }
  t_ = t;
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace flowsteg
