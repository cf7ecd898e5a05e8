#pragma once

#include <cstddef>
#include <vector>

#include "flowsteg/autograd.hpp"

namespace flowsteg {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer over a fixed parameter list. Parameters that
/// received no gradient are treated as having a zero gradient.
template <typename T>
class Adam {
 public:
  Adam(ParamList<T> params, AdamConfig config);

  /// Applies one update from the accumulated gradients. The update is first
  /// computed in full; if any InvConvMatrix parameter would end with
  /// |det| < kMinInvConvDeterminant, SingularMatrix is thrown and neither
  /// parameters nor moments change.
  void step();
  void zero_grad();

  std::size_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }
  const ParamList<T>& params() const noexcept { return params_; }

 private:
  ParamList<T> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace flowsteg
