#pragma once

#include <functional>
#include <string>
#include <vector>

#include "deid/tensor.hpp"

namespace deid {

class OptimizerError : public Error {
 public:
  explicit OptimizerError(const std::string& msg) : Error(msg) {}
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Parameter tensors are updated in place; the
/// optimizer owns the moment buffers. Non-finite gradients abort the step
/// before any state is touched.
template <typename Real>
class Adam {
 public:
  Adam(std::vector<Tensor<Real>> params, AdamConfig cfg);

  void step();
  void zero_grad();
  int step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  std::vector<Tensor<Real>> params_;
  std::vector<std::vector<Real>> m_;
  std::vector<std::vector<Real>> v_;
  AdamConfig cfg_;
  int t_ = 0;
};

/// Central-difference gradient verification. Returns the max over coordinates
/// of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
template <typename Real>
Real grad_check(const std::function<Tensor<Real>(const Tensor<Real>&)>& f, const Tensor<Real>& x,
                Real eps);

extern template class Adam<float>;
extern template class Adam<double>;
extern template float grad_check<float>(const std::function<Tensorf(const Tensorf&)>&,
                                         const Tensorf&, float);
extern template double grad_check<double>(const std::function<Tensord(const Tensord&)>&,
                                          const Tensord&, double);

}  // namespace deid
