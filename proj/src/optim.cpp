#include "deid/optim.hpp"

#include <cmath>

namespace deid {

template <typename Real>
Adam<Real>::Adam(std::vector<Tensor<Real>> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (auto& p : params_) {
    m_.emplace_back(p.value().size(), Real(0));
    v_.emplace_back(p.value().size(), Real(0));
  }
}

template <typename Real>
void Adam<Real>::step() {
  for (auto& p : params_) {
    if (p.grad().empty()) continue;
    for (Real g : p.grad())
      if (!std::isfinite(static_cast<double>(g)))
        throw OptimizerError("adam: non-finite gradient, step aborted");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (p.grad().empty()) continue;
    auto& val = p.mutable_value();
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = p.grad();
    for (std::size_t j = 0; j < val.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
      const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      val[j] = static_cast<Real>(static_cast<double>(val[j]) -
                                 cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

template <typename Real>
void Adam<Real>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename Real>
Real grad_check(const std::function<Tensor<Real>(const Tensor<Real>&)>& f, const Tensor<Real>& x,
                Real eps) {
  auto leaf = Tensor<Real>::from_data(x.shape(), x.value(), true);
  auto y = f(leaf);
  if (y.size() != 1) throw DimensionError("grad_check: f must return a scalar");
  if (!std::isfinite(static_cast<double>(y.item())))
    throw NumericError("grad_check: evaluation error, f(x) is not finite");
  y.backward();
  std::vector<Real> analytic(leaf.size(), Real(0));
  if (!leaf.grad().empty()) analytic = leaf.grad();

  Real max_rel = Real(0);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    auto plus = x.value();
    auto minus = x.value();
    plus[i] += eps;
    minus[i] -= eps;
    const auto fp = f(Tensor<Real>::from_data(x.shape(), std::move(plus), false));
    const auto fm = f(Tensor<Real>::from_data(x.shape(), std::move(minus), false));
    const double vp = static_cast<double>(fp.item());
    const double vm = static_cast<double>(fm.item());
    if (!std::isfinite(vp) || !std::isfinite(vm))
      throw NumericError("grad_check: evaluation error, f(x +/- eps) is not finite");
    const double numeric = (vp - vm) / (2.0 * static_cast<double>(eps));
    const double a = static_cast<double>(analytic[i]);
    const double denom = std::max(1e-8, std::abs(a) + std::abs(numeric));
    const double rel = std::abs(a - numeric) / denom;
    max_rel = std::max(max_rel, static_cast<Real>(rel));
  }
  return max_rel;
}

template class Adam<float>;
template class Adam<double>;
template float grad_check<float>(const std::function<Tensorf(const Tensorf&)>&, const Tensorf&,
                                 float);
template double grad_check<double>(const std::function<Tensord(const Tensord&)>&, const Tensord&,
                                   double);

}  // namespace deid
