#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "deid/common.hpp"

namespace deid {

template <typename Real>
struct TensorImpl {
  std::vector<int> shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl<Real>>> parents;
  std::function<void()> backward_fn;

  std::int64_t size() const {
    std::int64_t n = 1;
    for (int s : shape) n *= s;
    return n;
  }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

/// Value-semantics handle over an autograd node. Tensors are immutable once
/// created; operations build new nodes. Mutation is restricted to
/// `mutable_value`, reserved for the optimizer which owns its parameters.
template <typename Real>
class Tensor {
 public:
  using Impl = TensorImpl<Real>;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), Real(0), requires_grad);
  }

  static Tensor filled(std::vector<int> shape, Real v, bool requires_grad = false) {
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->value.assign(static_cast<std::size_t>(impl->size()), v);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor from_data(std::vector<int> shape, std::vector<Real> data,
                          bool requires_grad = false) {
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->value = std::move(data);
    impl->requires_grad = requires_grad;
    if (static_cast<std::int64_t>(impl->value.size()) != impl->size())
      throw DimensionError("tensor: data length " + std::to_string(impl->value.size()) +
                           " does not match shape product " + std::to_string(impl->size()));
    return Tensor(std::move(impl));
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  /// Graph-building entry point used by operations.
  static Tensor make_node(std::vector<int> shape, std::vector<Real> value,
                          std::vector<Tensor> parents,
                          std::function<void()> backward_fn) {
    auto t = from_data(std::move(shape), std::move(value), false);
    bool rg = false;
    for (auto& p : parents) {
      t.impl_->parents.push_back(p.impl_);
      rg = rg || p.requires_grad();
    }
    t.impl_->requires_grad = rg;
    if (rg) t.impl_->backward_fn = std::move(backward_fn);
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  std::int64_t size() const { return impl_->size(); }
  const std::vector<Real>& value() const { return impl_->value; }
  std::vector<Real>& mutable_value() { return impl_->value; }
  const std::vector<Real>& grad() const { return impl_->grad; }
  bool requires_grad() const { return impl_ && impl_->requires_grad; }

  Real item() const {
    if (size() != 1) throw DimensionError("tensor: item() requires a scalar, got size " +
                                          std::to_string(size()));
    return impl_->value[0];
  }

  void zero_grad() {
    if (impl_) impl_->grad.clear();
  }

  /// Leaf copy sharing no graph history.
  Tensor detach() const { return from_data(shape(), value(), false); }

  Impl* impl() const { return impl_.get(); }
  std::shared_ptr<Impl> impl_ptr() const { return impl_; }

  /// Reverse-mode sweep from a scalar node. Gradients accumulate into every
  /// reachable node with requires_grad; call zero_grad on parameters between
  /// steps.
  void backward() const {
    if (size() != 1)
      throw DimensionError("backward: output must be scalar, got size " +
                           std::to_string(size()));
    if (!requires_grad()) return;

    std::vector<Impl*> order;
    std::unordered_set<Impl*> seen;
    std::vector<std::pair<Impl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    seen.insert(impl_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Impl* p = node->parents[idx].get();
        ++idx;
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    impl_->ensure_grad();
    impl_->grad[0] = Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Impl* node = *it;
      if (node->backward_fn && !node->grad.empty()) node->backward_fn();
    }
  }

 private:
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace deid
