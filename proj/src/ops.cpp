#include "deid/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "deid/kernels.hpp"

namespace deid::ops {

namespace {

template <typename Real>
using Impl = TensorImpl<Real>;

template <typename Real>
std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() == b.shape()) return;
  const std::size_t ranks = std::max(a.shape().size(), b.shape().size());
  for (std::size_t i = 0; i < ranks; ++i) {
    const int da = i < a.shape().size() ? a.shape()[i] : -1;
    const int db = i < b.shape().size() ? b.shape()[i] : -1;
    if (da != db)
      throw DimensionError(std::string(op) + ": shape mismatch on axis " + std::to_string(i) +
                           " (" + std::to_string(da) + " vs " + std::to_string(db) + ")");
  }
}

template <typename Real>
std::int64_t spatial_size(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) n *= shape[i];
  return n;
}

// Builds a node and hands the backward closure the node's own impl plus the
// parents' impls. Parents stay alive through the node's parent list.
template <typename Real, typename Fn>
Tensor<Real> node1(const Tensor<Real>& a, std::vector<int> shape, std::vector<Real> value, Fn fn) {
  auto t = Tensor<Real>::make_node(std::move(shape), std::move(value), {a}, nullptr);
  if (t.requires_grad()) {
    Impl<Real>* self = t.impl();
    Impl<Real>* ai = a.impl();
    self->backward_fn = [self, ai, fn]() { fn(self, ai); };
  }
  return t;
}

template <typename Real, typename Fn>
Tensor<Real> node2(const Tensor<Real>& a, const Tensor<Real>& b, std::vector<int> shape,
                   std::vector<Real> value, Fn fn) {
  auto t = Tensor<Real>::make_node(std::move(shape), std::move(value), {a, b}, nullptr);
  if (t.requires_grad()) {
    Impl<Real>* self = t.impl();
    Impl<Real>* ai = a.impl();
    Impl<Real>* bi = b.impl();
    self->backward_fn = [self, ai, bi, fn]() { fn(self, ai, bi); };
  }
  return t;
}

template <typename Real, typename Fn>
Tensor<Real> node3(const Tensor<Real>& a, const Tensor<Real>& b, const Tensor<Real>& c,
                   std::vector<int> shape, std::vector<Real> value, Fn fn) {
  auto t = Tensor<Real>::make_node(std::move(shape), std::move(value), {a, b, c}, nullptr);
  if (t.requires_grad()) {
    Impl<Real>* self = t.impl();
    Impl<Real>* ai = a.impl();
    Impl<Real>* bi = b.impl();
    Impl<Real>* ci = c.impl();
    self->backward_fn = [self, ai, bi, ci, fn]() { fn(self, ai, bi, ci); };
  }
  return t;
}

}  // namespace

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return node2(a, b, a.shape(), std::move(out), [](Impl<Real>* self, Impl<Real>* ai, Impl<Real>* bi) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) ai->grad[i] += self->grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) bi->grad[i] += self->grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "sub");
  std::vector<Real> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return node2(a, b, a.shape(), std::move(out), [](Impl<Real>* self, Impl<Real>* ai, Impl<Real>* bi) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) ai->grad[i] += self->grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) bi->grad[i] -= self->grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return node2(a, b, a.shape(), std::move(out), [](Impl<Real>* self, Impl<Real>* ai, Impl<Real>* bi) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) ai->grad[i] += self->grad[i] * bi->value[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) bi->grad[i] += self->grad[i] * ai->value[i];
    }
  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
  std::vector<Real> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
  return node1(a, a.shape(), std::move(out), [c](Impl<Real>* self, Impl<Real>* ai) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) ai->grad[i] += self->grad[i] * c;
  });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  std::vector<Real> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > Real(0) ? a.value()[i] : Real(0);
  return node1(a, a.shape(), std::move(out), [](Impl<Real>* self, Impl<Real>* ai) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      if (ai->value[i] > Real(0)) ai->grad[i] += self->grad[i];
  });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
  std::vector<Real> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = static_cast<double>(a.value()[i]);
    out[i] = static_cast<Real>(1.0 / (1.0 + std::exp(-x)));
  }
  return node1(a, a.shape(), std::move(out), [](Impl<Real>* self, Impl<Real>* ai) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) {
      const Real y = self->value[i];
      ai->grad[i] += self->grad[i] * y * (Real(1) - y);
    }
  });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, std::vector<int> shape) {
  std::int64_t n = 1;
  for (int s : shape) n *= s;
  if (n != a.size())
    throw DimensionError("reshape: size " + std::to_string(a.size()) + " incompatible with " +
                         shape_str<Real>(shape));
  std::vector<Real> out = a.value();
  return node1(a, std::move(shape), std::move(out), [](Impl<Real>* self, Impl<Real>* ai) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) ai->grad[i] += self->grad[i];
  });
}

template <typename Real>
Tensor<Real> sum_all(const Tensor<Real>& a) {
  double acc = 0.0;
  for (Real v : a.value()) acc += static_cast<double>(v);
  return node1(a, {1}, {static_cast<Real>(acc)}, [](Impl<Real>* self, Impl<Real>* ai) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    const Real g = self->grad[0];
    for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += g;
  });
}

template <typename Real>
Tensor<Real> mean_all(const Tensor<Real>& a) {
  double acc = 0.0;
  for (Real v : a.value()) acc += static_cast<double>(v);
  const double inv = 1.0 / static_cast<double>(a.size());
  return node1(a, {1}, {static_cast<Real>(acc * inv)}, [inv](Impl<Real>* self, Impl<Real>* ai) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    const Real g = static_cast<Real>(self->grad[0] * inv);
    for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += g;
  });
}

template <typename Real>
Tensor<Real> mse_loss(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "mse_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const double d = static_cast<double>(a.value()[i]) - static_cast<double>(b.value()[i]);
    acc += d * d;
  }
  const double inv = 1.0 / static_cast<double>(a.size());
  return node2(a, b, {1}, {static_cast<Real>(acc * inv)},
               [inv](Impl<Real>* self, Impl<Real>* ai, Impl<Real>* bi) {
                 const Real g = static_cast<Real>(self->grad[0] * 2.0 * inv);
                 if (ai->requires_grad) {
                   ai->ensure_grad();
                   for (std::size_t i = 0; i < ai->grad.size(); ++i)
                     ai->grad[i] += g * (ai->value[i] - bi->value[i]);
                 }
                 if (bi->requires_grad) {
                   bi->ensure_grad();
                   for (std::size_t i = 0; i < bi->grad.size(); ++i)
                     bi->grad[i] -= g * (ai->value[i] - bi->value[i]);
                 }
               });
}

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw DimensionError("matmul: expects rank-2 operands");
  if (a.shape()[1] != b.shape()[0])
    throw DimensionError("matmul: shape mismatch on axis 1 (" + std::to_string(a.shape()[1]) +
                         " vs " + std::to_string(b.shape()[0]) + ")");
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<Real> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t)
        acc += static_cast<double>(a.value()[i * k + t]) * static_cast<double>(b.value()[t * n + j]);
      out[static_cast<std::size_t>(i) * n + j] = static_cast<Real>(acc);
    }
  return node2(a, b, {m, n}, std::move(out),
               [m, k, n](Impl<Real>* self, Impl<Real>* ai, Impl<Real>* bi) {
                 if (ai->requires_grad) {
                   ai->ensure_grad();
                   for (int i = 0; i < m; ++i)
                     for (int t = 0; t < k; ++t) {
                       double acc = 0.0;
                       for (int j = 0; j < n; ++j)
                         acc += static_cast<double>(self->grad[i * n + j]) *
                                static_cast<double>(bi->value[t * n + j]);
                       ai->grad[i * k + t] += static_cast<Real>(acc);
                     }
                 }
                 if (bi->requires_grad) {
                   bi->ensure_grad();
                   for (int t = 0; t < k; ++t)
                     for (int j = 0; j < n; ++j) {
                       double acc = 0.0;
                       for (int i = 0; i < m; ++i)
                         acc += static_cast<double>(ai->value[i * k + t]) *
                                static_cast<double>(self->grad[i * n + j]);
                       bi->grad[t * n + j] += static_cast<Real>(acc);
                     }
                 }
               });
}

template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& b) {
  if (x.shape().size() < 2)
    throw DimensionError("add_bias: input needs a channel axis");
  const int c = x.shape()[1];
  if (b.shape().size() != 1 || b.shape()[0] != c)
    throw DimensionError("add_bias: bias length " + std::to_string(b.size()) +
                         " does not match channels " + std::to_string(c) + " on axis 1");
  const std::int64_t sp = spatial_size<Real>(x.shape());
  const int n = x.shape()[0];
  std::vector<Real> out(x.value().size());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::int64_t base = (static_cast<std::int64_t>(i) * c + ch) * sp;
      const Real bv = b.value()[ch];
      for (std::int64_t s = 0; s < sp; ++s) out[base + s] = x.value()[base + s] + bv;
    }
  return node2(x, b, x.shape(), std::move(out),
               [n, c, sp](Impl<Real>* self, Impl<Real>* xi, Impl<Real>* bi) {
                 if (xi->requires_grad) {
                   xi->ensure_grad();
                   for (std::size_t i = 0; i < self->grad.size(); ++i) xi->grad[i] += self->grad[i];
                 }
                 if (bi->requires_grad) {
                   bi->ensure_grad();
                   for (int ch = 0; ch < c; ++ch) {
                     double acc = 0.0;
                     for (int i = 0; i < n; ++i) {
                       const std::int64_t base = (static_cast<std::int64_t>(i) * c + ch) * sp;
                       for (std::int64_t s = 0; s < sp; ++s)
                         acc += static_cast<double>(self->grad[base + s]);
                     }
                     bi->grad[ch] += static_cast<Real>(acc);
                   }
                 }
               });
}

template <typename Real>
Tensor<Real> add_channel_vec(const Tensor<Real>& x, const Tensor<Real>& v) {
  if (x.shape().size() < 2 || v.shape().size() != 2)
    throw DimensionError("add_channel_vec: expects x[N,C,...] and v[N,C]");
  const int n = x.shape()[0], c = x.shape()[1];
  if (v.shape()[0] != n)
    throw DimensionError("add_channel_vec: shape mismatch on axis 0 (" + std::to_string(n) +
                         " vs " + std::to_string(v.shape()[0]) + ")");
  if (v.shape()[1] != c)
    throw DimensionError("add_channel_vec: shape mismatch on axis 1 (" + std::to_string(c) +
                         " vs " + std::to_string(v.shape()[1]) + ")");
  const std::int64_t sp = spatial_size<Real>(x.shape());
  std::vector<Real> out(x.value().size());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::int64_t base = (static_cast<std::int64_t>(i) * c + ch) * sp;
      const Real add_v = v.value()[static_cast<std::size_t>(i) * c + ch];
      for (std::int64_t s = 0; s < sp; ++s) out[base + s] = x.value()[base + s] + add_v;
    }
  return node2(x, v, x.shape(), std::move(out),
               [n, c, sp](Impl<Real>* self, Impl<Real>* xi, Impl<Real>* vi) {
                 if (xi->requires_grad) {
                   xi->ensure_grad();
                   for (std::size_t i = 0; i < self->grad.size(); ++i) xi->grad[i] += self->grad[i];
                 }
                 if (vi->requires_grad) {
                   vi->ensure_grad();
                   for (int i = 0; i < n; ++i)
                     for (int ch = 0; ch < c; ++ch) {
                       const std::int64_t base = (static_cast<std::int64_t>(i) * c + ch) * sp;
                       double acc = 0.0;
                       for (std::int64_t s = 0; s < sp; ++s)
                         acc += static_cast<double>(self->grad[base + s]);
                       vi->grad[static_cast<std::size_t>(i) * c + ch] += static_cast<Real>(acc);
                     }
                 }
               });
}

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape().size() != b.shape().size() || a.shape().size() < 2)
    throw DimensionError("concat_channels: rank mismatch");
  for (std::size_t i = 0; i < a.shape().size(); ++i) {
    if (i == 1) continue;
    if (a.shape()[i] != b.shape()[i])
      throw DimensionError("concat_channels: shape mismatch on axis " + std::to_string(i) + " (" +
                           std::to_string(a.shape()[i]) + " vs " + std::to_string(b.shape()[i]) + ")");
  }
  const int n = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  const std::int64_t sp = spatial_size<Real>(a.shape());
  std::vector<int> shape = a.shape();
  shape[1] = ca + cb;
  std::vector<Real> out(static_cast<std::size_t>(n) * (ca + cb) * sp);
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.value().begin() + static_cast<std::int64_t>(i) * ca * sp, ca * sp,
                out.begin() + static_cast<std::int64_t>(i) * (ca + cb) * sp);
    std::copy_n(b.value().begin() + static_cast<std::int64_t>(i) * cb * sp, cb * sp,
                out.begin() + static_cast<std::int64_t>(i) * (ca + cb) * sp + ca * sp);
  }
  return node2(a, b, std::move(shape), std::move(out),
               [n, ca, cb, sp](Impl<Real>* self, Impl<Real>* ai, Impl<Real>* bi) {
                 if (ai->requires_grad) {
                   ai->ensure_grad();
                   for (int i = 0; i < n; ++i) {
                     const std::int64_t src = static_cast<std::int64_t>(i) * (ca + cb) * sp;
                     const std::int64_t dst = static_cast<std::int64_t>(i) * ca * sp;
                     for (std::int64_t s = 0; s < ca * sp; ++s) ai->grad[dst + s] += self->grad[src + s];
                   }
                 }
                 if (bi->requires_grad) {
                   bi->ensure_grad();
                   for (int i = 0; i < n; ++i) {
                     const std::int64_t src = static_cast<std::int64_t>(i) * (ca + cb) * sp + ca * sp;
                     const std::int64_t dst = static_cast<std::int64_t>(i) * cb * sp;
                     for (std::int64_t s = 0; s < cb * sp; ++s) bi->grad[dst + s] += self->grad[src + s];
                   }
                 }
               });
}

template <typename Real>
Tensor<Real> conv3d(const Tensor<Real>& x, const Tensor<Real>& w, int stride, int pad) {
  if (x.shape().size() != 5) throw DimensionError("conv3d: input must be rank 5 [N,C,D,H,W]");
  if (w.shape().size() != 5) throw DimensionError("conv3d: kernel must be rank 5 [Co,Ci,k,k,k]");
  if (w.shape()[2] != w.shape()[3] || w.shape()[2] != w.shape()[4])
    throw DimensionError("conv3d: kernel must be cubic");
  if (w.shape()[2] % 2 == 0) throw DimensionError("conv3d: kernel size must be odd");
  if (stride < 1) throw DimensionError("conv3d: stride must be >= 1");
  if (x.shape()[1] != w.shape()[1])
    throw DimensionError("conv3d: shape mismatch on axis 1 (input channels " +
                         std::to_string(x.shape()[1]) + " vs kernel channels " +
                         std::to_string(w.shape()[1]) + ")");
  kernels::Conv3dShape s;
  s.n = x.shape()[0];
  s.c_in = x.shape()[1];
  s.d = x.shape()[2];
  s.h = x.shape()[3];
  s.w = x.shape()[4];
  s.c_out = w.shape()[0];
  s.k = w.shape()[2];
  s.stride = stride;
  s.pad = pad;
  s.od = kernels::conv_out_dim(s.d, s.k, stride, pad);
  s.oh = kernels::conv_out_dim(s.h, s.k, stride, pad);
  s.ow = kernels::conv_out_dim(s.w, s.k, stride, pad);
  if (s.od < 1 || s.oh < 1 || s.ow < 1)
    throw DimensionError("conv3d: spatial input smaller than kernel on axis 2");
  std::vector<Real> out(static_cast<std::size_t>(s.n) * s.c_out * s.od * s.oh * s.ow);
  kernels::conv3d_forward(x.value().data(), w.value().data(), out.data(), s);
  return node2(x, w, {s.n, s.c_out, s.od, s.oh, s.ow}, std::move(out),
               [s](Impl<Real>* self, Impl<Real>* xi, Impl<Real>* wi) {
                 if (xi->requires_grad) {
                   xi->ensure_grad();
                   kernels::conv3d_backward_input(self->grad.data(), wi->value.data(),
                                                  xi->grad.data(), s);
                 }
                 if (wi->requires_grad) {
                   wi->ensure_grad();
                   kernels::conv3d_backward_weight(self->grad.data(), xi->value.data(),
                                                   wi->grad.data(), s);
                 }
               });
}

template <typename Real>
Tensor<Real> conv_transpose3d(const Tensor<Real>& x, const Tensor<Real>& w, int stride, int pad,
                              int out_pad) {
  if (x.shape().size() != 5) throw DimensionError("conv_transpose3d: input must be rank 5");
  if (w.shape().size() != 5) throw DimensionError("conv_transpose3d: kernel must be rank 5 [Ci,Co,k,k,k]");
  if (x.shape()[1] != w.shape()[0])
    throw DimensionError("conv_transpose3d: shape mismatch on axis 1 (input channels " +
                         std::to_string(x.shape()[1]) + " vs kernel channels " +
                         std::to_string(w.shape()[0]) + ")");
  if (out_pad >= stride)
    throw DimensionError("conv_transpose3d: output padding must be < stride");
  kernels::ConvT3dShape s;
  s.n = x.shape()[0];
  s.c_in = x.shape()[1];
  s.d = x.shape()[2];
  s.h = x.shape()[3];
  s.w = x.shape()[4];
  s.c_out = w.shape()[1];
  s.k = w.shape()[2];
  s.stride = stride;
  s.pad = pad;
  s.out_pad = out_pad;
  s.od = kernels::convt_out_dim(s.d, s.k, stride, pad, out_pad);
  s.oh = kernels::convt_out_dim(s.h, s.k, stride, pad, out_pad);
  s.ow = kernels::convt_out_dim(s.w, s.k, stride, pad, out_pad);
  std::vector<Real> out(static_cast<std::size_t>(s.n) * s.c_out * s.od * s.oh * s.ow);
  kernels::convt3d_forward(x.value().data(), w.value().data(), out.data(), s);
  return node2(x, w, {s.n, s.c_out, s.od, s.oh, s.ow}, std::move(out),
               [s](Impl<Real>* self, Impl<Real>* xi, Impl<Real>* wi) {
                 if (xi->requires_grad) {
                   xi->ensure_grad();
                   kernels::convt3d_backward_input(self->grad.data(), wi->value.data(),
                                                   xi->grad.data(), s);
                 }
                 if (wi->requires_grad) {
                   wi->ensure_grad();
                   kernels::convt3d_backward_weight(self->grad.data(), xi->value.data(),
                                                    wi->grad.data(), s);
                 }
               });
}

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, int stride, int pad) {
  if (x.shape().size() != 4) throw DimensionError("conv2d: input must be rank 4 [N,C,H,W]");
  if (w.shape().size() != 4) throw DimensionError("conv2d: kernel must be rank 4 [Co,Ci,k,k]");
  if (w.shape()[2] != w.shape()[3]) throw DimensionError("conv2d: kernel must be square");
  if (x.shape()[1] != w.shape()[1])
    throw DimensionError("conv2d: shape mismatch on axis 1 (input channels " +
                         std::to_string(x.shape()[1]) + " vs kernel channels " +
                         std::to_string(w.shape()[1]) + ")");
  kernels::Conv2dShape s;
  s.n = x.shape()[0];
  s.c_in = x.shape()[1];
  s.h = x.shape()[2];
  s.w = x.shape()[3];
  s.c_out = w.shape()[0];
  s.k = w.shape()[2];
  s.stride = stride;
  s.pad = pad;
  s.oh = kernels::conv_out_dim(s.h, s.k, stride, pad);
  s.ow = kernels::conv_out_dim(s.w, s.k, stride, pad);
  if (s.oh < 1 || s.ow < 1)
    throw DimensionError("conv2d: spatial input smaller than kernel on axis 2");
  std::vector<Real> out(static_cast<std::size_t>(s.n) * s.c_out * s.oh * s.ow);
  kernels::conv2d_forward(x.value().data(), w.value().data(), out.data(), s);
  return node2(x, w, {s.n, s.c_out, s.oh, s.ow}, std::move(out),
               [s](Impl<Real>* self, Impl<Real>* xi, Impl<Real>* wi) {
                 if (xi->requires_grad) {
                   xi->ensure_grad();
                   kernels::conv2d_backward_input(self->grad.data(), wi->value.data(),
                                                  xi->grad.data(), s);
                 }
                 if (wi->requires_grad) {
                   wi->ensure_grad();
                   kernels::conv2d_backward_weight(self->grad.data(), xi->value.data(),
                                                   wi->grad.data(), s);
                 }
               });
}

template <typename Real>
Tensor<Real> group_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        int groups, Real eps) {
  if (x.shape().size() < 2) throw DimensionError("group_norm: input needs a channel axis");
  const int n = x.shape()[0], c = x.shape()[1];
  if (groups < 1 || c % groups != 0)
    throw DimensionError("group_norm: channels " + std::to_string(c) +
                         " not divisible by groups " + std::to_string(groups));
  if (gamma.size() != c || beta.size() != c)
    throw DimensionError("group_norm: affine parameters must have length " + std::to_string(c));
  const std::int64_t sp = spatial_size<Real>(x.shape());
  const int cg = c / groups;
  const std::int64_t gsize = static_cast<std::int64_t>(cg) * sp;

  std::vector<Real> out(x.value().size());
  std::vector<double> means(static_cast<std::size_t>(n) * groups);
  std::vector<double> inv_stds(static_cast<std::size_t>(n) * groups);
  for (int i = 0; i < n; ++i)
    for (int g = 0; g < groups; ++g) {
      const std::int64_t base = (static_cast<std::int64_t>(i) * c + static_cast<std::int64_t>(g) * cg) * sp;
      double mean = 0.0;
      for (std::int64_t s = 0; s < gsize; ++s) mean += static_cast<double>(x.value()[base + s]);
      mean /= static_cast<double>(gsize);
      double var = 0.0;
      for (std::int64_t s = 0; s < gsize; ++s) {
        const double d = static_cast<double>(x.value()[base + s]) - mean;
        var += d * d;
      }
      var /= static_cast<double>(gsize);
      const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(eps));
      means[static_cast<std::size_t>(i) * groups + g] = mean;
      inv_stds[static_cast<std::size_t>(i) * groups + g] = inv_std;
      for (int ch = 0; ch < cg; ++ch) {
        const int cc = g * cg + ch;
        const double ga = static_cast<double>(gamma.value()[cc]);
        const double be = static_cast<double>(beta.value()[cc]);
        const std::int64_t cbase = (static_cast<std::int64_t>(i) * c + cc) * sp;
        for (std::int64_t s = 0; s < sp; ++s) {
          const double xh = (static_cast<double>(x.value()[cbase + s]) - mean) * inv_std;
          out[cbase + s] = static_cast<Real>(ga * xh + be);
        }
      }
    }

  return node3(x, gamma, beta, x.shape(), std::move(out),
               [n, c, groups, cg, sp, gsize, means, inv_stds](Impl<Real>* self, Impl<Real>* xi,
                                                              Impl<Real>* gi, Impl<Real>* bi) {
                 if (gi->requires_grad) {
                   gi->ensure_grad();
                   for (int cc = 0; cc < c; ++cc) {
                     double acc = 0.0;
                     for (int i = 0; i < n; ++i) {
                       const int g = cc / cg;
                       const double mean = means[static_cast<std::size_t>(i) * groups + g];
                       const double inv_std = inv_stds[static_cast<std::size_t>(i) * groups + g];
                       const std::int64_t cbase = (static_cast<std::int64_t>(i) * c + cc) * sp;
                       for (std::int64_t s = 0; s < sp; ++s) {
                         const double xh = (static_cast<double>(xi->value[cbase + s]) - mean) * inv_std;
                         acc += static_cast<double>(self->grad[cbase + s]) * xh;
                       }
                     }
                     gi->grad[cc] += static_cast<Real>(acc);
                   }
                 }
                 if (bi->requires_grad) {
                   bi->ensure_grad();
                   for (int cc = 0; cc < c; ++cc) {
                     double acc = 0.0;
                     for (int i = 0; i < n; ++i) {
                       const std::int64_t cbase = (static_cast<std::int64_t>(i) * c + cc) * sp;
                       for (std::int64_t s = 0; s < sp; ++s)
                         acc += static_cast<double>(self->grad[cbase + s]);
                     }
                     bi->grad[cc] += static_cast<Real>(acc);
                   }
                 }
                 if (xi->requires_grad) {
                   xi->ensure_grad();
                   for (int i = 0; i < n; ++i)
                     for (int g = 0; g < groups; ++g) {
                       const double mean = means[static_cast<std::size_t>(i) * groups + g];
                       const double inv_std = inv_stds[static_cast<std::size_t>(i) * groups + g];
                       double sum_dxh = 0.0;
                       double sum_dxh_xh = 0.0;
                       for (int ch = 0; ch < cg; ++ch) {
                         const int cc = g * cg + ch;
                         const double ga = static_cast<double>(gi->value[cc]);
                         const std::int64_t cbase = (static_cast<std::int64_t>(i) * c + cc) * sp;
                         for (std::int64_t s = 0; s < sp; ++s) {
                           const double dxh = static_cast<double>(self->grad[cbase + s]) * ga;
                           const double xh =
                               (static_cast<double>(xi->value[cbase + s]) - mean) * inv_std;
                           sum_dxh += dxh;
                           sum_dxh_xh += dxh * xh;
                         }
                       }
                       const double inv_m = 1.0 / static_cast<double>(gsize);
                       for (int ch = 0; ch < cg; ++ch) {
                         const int cc = g * cg + ch;
                         const double ga = static_cast<double>(gi->value[cc]);
                         const std::int64_t cbase = (static_cast<std::int64_t>(i) * c + cc) * sp;
                         for (std::int64_t s = 0; s < sp; ++s) {
                           const double dxh = static_cast<double>(self->grad[cbase + s]) * ga;
                           const double xh =
                               (static_cast<double>(xi->value[cbase + s]) - mean) * inv_std;
                           const double dx =
                               inv_std * (dxh - inv_m * sum_dxh - xh * inv_m * sum_dxh_xh);
                           xi->grad[cbase + s] += static_cast<Real>(dx);
                         }
                       }
                     }
                 }
               });
}

template <typename Real>
Tensor<Real> embed_codes(const Tensor<Real>& table, const std::vector<std::uint16_t>& codes,
                         int n, int d, int h, int w) {
  if (table.shape().size() != 2) throw DimensionError("embed_codes: table must be rank 2 [V,E]");
  const int v = table.shape()[0], e = table.shape()[1];
  const std::int64_t sp = static_cast<std::int64_t>(d) * h * w;
  if (static_cast<std::int64_t>(codes.size()) != static_cast<std::int64_t>(n) * sp)
    throw DimensionError("embed_codes: code count " + std::to_string(codes.size()) +
                         " does not match n*d*h*w");
  for (std::size_t i = 0; i < codes.size(); ++i)
    if (codes[i] >= v)
      throw Error("embed_codes: invalid code " + std::to_string(codes[i]) + " at site " +
                  std::to_string(i) + " (vocabulary " + std::to_string(v) + ")");
  std::vector<Real> out(static_cast<std::size_t>(n) * e * sp);
  for (int i = 0; i < n; ++i)
    for (std::int64_t s = 0; s < sp; ++s) {
      const int code = codes[static_cast<std::size_t>(i) * sp + s];
      for (int ch = 0; ch < e; ++ch)
        out[(static_cast<std::int64_t>(i) * e + ch) * sp + s] =
            table.value()[static_cast<std::size_t>(code) * e + ch];
    }
  auto codes_copy = codes;
  return node1(table, {n, e, d, h, w}, std::move(out),
               [n, e, sp, codes_copy](Impl<Real>* self, Impl<Real>* ti) {
                 if (!ti->requires_grad) return;
                 ti->ensure_grad();
                 for (int i = 0; i < n; ++i)
                   for (std::int64_t s = 0; s < sp; ++s) {
                     const int code = codes_copy[static_cast<std::size_t>(i) * sp + s];
                     for (int ch = 0; ch < e; ++ch)
                       ti->grad[static_cast<std::size_t>(code) * e + ch] +=
                           self->grad[(static_cast<std::int64_t>(i) * e + ch) * sp + s];
                   }
               });
}

template <typename Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits,
                                   const std::vector<std::uint16_t>& targets) {
  if (logits.shape().size() < 2)
    throw DimensionError("softmax_cross_entropy: logits need a class axis");
  const int n = logits.shape()[0], v = logits.shape()[1];
  const std::int64_t sp = spatial_size<Real>(logits.shape());
  const std::int64_t sites = static_cast<std::int64_t>(n) * sp;
  if (static_cast<std::int64_t>(targets.size()) != sites)
    throw DimensionError("softmax_cross_entropy: target count " + std::to_string(targets.size()) +
                         " does not match site count " + std::to_string(sites));
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (targets[i] >= v)
      throw Error("softmax_cross_entropy: invalid code " + std::to_string(targets[i]) +
                  " at site " + std::to_string(i));
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (std::int64_t s = 0; s < sp; ++s) {
      const std::int64_t base = static_cast<std::int64_t>(i) * v * sp + s;
      double mx = -1e300;
      for (int cl = 0; cl < v; ++cl)
        mx = std::max(mx, static_cast<double>(logits.value()[base + static_cast<std::int64_t>(cl) * sp]));
      double lse = 0.0;
      for (int cl = 0; cl < v; ++cl)
        lse += std::exp(static_cast<double>(logits.value()[base + static_cast<std::int64_t>(cl) * sp]) - mx);
      lse = std::log(lse) + mx;
      const int t = targets[static_cast<std::size_t>(i) * sp + s];
      total += lse - static_cast<double>(logits.value()[base + static_cast<std::int64_t>(t) * sp]);
    }
  const double inv = 1.0 / static_cast<double>(sites);
  auto targets_copy = targets;
  return node1(logits, {1}, {static_cast<Real>(total * inv)},
               [n, v, sp, inv, targets_copy](Impl<Real>* self, Impl<Real>* li) {
                 if (!li->requires_grad) return;
                 li->ensure_grad();
                 const double g = static_cast<double>(self->grad[0]) * inv;
                 for (int i = 0; i < n; ++i)
                   for (std::int64_t s = 0; s < sp; ++s) {
                     const std::int64_t base = static_cast<std::int64_t>(i) * v * sp + s;
                     double mx = -1e300;
                     for (int cl = 0; cl < v; ++cl)
                       mx = std::max(mx, static_cast<double>(
                                             li->value[base + static_cast<std::int64_t>(cl) * sp]));
                     double denom = 0.0;
                     for (int cl = 0; cl < v; ++cl)
                       denom += std::exp(
                           static_cast<double>(li->value[base + static_cast<std::int64_t>(cl) * sp]) - mx);
                     const int t = targets_copy[static_cast<std::size_t>(i) * sp + s];
                     for (int cl = 0; cl < v; ++cl) {
                       const double p =
                           std::exp(static_cast<double>(
                                        li->value[base + static_cast<std::int64_t>(cl) * sp]) -
                                    mx) /
                           denom;
                       const double onehot = cl == t ? 1.0 : 0.0;
                       li->grad[base + static_cast<std::int64_t>(cl) * sp] +=
                           static_cast<Real>(g * (p - onehot));
                     }
                   }
               });
}

template <typename Real>
Tensor<Real> l2_normalize_rows(const Tensor<Real>& x, Real eps) {
  if (x.shape().size() != 2) throw DimensionError("l2_normalize_rows: expects rank 2");
  const int m = x.shape()[0], k = x.shape()[1];
  std::vector<Real> out(x.value().size());
  std::vector<double> norms(m);
  for (int i = 0; i < m; ++i) {
    double ss = 0.0;
    for (int j = 0; j < k; ++j) {
      const double v = static_cast<double>(x.value()[static_cast<std::size_t>(i) * k + j]);
      ss += v * v;
    }
    const double r = std::sqrt(ss + static_cast<double>(eps));
    norms[i] = r;
    for (int j = 0; j < k; ++j)
      out[static_cast<std::size_t>(i) * k + j] =
          static_cast<Real>(static_cast<double>(x.value()[static_cast<std::size_t>(i) * k + j]) / r);
  }
  return node1(x, x.shape(), std::move(out), [m, k, norms](Impl<Real>* self, Impl<Real>* xi) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const double r = norms[i];
      double dot = 0.0;
      for (int j = 0; j < k; ++j)
        dot += static_cast<double>(self->grad[static_cast<std::size_t>(i) * k + j]) *
               static_cast<double>(self->value[static_cast<std::size_t>(i) * k + j]);
      for (int j = 0; j < k; ++j) {
        const double g = static_cast<double>(self->grad[static_cast<std::size_t>(i) * k + j]);
        const double y = static_cast<double>(self->value[static_cast<std::size_t>(i) * k + j]);
        xi->grad[static_cast<std::size_t>(i) * k + j] += static_cast<Real>((g - y * dot) / r);
      }
    }
  });
}

template <typename Real>
Tensor<Real> triplet_margin_loss(const Tensor<Real>& a, const Tensor<Real>& p,
                                 const Tensor<Real>& n, Real margin) {
  require_same_shape(a, p, "triplet_margin_loss");
  require_same_shape(a, n, "triplet_margin_loss");
  if (a.shape().size() != 2) throw DimensionError("triplet_margin_loss: expects rank 2 [B,K]");
  const int b = a.shape()[0], k = a.shape()[1];
  std::vector<double> d_ap(b), d_an(b);
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    double sap = 0.0, san = 0.0;
    for (int j = 0; j < k; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * k + j;
      const double dp = static_cast<double>(a.value()[idx]) - static_cast<double>(p.value()[idx]);
      const double dn = static_cast<double>(a.value()[idx]) - static_cast<double>(n.value()[idx]);
      sap += dp * dp;
      san += dn * dn;
    }
    d_ap[i] = std::sqrt(sap + 1e-12);
    d_an[i] = std::sqrt(san + 1e-12);
    total += std::max(0.0, d_ap[i] - d_an[i] + static_cast<double>(margin));
  }
  const double inv = 1.0 / static_cast<double>(b);
  return node3(a, p, n, {1}, {static_cast<Real>(total * inv)},
               [b, k, inv, margin, d_ap, d_an](Impl<Real>* self, Impl<Real>* ai, Impl<Real>* pi,
                                               Impl<Real>* ni) {
                 const double g0 = static_cast<double>(self->grad[0]) * inv;
                 if (ai->requires_grad) ai->ensure_grad();
                 if (pi->requires_grad) pi->ensure_grad();
                 if (ni->requires_grad) ni->ensure_grad();
                 for (int i = 0; i < b; ++i) {
                   if (d_ap[i] - d_an[i] + static_cast<double>(margin) <= 0.0) continue;
                   for (int j = 0; j < k; ++j) {
                     const std::size_t idx = static_cast<std::size_t>(i) * k + j;
                     const double dp =
                         static_cast<double>(ai->value[idx]) - static_cast<double>(pi->value[idx]);
                     const double dn =
                         static_cast<double>(ai->value[idx]) - static_cast<double>(ni->value[idx]);
                     const double gp = dp / d_ap[i];
                     const double gn = dn / d_an[i];
                     if (ai->requires_grad) ai->grad[idx] += static_cast<Real>(g0 * (gp - gn));
                     if (pi->requires_grad) pi->grad[idx] += static_cast<Real>(-g0 * gp);
                     if (ni->requires_grad) ni->grad[idx] += static_cast<Real>(g0 * gn);
                   }
                 }
               });
}

template <typename Real>
void softmax_inplace(std::vector<Real>& logits) {
  double mx = -1e300;
  for (Real v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (Real& v : logits) {
    const double e = std::exp(static_cast<double>(v) - mx);
    v = static_cast<Real>(e);
    sum += e;
  }
  const double inv = 1.0 / sum;
  for (Real& v : logits) v = static_cast<Real>(static_cast<double>(v) * inv);
}

#define DEID_INSTANTIATE_OPS(Real)                                                            \
  template Tensor<Real> add<Real>(const Tensor<Real>&, const Tensor<Real>&);                  \
  template Tensor<Real> sub<Real>(const Tensor<Real>&, const Tensor<Real>&);                  \
  template Tensor<Real> mul<Real>(const Tensor<Real>&, const Tensor<Real>&);                  \
  template Tensor<Real> scale<Real>(const Tensor<Real>&, Real);                               \
  template Tensor<Real> relu<Real>(const Tensor<Real>&);                                      \
  template Tensor<Real> sigmoid<Real>(const Tensor<Real>&);                                   \
  template Tensor<Real> reshape<Real>(const Tensor<Real>&, std::vector<int>);                 \
  template Tensor<Real> sum_all<Real>(const Tensor<Real>&);                                   \
  template Tensor<Real> mean_all<Real>(const Tensor<Real>&);                                  \
  template Tensor<Real> mse_loss<Real>(const Tensor<Real>&, const Tensor<Real>&);             \
  template Tensor<Real> matmul<Real>(const Tensor<Real>&, const Tensor<Real>&);               \
  template Tensor<Real> add_bias<Real>(const Tensor<Real>&, const Tensor<Real>&);             \
  template Tensor<Real> add_channel_vec<Real>(const Tensor<Real>&, const Tensor<Real>&);      \
  template Tensor<Real> concat_channels<Real>(const Tensor<Real>&, const Tensor<Real>&);      \
  template Tensor<Real> conv3d<Real>(const Tensor<Real>&, const Tensor<Real>&, int, int);     \
  template Tensor<Real> conv_transpose3d<Real>(const Tensor<Real>&, const Tensor<Real>&, int, \
                                               int, int);                                    \
  template Tensor<Real> conv2d<Real>(const Tensor<Real>&, const Tensor<Real>&, int, int);     \
  template Tensor<Real> group_norm<Real>(const Tensor<Real>&, const Tensor<Real>&,            \
                                         const Tensor<Real>&, int, Real);                     \
  template Tensor<Real> embed_codes<Real>(const Tensor<Real>&,                                \
                                          const std::vector<std::uint16_t>&, int, int, int,   \
                                          int);                                              \
  template Tensor<Real> softmax_cross_entropy<Real>(const Tensor<Real>&,                     \
                                                    const std::vector<std::uint16_t>&);       \
  template Tensor<Real> l2_normalize_rows<Real>(const Tensor<Real>&, Real);                   \
  template Tensor<Real> triplet_margin_loss<Real>(const Tensor<Real>&, const Tensor<Real>&,   \
                                                  const Tensor<Real>&, Real);                 \
  template void softmax_inplace<Real>(std::vector<Real>&);

DEID_INSTANTIATE_OPS(float)
DEID_INSTANTIATE_OPS(double)

#undef DEID_INSTANTIATE_OPS

}  // namespace deid::ops
