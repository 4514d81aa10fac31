#include "deid/nn.hpp"

#include <cmath>

namespace deid::nn {

Tensorf he_normal(Rng& rng, std::vector<int> shape, int fan_in) {
  std::int64_t n = 1;
  for (int s : shape) n *= s;
  const float std_dev = std::sqrt(2.0f / static_cast<float>(fan_in));
  std::vector<float> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = static_cast<float>(rng.normal()) * std_dev;
  return Tensorf::from_data(std::move(shape), std::move(data), true);
}

int pick_groups(int channels) {
  for (int g : {8, 4, 2})
    if (channels % g == 0 && channels >= g) return g;
  return 1;
}

Conv3dLayer Conv3dLayer::make(Rng& rng, int c_in, int c_out, int k) {
  Conv3dLayer l;
  l.w = he_normal(rng, {c_out, c_in, k, k, k}, c_in * k * k * k);
  l.b = Tensorf::zeros({c_out}, true);
  return l;
}

Tensorf Conv3dLayer::forward(const Tensorf& x, int stride, int pad) const {
  return ops::add_bias(ops::conv3d(x, w, stride, pad), b);
}

void Conv3dLayer::params(const std::string& prefix, std::vector<Param>& out) const {
  out.emplace_back(prefix + ".w", w);
  out.emplace_back(prefix + ".b", b);
}

ConvT3dLayer ConvT3dLayer::make(Rng& rng, int c_in, int c_out, int k) {
  ConvT3dLayer l;
  l.w = he_normal(rng, {c_in, c_out, k, k, k}, c_in * k * k * k);
  l.b = Tensorf::zeros({c_out}, true);
  return l;
}

Tensorf ConvT3dLayer::forward(const Tensorf& x, int stride, int pad, int out_pad) const {
  return ops::add_bias(ops::conv_transpose3d(x, w, stride, pad, out_pad), b);
}

void ConvT3dLayer::params(const std::string& prefix, std::vector<Param>& out) const {
  out.emplace_back(prefix + ".w", w);
  out.emplace_back(prefix + ".b", b);
}

Conv2dLayer Conv2dLayer::make(Rng& rng, int c_in, int c_out, int k) {
  Conv2dLayer l;
  l.w = he_normal(rng, {c_out, c_in, k, k}, c_in * k * k);
  l.b = Tensorf::zeros({c_out}, true);
  return l;
}

Tensorf Conv2dLayer::forward(const Tensorf& x, int stride, int pad) const {
  return ops::add_bias(ops::conv2d(x, w, stride, pad), b);
}

void Conv2dLayer::params(const std::string& prefix, std::vector<Param>& out) const {
  out.emplace_back(prefix + ".w", w);
  out.emplace_back(prefix + ".b", b);
}

LinearLayer LinearLayer::make(Rng& rng, int in, int out) {
  LinearLayer l;
  l.w = he_normal(rng, {in, out}, in);
  l.b = Tensorf::zeros({out}, true);
  return l;
}

Tensorf LinearLayer::forward(const Tensorf& x) const {
  auto y = ops::matmul(x, w);
  // Bias over the last axis: reuse add_bias by viewing rows as channels.
  const int m = y.shape()[0], n = y.shape()[1];
  auto yr = ops::reshape(y, {m, n, 1});
  return ops::reshape(ops::add_bias(yr, b), {m, n});
}

void LinearLayer::params(const std::string& prefix, std::vector<Param>& out) const {
  out.emplace_back(prefix + ".w", w);
  out.emplace_back(prefix + ".b", b);
}

GroupNormLayer GroupNormLayer::make(int channels) {
  GroupNormLayer l;
  l.gamma = Tensorf::filled({channels}, 1.0f, true);
  l.beta = Tensorf::zeros({channels}, true);
  l.groups = pick_groups(channels);
  return l;
}

Tensorf GroupNormLayer::forward(const Tensorf& x) const {
  return ops::group_norm(x, gamma, beta, groups);
}

void GroupNormLayer::params(const std::string& prefix, std::vector<Param>& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

ResBlock3d ResBlock3d::make(Rng& rng, int channels) {
  ResBlock3d r;
  r.gn1 = GroupNormLayer::make(channels);
  r.conv1 = Conv3dLayer::make(rng, channels, channels, 3);
  r.gn2 = GroupNormLayer::make(channels);
  r.conv2 = Conv3dLayer::make(rng, channels, channels, 3);
  return r;
}

Tensorf ResBlock3d::forward(const Tensorf& x) const {
  auto h = conv1.forward(ops::relu(gn1.forward(x)), 1, 1);
  h = conv2.forward(ops::relu(gn2.forward(h)), 1, 1);
  return ops::add(x, h);
}

void ResBlock3d::params(const std::string& prefix, std::vector<Param>& out) const {
  gn1.params(prefix + ".gn1", out);
  conv1.params(prefix + ".conv1", out);
  gn2.params(prefix + ".gn2", out);
  conv2.params(prefix + ".conv2", out);
}

std::vector<Tensorf> values_of(const std::vector<Param>& params) {
  std::vector<Tensorf> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

std::vector<NamedTensor> to_named(const std::vector<Param>& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back({name, t.shape(), t.value()});
  return out;
}

void load_params(const std::vector<Param>& params, const Checkpoint& ckpt) {
  for (const auto& [name, t] : params) {
    const NamedTensor& src = find_tensor(ckpt, name, t.shape());
    const_cast<Tensorf&>(t).mutable_value() = src.data;
  }
}

}  // namespace deid::nn
