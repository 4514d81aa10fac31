#pragma once

#include <string>
#include <vector>

#include "deid/ops.hpp"
#include "deid/optim.hpp"
#include "deid/serialize.hpp"
#include "deid/tensor.hpp"

namespace deid::nn {

using Param = std::pair<std::string, Tensorf>;

Tensorf he_normal(Rng& rng, std::vector<int> shape, int fan_in);

int pick_groups(int channels);

struct Conv3dLayer {
  Tensorf w, b;
  static Conv3dLayer make(Rng& rng, int c_in, int c_out, int k);
  Tensorf forward(const Tensorf& x, int stride, int pad) const;
  void params(const std::string& prefix, std::vector<Param>& out) const;
};

struct ConvT3dLayer {
  Tensorf w, b;  // w: [C_in, C_out, k, k, k]
  static ConvT3dLayer make(Rng& rng, int c_in, int c_out, int k);
  Tensorf forward(const Tensorf& x, int stride, int pad, int out_pad) const;
  void params(const std::string& prefix, std::vector<Param>& out) const;
};

struct Conv2dLayer {
  Tensorf w, b;
  static Conv2dLayer make(Rng& rng, int c_in, int c_out, int k);
  Tensorf forward(const Tensorf& x, int stride, int pad) const;
  void params(const std::string& prefix, std::vector<Param>& out) const;
};

struct LinearLayer {
  Tensorf w, b;  // w: [in, out]
  static LinearLayer make(Rng& rng, int in, int out);
  Tensorf forward(const Tensorf& x) const;
  void params(const std::string& prefix, std::vector<Param>& out) const;
};

struct GroupNormLayer {
  Tensorf gamma, beta;
  int groups = 1;
  static GroupNormLayer make(int channels);
  Tensorf forward(const Tensorf& x) const;
  void params(const std::string& prefix, std::vector<Param>& out) const;
};

/// Pre-activation residual block: x + conv(relu(gn(conv(relu(gn(x)))))).
struct ResBlock3d {
  GroupNormLayer gn1;
  Conv3dLayer conv1;
  GroupNormLayer gn2;
  Conv3dLayer conv2;
  static ResBlock3d make(Rng& rng, int channels);
  Tensorf forward(const Tensorf& x) const;
  void params(const std::string& prefix, std::vector<Param>& out) const;
};

std::vector<Tensorf> values_of(const std::vector<Param>& params);

std::vector<NamedTensor> to_named(const std::vector<Param>& params);

/// Copies checkpoint data into existing parameter tensors by name; shapes
/// must match.
void load_params(const std::vector<Param>& params, const Checkpoint& ckpt);

}  // namespace deid::nn
