#pragma once

#include <cstdint>

namespace deid::kernels {

/// Kernel dispatch. The parallel path partitions work over output elements,
/// so per-element arithmetic is identical to the serial reference and results
/// are bit-equal regardless of thread count.
enum class Backend { serial, parallel };

Backend backend();
void set_backend(Backend b);

struct Conv3dShape {
  int n, c_in, d, h, w;       // input
  int c_out, k;               // kernel (cubic, k odd)
  int stride, pad;
  int od, oh, ow;             // output spatial dims
};

struct ConvT3dShape {
  int n, c_in, d, h, w;       // input
  int c_out, k;
  int stride, pad, out_pad;
  int od, oh, ow;
};

struct Conv2dShape {
  int n, c_in, h, w;
  int c_out, k;
  int stride, pad;
  int oh, ow;
};

int conv_out_dim(int in, int k, int stride, int pad);
int convt_out_dim(int in, int k, int stride, int pad, int out_pad);

// All backward kernels accumulate (+=) into their gradient outputs.

template <typename Real>
void conv3d_forward_serial(const Real* in, const Real* w, Real* out, const Conv3dShape& s);
template <typename Real>
void conv3d_forward_parallel(const Real* in, const Real* w, Real* out, const Conv3dShape& s);
template <typename Real>
void conv3d_forward(const Real* in, const Real* w, Real* out, const Conv3dShape& s);

template <typename Real>
void conv3d_backward_input_serial(const Real* gout, const Real* w, Real* gin, const Conv3dShape& s);
template <typename Real>
void conv3d_backward_input_parallel(const Real* gout, const Real* w, Real* gin, const Conv3dShape& s);
template <typename Real>
void conv3d_backward_input(const Real* gout, const Real* w, Real* gin, const Conv3dShape& s);

template <typename Real>
void conv3d_backward_weight_serial(const Real* gout, const Real* in, Real* gw, const Conv3dShape& s);
template <typename Real>
void conv3d_backward_weight_parallel(const Real* gout, const Real* in, Real* gw, const Conv3dShape& s);
template <typename Real>
void conv3d_backward_weight(const Real* gout, const Real* in, Real* gw, const Conv3dShape& s);

template <typename Real>
void convt3d_forward_serial(const Real* in, const Real* w, Real* out, const ConvT3dShape& s);
template <typename Real>
void convt3d_forward_parallel(const Real* in, const Real* w, Real* out, const ConvT3dShape& s);
template <typename Real>
void convt3d_forward(const Real* in, const Real* w, Real* out, const ConvT3dShape& s);

template <typename Real>
void convt3d_backward_input_serial(const Real* gout, const Real* w, Real* gin, const ConvT3dShape& s);
template <typename Real>
void convt3d_backward_input_parallel(const Real* gout, const Real* w, Real* gin, const ConvT3dShape& s);
template <typename Real>
void convt3d_backward_input(const Real* gout, const Real* w, Real* gin, const ConvT3dShape& s);

template <typename Real>
void convt3d_backward_weight_serial(const Real* gout, const Real* in, Real* gw, const ConvT3dShape& s);
template <typename Real>
void convt3d_backward_weight_parallel(const Real* gout, const Real* in, Real* gw, const ConvT3dShape& s);
template <typename Real>
void convt3d_backward_weight(const Real* gout, const Real* in, Real* gw, const ConvT3dShape& s);

template <typename Real>
void conv2d_forward_serial(const Real* in, const Real* w, Real* out, const Conv2dShape& s);
template <typename Real>
void conv2d_forward_parallel(const Real* in, const Real* w, Real* out, const Conv2dShape& s);
template <typename Real>
void conv2d_forward(const Real* in, const Real* w, Real* out, const Conv2dShape& s);

template <typename Real>
void conv2d_backward_input(const Real* gout, const Real* w, Real* gin, const Conv2dShape& s);
template <typename Real>
void conv2d_backward_weight(const Real* gout, const Real* in, Real* gw, const Conv2dShape& s);

}  // namespace deid::kernels
