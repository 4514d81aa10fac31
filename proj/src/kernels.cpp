#include "deid/kernels.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace deid::kernels {

namespace {
Backend g_backend = Backend::parallel;
}

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

int convt_out_dim(int in, int k, int stride, int pad, int out_pad) {
  return (in - 1) * stride - 2 * pad + k + out_pad;
}

namespace {

// All kernels accumulate into 64-bit row or slice buffers with one
// independent accumulator per element, so the innermost loops vectorize.
// The loop nests are fixed, the serial and parallel paths share these
// bodies, and parallel work is partitioned over exclusive output slices:
// results are bit-identical across backends and thread counts.

inline int div_ceil_clamped(int a, int b) { return a > 0 ? (a + b - 1) / b : 0; }

template <typename Real>
void conv3d_forward_body(const Real* in, const Real* w, Real* out, const Conv3dShape& s, int n,
                         int co, std::vector<double>& row) {
  const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t dhw = hw * s.d;
  const std::int64_t ohw = static_cast<std::int64_t>(s.oh) * s.ow;
  const int kk = s.k * s.k;
  const int kkk = kk * s.k;
  row.assign(static_cast<std::size_t>(s.ow), 0.0);
  Real* out_c = out + (static_cast<std::int64_t>(n) * s.c_out + co) * s.od * ohw;
  const Real* w_co = w + static_cast<std::int64_t>(co) * s.c_in * kkk;
  for (int od = 0; od < s.od; ++od) {
    const int kd_lo = std::max(0, s.pad - od * s.stride);
    const int kd_hi = std::min(s.k, s.d + s.pad - od * s.stride);
    for (int oh = 0; oh < s.oh; ++oh) {
      const int kh_lo = std::max(0, s.pad - oh * s.stride);
      const int kh_hi = std::min(s.k, s.h + s.pad - oh * s.stride);
      std::fill(row.begin(), row.end(), 0.0);
      for (int ci = 0; ci < s.c_in; ++ci) {
        const Real* in_c = in + (static_cast<std::int64_t>(n) * s.c_in + ci) * dhw;
        const Real* w_c = w_co + static_cast<std::int64_t>(ci) * kkk;
        for (int kd = kd_lo; kd < kd_hi; ++kd) {
          const int id = od * s.stride - s.pad + kd;
          for (int kh = kh_lo; kh < kh_hi; ++kh) {
            const int ih = oh * s.stride - s.pad + kh;
            const Real* in_row = in_c + id * hw + static_cast<std::int64_t>(ih) * s.w;
            const Real* w_row = w_c + kd * kk + kh * s.k;
            for (int kw = 0; kw < s.k; ++kw) {
              const int u = kw - s.pad;
              const int ow_lo = std::max(0, div_ceil_clamped(-u, s.stride));
              const int ow_hi = std::min(s.ow - 1, (s.w - 1 - u) / s.stride);
              const double wv = static_cast<double>(w_row[kw]);
              const Real* src = in_row + u;
              if (s.stride == 1) {
                for (int ow = ow_lo; ow <= ow_hi; ++ow)
                  row[ow] += static_cast<double>(src[ow]) * wv;
              } else {
                for (int ow = ow_lo; ow <= ow_hi; ++ow)
                  row[ow] += static_cast<double>(src[ow * s.stride]) * wv;
              }
            }
          }
        }
      }
      Real* out_row = out_c + od * ohw + static_cast<std::int64_t>(oh) * s.ow;
      for (int ow = 0; ow < s.ow; ++ow) out_row[ow] = static_cast<Real>(row[ow]);
    }
  }
}

template <typename Real>
void conv3d_backward_input_body(const Real* gout, const Real* w, Real* gin,
                                const Conv3dShape& s, int n, int ci,
                                std::vector<double>& slice) {
  const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t ohw = static_cast<std::int64_t>(s.oh) * s.ow;
  const std::int64_t odhw = ohw * s.od;
  const int kk = s.k * s.k;
  const int kkk = kk * s.k;
  slice.assign(static_cast<std::size_t>(s.d) * hw, 0.0);
  for (int co = 0; co < s.c_out; ++co) {
    const Real* g_c = gout + (static_cast<std::int64_t>(n) * s.c_out + co) * odhw;
    const Real* w_c = w + (static_cast<std::int64_t>(co) * s.c_in + ci) * kkk;
    for (int od = 0; od < s.od; ++od) {
      const int kd_lo = std::max(0, s.pad - od * s.stride);
      const int kd_hi = std::min(s.k, s.d + s.pad - od * s.stride);
      for (int kd = kd_lo; kd < kd_hi; ++kd) {
        const int id = od * s.stride - s.pad + kd;
        for (int oh = 0; oh < s.oh; ++oh) {
          const int kh_lo = std::max(0, s.pad - oh * s.stride);
          const int kh_hi = std::min(s.k, s.h + s.pad - oh * s.stride);
          for (int kh = kh_lo; kh < kh_hi; ++kh) {
            const int ih = oh * s.stride - s.pad + kh;
            double* buf_row = slice.data() + id * hw + static_cast<std::int64_t>(ih) * s.w;
            const Real* g_row = g_c + od * ohw + static_cast<std::int64_t>(oh) * s.ow;
            const Real* w_row = w_c + kd * kk + kh * s.k;
            for (int kw = 0; kw < s.k; ++kw) {
              const int u = kw - s.pad;
              const int ow_lo = std::max(0, div_ceil_clamped(-u, s.stride));
              const int ow_hi = std::min(s.ow - 1, (s.w - 1 - u) / s.stride);
              const double wv = static_cast<double>(w_row[kw]);
              double* dst = buf_row + u;
              if (s.stride == 1) {
                for (int ow = ow_lo; ow <= ow_hi; ++ow)
                  dst[ow] += static_cast<double>(g_row[ow]) * wv;
              } else {
                for (int ow = ow_lo; ow <= ow_hi; ++ow)
                  dst[ow * s.stride] += static_cast<double>(g_row[ow]) * wv;
              }
            }
          }
        }
      }
    }
  }
  Real* gin_c = gin + (static_cast<std::int64_t>(n) * s.c_in + ci) * s.d * hw;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(s.d) * hw; ++i)
    gin_c[i] += static_cast<Real>(slice[i]);
}

template <typename Real>
void conv3d_backward_weight_body(const Real* gout, const Real* in, Real* gw,
                                 const Conv3dShape& s, int co, int ci) {
  const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t dhw = hw * s.d;
  const std::int64_t ohw = static_cast<std::int64_t>(s.oh) * s.ow;
  const std::int64_t odhw = ohw * s.od;
  const int kk = s.k * s.k;
  Real* gw_c = gw + (static_cast<std::int64_t>(co) * s.c_in + ci) * kk * s.k;
  for (int kd = 0; kd < s.k; ++kd) {
    const int od_lo = std::max(0, div_ceil_clamped(s.pad - kd, s.stride));
    const int od_hi = std::min(s.od - 1, (s.d - 1 - kd + s.pad) / s.stride);
    for (int kh = 0; kh < s.k; ++kh) {
      const int oh_lo = std::max(0, div_ceil_clamped(s.pad - kh, s.stride));
      const int oh_hi = std::min(s.oh - 1, (s.h - 1 - kh + s.pad) / s.stride);
      for (int kw = 0; kw < s.k; ++kw) {
        const int ow_lo = std::max(0, div_ceil_clamped(s.pad - kw, s.stride));
        const int ow_hi = std::min(s.ow - 1, (s.w - 1 - kw + s.pad) / s.stride);
        const int u = kw - s.pad;
        double acc0 = 0.0, acc1 = 0.0;
        for (int n = 0; n < s.n; ++n) {
          const Real* g_c = gout + (static_cast<std::int64_t>(n) * s.c_out + co) * odhw;
          const Real* in_c = in + (static_cast<std::int64_t>(n) * s.c_in + ci) * dhw;
          for (int od = od_lo; od <= od_hi; ++od) {
            const int id = od * s.stride - s.pad + kd;
            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
              const int ih = oh * s.stride - s.pad + kh;
              const Real* g_row = g_c + od * ohw + static_cast<std::int64_t>(oh) * s.ow;
              const Real* in_row = in_c + id * hw + static_cast<std::int64_t>(ih) * s.w;
              int ow = ow_lo;
              for (; ow + 1 <= ow_hi; ow += 2) {
                acc0 += static_cast<double>(g_row[ow]) *
                        static_cast<double>(in_row[u + ow * s.stride]);
                acc1 += static_cast<double>(g_row[ow + 1]) *
                        static_cast<double>(in_row[u + (ow + 1) * s.stride]);
              }
              if (ow == ow_hi)
                acc0 += static_cast<double>(g_row[ow]) *
                        static_cast<double>(in_row[u + ow * s.stride]);
            }
          }
        }
        gw_c[kd * kk + kh * s.k + kw] += static_cast<Real>(acc0 + acc1);
      }
    }
  }
}

// Transposed convolution, weight layout [C_in, C_out, k, k, k]. Forward is a
// scatter from input rows into an output slice buffer.

template <typename Real>
void convt3d_forward_body(const Real* in, const Real* w, Real* out, const ConvT3dShape& s,
                          int n, int co, std::vector<double>& slice) {
  const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t dhw = hw * s.d;
  const std::int64_t ohw = static_cast<std::int64_t>(s.oh) * s.ow;
  const int kk = s.k * s.k;
  const int kkk = kk * s.k;
  slice.assign(static_cast<std::size_t>(s.od) * ohw, 0.0);
  for (int ci = 0; ci < s.c_in; ++ci) {
    const Real* in_c = in + (static_cast<std::int64_t>(n) * s.c_in + ci) * dhw;
    const Real* w_c = w + (static_cast<std::int64_t>(ci) * s.c_out + co) * kkk;
    for (int id = 0; id < s.d; ++id) {
      for (int kd = 0; kd < s.k; ++kd) {
        const int od = id * s.stride - s.pad + kd;
        if (od < 0 || od >= s.od) continue;
        for (int ih = 0; ih < s.h; ++ih) {
          for (int kh = 0; kh < s.k; ++kh) {
            const int oh = ih * s.stride - s.pad + kh;
            if (oh < 0 || oh >= s.oh) continue;
            const Real* in_row = in_c + id * hw + static_cast<std::int64_t>(ih) * s.w;
            double* out_row = slice.data() + od * ohw + static_cast<std::int64_t>(oh) * s.ow;
            const Real* w_row = w_c + kd * kk + kh * s.k;
            for (int kw = 0; kw < s.k; ++kw) {
              const int u = kw - s.pad;
              // ow = iw*stride + u must stay in [0, ow)
              const int iw_lo = std::max(0, div_ceil_clamped(-u, s.stride));
              const int iw_hi = std::min(s.w - 1, (s.ow - 1 - u) / s.stride);
              const double wv = static_cast<double>(w_row[kw]);
              double* dst = out_row + u;
              if (s.stride == 1) {
                for (int iw = iw_lo; iw <= iw_hi; ++iw)
                  dst[iw] += static_cast<double>(in_row[iw]) * wv;
              } else {
                for (int iw = iw_lo; iw <= iw_hi; ++iw)
                  dst[iw * s.stride] += static_cast<double>(in_row[iw]) * wv;
              }
            }
          }
        }
      }
    }
  }
  Real* out_c = out + (static_cast<std::int64_t>(n) * s.c_out + co) * s.od * ohw;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(s.od) * ohw; ++i)
    out_c[i] = static_cast<Real>(slice[i]);
}

template <typename Real>
void convt3d_backward_input_body(const Real* gout, const Real* w, Real* gin,
                                 const ConvT3dShape& s, int n, int ci,
                                 std::vector<double>& row) {
  const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t ohw = static_cast<std::int64_t>(s.oh) * s.ow;
  const std::int64_t odhw = ohw * s.od;
  const int kk = s.k * s.k;
  const int kkk = kk * s.k;
  row.assign(static_cast<std::size_t>(s.w), 0.0);
  Real* gin_c = gin + (static_cast<std::int64_t>(n) * s.c_in + ci) * s.d * hw;
  for (int id = 0; id < s.d; ++id) {
    const int kd_lo = std::max(0, s.pad - id * s.stride);
    const int kd_hi = std::min(s.k, s.od + s.pad - id * s.stride);
    for (int ih = 0; ih < s.h; ++ih) {
      const int kh_lo = std::max(0, s.pad - ih * s.stride);
      const int kh_hi = std::min(s.k, s.oh + s.pad - ih * s.stride);
      std::fill(row.begin(), row.end(), 0.0);
      for (int co = 0; co < s.c_out; ++co) {
        const Real* g_c = gout + (static_cast<std::int64_t>(n) * s.c_out + co) * odhw;
        const Real* w_c = w + (static_cast<std::int64_t>(ci) * s.c_out + co) * kkk;
        for (int kd = kd_lo; kd < kd_hi; ++kd) {
          const int od = id * s.stride - s.pad + kd;
          for (int kh = kh_lo; kh < kh_hi; ++kh) {
            const int oh = ih * s.stride - s.pad + kh;
            const Real* g_row = g_c + od * ohw + static_cast<std::int64_t>(oh) * s.ow;
            const Real* w_row = w_c + kd * kk + kh * s.k;
            for (int kw = 0; kw < s.k; ++kw) {
              const int u = kw - s.pad;
              // ow = iw*stride + u in [0, ow)
              const int iw_lo = std::max(0, div_ceil_clamped(-u, s.stride));
              const int iw_hi = std::min(s.w - 1, (s.ow - 1 - u) / s.stride);
              const double wv = static_cast<double>(w_row[kw]);
              const Real* src = g_row + u;
              if (s.stride == 1) {
                for (int iw = iw_lo; iw <= iw_hi; ++iw)
                  row[iw] += static_cast<double>(src[iw]) * wv;
              } else {
                for (int iw = iw_lo; iw <= iw_hi; ++iw)
                  row[iw] += static_cast<double>(src[iw * s.stride]) * wv;
              }
            }
          }
        }
      }
      Real* gin_row = gin_c + id * hw + static_cast<std::int64_t>(ih) * s.w;
      for (int iw = 0; iw < s.w; ++iw) gin_row[iw] += static_cast<Real>(row[iw]);
    }
  }
}

template <typename Real>
void convt3d_backward_weight_body(const Real* gout, const Real* in, Real* gw,
                                  const ConvT3dShape& s, int ci, int co) {
  const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t dhw = hw * s.d;
  const std::int64_t ohw = static_cast<std::int64_t>(s.oh) * s.ow;
  const std::int64_t odhw = ohw * s.od;
  const int kk = s.k * s.k;
  Real* gw_c = gw + (static_cast<std::int64_t>(ci) * s.c_out + co) * kk * s.k;
  for (int kd = 0; kd < s.k; ++kd) {
    const int id_lo = std::max(0, div_ceil_clamped(s.pad - kd, s.stride));
    const int id_hi = std::min(s.d - 1, (s.od - 1 - kd + s.pad) / s.stride);
    for (int kh = 0; kh < s.k; ++kh) {
      const int ih_lo = std::max(0, div_ceil_clamped(s.pad - kh, s.stride));
      const int ih_hi = std::min(s.h - 1, (s.oh - 1 - kh + s.pad) / s.stride);
      for (int kw = 0; kw < s.k; ++kw) {
        const int iw_lo = std::max(0, div_ceil_clamped(s.pad - kw, s.stride));
        const int iw_hi = std::min(s.w - 1, (s.ow - 1 - kw + s.pad) / s.stride);
        const int u = kw - s.pad;
        double acc0 = 0.0, acc1 = 0.0;
        for (int n = 0; n < s.n; ++n) {
          const Real* g_c = gout + (static_cast<std::int64_t>(n) * s.c_out + co) * odhw;
          const Real* in_c = in + (static_cast<std::int64_t>(n) * s.c_in + ci) * dhw;
          for (int id = id_lo; id <= id_hi; ++id) {
            const int od = id * s.stride - s.pad + kd;
            for (int ih = ih_lo; ih <= ih_hi; ++ih) {
              const int oh = ih * s.stride - s.pad + kh;
              const Real* in_row = in_c + id * hw + static_cast<std::int64_t>(ih) * s.w;
              const Real* g_row = g_c + od * ohw + static_cast<std::int64_t>(oh) * s.ow;
              int iw = iw_lo;
              for (; iw + 1 <= iw_hi; iw += 2) {
                acc0 += static_cast<double>(in_row[iw]) *
                        static_cast<double>(g_row[u + iw * s.stride]);
                acc1 += static_cast<double>(in_row[iw + 1]) *
                        static_cast<double>(g_row[u + (iw + 1) * s.stride]);
              }
              if (iw == iw_hi)
                acc0 += static_cast<double>(in_row[iw]) *
                        static_cast<double>(g_row[u + iw * s.stride]);
            }
          }
        }
        gw_c[kd * kk + kh * s.k + kw] += static_cast<Real>(acc0 + acc1);
      }
    }
  }
}

template <typename Real>
void conv2d_forward_body(const Real* in, const Real* w, Real* out, const Conv2dShape& s, int n,
                         int co, std::vector<double>& row) {
  const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t ohw = static_cast<std::int64_t>(s.oh) * s.ow;
  const int kk = s.k * s.k;
  row.assign(static_cast<std::size_t>(s.ow), 0.0);
  Real* out_c = out + (static_cast<std::int64_t>(n) * s.c_out + co) * ohw;
  for (int oh = 0; oh < s.oh; ++oh) {
    const int kh_lo = std::max(0, s.pad - oh * s.stride);
    const int kh_hi = std::min(s.k, s.h + s.pad - oh * s.stride);
    std::fill(row.begin(), row.end(), 0.0);
    for (int ci = 0; ci < s.c_in; ++ci) {
      const Real* in_c = in + (static_cast<std::int64_t>(n) * s.c_in + ci) * hw;
      const Real* w_c = w + (static_cast<std::int64_t>(co) * s.c_in + ci) * kk;
      for (int kh = kh_lo; kh < kh_hi; ++kh) {
        const int ih = oh * s.stride - s.pad + kh;
        const Real* in_row = in_c + static_cast<std::int64_t>(ih) * s.w;
        const Real* w_row = w_c + kh * s.k;
        for (int kw = 0; kw < s.k; ++kw) {
          const int u = kw - s.pad;
          const int ow_lo = std::max(0, div_ceil_clamped(-u, s.stride));
          const int ow_hi = std::min(s.ow - 1, (s.w - 1 - u) / s.stride);
          const double wv = static_cast<double>(w_row[kw]);
          const Real* src = in_row + u;
          for (int ow = ow_lo; ow <= ow_hi; ++ow)
            row[ow] += static_cast<double>(src[ow * s.stride]) * wv;
        }
      }
    }
    Real* out_row = out_c + static_cast<std::int64_t>(oh) * s.ow;
    for (int ow = 0; ow < s.ow; ++ow) out_row[ow] = static_cast<Real>(row[ow]);
  }
}

template <typename Real>
void conv2d_backward_input_body(const Real* gout, const Real* w, Real* gin,
                                const Conv2dShape& s, int n, int ci,
                                std::vector<double>& slice) {
  const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t ohw = static_cast<std::int64_t>(s.oh) * s.ow;
  const int kk = s.k * s.k;
  slice.assign(static_cast<std::size_t>(hw), 0.0);
  for (int co = 0; co < s.c_out; ++co) {
    const Real* g_c = gout + (static_cast<std::int64_t>(n) * s.c_out + co) * ohw;
    const Real* w_c = w + (static_cast<std::int64_t>(co) * s.c_in + ci) * kk;
    for (int oh = 0; oh < s.oh; ++oh) {
      const int kh_lo = std::max(0, s.pad - oh * s.stride);
      const int kh_hi = std::min(s.k, s.h + s.pad - oh * s.stride);
      for (int kh = kh_lo; kh < kh_hi; ++kh) {
        const int ih = oh * s.stride - s.pad + kh;
        double* buf_row = slice.data() + static_cast<std::int64_t>(ih) * s.w;
        const Real* g_row = g_c + static_cast<std::int64_t>(oh) * s.ow;
        const Real* w_row = w_c + kh * s.k;
        for (int kw = 0; kw < s.k; ++kw) {
          const int u = kw - s.pad;
          const int ow_lo = std::max(0, div_ceil_clamped(-u, s.stride));
          const int ow_hi = std::min(s.ow - 1, (s.w - 1 - u) / s.stride);
          const double wv = static_cast<double>(w_row[kw]);
          double* dst = buf_row + u;
          for (int ow = ow_lo; ow <= ow_hi; ++ow)
            dst[ow * s.stride] += static_cast<double>(g_row[ow]) * wv;
        }
      }
    }
  }
  Real* gin_c = gin + (static_cast<std::int64_t>(n) * s.c_in + ci) * hw;
  for (std::int64_t i = 0; i < hw; ++i) gin_c[i] += static_cast<Real>(slice[i]);
}

template <typename Real>
void conv2d_backward_weight_body(const Real* gout, const Real* in, Real* gw,
                                 const Conv2dShape& s, int co, int ci) {
  const std::int64_t hw = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t ohw = static_cast<std::int64_t>(s.oh) * s.ow;
  const int kk = s.k * s.k;
  Real* gw_c = gw + (static_cast<std::int64_t>(co) * s.c_in + ci) * kk;
  for (int kh = 0; kh < s.k; ++kh) {
    const int oh_lo = std::max(0, div_ceil_clamped(s.pad - kh, s.stride));
    const int oh_hi = std::min(s.oh - 1, (s.h - 1 - kh + s.pad) / s.stride);
    for (int kw = 0; kw < s.k; ++kw) {
      const int ow_lo = std::max(0, div_ceil_clamped(s.pad - kw, s.stride));
      const int ow_hi = std::min(s.ow - 1, (s.w - 1 - kw + s.pad) / s.stride);
      const int u = kw - s.pad;
      double acc0 = 0.0, acc1 = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const Real* g_c = gout + (static_cast<std::int64_t>(n) * s.c_out + co) * ohw;
        const Real* in_c = in + (static_cast<std::int64_t>(n) * s.c_in + ci) * hw;
        for (int oh = oh_lo; oh <= oh_hi; ++oh) {
          const int ih = oh * s.stride - s.pad + kh;
          const Real* g_row = g_c + static_cast<std::int64_t>(oh) * s.ow;
          const Real* in_row = in_c + static_cast<std::int64_t>(ih) * s.w;
          int ow = ow_lo;
          for (; ow + 1 <= ow_hi; ow += 2) {
            acc0 += static_cast<double>(g_row[ow]) *
                    static_cast<double>(in_row[u + ow * s.stride]);
            acc1 += static_cast<double>(g_row[ow + 1]) *
                    static_cast<double>(in_row[u + (ow + 1) * s.stride]);
          }
          if (ow == ow_hi)
            acc0 +=
                static_cast<double>(g_row[ow]) * static_cast<double>(in_row[u + ow * s.stride]);
        }
      }
      gw_c[kh * s.k + kw] += static_cast<Real>(acc0 + acc1);
    }
  }
}

}  // namespace

template <typename Real>
void conv3d_forward_serial(const Real* in, const Real* w, Real* out, const Conv3dShape& s) {
  std::vector<double> row;
  for (int n = 0; n < s.n; ++n)
    for (int co = 0; co < s.c_out; ++co) conv3d_forward_body(in, w, out, s, n, co, row);
}

template <typename Real>
void conv3d_forward_parallel(const Real* in, const Real* w, Real* out, const Conv3dShape& s) {
#pragma omp parallel
  {
    std::vector<double> row;
#pragma omp for collapse(2) schedule(static)
    for (int n = 0; n < s.n; ++n)
      for (int co = 0; co < s.c_out; ++co) conv3d_forward_body(in, w, out, s, n, co, row);
  }
}

template <typename Real>
void conv3d_forward(const Real* in, const Real* w, Real* out, const Conv3dShape& s) {
  if (backend() == Backend::serial)
    conv3d_forward_serial(in, w, out, s);
  else
    conv3d_forward_parallel(in, w, out, s);
}

template <typename Real>
void conv3d_backward_input_serial(const Real* gout, const Real* w, Real* gin,
                                  const Conv3dShape& s) {
  std::vector<double> slice;
  for (int n = 0; n < s.n; ++n)
    for (int ci = 0; ci < s.c_in; ++ci)
      conv3d_backward_input_body(gout, w, gin, s, n, ci, slice);
}

template <typename Real>
void conv3d_backward_input_parallel(const Real* gout, const Real* w, Real* gin,
                                    const Conv3dShape& s) {
#pragma omp parallel
  {
    std::vector<double> slice;
#pragma omp for collapse(2) schedule(static)
    for (int n = 0; n < s.n; ++n)
      for (int ci = 0; ci < s.c_in; ++ci)
        conv3d_backward_input_body(gout, w, gin, s, n, ci, slice);
  }
}

template <typename Real>
void conv3d_backward_input(const Real* gout, const Real* w, Real* gin, const Conv3dShape& s) {
  if (backend() == Backend::serial)
    conv3d_backward_input_serial(gout, w, gin, s);
  else
    conv3d_backward_input_parallel(gout, w, gin, s);
}

template <typename Real>
void conv3d_backward_weight_serial(const Real* gout, const Real* in, Real* gw,
                                   const Conv3dShape& s) {
  for (int co = 0; co < s.c_out; ++co)
    for (int ci = 0; ci < s.c_in; ++ci) conv3d_backward_weight_body(gout, in, gw, s, co, ci);
}

template <typename Real>
void conv3d_backward_weight_parallel(const Real* gout, const Real* in, Real* gw,
                                     const Conv3dShape& s) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < s.c_out; ++co)
    for (int ci = 0; ci < s.c_in; ++ci) conv3d_backward_weight_body(gout, in, gw, s, co, ci);
}

template <typename Real>
void conv3d_backward_weight(const Real* gout, const Real* in, Real* gw, const Conv3dShape& s) {
  if (backend() == Backend::serial)
    conv3d_backward_weight_serial(gout, in, gw, s);
  else
    conv3d_backward_weight_parallel(gout, in, gw, s);
}

template <typename Real>
void convt3d_forward_serial(const Real* in, const Real* w, Real* out, const ConvT3dShape& s) {
  std::vector<double> slice;
  for (int n = 0; n < s.n; ++n)
    for (int co = 0; co < s.c_out; ++co) convt3d_forward_body(in, w, out, s, n, co, slice);
}

template <typename Real>
void convt3d_forward_parallel(const Real* in, const Real* w, Real* out, const ConvT3dShape& s) {
#pragma omp parallel
  {
    std::vector<double> slice;
#pragma omp for collapse(2) schedule(static)
    for (int n = 0; n < s.n; ++n)
      for (int co = 0; co < s.c_out; ++co) convt3d_forward_body(in, w, out, s, n, co, slice);
  }
}

template <typename Real>
void convt3d_forward(const Real* in, const Real* w, Real* out, const ConvT3dShape& s) {
  if (backend() == Backend::serial)
    convt3d_forward_serial(in, w, out, s);
  else
    convt3d_forward_parallel(in, w, out, s);
}

template <typename Real>
void convt3d_backward_input_serial(const Real* gout, const Real* w, Real* gin,
                                   const ConvT3dShape& s) {
  std::vector<double> row;
  for (int n = 0; n < s.n; ++n)
    for (int ci = 0; ci < s.c_in; ++ci)
      convt3d_backward_input_body(gout, w, gin, s, n, ci, row);
}

template <typename Real>
void convt3d_backward_input_parallel(const Real* gout, const Real* w, Real* gin,
                                     const ConvT3dShape& s) {
#pragma omp parallel
  {
    std::vector<double> row;
#pragma omp for collapse(2) schedule(static)
    for (int n = 0; n < s.n; ++n)
      for (int ci = 0; ci < s.c_in; ++ci)
        convt3d_backward_input_body(gout, w, gin, s, n, ci, row);
  }
}

template <typename Real>
void convt3d_backward_input(const Real* gout, const Real* w, Real* gin, const ConvT3dShape& s) {
  if (backend() == Backend::serial)
    convt3d_backward_input_serial(gout, w, gin, s);
  else
    convt3d_backward_input_parallel(gout, w, gin, s);
}

template <typename Real>
void convt3d_backward_weight_serial(const Real* gout, const Real* in, Real* gw,
                                    const ConvT3dShape& s) {
  for (int ci = 0; ci < s.c_in; ++ci)
    for (int co = 0; co < s.c_out; ++co) convt3d_backward_weight_body(gout, in, gw, s, ci, co);
}

template <typename Real>
void convt3d_backward_weight_parallel(const Real* gout, const Real* in, Real* gw,
                                      const ConvT3dShape& s) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int ci = 0; ci < s.c_in; ++ci)
    for (int co = 0; co < s.c_out; ++co) convt3d_backward_weight_body(gout, in, gw, s, ci, co);
}

template <typename Real>
void convt3d_backward_weight(const Real* gout, const Real* in, Real* gw, const ConvT3dShape& s) {
  if (backend() == Backend::serial)
    convt3d_backward_weight_serial(gout, in, gw, s);
  else
    convt3d_backward_weight_parallel(gout, in, gw, s);
}

template <typename Real>
void conv2d_forward_serial(const Real* in, const Real* w, Real* out, const Conv2dShape& s) {
  std::vector<double> row;
  for (int n = 0; n < s.n; ++n)
    for (int co = 0; co < s.c_out; ++co) conv2d_forward_body(in, w, out, s, n, co, row);
}

template <typename Real>
void conv2d_forward_parallel(const Real* in, const Real* w, Real* out, const Conv2dShape& s) {
#pragma omp parallel
  {
    std::vector<double> row;
#pragma omp for collapse(2) schedule(static)
    for (int n = 0; n < s.n; ++n)
      for (int co = 0; co < s.c_out; ++co) conv2d_forward_body(in, w, out, s, n, co, row);
  }
}

template <typename Real>
void conv2d_forward(const Real* in, const Real* w, Real* out, const Conv2dShape& s) {
  if (backend() == Backend::serial)
    conv2d_forward_serial(in, w, out, s);
  else
    conv2d_forward_parallel(in, w, out, s);
}

template <typename Real>
void conv2d_backward_input(const Real* gout, const Real* w, Real* gin, const Conv2dShape& s) {
#pragma omp parallel
  {
    std::vector<double> slice;
#pragma omp for collapse(2) schedule(static)
    for (int n = 0; n < s.n; ++n)
      for (int ci = 0; ci < s.c_in; ++ci)
        conv2d_backward_input_body(gout, w, gin, s, n, ci, slice);
  }
}

template <typename Real>
void conv2d_backward_weight(const Real* gout, const Real* in, Real* gw, const Conv2dShape& s) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < s.c_out; ++co)
    for (int ci = 0; ci < s.c_in; ++ci) conv2d_backward_weight_body(gout, in, gw, s, co, ci);
}

#define DEID_INSTANTIATE_KERNELS(Real)                                                              \
  template void conv3d_forward_serial<Real>(const Real*, const Real*, Real*, const Conv3dShape&);   \
  template void conv3d_forward_parallel<Real>(const Real*, const Real*, Real*, const Conv3dShape&); \
  template void conv3d_forward<Real>(const Real*, const Real*, Real*, const Conv3dShape&);          \
  template void conv3d_backward_input_serial<Real>(const Real*, const Real*, Real*,                 \
                                                   const Conv3dShape&);                             \
  template void conv3d_backward_input_parallel<Real>(const Real*, const Real*, Real*,               \
                                                     const Conv3dShape&);                           \
  template void conv3d_backward_input<Real>(const Real*, const Real*, Real*, const Conv3dShape&);   \
  template void conv3d_backward_weight_serial<Real>(const Real*, const Real*, Real*,                \
                                                    const Conv3dShape&);                            \
  template void conv3d_backward_weight_parallel<Real>(const Real*, const Real*, Real*,              \
                                                      const Conv3dShape&);                          \
  template void conv3d_backward_weight<Real>(const Real*, const Real*, Real*, const Conv3dShape&);  \
  template void convt3d_forward_serial<Real>(const Real*, const Real*, Real*, const ConvT3dShape&); \
  template void convt3d_forward_parallel<Real>(const Real*, const Real*, Real*,                     \
                                               const ConvT3dShape&);                                \
  template void convt3d_forward<Real>(const Real*, const Real*, Real*, const ConvT3dShape&);        \
  template void convt3d_backward_input_serial<Real>(const Real*, const Real*, Real*,                \
                                                    const ConvT3dShape&);                           \
  template void convt3d_backward_input_parallel<Real>(const Real*, const Real*, Real*,              \
                                                      const ConvT3dShape&);                         \
  template void convt3d_backward_input<Real>(const Real*, const Real*, Real*, const ConvT3dShape&); \
  template void convt3d_backward_weight_serial<Real>(const Real*, const Real*, Real*,               \
                                                     const ConvT3dShape&);                          \
  template void convt3d_backward_weight_parallel<Real>(const Real*, const Real*, Real*,             \
                                                       const ConvT3dShape&);                        \
  template void convt3d_backward_weight<Real>(const Real*, const Real*, Real*,                      \
                                              const ConvT3dShape&);                                 \
  template void conv2d_forward_serial<Real>(const Real*, const Real*, Real*, const Conv2dShape&);   \
  template void conv2d_forward_parallel<Real>(const Real*, const Real*, Real*, const Conv2dShape&); \
  template void conv2d_forward<Real>(const Real*, const Real*, Real*, const Conv2dShape&);          \
  template void conv2d_backward_input<Real>(const Real*, const Real*, Real*, const Conv2dShape&);   \
  template void conv2d_backward_weight<Real>(const Real*, const Real*, Real*, const Conv2dShape&);

DEID_INSTANTIATE_KERNELS(float)
DEID_INSTANTIATE_KERNELS(double)

#undef DEID_INSTANTIATE_KERNELS

}  // namespace deid::kernels
