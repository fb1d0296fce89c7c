#pragma once

#include <array>

#include "ctseg/ops.hpp"

namespace ctseg {

using Triple = std::array<int64_t, 3>;

inline Triple triple(int64_t v) { return {v, v, v}; }

namespace detail {

inline int64_t ceil_div(int64_t a, int64_t b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

struct ConvDims {
  int64_t B, Cin, X, Y, Z;
  int64_t Cout, KX, KY, KZ;
  int64_t OX, OY, OZ;
  Triple stride, pad;

  bool fast_z() const { return stride[2] == 1 && KZ == 3 && pad[2] <= 2; }
};

template <typename T>
ConvDims conv_check(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                    const Triple& stride, const Triple& pad, bool depthwise) {
  check_rank5(input, "conv3d");
  check_rank5(kernel, "conv3d");
  ConvDims d;
  d.B = input.extent(0);
  d.Cin = input.extent(1);
  d.X = input.extent(2);
  d.Y = input.extent(3);
  d.Z = input.extent(4);
  d.Cout = kernel.extent(0);
  d.KX = kernel.extent(2);
  d.KY = kernel.extent(3);
  d.KZ = kernel.extent(4);
  d.stride = stride;
  d.pad = pad;
  if (depthwise) {
    require(kernel.extent(1) == 1,
            "depthwise_conv3d: kernel axis 1 must be 1, got " + std::to_string(kernel.extent(1)));
    require(d.Cout == d.Cin, "depthwise_conv3d: kernel axis 0 (" + std::to_string(d.Cout) +
                                 ") must equal input channel axis 1 (" + std::to_string(d.Cin) +
                                 "): one filter per input channel");
  } else {
    require(kernel.extent(1) == d.Cin,
            "conv3d: kernel axis 1 (" + std::to_string(kernel.extent(1)) +
                ") must match input channel axis 1 (" + std::to_string(d.Cin) + ")");
  }
  if (!bias.empty()) {
    require(bias.shape() == Shape{d.Cout},
            "conv3d: bias shape " + shape_str(bias.shape()) + " must be [" +
                std::to_string(d.Cout) + "]");
  }
  for (int axis = 0; axis < 3; ++axis) {
    require(stride[static_cast<size_t>(axis)] >= 1,
            "conv3d: stride must be >= 1 on spatial axis " + std::to_string(axis));
    require(pad[static_cast<size_t>(axis)] >= 0,
            "conv3d: padding must be >= 0 on spatial axis " + std::to_string(axis));
  }
  d.OX = conv_out_extent(d.X, d.KX, stride[0], pad[0]);
  d.OY = conv_out_extent(d.Y, d.KY, stride[1], pad[1]);
  d.OZ = conv_out_extent(d.Z, d.KZ, stride[2], pad[2]);
  const int64_t outs[3] = {d.OX, d.OY, d.OZ};
  for (int axis = 0; axis < 3; ++axis) {
    require(outs[axis] >= 1, "conv3d: output extent < 1 on spatial axis " + std::to_string(axis) +
                                 " (input " + shape_str(input.shape()) + ", kernel " +
                                 shape_str(kernel.shape()) + ")");
  }
  return d;
}

// Valid output range [lo, hi] such that in-bounds input is read for kernel
// offset k: 0 <= o*stride + k - pad <= in-1.
inline void valid_out_range(int64_t in, int64_t out, int64_t k, int64_t stride, int64_t pad,
                            int64_t& lo, int64_t& hi) {
  lo = std::max<int64_t>(0, ceil_div(pad - k, stride));
  hi = std::min<int64_t>(out - 1, (in - 1 - k + pad) / stride);
}

// dst[o] += sum_{k<3} w[k] * src[o + k - pz] over in-bounds taps; the
// three-tap interior runs as one fused pass.
template <typename T>
void row_conv3(T* __restrict__ dst, const T* __restrict__ src, const T* w, int64_t out_n,
               int64_t src_n, int64_t pz) {
  const int64_t int_lo = std::min<int64_t>(out_n, pz);
  const int64_t int_hi = std::min<int64_t>(out_n - 1, src_n - 3 + pz);
  for (int64_t o = 0; o < int_lo; ++o)
    for (int64_t k = 0; k < 3; ++k) {
      const int64_t i = o + k - pz;
      if (i >= 0 && i < src_n) dst[o] += w[k] * src[i];
    }
  const T w0 = w[0], w1 = w[1], w2 = w[2];
  const T* s = src - pz;
  for (int64_t o = int_lo; o <= int_hi; ++o) dst[o] += w0 * s[o] + w1 * s[o + 1] + w2 * s[o + 2];
  for (int64_t o = std::max<int64_t>(int_lo, int_hi + 1); o < out_n; ++o)
    for (int64_t k = 0; k < 3; ++k) {
      const int64_t i = o + k - pz;
      if (i >= 0 && i < src_n) dst[o] += w[k] * src[i];
    }
}

// accs[k] += sum_o src[o + k - pz] * g[o], three taps in one pass.
template <typename T>
void row_dot3(const T* __restrict__ src, const T* __restrict__ g, int64_t out_n, int64_t src_n,
              int64_t pz, T* accs) {
  const int64_t int_lo = std::min<int64_t>(out_n, pz);
  const int64_t int_hi = std::min<int64_t>(out_n - 1, src_n - 3 + pz);
  for (int64_t o = 0; o < int_lo; ++o)
    for (int64_t k = 0; k < 3; ++k) {
      const int64_t i = o + k - pz;
      if (i >= 0 && i < src_n) accs[k] += src[i] * g[o];
    }
  T a0 = T(0), a1 = T(0), a2 = T(0);
  const T* s = src - pz;
  for (int64_t o = int_lo; o <= int_hi; ++o) {
    const T gv = g[o];
    a0 += s[o] * gv;
    a1 += s[o + 1] * gv;
    a2 += s[o + 2] * gv;
  }
  accs[0] += a0;
  accs[1] += a1;
  accs[2] += a2;
  for (int64_t o = std::max<int64_t>(int_lo, int_hi + 1); o < out_n; ++o)
    for (int64_t k = 0; k < 3; ++k) {
      const int64_t i = o + k - pz;
      if (i >= 0 && i < src_n) accs[k] += src[i] * g[o];
    }
}

// Generic single-tap fallback for strided or non-3 z kernels.
template <typename T>
void conv_accumulate_slab(const ConvDims& d, const T* in, T w, int64_t kx, int64_t ky, int64_t kz,
                          T* out) {
  int64_t x_lo, x_hi, y_lo, y_hi, z_lo, z_hi;
  valid_out_range(d.X, d.OX, kx, d.stride[0], d.pad[0], x_lo, x_hi);
  valid_out_range(d.Y, d.OY, ky, d.stride[1], d.pad[1], y_lo, y_hi);
  valid_out_range(d.Z, d.OZ, kz, d.stride[2], d.pad[2], z_lo, z_hi);
  if (x_lo > x_hi || y_lo > y_hi || z_lo > z_hi) return;
  const int64_t sz = d.stride[2];
  const int64_t count = z_hi - z_lo + 1;
  for (int64_t ox = x_lo; ox <= x_hi; ++ox) {
    const int64_t ix = ox * d.stride[0] + kx - d.pad[0];
    for (int64_t oy = y_lo; oy <= y_hi; ++oy) {
      const int64_t iy = oy * d.stride[1] + ky - d.pad[1];
      const T* __restrict__ src = in + (ix * d.Y + iy) * d.Z + (z_lo * sz + kz - d.pad[2]);
      T* __restrict__ dst = out + (ox * d.OY + oy) * d.OZ + z_lo;
      if (sz == 1) {
        for (int64_t n = 0; n < count; ++n) dst[n] += w * src[n];
      } else {
        for (int64_t n = 0; n < count; ++n) dst[n] += w * src[n * sz];
      }
    }
  }
}

// out slab += input channel slab convolved with one KX*KY*KZ kernel row.
template <typename T>
void conv_forward_channel(const ConvDims& d, const T* in, const T* krow, T* out) {
  for (int64_t kx = 0; kx < d.KX; ++kx) {
    int64_t x_lo, x_hi;
    valid_out_range(d.X, d.OX, kx, d.stride[0], d.pad[0], x_lo, x_hi);
    for (int64_t ky = 0; ky < d.KY; ++ky) {
      int64_t y_lo, y_hi;
      valid_out_range(d.Y, d.OY, ky, d.stride[1], d.pad[1], y_lo, y_hi);
      const T* w = krow + (kx * d.KY + ky) * d.KZ;
      if (d.fast_z()) {
        for (int64_t ox = x_lo; ox <= x_hi; ++ox) {
          const int64_t ix = ox * d.stride[0] + kx - d.pad[0];
          for (int64_t oy = y_lo; oy <= y_hi; ++oy) {
            const int64_t iy = oy * d.stride[1] + ky - d.pad[1];
            row_conv3(out + (ox * d.OY + oy) * d.OZ, in + (ix * d.Y + iy) * d.Z, w, d.OZ, d.Z,
                      d.pad[2]);
          }
        }
      } else {
        for (int64_t kz = 0; kz < d.KZ; ++kz)
          conv_accumulate_slab(d, in, w[kz], kx, ky, kz, out);
      }
    }
  }
}

// gin slab += adjoint application of one kernel row to the out-grad slab.
template <typename T>
void conv_backward_input_channel(const ConvDims& d, const T* gout, const T* krow, T* gin) {
  const bool unit_stride = d.stride[0] == 1 && d.stride[1] == 1 && d.stride[2] == 1;
  if (unit_stride && d.KZ == 3 && d.pad[2] <= 2) {
    // gin[i] = sum_k w[k] * gout[i + pz - k]: reversed taps, mirrored pad
    for (int64_t kx = 0; kx < d.KX; ++kx) {
      int64_t x_lo, x_hi;
      valid_out_range(d.X, d.OX, kx, 1, d.pad[0], x_lo, x_hi);
      for (int64_t ky = 0; ky < d.KY; ++ky) {
        int64_t y_lo, y_hi;
        valid_out_range(d.Y, d.OY, ky, 1, d.pad[1], y_lo, y_hi);
        const T* w = krow + (kx * d.KY + ky) * d.KZ;
        const T wrev[3] = {w[2], w[1], w[0]};
        for (int64_t ox = x_lo; ox <= x_hi; ++ox) {
          const int64_t ix = ox + kx - d.pad[0];
          for (int64_t oy = y_lo; oy <= y_hi; ++oy) {
            const int64_t iy = oy + ky - d.pad[1];
            row_conv3(gin + (ix * d.Y + iy) * d.Z, gout + (ox * d.OY + oy) * d.OZ, wrev, d.Z,
                      d.OZ, 2 - d.pad[2]);
          }
        }
      }
    }
    return;
  }
  for (int64_t kx = 0; kx < d.KX; ++kx)
    for (int64_t ky = 0; ky < d.KY; ++ky)
      for (int64_t kz = 0; kz < d.KZ; ++kz) {
        const T w = krow[(kx * d.KY + ky) * d.KZ + kz];
        int64_t x_lo, x_hi, y_lo, y_hi, z_lo, z_hi;
        valid_out_range(d.X, d.OX, kx, d.stride[0], d.pad[0], x_lo, x_hi);
        valid_out_range(d.Y, d.OY, ky, d.stride[1], d.pad[1], y_lo, y_hi);
        valid_out_range(d.Z, d.OZ, kz, d.stride[2], d.pad[2], z_lo, z_hi);
        if (x_lo > x_hi || y_lo > y_hi || z_lo > z_hi) continue;
        const int64_t sz = d.stride[2];
        const int64_t count = z_hi - z_lo + 1;
        for (int64_t ox = x_lo; ox <= x_hi; ++ox) {
          const int64_t ix = ox * d.stride[0] + kx - d.pad[0];
          for (int64_t oy = y_lo; oy <= y_hi; ++oy) {
            const int64_t iy = oy * d.stride[1] + ky - d.pad[1];
            T* __restrict__ dst = gin + (ix * d.Y + iy) * d.Z + (z_lo * sz + kz - d.pad[2]);
            const T* __restrict__ src = gout + (ox * d.OY + oy) * d.OZ + z_lo;
            if (sz == 1) {
              for (int64_t n = 0; n < count; ++n) dst[n] += w * src[n];
            } else {
              for (int64_t n = 0; n < count; ++n) dst[n * sz] += w * src[n];
            }
          }
        }
      }
}

// Kernel-row gradient for one (in-channel, out-channel) pair.
template <typename T>
void conv_backward_weight_channel(const ConvDims& d, const T* in, const T* gout, T* grow) {
  for (int64_t kx = 0; kx < d.KX; ++kx) {
    int64_t x_lo, x_hi;
    valid_out_range(d.X, d.OX, kx, d.stride[0], d.pad[0], x_lo, x_hi);
    for (int64_t ky = 0; ky < d.KY; ++ky) {
      int64_t y_lo, y_hi;
      valid_out_range(d.Y, d.OY, ky, d.stride[1], d.pad[1], y_lo, y_hi);
      T* accs = grow + (kx * d.KY + ky) * d.KZ;
      if (d.fast_z()) {
        for (int64_t ox = x_lo; ox <= x_hi; ++ox) {
          const int64_t ix = ox * d.stride[0] + kx - d.pad[0];
          for (int64_t oy = y_lo; oy <= y_hi; ++oy) {
            const int64_t iy = oy * d.stride[1] + ky - d.pad[1];
            row_dot3(in + (ix * d.Y + iy) * d.Z, gout + (ox * d.OY + oy) * d.OZ, d.OZ, d.Z,
                     d.pad[2], accs);
          }
        }
      } else {
        for (int64_t kz = 0; kz < d.KZ; ++kz) {
          int64_t z_lo, z_hi;
          valid_out_range(d.Z, d.OZ, kz, d.stride[2], d.pad[2], z_lo, z_hi);
          if (x_lo > x_hi || y_lo > y_hi || z_lo > z_hi) continue;
          const int64_t sz = d.stride[2];
          const int64_t count = z_hi - z_lo + 1;
          T acc = T(0);
          for (int64_t ox = x_lo; ox <= x_hi; ++ox) {
            const int64_t ix = ox * d.stride[0] + kx - d.pad[0];
            for (int64_t oy = y_lo; oy <= y_hi; ++oy) {
              const int64_t iy = oy * d.stride[1] + ky - d.pad[1];
              const T* __restrict__ src = in + (ix * d.Y + iy) * d.Z + (z_lo * sz + kz - d.pad[2]);
              const T* __restrict__ g = gout + (ox * d.OY + oy) * d.OZ + z_lo;
              if (sz == 1) {
                for (int64_t n = 0; n < count; ++n) acc += src[n] * g[n];
              } else {
                for (int64_t n = 0; n < count; ++n) acc += src[n * sz] * g[n];
              }
            }
          }
          accs[kz] += acc;
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                       const Triple& stride, const Triple& padding, bool depthwise) {
  const ConvDims d = conv_check(input, kernel, bias, stride, padding, depthwise);
  Tensor<T> out(Shape{d.B, d.Cout, d.OX, d.OY, d.OZ});
  const int64_t in_spatial = d.X * d.Y * d.Z;
  const int64_t out_spatial = d.OX * d.OY * d.OZ;
  const int64_t ktaps = d.KX * d.KY * d.KZ;
  const T* pin = input.data();
  const T* pk = kernel.data();
  const T* pb = bias.empty() ? nullptr : bias.data();
  T* pout = out.data();

  parallel_for(d.B * d.Cout, [&](int64_t begin, int64_t end) {
    for (int64_t bco = begin; bco < end; ++bco) {
      const int64_t b = bco / d.Cout;
      const int64_t co = bco % d.Cout;
      T* oslab = pout + bco * out_spatial;
      if (pb) std::fill_n(oslab, out_spatial, pb[co]);
      const int64_t ci_begin = depthwise ? co : 0;
      const int64_t ci_end = depthwise ? co + 1 : d.Cin;
      for (int64_t ci = ci_begin; ci < ci_end; ++ci) {
        const T* islab = pin + (b * d.Cin + ci) * in_spatial;
        const T* krow = pk + (depthwise ? co : co * d.Cin + ci) * ktaps;
        conv_forward_channel(d, islab, krow, oslab);
      }
    }
  }, 1);

  if (input.tracked() || kernel.tracked() || bias.tracked()) {
    attach_backward<T>(
        out, {input.node(), kernel.node(), bias.empty() ? nullptr : bias.node()},
        [d, in_spatial, out_spatial, ktaps, depthwise, xinp = input.shared_values(),
         kinp = kernel.shared_values(), xn = input.node(), kn = kernel.node(),
         bn = bias.empty() ? nullptr : bias.node()](const std::vector<T>& g) {
          const std::vector<T>& xin = *xinp;
          const std::vector<T>& kin = *kinp;
          if (xn) {
            auto& gx = xn->grad_buffer();
            parallel_for(d.B * d.Cin, [&](int64_t begin, int64_t end) {
              for (int64_t bci = begin; bci < end; ++bci) {
                const int64_t b = bci / d.Cin;
                const int64_t ci = bci % d.Cin;
                T* gslab = gx.data() + bci * in_spatial;
                const int64_t co_begin = depthwise ? ci : 0;
                const int64_t co_end = depthwise ? ci + 1 : d.Cout;
                for (int64_t co = co_begin; co < co_end; ++co) {
                  const T* goslab = g.data() + (b * d.Cout + co) * out_spatial;
                  const T* krow = kin.data() + (depthwise ? co : co * d.Cin + ci) * ktaps;
                  conv_backward_input_channel(d, goslab, krow, gslab);
                }
              }
            }, 1);
          }
          if (kn) {
            auto& gk = kn->grad_buffer();
            parallel_for(d.Cout, [&](int64_t begin, int64_t end) {
              for (int64_t co = begin; co < end; ++co) {
                const int64_t ci_begin = depthwise ? co : 0;
                const int64_t ci_end = depthwise ? co + 1 : d.Cin;
                for (int64_t ci = ci_begin; ci < ci_end; ++ci) {
                  T* grow = gk.data() + (depthwise ? co : co * d.Cin + ci) * ktaps;
                  for (int64_t b = 0; b < d.B; ++b) {
                    const T* islab = xin.data() + (b * d.Cin + ci) * in_spatial;
                    const T* goslab = g.data() + (b * d.Cout + co) * out_spatial;
                    conv_backward_weight_channel(d, islab, goslab, grow);
                  }
                }
              }
            }, 1);
          }
          if (bn) {
            auto& gb = bn->grad_buffer();
            for (int64_t b = 0; b < d.B; ++b)
              for (int64_t co = 0; co < d.Cout; ++co) {
                const T* goslab = g.data() + (b * d.Cout + co) * out_spatial;
                T acc = T(0);
                for (int64_t v = 0; v < out_spatial; ++v) acc += goslab[v];
                gb[co] += acc;
              }
          }
        });
  }
  return out;
}

}  // namespace detail

// 3D cross-correlation of [B,Cin,X,Y,Z] with kernel [Cout,Cin,KX,KY,KZ].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 const Triple& stride = {1, 1, 1}, const Triple& padding = {0, 0, 0}) {
  return detail::conv_forward(input, kernel, bias, stride, padding, false);
}

// Per-channel 3D convolution, kernel [C,1,KX,KY,KZ].
template <typename T>
Tensor<T> depthwise_conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                           const Triple& stride = {1, 1, 1}, const Triple& padding = {0, 0, 0}) {
  return detail::conv_forward(input, kernel, bias, stride, padding, true);
}

// Depthwise filtering followed by 1x1x1 channel mixing (MobileNet-style
// factorization). Bias applies after the pointwise stage.
template <typename T>
Tensor<T> depthwise_separable_conv3d(const Tensor<T>& input, const Tensor<T>& depthwise_kernel,
                                     const Tensor<T>& pointwise_kernel, const Tensor<T>& bias,
                                     const Triple& stride = {1, 1, 1},
                                     const Triple& padding = {0, 0, 0}) {
  detail::check_rank5(pointwise_kernel, "depthwise_separable_conv3d");
  require(pointwise_kernel.extent(2) == 1 && pointwise_kernel.extent(3) == 1 &&
              pointwise_kernel.extent(4) == 1,
          "depthwise_separable_conv3d: pointwise kernel must be 1x1x1, got " +
              shape_str(pointwise_kernel.shape()));
  Tensor<T> filtered = depthwise_conv3d(input, depthwise_kernel, Tensor<T>(), stride, padding);
  return conv3d(filtered, pointwise_kernel, bias);
}

// Non-overlapping transposed convolution: kernel [Cin,Cout,KX,KY,KZ] with
// kernel size equal to stride, output spatial extents = input * stride.
// Exact adjoint of conv3d with the same kernel, stride = kernel, pad 0.
template <typename T>
Tensor<T> conv3d_transposed(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                            const Triple& stride) {
  detail::check_rank5(input, "conv3d_transposed");
  detail::check_rank5(kernel, "conv3d_transposed");
  const int64_t B = input.extent(0), Cin = input.extent(1);
  const int64_t X = input.extent(2), Y = input.extent(3), Z = input.extent(4);
  const int64_t Cout = kernel.extent(1);
  require(kernel.extent(0) == Cin, "conv3d_transposed: kernel axis 0 (" +
                                       std::to_string(kernel.extent(0)) +
                                       ") must match input channel axis 1 (" +
                                       std::to_string(Cin) + ")");
  for (int axis = 0; axis < 3; ++axis) {
    require(kernel.extent(static_cast<size_t>(axis + 2)) == stride[static_cast<size_t>(axis)],
            "conv3d_transposed: kernel extent must equal stride on spatial axis " +
                std::to_string(axis) + " (kernel " + shape_str(kernel.shape()) + ")");
  }
  if (!bias.empty())
    require(bias.shape() == Shape{Cout}, "conv3d_transposed: bias shape " +
                                             shape_str(bias.shape()) + " must be [" +
                                             std::to_string(Cout) + "]");

  const int64_t sx = stride[0], sy = stride[1], sz = stride[2];
  const int64_t OX = X * sx, OY = Y * sy, OZ = Z * sz;
  const int64_t in_spatial = X * Y * Z;
  const int64_t out_spatial = OX * OY * OZ;
  const int64_t ktaps = sx * sy * sz;
  Tensor<T> out(Shape{B, Cout, OX, OY, OZ});
  const T* pin = input.data();
  const T* pk = kernel.data();
  const T* pb = bias.empty() ? nullptr : bias.data();
  T* pout = out.data();

  parallel_for(B * Cout, [&](int64_t begin, int64_t end) {
    for (int64_t bco = begin; bco < end; ++bco) {
      const int64_t b = bco / Cout;
      const int64_t co = bco % Cout;
      T* oslab = pout + bco * out_spatial;
      if (pb) std::fill_n(oslab, out_spatial, pb[co]);
      for (int64_t ci = 0; ci < Cin; ++ci) {
        const T* islab = pin + (b * Cin + ci) * in_spatial;
        const T* krow = pk + (ci * Cout + co) * ktaps;
        int64_t t = 0;
        for (int64_t dx = 0; dx < sx; ++dx)
          for (int64_t dy = 0; dy < sy; ++dy)
            for (int64_t dz = 0; dz < sz; ++dz, ++t) {
              const T w = krow[t];
              for (int64_t x = 0; x < X; ++x)
                for (int64_t y = 0; y < Y; ++y) {
                  const T* __restrict__ src = islab + (x * Y + y) * Z;
                  T* __restrict__ dst = oslab + ((x * sx + dx) * OY + (y * sy + dy)) * OZ + dz;
                  for (int64_t z = 0; z < Z; ++z) dst[z * sz] += w * src[z];
                }
            }
      }
    }
  }, 1);

  if (input.tracked() || kernel.tracked() || bias.tracked()) {
    detail::attach_backward<T>(
        out, {input.node(), kernel.node(), bias.empty() ? nullptr : bias.node()},
        [B, Cin, Cout, X, Y, Z, OX, OY, OZ, sx, sy, sz, in_spatial, out_spatial, ktaps,
         xinp = input.shared_values(), kinp = kernel.shared_values(), xn = input.node(),
         kn = kernel.node(),
         bn = bias.empty() ? nullptr : bias.node()](const std::vector<T>& g) {
          const std::vector<T>& xin = *xinp;
          const std::vector<T>& kin = *kinp;
          if (xn) {
            auto& gx = xn->grad_buffer();
            parallel_for(B * Cin, [&](int64_t begin, int64_t end) {
              for (int64_t bci = begin; bci < end; ++bci) {
                const int64_t b = bci / Cin;
                const int64_t ci = bci % Cin;
                T* gslab = gx.data() + bci * in_spatial;
                for (int64_t co = 0; co < Cout; ++co) {
                  const T* goslab = g.data() + (b * Cout + co) * out_spatial;
                  const T* krow = kin.data() + (ci * Cout + co) * ktaps;
                  int64_t t = 0;
                  for (int64_t dx = 0; dx < sx; ++dx)
                    for (int64_t dy = 0; dy < sy; ++dy)
                      for (int64_t dz = 0; dz < sz; ++dz, ++t) {
                        const T w = krow[t];
                        for (int64_t x = 0; x < X; ++x)
                          for (int64_t y = 0; y < Y; ++y) {
                            T* __restrict__ dst = gslab + (x * Y + y) * Z;
                            const T* __restrict__ src =
                                goslab + ((x * sx + dx) * OY + (y * sy + dy)) * OZ + dz;
                            for (int64_t z = 0; z < Z; ++z) dst[z] += w * src[z * sz];
                          }
                      }
                }
              }
            }, 1);
          }
          if (kn) {
            auto& gk = kn->grad_buffer();
            parallel_for(Cin, [&](int64_t begin, int64_t end) {
              for (int64_t ci = begin; ci < end; ++ci) {
                for (int64_t co = 0; co < Cout; ++co) {
                  T* grow = gk.data() + (ci * Cout + co) * ktaps;
                  int64_t t = 0;
                  for (int64_t dx = 0; dx < sx; ++dx)
                    for (int64_t dy = 0; dy < sy; ++dy)
                      for (int64_t dz = 0; dz < sz; ++dz, ++t) {
                        T acc = T(0);
                        for (int64_t b = 0; b < B; ++b) {
                          const T* islab = xin.data() + (b * Cin + ci) * in_spatial;
                          const T* goslab = g.data() + (b * Cout + co) * out_spatial;
                          for (int64_t x = 0; x < X; ++x)
                            for (int64_t y = 0; y < Y; ++y) {
                              const T* __restrict__ src = islab + (x * Y + y) * Z;
                              const T* __restrict__ gsrc =
                                  goslab + ((x * sx + dx) * OY + (y * sy + dy)) * OZ + dz;
                              for (int64_t z = 0; z < Z; ++z) acc += src[z] * gsrc[z * sz];
                            }
                        }
                        grow[t] += acc;
                      }
                }
              }
            }, 1);
          }
          if (bn) {
            auto& gb = bn->grad_buffer();
            for (int64_t b = 0; b < B; ++b)
              for (int64_t co = 0; co < Cout; ++co) {
                const T* goslab = g.data() + (b * Cout + co) * out_spatial;
                T acc = T(0);
                for (int64_t v = 0; v < out_spatial; ++v) acc += goslab[v];
                gb[co] += acc;
              }
          }
        });
  }
  return out;
}

}  // namespace ctseg
