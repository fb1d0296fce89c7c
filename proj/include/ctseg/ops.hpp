#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "ctseg/parallel.hpp"
#include "ctseg/tensor.hpp"

namespace ctseg {

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

template <typename T>
void check_rank5(const Tensor<T>& t, const char* op) {
  require(t.shape().size() == 5,
          std::string(op) + ": expected a rank-5 [B,C,X,Y,Z] tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  parallel_for(a.size(), [&](int64_t begin, int64_t end) {
    for (int64_t i = begin; i < end; ++i) po[i] = pa[i] + pb[i];
  }, 16384);
  detail::attach_backward<T>(out, {a.node(), b.node()},
                             [an = a.node(), bn = b.node()](const std::vector<T>& g) {
                               if (an) detail::axpy(an->grad_buffer(), g);
                               if (bn) detail::axpy(bn->grad_buffer(), g);
                             });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] - pb[i];
  detail::attach_backward<T>(out, {a.node(), b.node()},
                             [an = a.node(), bn = b.node()](const std::vector<T>& g) {
                               if (an) detail::axpy(an->grad_buffer(), g);
                               if (bn) {
                                 auto& gb = bn->grad_buffer();
                                 for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                               }
                             });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * pb[i];
  detail::attach_backward<T>(
      out, {a.node(), b.node()},
      [an = a.node(), bn = b.node(), av = a.shared_values(), bv = b.shared_values()](const std::vector<T>& g) {
        if (an) {
          auto& ga = an->grad_buffer();
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bv)[i];
        }
        if (bn) {
          auto& gb = bn->grad_buffer();
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*av)[i];
        }
      });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * factor;
  detail::attach_backward<T>(out, {a.node()}, [an = a.node(), factor](const std::vector<T>& g) {
    auto& ga = an->grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  const T* pa = a.data();
  for (int64_t i = 0; i < a.size(); ++i) acc += pa[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  detail::attach_backward<T>(out, {a.node()}, [an = a.node(), n = a.size()](const std::vector<T>& g) {
    auto& ga = an->grad_buffer();
    for (int64_t i = 0; i < n; ++i) ga[i] += g[0];
  });
  return out;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope = T(0.01)) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  parallel_for(a.size(), [&](int64_t begin, int64_t end) {
    for (int64_t i = begin; i < end; ++i) po[i] = pa[i] > T(0) ? pa[i] : slope * pa[i];
  }, 16384);
  // subgradient at 0 uses the negative-side slope
  detail::attach_backward<T>(out, {a.node()},
                             [an = a.node(), av = a.shared_values(), slope](const std::vector<T>& g) {
                               auto& ga = an->grad_buffer();
                               const T* pa = av->data();
                               parallel_for(static_cast<int64_t>(g.size()),
                                            [&](int64_t begin, int64_t end) {
                                 for (int64_t i = begin; i < end; ++i)
                                   ga[static_cast<size_t>(i)] +=
                                       g[static_cast<size_t>(i)] * (pa[i] > T(0) ? T(1) : slope);
                               }, 16384);
                             });
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = T(1) / (T(1) + std::exp(-pa[i]));
  detail::attach_backward<T>(out, {a.node()},
                             [an = a.node(), ov = out.shared_values()](const std::vector<T>& g) {
                               auto& ga = an->grad_buffer();
                               for (size_t i = 0; i < g.size(); ++i)
                                 ga[i] += g[i] * (*ov)[i] * (T(1) - (*ov)[i]);
                             });
  return out;
}

// Softmax along the channel axis of a [B,C,...] tensor (axis 1).
template <typename T>
Tensor<T> softmax_channel(const Tensor<T>& a) {
  require(a.shape().size() >= 2, "softmax_channel: need at least [B,C] axes, got " +
                                     shape_str(a.shape()));
  const int64_t batch = a.extent(0);
  const int64_t channels = a.extent(1);
  int64_t spatial = 1;
  for (size_t i = 2; i < a.shape().size(); ++i) spatial *= a.shape()[i];

  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t b = 0; b < batch; ++b) {
    const int64_t base_b = b * channels * spatial;
    for (int64_t v = 0; v < spatial; ++v) {
      const int64_t base = base_b + v;
      T hi = pa[base];
      for (int64_t c = 1; c < channels; ++c) hi = std::max(hi, pa[base + c * spatial]);
      T z = T(0);
      for (int64_t c = 0; c < channels; ++c) {
        T e = std::exp(pa[base + c * spatial] - hi);
        po[base + c * spatial] = e;
        z += e;
      }
      T inv = T(1) / z;
      for (int64_t c = 0; c < channels; ++c) po[base + c * spatial] *= inv;
    }
  }
  detail::attach_backward<T>(
      out, {a.node()},
      [an = a.node(), ovp = out.shared_values(), batch, channels, spatial](const std::vector<T>& g) {
        const std::vector<T>& ov = *ovp;
        auto& ga = an->grad_buffer();
        for (int64_t b = 0; b < batch; ++b) {
          const int64_t base_b = b * channels * spatial;
          for (int64_t v = 0; v < spatial; ++v) {
            const int64_t base = base_b + v;
            T dot = T(0);
            for (int64_t c = 0; c < channels; ++c)
              dot += g[base + c * spatial] * ov[base + c * spatial];
            for (int64_t c = 0; c < channels; ++c) {
              const int64_t i = base + c * spatial;
              ga[i] += ov[i] * (g[i] - dot);
            }
          }
        }
      });
  return out;
}

// [B,C,X,Y,Z] -> [B,C,1,1,1] mean over the spatial axes.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& a) {
  detail::check_rank5(a, "global_avg_pool");
  const int64_t batch = a.extent(0), channels = a.extent(1);
  const int64_t spatial = a.extent(2) * a.extent(3) * a.extent(4);
  Tensor<T> out(Shape{batch, channels, 1, 1, 1});
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t bc = 0; bc < batch * channels; ++bc) {
    T acc = T(0);
    const T* p = pa + bc * spatial;
    for (int64_t v = 0; v < spatial; ++v) acc += p[v];
    po[bc] = acc / static_cast<T>(spatial);
  }
  detail::attach_backward<T>(out, {a.node()},
                             [an = a.node(), batch, channels, spatial](const std::vector<T>& g) {
                               auto& ga = an->grad_buffer();
                               for (int64_t bc = 0; bc < batch * channels; ++bc) {
                                 const T gv = g[bc] / static_cast<T>(spatial);
                                 T* p = ga.data() + bc * spatial;
                                 for (int64_t v = 0; v < spatial; ++v) p[v] += gv;
                               }
                             });
  return out;
}

// x [B,C,X,Y,Z] scaled per channel by s [B,C,1,1,1].
template <typename T>
Tensor<T> mul_channel(const Tensor<T>& x, const Tensor<T>& s) {
  detail::check_rank5(x, "mul_channel");
  require(s.shape() == Shape({x.extent(0), x.extent(1), 1, 1, 1}),
          "mul_channel: scale shape " + shape_str(s.shape()) + " does not match " +
              shape_str(x.shape()));
  const int64_t bc_count = x.extent(0) * x.extent(1);
  const int64_t spatial = x.extent(2) * x.extent(3) * x.extent(4);
  Tensor<T> out(x.shape());
  const T* px = x.data();
  const T* ps = s.data();
  T* po = out.data();
  for (int64_t bc = 0; bc < bc_count; ++bc) {
    const T sv = ps[bc];
    const T* p = px + bc * spatial;
    T* q = po + bc * spatial;
    for (int64_t v = 0; v < spatial; ++v) q[v] = p[v] * sv;
  }
  detail::attach_backward<T>(
      out, {x.node(), s.node()},
      [xn = x.node(), sn = s.node(), xvp = x.shared_values(), svp = s.shared_values(), bc_count,
       spatial](const std::vector<T>& g) {
        const std::vector<T>& xv = *xvp;
        const std::vector<T>& sv = *svp;
        if (xn) {
          auto& gx = xn->grad_buffer();
          for (int64_t bc = 0; bc < bc_count; ++bc) {
            const T s0 = sv[bc];
            const T* pg = g.data() + bc * spatial;
            T* p = gx.data() + bc * spatial;
            for (int64_t v = 0; v < spatial; ++v) p[v] += pg[v] * s0;
          }
        }
        if (sn) {
          auto& gs = sn->grad_buffer();
          for (int64_t bc = 0; bc < bc_count; ++bc) {
            const T* pg = g.data() + bc * spatial;
            const T* p = xv.data() + bc * spatial;
            T acc = T(0);
            for (int64_t v = 0; v < spatial; ++v) acc += pg[v] * p[v];
            gs[bc] += acc;
          }
        }
      });
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_rank5(a, "concat_channels");
  detail::check_rank5(b, "concat_channels");
  for (size_t axis : {0u, 2u, 3u, 4u}) {
    require(a.shape()[axis] == b.shape()[axis],
            "concat_channels: extents differ on axis " + std::to_string(axis) + ": " +
                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const int64_t batch = a.extent(0);
  const int64_t ca = a.extent(1), cb = b.extent(1);
  const int64_t spatial = a.extent(2) * a.extent(3) * a.extent(4);
  Tensor<T> out(Shape{batch, ca + cb, a.extent(2), a.extent(3), a.extent(4)});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int64_t bi = 0; bi < batch; ++bi) {
    std::copy_n(pa + bi * ca * spatial, ca * spatial, po + bi * (ca + cb) * spatial);
    std::copy_n(pb + bi * cb * spatial, cb * spatial, po + (bi * (ca + cb) + ca) * spatial);
  }
  detail::attach_backward<T>(
      out, {a.node(), b.node()},
      [an = a.node(), bn = b.node(), batch, ca, cb, spatial](const std::vector<T>& g) {
        for (int64_t bi = 0; bi < batch; ++bi) {
          const T* pg = g.data() + bi * (ca + cb) * spatial;
          if (an) {
            T* p = an->grad_buffer().data() + bi * ca * spatial;
            for (int64_t i = 0; i < ca * spatial; ++i) p[i] += pg[i];
          }
          if (bn) {
            T* p = bn->grad_buffer().data() + bi * cb * spatial;
            for (int64_t i = 0; i < cb * spatial; ++i) p[i] += pg[ca * spatial + i];
          }
        }
      });
  return out;
}

// Per-(batch, channel) normalization to zero mean / unit variance followed by
// a learned affine (gain, bias), population statistics over the spatial axes.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                        T eps = T(1e-5)) {
  detail::check_rank5(x, "instance_norm");
  const int64_t batch = x.extent(0), channels = x.extent(1);
  const int64_t spatial = x.extent(2) * x.extent(3) * x.extent(4);
  require(gain.shape() == Shape{channels} && bias.shape() == Shape{channels},
          "instance_norm: gain/bias must have shape [" + std::to_string(channels) + "]");

  Tensor<T> out(x.shape());
  std::vector<T> means(static_cast<size_t>(batch * channels));
  std::vector<T> inv_stds(static_cast<size_t>(batch * channels));
  const T* px = x.data();
  const T* pg = gain.data();
  const T* pb = bias.data();
  T* po = out.data();
  parallel_for(batch * channels, [&](int64_t bc_begin, int64_t bc_end) {
    for (int64_t bc = bc_begin; bc < bc_end; ++bc) {
      const int64_t c = bc % channels;
      const T* p = px + bc * spatial;
      T mean = T(0);
      for (int64_t v = 0; v < spatial; ++v) mean += p[v];
      mean /= static_cast<T>(spatial);
      T var = T(0);
      for (int64_t v = 0; v < spatial; ++v) {
        const T d = p[v] - mean;
        var += d * d;
      }
      var /= static_cast<T>(spatial);
      const T inv = T(1) / std::sqrt(var + eps);
      means[bc] = mean;
      inv_stds[bc] = inv;
      T* q = po + bc * spatial;
      const T g0 = pg[c], b0 = pb[c];
      for (int64_t v = 0; v < spatial; ++v) q[v] = (p[v] - mean) * inv * g0 + b0;
    }
  }, 1);
  detail::attach_backward<T>(
      out, {x.node(), gain.node(), bias.node()},
      [xn = x.node(), gn = gain.node(), bn = bias.node(), xvp = x.shared_values(),
       gvp = gain.shared_values(), means = std::move(means), inv_stds = std::move(inv_stds),
       batch, channels, spatial](const std::vector<T>& g) {
        const std::vector<T>& xv = *xvp;
        const std::vector<T>& gv = *gvp;
        if (xn) xn->grad_buffer();
        if (gn) gn->grad_buffer();
        if (bn) bn->grad_buffer();
        // channel-partitioned: gain/bias accumulate per channel across batch
        parallel_for(channels, [&](int64_t c_begin, int64_t c_end) {
          for (int64_t c = c_begin; c < c_end; ++c) {
            for (int64_t b = 0; b < batch; ++b) {
              const int64_t bc = b * channels + c;
              const T* px = xv.data() + bc * spatial;
              const T* pg = g.data() + bc * spatial;
              const T mean = means[bc], inv = inv_stds[bc];
              T s1 = T(0), s2 = T(0);
              for (int64_t v = 0; v < spatial; ++v) {
                s1 += pg[v];
                s2 += pg[v] * (px[v] - mean) * inv;
              }
              if (bn) bn->grad[static_cast<size_t>(c)] += s1;
              if (gn) gn->grad[static_cast<size_t>(c)] += s2;
              if (xn) {
                T* q = xn->grad.data() + bc * spatial;
                const T k = gv[c] * inv;
                const T m1 = s1 / static_cast<T>(spatial);
                const T m2 = s2 / static_cast<T>(spatial);
                for (int64_t v = 0; v < spatial; ++v)
                  q[v] += k * (pg[v] - m1 - (px[v] - mean) * inv * m2);
              }
            }
          }
        }, 1);
      });
  return out;
}

namespace detail {

// Half-pixel-centers source coordinate, clamped to the valid range.
struct ResizeTap {
  int64_t lo;
  int64_t hi;
  double frac;
};

inline std::vector<ResizeTap> resize_taps(int64_t in, int64_t out) {
  std::vector<ResizeTap> taps(static_cast<size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int64_t lo = static_cast<int64_t>(std::floor(src));
    taps[static_cast<size_t>(i)] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

// Trilinear interpolation of the spatial axes of a [B,C,X,Y,Z] tensor onto
// target extents, half-pixel centers with edge clamping.
template <typename T>
Tensor<T> trilinear_resize(const Tensor<T>& x, const std::array<int64_t, 3>& target) {
  detail::check_rank5(x, "trilinear_resize");
  for (int axis = 0; axis < 3; ++axis)
    require(target[static_cast<size_t>(axis)] >= 1,
            "trilinear_resize: target extent must be >= 1 on spatial axis " + std::to_string(axis));

  const int64_t batch = x.extent(0), channels = x.extent(1);
  const int64_t X = x.extent(2), Y = x.extent(3), Z = x.extent(4);
  const int64_t OX = target[0], OY = target[1], OZ = target[2];
  if (OX == X && OY == Y && OZ == Z) {
    Tensor<T> out(x.shape(), x.values());
    detail::attach_backward<T>(out, {x.node()}, [xn = x.node()](const std::vector<T>& g) {
      detail::axpy(xn->grad_buffer(), g);
    });
    return out;
  }

  const auto tx = detail::resize_taps(X, OX);
  const auto ty = detail::resize_taps(Y, OY);
  const auto tz = detail::resize_taps(Z, OZ);

  Tensor<T> out(Shape{batch, channels, OX, OY, OZ});
  const T* px = x.data();
  T* po = out.data();
  const int64_t in_spatial = X * Y * Z;
  const int64_t out_spatial = OX * OY * OZ;
  parallel_for(batch * channels, [&](int64_t bc_begin, int64_t bc_end) {
    for (int64_t bc = bc_begin; bc < bc_end; ++bc) {
      const T* in = px + bc * in_spatial;
      T* o = po + bc * out_spatial;
      for (int64_t i = 0; i < OX; ++i) {
        const auto& ax = tx[static_cast<size_t>(i)];
        for (int64_t j = 0; j < OY; ++j) {
          const auto& ay = ty[static_cast<size_t>(j)];
          for (int64_t k = 0; k < OZ; ++k) {
            const auto& az = tz[static_cast<size_t>(k)];
            auto at = [&](int64_t xi, int64_t yi, int64_t zi) {
              return static_cast<double>(in[(xi * Y + yi) * Z + zi]);
            };
            const double c00 = at(ax.lo, ay.lo, az.lo) * (1 - az.frac) + at(ax.lo, ay.lo, az.hi) * az.frac;
            const double c01 = at(ax.lo, ay.hi, az.lo) * (1 - az.frac) + at(ax.lo, ay.hi, az.hi) * az.frac;
            const double c10 = at(ax.hi, ay.lo, az.lo) * (1 - az.frac) + at(ax.hi, ay.lo, az.hi) * az.frac;
            const double c11 = at(ax.hi, ay.hi, az.lo) * (1 - az.frac) + at(ax.hi, ay.hi, az.hi) * az.frac;
            const double c0 = c00 * (1 - ay.frac) + c01 * ay.frac;
            const double c1 = c10 * (1 - ay.frac) + c11 * ay.frac;
            o[(i * OY + j) * OZ + k] = static_cast<T>(c0 * (1 - ax.frac) + c1 * ax.frac);
          }
        }
      }
    }
  }, 1);
  detail::attach_backward<T>(
      out, {x.node()},
      [xn = x.node(), tx, ty, tz, batch, channels, Y, Z, OX, OY, OZ, in_spatial,
       out_spatial](const std::vector<T>& g) {
        auto& gx = xn->grad_buffer();
        parallel_for(batch * channels, [&](int64_t bc_begin, int64_t bc_end) {
        for (int64_t bc = bc_begin; bc < bc_end; ++bc) {
          T* gi = gx.data() + bc * in_spatial;
          const T* go = g.data() + bc * out_spatial;
          for (int64_t i = 0; i < OX; ++i) {
            const auto& ax = tx[static_cast<size_t>(i)];
            for (int64_t j = 0; j < OY; ++j) {
              const auto& ay = ty[static_cast<size_t>(j)];
              for (int64_t k = 0; k < OZ; ++k) {
                const auto& az = tz[static_cast<size_t>(k)];
                const double gv = static_cast<double>(go[(i * OY + j) * OZ + k]);
                auto put = [&](int64_t xi, int64_t yi, int64_t zi, double w) {
                  gi[(xi * Y + yi) * Z + zi] += static_cast<T>(gv * w);
                };
                put(ax.lo, ay.lo, az.lo, (1 - ax.frac) * (1 - ay.frac) * (1 - az.frac));
                put(ax.lo, ay.lo, az.hi, (1 - ax.frac) * (1 - ay.frac) * az.frac);
                put(ax.lo, ay.hi, az.lo, (1 - ax.frac) * ay.frac * (1 - az.frac));
                put(ax.lo, ay.hi, az.hi, (1 - ax.frac) * ay.frac * az.frac);
                put(ax.hi, ay.lo, az.lo, ax.frac * (1 - ay.frac) * (1 - az.frac));
                put(ax.hi, ay.lo, az.hi, ax.frac * (1 - ay.frac) * az.frac);
                put(ax.hi, ay.hi, az.lo, ax.frac * ay.frac * (1 - az.frac));
                put(ax.hi, ay.hi, az.hi, ax.frac * ay.frac * az.frac);
              }
            }
          }
        }
        }, 1);
      });
  return out;
}

}  // namespace ctseg
