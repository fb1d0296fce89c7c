#pragma once

#include <functional>

#include "ctseg/tensor.hpp"

namespace ctseg {

// Window starts per axis: multiples of half the patch extent, with the last
// window clamped flush to the boundary.
struct SlidingPlan {
  std::array<int64_t, 3> volume;
  std::array<int64_t, 3> patch;
  std::array<std::vector<int64_t>, 3> starts;

  int64_t window_count() const {
    return static_cast<int64_t>(starts[0].size() * starts[1].size() * starts[2].size());
  }
};

inline SlidingPlan make_sliding_plan(const std::array<int64_t, 3>& volume_extents,
                                     const std::array<int64_t, 3>& patch_extents) {
  SlidingPlan plan;
  plan.volume = volume_extents;
  plan.patch = patch_extents;
  for (int axis = 0; axis < 3; ++axis) {
    const auto a = static_cast<size_t>(axis);
    const int64_t extent = volume_extents[a];
    const int64_t patch = patch_extents[a];
    require(patch >= 1 && patch <= extent,
            "make_sliding_plan: patch extent " + std::to_string(patch) +
                " exceeds volume extent " + std::to_string(extent) + " on axis " +
                std::to_string(axis));
    const int64_t stride = std::max<int64_t>(1, patch / 2);
    auto& starts = plan.starts[a];
    for (int64_t s = 0; s + patch < extent; s += stride) starts.push_back(s);
    const int64_t last = extent - patch;
    if (starts.empty() || starts.back() != last) starts.push_back(last);
  }
  return plan;
}

// Separable Gaussian importance map, peak-normalized to 1 at the patch
// center and floored at 1e-8.
template <typename T>
Tensor<T> gaussian_importance(const std::array<int64_t, 3>& patch_extents,
                              double sigma_scale = 0.125) {
  std::array<std::vector<double>, 3> axis_weights;
  for (int axis = 0; axis < 3; ++axis) {
    const auto a = static_cast<size_t>(axis);
    const int64_t extent = patch_extents[a];
    require(extent >= 1, "gaussian_importance: extents must be >= 1");
    axis_weights[a].resize(static_cast<size_t>(extent));
    const double center = static_cast<double>(extent - 1) / 2.0;
    const double sigma = std::max(1e-12, sigma_scale * static_cast<double>(extent));
    for (int64_t i = 0; i < extent; ++i) {
      const double u = (static_cast<double>(i) - center) / sigma;
      axis_weights[a][static_cast<size_t>(i)] = std::exp(-0.5 * u * u);
    }
  }
  Tensor<T> map(Shape{1, 1, patch_extents[0], patch_extents[1], patch_extents[2]});
  double peak = 0;
  int64_t i = 0;
  for (int64_t x = 0; x < patch_extents[0]; ++x)
    for (int64_t y = 0; y < patch_extents[1]; ++y)
      for (int64_t z = 0; z < patch_extents[2]; ++z, ++i) {
        const double w = axis_weights[0][static_cast<size_t>(x)] *
                         axis_weights[1][static_cast<size_t>(y)] *
                         axis_weights[2][static_cast<size_t>(z)];
        map.values()[static_cast<size_t>(i)] = static_cast<T>(w);
        peak = std::max(peak, w);
      }
  for (auto& w : map.values())
    w = std::max(static_cast<T>(1e-8), static_cast<T>(static_cast<double>(w) / peak));
  return map;
}

// Importance-weighted sum of per-window predictions. `predict` maps a
// [1,1,px,py,pz] patch to [1,C,px,py,pz] probabilities. Windows are
// accumulated in plan order, so the result does not depend on threading.
template <typename T>
Tensor<T> sliding_window_predict(const std::function<Tensor<T>(const Tensor<T>&)>& predict,
                                 const Tensor<T>& volume, const SlidingPlan& plan,
                                 const Tensor<T>& importance) {
  detail::check_rank5(volume, "sliding_window_predict");
  require(volume.extent(0) == 1 && volume.extent(1) == 1,
          "sliding_window_predict: expected a [1,1,X,Y,Z] volume");
  const int64_t X = volume.extent(2), Y = volume.extent(3), Z = volume.extent(4);
  require(plan.volume == std::array<int64_t, 3>{X, Y, Z},
          "sliding_window_predict: plan does not match the volume extents");
  const auto& patch = plan.patch;
  require(importance.shape() == Shape{1, 1, patch[0], patch[1], patch[2]},
          "sliding_window_predict: importance map does not match the patch extents");

  // Incremental weighted mean per voxel: out += (p - out) * w / W_new.
  // Algebraically identical to sum(p*w)/sum(w), but exact for a single
  // window (beta = 1) and for windows that all agree (p - out = 0).
  const int64_t volume_spatial = X * Y * Z;
  std::vector<double> weight_sum(static_cast<size_t>(volume_spatial), 0.0);
  std::vector<double> mean;  // allocated once the channel count is known
  int64_t channels = -1;

  Tensor<T> window(Shape{1, 1, patch[0], patch[1], patch[2]});
  for (int64_t sx : plan.starts[0])
    for (int64_t sy : plan.starts[1])
      for (int64_t sz : plan.starts[2]) {
        T* w = window.data();
        const T* src = volume.data();
        for (int64_t x = 0; x < patch[0]; ++x)
          for (int64_t y = 0; y < patch[1]; ++y) {
            const T* row = src + ((sx + x) * Y + (sy + y)) * Z + sz;
            std::copy_n(row, patch[2], w + (x * patch[1] + y) * patch[2]);
          }
        Tensor<T> probs = predict(window);
        detail::check_rank5(probs, "sliding_window_predict");
        if (channels < 0) {
          channels = probs.extent(1);
          mean.assign(static_cast<size_t>(channels * volume_spatial), 0.0);
        }
        require(probs.shape() == Shape{1, channels, patch[0], patch[1], patch[2]},
                "sliding_window_predict: model output shape changed between windows");

        const int64_t patch_spatial = patch[0] * patch[1] * patch[2];
        const T* imp = importance.data();
        const T* p = probs.data();
        for (int64_t x = 0; x < patch[0]; ++x)
          for (int64_t y = 0; y < patch[1]; ++y) {
            const int64_t local = (x * patch[1] + y) * patch[2];
            const int64_t global = ((sx + x) * Y + (sy + y)) * Z + sz;
            for (int64_t z = 0; z < patch[2]; ++z) {
              const double wv = static_cast<double>(imp[local + z]);
              double& ws = weight_sum[static_cast<size_t>(global + z)];
              ws += wv;
              const double beta = wv / ws;
              for (int64_t c = 0; c < channels; ++c) {
                double& m = mean[static_cast<size_t>(c * volume_spatial + global + z)];
                const double pv = static_cast<double>(p[c * patch_spatial + local + z]);
                m += (pv - m) * beta;
              }
            }
          }
      }

  Tensor<T> out(Shape{1, channels, X, Y, Z});
  for (int64_t i = 0; i < channels * volume_spatial; ++i)
    out.values()[static_cast<size_t>(i)] = static_cast<T>(mean[static_cast<size_t>(i)]);
  return out;
}

}  // namespace ctseg
