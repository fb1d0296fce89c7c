#pragma once

#include "ctseg/network.hpp"
#include "ctseg/postprocess.hpp"
#include "ctseg/sliding.hpp"
#include "ctseg/volume.hpp"

namespace ctseg {

// Desk-scale analogue of the paper-scale pipeline geometry (coarse resample
// 96^3, patch 96x64x96, fine resample 96x64x96). All extents must be
// divisible by 2^num_stages of the models they feed.
struct InferenceSettings {
  std::array<int64_t, 3> coarse_extents{24, 24, 24};
  std::array<int64_t, 3> patch{24, 16, 24};
  std::array<int64_t, 3> fine_extents{24, 24, 24};
  float clip_lo = -300.f;
  float clip_hi = 300.f;
  double sigma_scale = 0.125;
  double pad_fraction = 0.10;
  int connectivity = 26;
};

// reorient -> resample -> clip -> z-score, the fixed preprocessing order.
inline Volume preprocess_image(const Volume& rai_image, const std::array<int64_t, 3>& target,
                               float clip_lo, float clip_hi) {
  return zscore(clip_hu(resample_to(rai_image, target, ResampleMode::trilinear), clip_lo, clip_hi));
}

template <typename T>
std::function<Tensor<T>(const Tensor<T>&)> make_predictor(const ModelParams<T>* params,
                                                          NetworkConfig config) {
  return [params, config](const Tensor<T>& x) {
    return softmax_channel(forward_segmentation(*params, config, x));
  };
}

// Coarse stage on an RAI-oriented image: Gaussian-weighted sliding window,
// argmax, largest component, nearest-resized back to the RAI grid.
template <typename T>
Volume coarse_stage_mask(const ModelParams<T>& params, const NetworkConfig& config,
                         const Volume& rai_image, const InferenceSettings& s) {
  Volume pre = preprocess_image(rai_image, s.coarse_extents, s.clip_lo, s.clip_hi);
  Tensor<T> vol = volume_to_tensor<T>(pre);
  SlidingPlan plan = make_sliding_plan(s.coarse_extents, s.patch);
  Tensor<T> importance = gaussian_importance<T>(s.patch, s.sigma_scale);
  Tensor<T> probs =
      sliding_window_predict<T>(make_predictor(&params, config), vol, plan, importance);
  Volume small = largest_component_per_class(tensor_argmax_to_mask(probs, pre), s.connectivity);
  Volume mask = resample_to(small, rai_image.extents, ResampleMode::nearest);
  mask.spacing = rai_image.spacing;
  return mask;
}

// Coarse-only inference on the original grid (pseudo-mask generation).
template <typename T>
Volume coarse_infer(const ModelParams<T>& params, const NetworkConfig& config, const Case& c,
                    const InferenceSettings& s) {
  Volume rai = reorient_rai(c.image);
  Volume mask = coarse_stage_mask(params, config, rai, s);
  return restore_orientation(mask, c.image);
}

// Full coarse-to-fine inference: coarse localization, 10%-padded crop,
// single-shot fine segmentation, restoration to the original grid. An empty
// coarse mask falls back to the whole volume (reported via used_fallback).
template <typename T>
Volume coarse_to_fine_infer(const ModelParams<T>& coarse_params, const NetworkConfig& coarse_config,
                            const ModelParams<T>& fine_params, const NetworkConfig& fine_config,
                            const Case& c, const InferenceSettings& s,
                            bool* used_fallback = nullptr) {
  Volume rai = reorient_rai(c.image);
  Volume coarse_mask = coarse_stage_mask(coarse_params, coarse_config, rai, s);

  CropBox box;
  bool fallback = false;
  try {
    box = compute_crop_box(coarse_mask, s.pad_fraction);
  } catch (const empty_mask_error&) {
    box.lo = {0, 0, 0};
    box.hi = rai.extents;
    fallback = true;
  }
  if (used_fallback) *used_fallback = fallback;

  Volume fine_in = preprocess_image(crop(rai, box), s.fine_extents, s.clip_lo, s.clip_hi);
  Tensor<T> probs =
      softmax_channel(forward_segmentation(fine_params, fine_config, volume_to_tensor<T>(fine_in)));
  Volume fine_small =
      largest_component_per_class(tensor_argmax_to_mask(probs, fine_in), s.connectivity);
  Volume fine_crop = resample_to(fine_small, box.extents(), ResampleMode::nearest);
  Volume full = paste_into(fine_crop, box, rai.extents);
  full.spacing = rai.spacing;
  full.direction = rai.direction;
  return restore_orientation(full, c.image);
}

}  // namespace ctseg
