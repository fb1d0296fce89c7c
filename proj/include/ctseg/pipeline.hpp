#pragma once

#include "ctseg/config.hpp"
#include "ctseg/native_io.hpp"

namespace ctseg {

// Coarse-stage training data: whole volumes reoriented, resampled to the
// coarse extents, clipped and z-scored; labels nearest-resampled.
inline Case prepare_coarse_case(const Case& raw, const RunConfig& cfg) {
  Case out;
  out.id = raw.id;
  out.split = raw.split;
  Volume rai = reorient_rai(raw.image);
  out.image = preprocess_image(rai, cfg.coarse_extents, cfg.clip_lo, cfg.clip_hi);
  if (raw.label.has_value()) {
    Volume label_rai = reorient_rai(*raw.label);
    out.label = resample_to(label_rai, cfg.coarse_extents, ResampleMode::nearest);
  }
  return out;
}

// Fine-stage training data: crop around the mask (ground truth when present,
// else the supplied coarse pseudo-mask), then resample the crop to the fine
// extents. An empty crop source falls back to the whole volume.
inline Case prepare_fine_case(const Case& raw, const Volume* pseudo_mask, const RunConfig& cfg) {
  Case out;
  out.id = raw.id;
  out.split = raw.split;
  Volume rai = reorient_rai(raw.image);

  const Volume* source = nullptr;
  Volume source_rai;
  if (raw.label.has_value()) {
    source_rai = reorient_rai(*raw.label);
    source = &source_rai;
  } else if (pseudo_mask != nullptr) {
    source_rai = reorient_rai(*pseudo_mask);
    source = &source_rai;
  }

  CropBox box;
  box.lo = {0, 0, 0};
  box.hi = rai.extents;
  if (source != nullptr) {
    try {
      box = compute_crop_box(*source, cfg.pad_fraction);
    } catch (const empty_mask_error&) {
      // whole-volume fallback
    }
  }

  out.image = preprocess_image(crop(rai, box), cfg.fine_extents, cfg.clip_lo, cfg.clip_hi);
  if (raw.label.has_value()) {
    out.label = resample_to(crop(source_rai, box), cfg.fine_extents, ResampleMode::nearest);
  }
  return out;
}

// Loads and prepares the full stage dataset. For the fine stage, unlabeled
// cases crop around pseudo-masks found in pseudo_dir ({id}_pred.json).
inline std::vector<Case> prepare_stage_data(const DatasetManifest& manifest,
                                            const std::string& stage,
                                            const std::filesystem::path& pseudo_dir,
                                            const RunConfig& cfg) {
  require(stage == "coarse" || stage == "fine", "stage must be 'coarse' or 'fine'");
  std::vector<Case> out;
  for (const auto& entry : manifest.entries) {
    Case raw = load_case(entry);
    if (stage == "coarse") {
      out.push_back(prepare_coarse_case(raw, cfg));
      continue;
    }
    Volume pseudo;
    const Volume* pseudo_ptr = nullptr;
    if (!raw.label.has_value()) {
      const auto path = pseudo_dir / (entry.id + "_pred.json");
      if (pseudo_dir.empty() || !std::filesystem::exists(path))
        throw io_error("fine stage: no label and no pseudo-mask for case " + entry.id +
                       (pseudo_dir.empty() ? " (pass --pseudo-masks)" : " at " + path.string()));
      pseudo = read_volume(path);
      pseudo_ptr = &pseudo;
    }
    out.push_back(prepare_fine_case(raw, pseudo_ptr, cfg));
  }
  return out;
}

}  // namespace ctseg
