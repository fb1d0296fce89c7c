#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctseg/ops.hpp"

namespace ctseg {

enum class VolumeKind { image, mask };

// Scalar 3D grid with voxel spacing and anatomical orientation. The patient
// frame is LPS; direction column c is the unit patient-space vector along
// which voxel index c increases. The canonical RAI grid (axes running
// right->left, anterior->posterior, inferior->superior) therefore has the
// identity direction matrix.
struct Volume {
  std::array<int64_t, 3> extents{0, 0, 0};  // [X,Y,Z], Z fastest in memory
  std::array<double, 3> spacing{1, 1, 1};   // mm per voxel
  std::array<double, 9> direction{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
  VolumeKind kind = VolumeKind::image;
  std::vector<float> image;
  std::vector<uint8_t> labels;

  int64_t voxel_count() const { return extents[0] * extents[1] * extents[2]; }

  int64_t index(int64_t x, int64_t y, int64_t z) const {
    return (x * extents[1] + y) * extents[2] + z;
  }

  double dir(int row, int col) const { return direction[static_cast<size_t>(row * 3 + col)]; }
  void set_dir(int row, int col, double v) { direction[static_cast<size_t>(row * 3 + col)] = v; }

  static Volume make_image(std::array<int64_t, 3> extents, float fill = 0.f) {
    Volume v;
    v.extents = extents;
    v.kind = VolumeKind::image;
    v.image.assign(static_cast<size_t>(v.voxel_count()), fill);
    return v;
  }

  static Volume make_mask(std::array<int64_t, 3> extents, uint8_t fill = 0) {
    Volume v;
    v.extents = extents;
    v.kind = VolumeKind::mask;
    v.labels.assign(static_cast<size_t>(v.voxel_count()), fill);
    return v;
  }
};

// One dataset case; the label grid, when present, matches the image grid.
struct Case {
  std::string id;
  Volume image;
  std::optional<Volume> label;
  std::string split;               // labeled | unlabeled | validation
  std::vector<char> nifti_header;  // original 348-byte header when imported from NIfTI
};

// Axis-quantized orientation: voxel axis c runs along patient axis
// patient_axis[c], flipped when flip[c] < 0.
struct OrientationMap {
  std::array<int, 3> patient_axis;
  std::array<int, 3> flip;

  bool is_identity() const {
    return patient_axis == std::array<int, 3>{0, 1, 2} && flip == std::array<int, 3>{1, 1, 1};
  }
};

inline OrientationMap quantize_orientation(const Volume& v, double max_off_axis = 0.1) {
  OrientationMap map{};
  std::array<bool, 3> taken{false, false, false};
  for (int c = 0; c < 3; ++c) {
    int best = 0;
    for (int r = 1; r < 3; ++r)
      if (std::abs(v.dir(r, c)) > std::abs(v.dir(best, c))) best = r;
    for (int r = 0; r < 3; ++r) {
      if (r == best) continue;
      if (std::abs(v.dir(r, c)) > max_off_axis)
        throw unsupported_orientation_error(
            "oblique orientation: voxel axis " + std::to_string(c) + " has off-axis component " +
            std::to_string(v.dir(r, c)));
    }
    if (taken[static_cast<size_t>(best)])
      throw unsupported_orientation_error("degenerate orientation: patient axis " +
                                          std::to_string(best) + " claimed twice");
    taken[static_cast<size_t>(best)] = true;
    map.patient_axis[static_cast<size_t>(c)] = best;
    map.flip[static_cast<size_t>(c)] = v.dir(best, c) >= 0 ? 1 : -1;
  }
  return map;
}

namespace detail {

// Copies payload so that output axis r is input axis c (with flip), where
// r = map.patient_axis[c].
template <typename P>
void remap_payload(const std::vector<P>& in, std::array<int64_t, 3> in_extents,
                   const OrientationMap& map, std::vector<P>& out,
                   std::array<int64_t, 3>& out_extents) {
  std::array<int, 3> src_axis{};  // output axis r <- input axis src_axis[r]
  for (int c = 0; c < 3; ++c) src_axis[static_cast<size_t>(map.patient_axis[static_cast<size_t>(c)])] = c;
  for (int r = 0; r < 3; ++r)
    out_extents[static_cast<size_t>(r)] = in_extents[static_cast<size_t>(src_axis[static_cast<size_t>(r)])];
  out.resize(in.size());
  std::array<int64_t, 3> idx{};
  for (int64_t i0 = 0; i0 < out_extents[0]; ++i0)
    for (int64_t i1 = 0; i1 < out_extents[1]; ++i1)
      for (int64_t i2 = 0; i2 < out_extents[2]; ++i2) {
        const std::array<int64_t, 3> out_idx{i0, i1, i2};
        for (int c = 0; c < 3; ++c) {
          const int r = map.patient_axis[static_cast<size_t>(c)];
          int64_t j = out_idx[static_cast<size_t>(r)];
          if (map.flip[static_cast<size_t>(c)] < 0) j = in_extents[static_cast<size_t>(c)] - 1 - j;
          idx[static_cast<size_t>(c)] = j;
        }
        out[static_cast<size_t>((i0 * out_extents[1] + i1) * out_extents[2] + i2)] =
            in[static_cast<size_t>((idx[0] * in_extents[1] + idx[1]) * in_extents[2] + idx[2])];
      }
}

}  // namespace detail

// Permutes/flips axes so the volume is in canonical RAI order. Payload
// values are preserved exactly; already-RAI input is returned unchanged.
inline Volume reorient_rai(const Volume& v) {
  const OrientationMap map = quantize_orientation(v);
  if (map.is_identity()) {
    Volume out = v;
    for (int i = 0; i < 9; ++i) out.direction[static_cast<size_t>(i)] = (i % 4 == 0) ? 1.0 : 0.0;
    return out;
  }
  Volume out;
  out.kind = v.kind;
  if (v.kind == VolumeKind::image) {
    detail::remap_payload(v.image, v.extents, map, out.image, out.extents);
  } else {
    detail::remap_payload(v.labels, v.extents, map, out.labels, out.extents);
  }
  for (int c = 0; c < 3; ++c)
    out.spacing[static_cast<size_t>(map.patient_axis[static_cast<size_t>(c)])] =
        v.spacing[static_cast<size_t>(c)];
  return out;
}

// Undoes reorient_rai: maps an RAI-grid volume back onto the grid of
// `original` (extents, spacing, direction copied from it).
inline Volume restore_orientation(const Volume& rai, const Volume& original) {
  const OrientationMap map = quantize_orientation(original);
  Volume out;
  out.kind = rai.kind;
  out.extents = original.extents;
  out.spacing = original.spacing;
  out.direction = original.direction;
  if (map.is_identity()) {
    out.image = rai.image;
    out.labels = rai.labels;
    return out;
  }
  // inverse remap: original voxel (j0,j1,j2) reads RAI voxel (i_r)
  const auto& ext = original.extents;
  auto rai_index = [&](int64_t j0, int64_t j1, int64_t j2) {
    const std::array<int64_t, 3> j{j0, j1, j2};
    std::array<int64_t, 3> i{};
    for (int c = 0; c < 3; ++c) {
      const int r = map.patient_axis[static_cast<size_t>(c)];
      int64_t val = j[static_cast<size_t>(c)];
      if (map.flip[static_cast<size_t>(c)] < 0) val = ext[static_cast<size_t>(c)] - 1 - val;
      i[static_cast<size_t>(r)] = val;
    }
    return (i[0] * rai.extents[1] + i[1]) * rai.extents[2] + i[2];
  };
  if (rai.kind == VolumeKind::image) {
    out.image.resize(static_cast<size_t>(out.voxel_count()));
    for (int64_t j0 = 0; j0 < ext[0]; ++j0)
      for (int64_t j1 = 0; j1 < ext[1]; ++j1)
        for (int64_t j2 = 0; j2 < ext[2]; ++j2)
          out.image[static_cast<size_t>((j0 * ext[1] + j1) * ext[2] + j2)] =
              rai.image[static_cast<size_t>(rai_index(j0, j1, j2))];
  } else {
    out.labels.resize(static_cast<size_t>(out.voxel_count()));
    for (int64_t j0 = 0; j0 < ext[0]; ++j0)
      for (int64_t j1 = 0; j1 < ext[1]; ++j1)
        for (int64_t j2 = 0; j2 < ext[2]; ++j2)
          out.labels[static_cast<size_t>((j0 * ext[1] + j1) * ext[2] + j2)] =
              rai.labels[static_cast<size_t>(rai_index(j0, j1, j2))];
  }
  return out;
}

enum class ResampleMode { trilinear, nearest };

namespace detail {

inline int64_t nearest_tap(int64_t in, int64_t out, int64_t i) {
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in - 1));
  return std::clamp<int64_t>(static_cast<int64_t>(std::floor(src + 0.5)), 0, in - 1);
}

}  // namespace detail

// Whole-volume resampling to fixed target extents; trilinear for images,
// nearest for masks. Spacing rescales by the extent ratio.
inline Volume resample_to(const Volume& v, std::array<int64_t, 3> target, ResampleMode mode) {
  for (int axis = 0; axis < 3; ++axis)
    require(target[static_cast<size_t>(axis)] >= 1,
            "resample_to: target extent must be >= 1 on axis " + std::to_string(axis));
  require(!(v.kind == VolumeKind::mask && mode == ResampleMode::trilinear),
          "resample_to: trilinear interpolation is not valid for a mask");

  Volume out;
  out.kind = v.kind;
  out.extents = target;
  out.direction = v.direction;
  for (int axis = 0; axis < 3; ++axis)
    out.spacing[static_cast<size_t>(axis)] =
        v.spacing[static_cast<size_t>(axis)] * static_cast<double>(v.extents[static_cast<size_t>(axis)]) /
        static_cast<double>(target[static_cast<size_t>(axis)]);

  if (v.extents == target) {
    out.image = v.image;
    out.labels = v.labels;
    return out;
  }

  if (mode == ResampleMode::trilinear) {
    Tensor<float> t(Shape{1, 1, v.extents[0], v.extents[1], v.extents[2]},
                    std::vector<float>(v.image));
    Tensor<float> r = trilinear_resize(t, target);
    out.image = r.values();
  } else {
    std::vector<int64_t> tx(static_cast<size_t>(target[0]));
    std::vector<int64_t> ty(static_cast<size_t>(target[1]));
    std::vector<int64_t> tz(static_cast<size_t>(target[2]));
    for (int64_t i = 0; i < target[0]; ++i)
      tx[static_cast<size_t>(i)] = detail::nearest_tap(v.extents[0], target[0], i);
    for (int64_t i = 0; i < target[1]; ++i)
      ty[static_cast<size_t>(i)] = detail::nearest_tap(v.extents[1], target[1], i);
    for (int64_t i = 0; i < target[2]; ++i)
      tz[static_cast<size_t>(i)] = detail::nearest_tap(v.extents[2], target[2], i);
    auto remap = [&](const auto& src, auto& dst) {
      dst.resize(static_cast<size_t>(out.voxel_count()));
      int64_t o = 0;
      for (int64_t x = 0; x < target[0]; ++x)
        for (int64_t y = 0; y < target[1]; ++y)
          for (int64_t z = 0; z < target[2]; ++z, ++o)
            dst[static_cast<size_t>(o)] = src[static_cast<size_t>(v.index(
                tx[static_cast<size_t>(x)], ty[static_cast<size_t>(y)], tz[static_cast<size_t>(z)]))];
    };
    if (v.kind == VolumeKind::image)
      remap(v.image, out.image);
    else
      remap(v.labels, out.labels);
  }
  return out;
}

inline Volume clip_hu(const Volume& v, float lo = -300.f, float hi = 300.f) {
  require(v.kind == VolumeKind::image, "clip_hu: image volumes only");
  require(lo < hi, "clip_hu: lo must be < hi");
  Volume out = v;
  for (auto& x : out.image) x = std::clamp(x, lo, hi);
  return out;
}

// (x - mean) / (std + 1e-8) over all voxels of the volume, population std.
inline Volume zscore(const Volume& v) {
  require(v.kind == VolumeKind::image, "zscore: image volumes only");
  Volume out = v;
  double mean = 0;
  for (float x : v.image) mean += x;
  mean /= static_cast<double>(v.image.size());
  double var = 0;
  for (float x : v.image) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.image.size());
  const double denom = std::sqrt(var) + 1e-8;
  for (auto& x : out.image) x = static_cast<float>((x - mean) / denom);
  return out;
}

// Half-open crop box [lo, hi).
struct CropBox {
  std::array<int64_t, 3> lo{0, 0, 0};
  std::array<int64_t, 3> hi{0, 0, 0};

  std::array<int64_t, 3> extents() const {
    return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
  }
};

// Foreground bounding box expanded per axis by round(pad_fraction * box
// extent) on each side, clamped to the volume.
inline CropBox compute_crop_box(const Volume& mask, double pad_fraction = 0.10) {
  require(mask.kind == VolumeKind::mask, "compute_crop_box: mask volumes only");
  CropBox box;
  box.lo = {mask.extents[0], mask.extents[1], mask.extents[2]};
  box.hi = {0, 0, 0};
  bool any = false;
  int64_t i = 0;
  for (int64_t x = 0; x < mask.extents[0]; ++x)
    for (int64_t y = 0; y < mask.extents[1]; ++y)
      for (int64_t z = 0; z < mask.extents[2]; ++z, ++i) {
        if (mask.labels[static_cast<size_t>(i)] == 0) continue;
        any = true;
        box.lo[0] = std::min(box.lo[0], x);
        box.lo[1] = std::min(box.lo[1], y);
        box.lo[2] = std::min(box.lo[2], z);
        box.hi[0] = std::max(box.hi[0], x + 1);
        box.hi[1] = std::max(box.hi[1], y + 1);
        box.hi[2] = std::max(box.hi[2], z + 1);
      }
  if (!any) throw empty_mask_error("compute_crop_box: mask has no foreground voxels");
  for (int axis = 0; axis < 3; ++axis) {
    const auto a = static_cast<size_t>(axis);
    const int64_t pad = llround(pad_fraction * static_cast<double>(box.hi[a] - box.lo[a]));
    box.lo[a] = std::max<int64_t>(0, box.lo[a] - pad);
    box.hi[a] = std::min<int64_t>(mask.extents[a], box.hi[a] + pad);
  }
  return box;
}

inline Volume crop(const Volume& v, const CropBox& box) {
  for (int axis = 0; axis < 3; ++axis) {
    const auto a = static_cast<size_t>(axis);
    require(box.lo[a] >= 0 && box.hi[a] <= v.extents[a] && box.lo[a] < box.hi[a],
            "crop: box out of bounds on axis " + std::to_string(axis));
  }
  Volume out;
  out.kind = v.kind;
  out.extents = box.extents();
  out.spacing = v.spacing;
  out.direction = v.direction;
  auto copy_payload = [&](const auto& src, auto& dst) {
    dst.resize(static_cast<size_t>(out.voxel_count()));
    int64_t o = 0;
    for (int64_t x = box.lo[0]; x < box.hi[0]; ++x)
      for (int64_t y = box.lo[1]; y < box.hi[1]; ++y)
        for (int64_t z = box.lo[2]; z < box.hi[2]; ++z, ++o)
          dst[static_cast<size_t>(o)] = src[static_cast<size_t>(v.index(x, y, z))];
  };
  if (v.kind == VolumeKind::image)
    copy_payload(v.image, out.image);
  else
    copy_payload(v.labels, out.labels);
  return out;
}

inline std::pair<Volume, CropBox> crop_with_padding(const Volume& image, const Volume& mask,
                                                    double pad_fraction = 0.10) {
  require(image.extents == mask.extents, "crop_with_padding: image and mask grids differ");
  const CropBox box = compute_crop_box(mask, pad_fraction);
  return {crop(image, box), box};
}

// Pastes `piece` (matching the box extents) into a background-initialized
// volume shaped like `reference`.
inline Volume paste_into(const Volume& piece, const CropBox& box,
                         const std::array<int64_t, 3>& reference_extents) {
  require(piece.kind == VolumeKind::mask, "paste_into: mask volumes only");
  require(piece.extents == box.extents(), "paste_into: piece does not match the crop box");
  Volume out = Volume::make_mask(reference_extents);
  out.spacing = piece.spacing;
  out.direction = piece.direction;
  int64_t i = 0;
  for (int64_t x = box.lo[0]; x < box.hi[0]; ++x)
    for (int64_t y = box.lo[1]; y < box.hi[1]; ++y)
      for (int64_t z = box.lo[2]; z < box.hi[2]; ++z, ++i)
        out.labels[static_cast<size_t>(out.index(x, y, z))] = piece.labels[static_cast<size_t>(i)];
  return out;
}

// --- tensor bridge -------------------------------------------------------

template <typename T>
Tensor<T> volume_to_tensor(const Volume& v) {
  require(v.kind == VolumeKind::image, "volume_to_tensor: image volumes only");
  Tensor<T> t(Shape{1, 1, v.extents[0], v.extents[1], v.extents[2]});
  for (size_t i = 0; i < v.image.size(); ++i) t.values()[i] = static_cast<T>(v.image[i]);
  return t;
}

template <typename T>
Tensor<T> mask_to_one_hot(const Volume& mask, int64_t num_classes) {
  require(mask.kind == VolumeKind::mask, "mask_to_one_hot: mask volumes only");
  const int64_t spatial = mask.voxel_count();
  Tensor<T> t(Shape{1, num_classes, mask.extents[0], mask.extents[1], mask.extents[2]});
  for (int64_t i = 0; i < spatial; ++i) {
    const uint8_t cls = mask.labels[static_cast<size_t>(i)];
    require(cls < num_classes, "mask_to_one_hot: label " + std::to_string(cls) +
                                   " out of range for " + std::to_string(num_classes) + " classes");
    t.values()[static_cast<size_t>(cls * spatial + i)] = T(1);
  }
  return t;
}

// Channel argmax of a [1,C,X,Y,Z] probability/logit tensor into a mask.
template <typename T>
Volume tensor_argmax_to_mask(const Tensor<T>& probs, const Volume& grid_like) {
  detail::check_rank5(probs, "tensor_argmax_to_mask");
  const int64_t channels = probs.extent(1);
  const int64_t spatial = probs.extent(2) * probs.extent(3) * probs.extent(4);
  Volume out = Volume::make_mask({probs.extent(2), probs.extent(3), probs.extent(4)});
  out.spacing = grid_like.spacing;
  out.direction = grid_like.direction;
  const T* p = probs.data();
  for (int64_t v = 0; v < spatial; ++v) {
    int64_t best = 0;
    T hi = p[v];
    for (int64_t c = 1; c < channels; ++c) {
      if (p[c * spatial + v] > hi) {
        hi = p[c * spatial + v];
        best = c;
      }
    }
    out.labels[static_cast<size_t>(v)] = static_cast<uint8_t>(best);
  }
  return out;
}

}  // namespace ctseg
