#pragma once

#include "ctseg/rng.hpp"
#include "ctseg/volume.hpp"

namespace ctseg {

struct AugmentConfig {
  double prob = 0.2;  // per-transform activation probability
  double rotation_max_deg = 15.0;
  double scale_min = 0.85;
  double scale_max = 1.25;
  double elastic_alpha = 2.0;      // control-point displacement std, voxels
  int64_t elastic_grid = 4;        // control points per axis
  double noise_sigma_max = 0.1;    // after z-score
  double brightness_max = 0.25;    // after z-score
  std::array<int64_t, 3> patch{0, 0, 0};  // {0,0,0} disables the crop

  static AugmentConfig disabled() {
    AugmentConfig cfg;
    cfg.prob = 0.0;
    return cfg;
  }
};

namespace detail {

struct GeometricTransform {
  // inverse linear map (output -> source), applied about the volume center
  std::array<double, 9> inv{1, 0, 0, 0, 1, 0, 0, 0, 1};
  bool linear_active = false;
  // trilinearly upsampled control-point displacement field
  std::vector<float> disp;  // 3 * voxels when active
  bool elastic_active = false;
};

inline std::array<double, 9> mat_mul(const std::array<double, 9>& a,
                                     const std::array<double, 9>& b) {
  std::array<double, 9> c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[static_cast<size_t>(i * 3 + j)] +=
          a[static_cast<size_t>(i * 3 + k)] * b[static_cast<size_t>(k * 3 + j)];
  return c;
}

inline std::array<double, 9> rotation_about_axis(int axis, double radians) {
  const double c = std::cos(radians), s = std::sin(radians);
  switch (axis) {
    case 0: return {1, 0, 0, 0, c, -s, 0, s, c};
    case 1: return {c, 0, s, 0, 1, 0, -s, 0, c};
    default: return {c, -s, 0, s, c, 0, 0, 0, 1};
  }
}

template <typename P>
P sample_volume(const std::vector<P>& data, const std::array<int64_t, 3>& e, double sx, double sy,
                double sz, bool nearest) {
  sx = std::clamp(sx, 0.0, static_cast<double>(e[0] - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(e[1] - 1));
  sz = std::clamp(sz, 0.0, static_cast<double>(e[2] - 1));
  if (nearest) {
    const int64_t x = static_cast<int64_t>(std::floor(sx + 0.5));
    const int64_t y = static_cast<int64_t>(std::floor(sy + 0.5));
    const int64_t z = static_cast<int64_t>(std::floor(sz + 0.5));
    return data[static_cast<size_t>((x * e[1] + y) * e[2] + z)];
  }
  const int64_t x0 = static_cast<int64_t>(std::floor(sx));
  const int64_t y0 = static_cast<int64_t>(std::floor(sy));
  const int64_t z0 = static_cast<int64_t>(std::floor(sz));
  const int64_t x1 = std::min(x0 + 1, e[0] - 1);
  const int64_t y1 = std::min(y0 + 1, e[1] - 1);
  const int64_t z1 = std::min(z0 + 1, e[2] - 1);
  const double fx = sx - static_cast<double>(x0);
  const double fy = sy - static_cast<double>(y0);
  const double fz = sz - static_cast<double>(z0);
  auto at = [&](int64_t x, int64_t y, int64_t z) {
    return static_cast<double>(data[static_cast<size_t>((x * e[1] + y) * e[2] + z)]);
  };
  const double c00 = at(x0, y0, z0) * (1 - fz) + at(x0, y0, z1) * fz;
  const double c01 = at(x0, y1, z0) * (1 - fz) + at(x0, y1, z1) * fz;
  const double c10 = at(x1, y0, z0) * (1 - fz) + at(x1, y0, z1) * fz;
  const double c11 = at(x1, y1, z0) * (1 - fz) + at(x1, y1, z1) * fz;
  return static_cast<P>((c00 * (1 - fy) + c01 * fy) * (1 - fx) + (c10 * (1 - fy) + c11 * fy) * fx);
}

}  // namespace detail

// Applies the same random geometric transform to image and mask (trilinear /
// nearest), then intensity transforms to the image only, then a random crop
// to the configured patch size. Deterministic for a fixed rng state.
inline std::pair<Volume, Volume> augment(const Volume& image, const Volume& mask,
                                         const AugmentConfig& cfg, Rng& rng) {
  require(image.kind == VolumeKind::image && mask.kind == VolumeKind::mask,
          "augment: expects (image, mask)");
  require(image.extents == mask.extents, "augment: paired grids must match");
  const auto& e = image.extents;

  const bool do_rotate = rng.bernoulli(cfg.prob);
  const bool do_scale = rng.bernoulli(cfg.prob);
  const bool do_elastic = rng.bernoulli(cfg.prob);
  const bool do_noise = rng.bernoulli(cfg.prob);
  const bool do_brightness = rng.bernoulli(cfg.prob);

  detail::GeometricTransform geo;
  if (do_rotate) {
    const int axis = static_cast<int>(rng.uniform_int(0, 2));
    const double rad = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg) * M_PI / 180.0;
    geo.inv = detail::mat_mul(geo.inv, detail::rotation_about_axis(axis, -rad));
    geo.linear_active = true;
  }
  if (do_scale) {
    const double s = rng.uniform(cfg.scale_min, cfg.scale_max);
    std::array<double, 9> inv_scale{1 / s, 0, 0, 0, 1 / s, 0, 0, 0, 1 / s};
    geo.inv = detail::mat_mul(geo.inv, inv_scale);
    geo.linear_active = true;
  }
  if (do_elastic) {
    const int64_t g = cfg.elastic_grid;
    std::vector<float> control(static_cast<size_t>(3 * g * g * g));
    for (auto& v : control) v = static_cast<float>(rng.normal(0.0, cfg.elastic_alpha));
    geo.disp.resize(static_cast<size_t>(3 * image.voxel_count()));
    for (int comp = 0; comp < 3; ++comp) {
      Tensor<float> c(Shape{1, 1, g, g, g},
                      std::vector<float>(control.begin() + comp * g * g * g,
                                         control.begin() + (comp + 1) * g * g * g));
      Tensor<float> up = trilinear_resize(c, e);
      std::copy(up.values().begin(), up.values().end(),
                geo.disp.begin() + comp * image.voxel_count());
    }
    geo.elastic_active = true;
  }

  Volume out_image = image;
  Volume out_mask = mask;
  if (geo.linear_active || geo.elastic_active) {
    out_image.image.resize(image.image.size());
    out_mask.labels.resize(mask.labels.size());
    const double cx = static_cast<double>(e[0] - 1) / 2.0;
    const double cy = static_cast<double>(e[1] - 1) / 2.0;
    const double cz = static_cast<double>(e[2] - 1) / 2.0;
    const int64_t voxels = image.voxel_count();
    int64_t i = 0;
    for (int64_t x = 0; x < e[0]; ++x)
      for (int64_t y = 0; y < e[1]; ++y)
        for (int64_t z = 0; z < e[2]; ++z, ++i) {
          double ux = static_cast<double>(x) - cx;
          double uy = static_cast<double>(y) - cy;
          double uz = static_cast<double>(z) - cz;
          double sx = geo.inv[0] * ux + geo.inv[1] * uy + geo.inv[2] * uz + cx;
          double sy = geo.inv[3] * ux + geo.inv[4] * uy + geo.inv[5] * uz + cy;
          double sz = geo.inv[6] * ux + geo.inv[7] * uy + geo.inv[8] * uz + cz;
          if (geo.elastic_active) {
            sx += geo.disp[static_cast<size_t>(i)];
            sy += geo.disp[static_cast<size_t>(voxels + i)];
            sz += geo.disp[static_cast<size_t>(2 * voxels + i)];
          }
          out_image.image[static_cast<size_t>(i)] =
              detail::sample_volume(image.image, e, sx, sy, sz, false);
          out_mask.labels[static_cast<size_t>(i)] =
              detail::sample_volume(mask.labels, e, sx, sy, sz, true);
        }
  }

  if (cfg.patch != std::array<int64_t, 3>{0, 0, 0}) {
    CropBox box;
    for (int axis = 0; axis < 3; ++axis) {
      const auto a = static_cast<size_t>(axis);
      require(cfg.patch[a] >= 1 && cfg.patch[a] <= e[a],
              "augment: patch extent " + std::to_string(cfg.patch[a]) +
                  " exceeds volume extent " + std::to_string(e[a]) + " on axis " +
                  std::to_string(axis));
      box.lo[a] = rng.uniform_int(0, e[a] - cfg.patch[a]);
      box.hi[a] = box.lo[a] + cfg.patch[a];
    }
    out_image = crop(out_image, box);
    out_mask = crop(out_mask, box);
  }

  if (do_noise) {
    const double sigma = rng.uniform(0.0, cfg.noise_sigma_max);
    for (auto& v : out_image.image) v += static_cast<float>(rng.normal(0.0, sigma));
  }
  if (do_brightness) {
    const float delta = static_cast<float>(rng.uniform(-cfg.brightness_max, cfg.brightness_max));
    for (auto& v : out_image.image) v += delta;
  }
  return {std::move(out_image), std::move(out_mask)};
}

}  // namespace ctseg
