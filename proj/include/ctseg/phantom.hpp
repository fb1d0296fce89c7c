#pragma once

#include "ctseg/rng.hpp"
#include "ctseg/volume.hpp"

namespace ctseg {

// Synthetic phantom: a noisy baseline volume plus one non-overlapping random
// ellipsoid per foreground class with a class-specific intensity offset.
struct PhantomConfig {
  std::array<int64_t, 3> extents{48, 48, 48};
  int64_t num_classes = 4;  // including background
  float background_hu = -100.f;
  float noise_sigma = 30.f;
  float intensity_base = -25.f;   // class 1 mean intensity
  float intensity_step = 60.f;    // added per further class
  float intensity_jitter = 18.f;  // per-case, per-class offset (cohort heterogeneity)
  double min_semiaxis_frac = 0.10;
  double max_semiaxis_frac = 0.18;
  double center_margin_frac = 0.22;  // centers kept away from the borders
  int max_attempts = 200;
};

// Placement record of one generated ellipsoid, for verification.
struct PhantomEllipsoid {
  int64_t cls = 0;
  std::array<double, 3> center{};
  std::array<double, 3> semi_axes{};
  int64_t voxels = 0;
};

inline Case generate_phantom(uint64_t seed, const PhantomConfig& cfg = {},
                             std::vector<PhantomEllipsoid>* placements = nullptr) {
  for (int axis = 0; axis < 3; ++axis)
    require(cfg.extents[static_cast<size_t>(axis)] >= 16,
            "generate_phantom: extents must be >= 16 per axis");
  require(cfg.num_classes >= 2, "generate_phantom: need at least 2 classes");

  Rng rng(mix_seed(seed, hash_tag("phantom")));
  Volume image = Volume::make_image(cfg.extents);
  Volume label = Volume::make_mask(cfg.extents);
  for (auto& v : image.image)
    v = cfg.background_hu + static_cast<float>(rng.normal(0.0, cfg.noise_sigma));

  const auto& e = cfg.extents;
  for (int64_t cls = 1; cls < cfg.num_classes; ++cls) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      std::array<double, 3> center{}, semi{};
      for (int axis = 0; axis < 3; ++axis) {
        const auto a = static_cast<size_t>(axis);
        const double margin = cfg.center_margin_frac * static_cast<double>(e[a]);
        center[a] = rng.uniform(margin, static_cast<double>(e[a]) - margin);
        semi[a] = rng.uniform(cfg.min_semiaxis_frac, cfg.max_semiaxis_frac) *
                  static_cast<double>(e[a]);
      }
      std::vector<int64_t> inside;
      bool overlap = false;
      const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(center[0] - semi[0]) - 1);
      const int64_t x1 = std::min<int64_t>(e[0] - 1, static_cast<int64_t>(center[0] + semi[0]) + 1);
      const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(center[1] - semi[1]) - 1);
      const int64_t y1 = std::min<int64_t>(e[1] - 1, static_cast<int64_t>(center[1] + semi[1]) + 1);
      const int64_t z0 = std::max<int64_t>(0, static_cast<int64_t>(center[2] - semi[2]) - 1);
      const int64_t z1 = std::min<int64_t>(e[2] - 1, static_cast<int64_t>(center[2] + semi[2]) + 1);
      for (int64_t x = x0; x <= x1 && !overlap; ++x)
        for (int64_t y = y0; y <= y1 && !overlap; ++y)
          for (int64_t z = z0; z <= z1 && !overlap; ++z) {
            const double dx = (static_cast<double>(x) - center[0]) / semi[0];
            const double dy = (static_cast<double>(y) - center[1]) / semi[1];
            const double dz = (static_cast<double>(z) - center[2]) / semi[2];
            if (dx * dx + dy * dy + dz * dz > 1.0) continue;
            const int64_t i = label.index(x, y, z);
            if (label.labels[static_cast<size_t>(i)] != 0) {
              overlap = true;
            } else {
              inside.push_back(i);
            }
          }
      if (overlap || inside.empty()) continue;
      const float intensity = cfg.intensity_base +
                              static_cast<float>(cls - 1) * cfg.intensity_step +
                              static_cast<float>(rng.normal(0.0, cfg.intensity_jitter));
      for (int64_t i : inside) {
        label.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(cls);
        image.image[static_cast<size_t>(i)] =
            intensity + static_cast<float>(rng.normal(0.0, cfg.noise_sigma));
      }
      if (placements)
        placements->push_back({cls, center, semi, static_cast<int64_t>(inside.size())});
      placed = true;
    }
    if (!placed)
      throw generation_error("generate_phantom: could not place a non-overlapping ellipsoid for class " +
                             std::to_string(cls) + " after " + std::to_string(cfg.max_attempts) +
                             " attempts");
  }

  Case c;
  c.id = "phantom_" + std::to_string(seed);
  c.image = std::move(image);
  c.label = std::move(label);
  return c;
}

inline Case generate_phantom(uint64_t seed, std::array<int64_t, 3> extents, int64_t num_classes) {
  PhantomConfig cfg;
  cfg.extents = extents;
  cfg.num_classes = num_classes;
  return generate_phantom(seed, cfg);
}

}  // namespace ctseg
