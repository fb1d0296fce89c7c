#pragma once

#include <numeric>

#include "ctseg/volume.hpp"

namespace ctseg {

namespace detail {

struct UnionFind {
  std::vector<int32_t> parent;

  explicit UnionFind(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }

  int32_t find(int32_t i) {
    while (parent[static_cast<size_t>(i)] != i) {
      parent[static_cast<size_t>(i)] = parent[static_cast<size_t>(parent[static_cast<size_t>(i)])];
      i = parent[static_cast<size_t>(i)];
    }
    return i;
  }

  void unite(int32_t a, int32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<size_t>(std::max(a, b))] = std::min(a, b);
  }
};

}  // namespace detail

// Keeps, per class, only the largest connected component (26-connectivity by
// default, 6 optional). Ties go to the component containing the earliest
// voxel in linear scan order.
inline Volume largest_component_per_class(const Volume& mask, int connectivity = 26) {
  require(mask.kind == VolumeKind::mask, "largest_component_per_class: mask volumes only");
  require(connectivity == 6 || connectivity == 26,
          "largest_component_per_class: connectivity must be 6 or 26");
  const int64_t X = mask.extents[0], Y = mask.extents[1], Z = mask.extents[2];
  const int64_t n = mask.voxel_count();

  // backward half-neighborhood: neighbors with a smaller linear index
  std::vector<std::array<int64_t, 3>> offsets;
  for (int64_t dx = -1; dx <= 1; ++dx)
    for (int64_t dy = -1; dy <= 1; ++dy)
      for (int64_t dz = -1; dz <= 1; ++dz) {
        if (dx > 0 || (dx == 0 && (dy > 0 || (dy == 0 && dz >= 0)))) continue;
        const int manhattan =
            std::abs(static_cast<int>(dx)) + std::abs(static_cast<int>(dy)) + std::abs(static_cast<int>(dz));
        if (connectivity == 6 && manhattan != 1) continue;
        offsets.push_back({dx, dy, dz});
      }

  detail::UnionFind uf(static_cast<size_t>(n));
  int64_t i = 0;
  for (int64_t x = 0; x < X; ++x)
    for (int64_t y = 0; y < Y; ++y)
      for (int64_t z = 0; z < Z; ++z, ++i) {
        const uint8_t cls = mask.labels[static_cast<size_t>(i)];
        if (cls == 0) continue;
        for (const auto& d : offsets) {
          const int64_t nx = x + d[0], ny = y + d[1], nz = z + d[2];
          if (nx < 0 || nx >= X || ny < 0 || ny >= Y || nz < 0 || nz >= Z) continue;
          const int64_t ni = (nx * Y + ny) * Z + nz;
          if (mask.labels[static_cast<size_t>(ni)] == cls)
            uf.unite(static_cast<int32_t>(i), static_cast<int32_t>(ni));
        }
      }

  // component sizes and first voxel per root
  std::vector<int64_t> size(static_cast<size_t>(n), 0);
  for (int64_t v = 0; v < n; ++v) {
    if (mask.labels[static_cast<size_t>(v)] == 0) continue;
    ++size[static_cast<size_t>(uf.find(static_cast<int32_t>(v)))];
  }
  // per class: best root = max size, tie -> smallest root index (the union
  // rule keeps the root at the component's first voxel)
  uint8_t max_label = 0;
  for (uint8_t v : mask.labels) max_label = std::max(max_label, v);
  std::vector<int32_t> best(static_cast<size_t>(max_label) + 1, -1);
  for (int64_t v = 0; v < n; ++v) {
    const uint8_t cls = mask.labels[static_cast<size_t>(v)];
    if (cls == 0) continue;
    const int32_t root = uf.find(static_cast<int32_t>(v));
    if (root != static_cast<int32_t>(v)) continue;  // visit each root once
    int32_t& b = best[cls];
    if (b < 0 || size[static_cast<size_t>(root)] > size[static_cast<size_t>(b)]) b = root;
  }

  Volume out = Volume::make_mask(mask.extents);
  out.spacing = mask.spacing;
  out.direction = mask.direction;
  for (int64_t v = 0; v < n; ++v) {
    const uint8_t cls = mask.labels[static_cast<size_t>(v)];
    if (cls == 0) continue;
    if (uf.find(static_cast<int32_t>(v)) == best[cls]) out.labels[static_cast<size_t>(v)] = cls;
  }
  return out;
}

}  // namespace ctseg
