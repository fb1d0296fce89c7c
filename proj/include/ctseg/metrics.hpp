#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "ctseg/volume.hpp"

namespace ctseg {

namespace detail {

inline void check_same_grid(const Volume& a, const Volume& b, const char* op) {
  require(a.extents == b.extents, std::string(op) + ": grids differ: " +
                                      std::to_string(a.extents[0]) + "x" +
                                      std::to_string(a.extents[1]) + "x" +
                                      std::to_string(a.extents[2]) + " vs " +
                                      std::to_string(b.extents[0]) + "x" +
                                      std::to_string(b.extents[1]) + "x" +
                                      std::to_string(b.extents[2]));
}

}  // namespace detail

// Dice similarity 2|P∩G|/(|P|+|G|) for one class; both masks empty -> 1.
inline double dsc(const Volume& pred, const Volume& gt, uint8_t class_id) {
  detail::check_same_grid(pred, gt, "dsc");
  int64_t inter = 0, p = 0, g = 0;
  for (size_t i = 0; i < pred.labels.size(); ++i) {
    const bool in_p = pred.labels[i] == class_id;
    const bool in_g = gt.labels[i] == class_id;
    p += in_p;
    g += in_g;
    inter += in_p && in_g;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

namespace detail {

// Face-adjacent boundary voxels; out-of-grid neighbors count as background.
inline std::vector<std::array<int64_t, 3>> surface_voxels(const Volume& mask, uint8_t class_id) {
  const int64_t X = mask.extents[0], Y = mask.extents[1], Z = mask.extents[2];
  auto at = [&](int64_t x, int64_t y, int64_t z) -> bool {
    if (x < 0 || x >= X || y < 0 || y >= Y || z < 0 || z >= Z) return false;
    return mask.labels[static_cast<size_t>((x * Y + y) * Z + z)] == class_id;
  };
  std::vector<std::array<int64_t, 3>> surface;
  for (int64_t x = 0; x < X; ++x)
    for (int64_t y = 0; y < Y; ++y)
      for (int64_t z = 0; z < Z; ++z) {
        if (!at(x, y, z)) continue;
        if (!at(x - 1, y, z) || !at(x + 1, y, z) || !at(x, y - 1, z) || !at(x, y + 1, z) ||
            !at(x, y, z - 1) || !at(x, y, z + 1))
          surface.push_back({x, y, z});
      }
  return surface;
}

inline int64_t surface_hits_within(const std::vector<std::array<int64_t, 3>>& from,
                                   const std::vector<std::array<int64_t, 3>>& to,
                                   double tolerance_mm, const std::array<double, 3>& spacing) {
  const double tol2 = tolerance_mm * tolerance_mm;
  int64_t hits = 0;
  for (const auto& p : from) {
    bool within = false;
    for (const auto& q : to) {
      const double dx = static_cast<double>(p[0] - q[0]) * spacing[0];
      const double dy = static_cast<double>(p[1] - q[1]) * spacing[1];
      const double dz = static_cast<double>(p[2] - q[2]) * spacing[2];
      if (dx * dx + dy * dy + dz * dz <= tol2) {
        within = true;
        break;
      }
    }
    hits += within;
  }
  return hits;
}

}  // namespace detail

// Normalized surface Dice: fraction of each mask's boundary lying within
// tolerance_mm of the other mask's boundary, distances in mm via spacing.
// Both masks empty -> 1.
inline double nsd(const Volume& pred, const Volume& gt, uint8_t class_id, double tolerance_mm,
                  const std::array<double, 3>& spacing) {
  detail::check_same_grid(pred, gt, "nsd");
  require(tolerance_mm >= 0, "nsd: tolerance must be >= 0");
  const auto sp = detail::surface_voxels(pred, class_id);
  const auto sg = detail::surface_voxels(gt, class_id);
  if (sp.empty() && sg.empty()) return 1.0;
  if (sp.empty() || sg.empty()) return 0.0;
  const int64_t hits = detail::surface_hits_within(sp, sg, tolerance_mm, spacing) +
                       detail::surface_hits_within(sg, sp, tolerance_mm, spacing);
  return static_cast<double>(hits) / static_cast<double>(sp.size() + sg.size());
}

// Per-class DSC and NSD plus wall-clock inference time for one case.
struct CaseResult {
  std::string id;
  std::vector<double> dsc;         // foreground classes, index 0 = class 1
  std::vector<double> nsd;
  std::vector<bool> absent;        // both masks empty for that class
  double seconds = 0.0;
};

struct MetricsConfig {
  int64_t num_classes = 14;
  double nsd_tolerance_mm = 1.0;
};

inline CaseResult evaluate_case(const std::string& id, const Volume& pred, const Volume& gt,
                                const MetricsConfig& cfg) {
  detail::check_same_grid(pred, gt, "evaluate_case");
  CaseResult result;
  result.id = id;
  for (int64_t cls = 1; cls < cfg.num_classes; ++cls) {
    const uint8_t c = static_cast<uint8_t>(cls);
    result.dsc.push_back(dsc(pred, gt, c));
    result.nsd.push_back(nsd(pred, gt, c, cfg.nsd_tolerance_mm, gt.spacing));
    bool pred_any = false, gt_any = false;
    for (size_t i = 0; i < gt.labels.size() && !(pred_any && gt_any); ++i) {
      pred_any = pred_any || pred.labels[i] == c;
      gt_any = gt_any || gt.labels[i] == c;
    }
    result.absent.push_back(!pred_any && !gt_any);
  }
  return result;
}

struct ClassStats {
  double dsc_mean = 0, dsc_std = 0, nsd_mean = 0, nsd_std = 0;
};

struct EvalReport {
  std::vector<ClassStats> per_class;  // foreground classes
  ClassStats mean;                    // across the class rows
  double seconds_mean = 0;
  double seconds_max = 0;
  int num_cases = 0;

  std::string to_csv() const {
    std::ostringstream out;
    out << "class,dsc_mean,dsc_std,nsd_mean,nsd_std\n";
    out << std::setprecision(6) << std::fixed;
    for (size_t c = 0; c < per_class.size(); ++c) {
      const auto& s = per_class[c];
      out << (c + 1) << "," << s.dsc_mean << "," << s.dsc_std << "," << s.nsd_mean << ","
          << s.nsd_std << "\n";
    }
    out << "mean," << mean.dsc_mean << "," << mean.dsc_std << "," << mean.nsd_mean << ","
        << mean.nsd_std << "\n";
    return out.str();
  }

  std::string to_table() const {
    std::ostringstream out;
    out << std::setprecision(4) << std::fixed;
    out << "class        DSC              NSD\n";
    for (size_t c = 0; c < per_class.size(); ++c) {
      const auto& s = per_class[c];
      out << std::setw(3) << (c + 1) << "     " << s.dsc_mean << " ± " << s.dsc_std << "  "
          << s.nsd_mean << " ± " << s.nsd_std << "\n";
    }
    out << "mean    " << mean.dsc_mean << " ± " << mean.dsc_std << "  " << mean.nsd_mean << " ± "
        << mean.nsd_std << "\n";
    out << "cases: " << num_cases << ", inference seconds mean " << seconds_mean << ", max "
        << seconds_max << "\n";
    return out.str();
  }
};

// Pairs predictions with ground truth by case id; unmatched ids on either
// side are an error listing them.
inline std::vector<CaseResult> match_and_evaluate(
    const std::vector<std::pair<std::string, Volume>>& preds,
    const std::vector<std::pair<std::string, Volume>>& gts, const MetricsConfig& cfg,
    const std::unordered_map<std::string, double>& seconds = {}) {
  std::string missing;
  for (const auto& [id, unused] : preds) {
    bool found = false;
    for (const auto& [gid, g] : gts) found = found || gid == id;
    if (!found) missing += " " + id + " (no ground truth)";
  }
  for (const auto& [gid, unused] : gts) {
    bool found = false;
    for (const auto& [id, p] : preds) found = found || gid == id;
    if (!found) missing += " " + gid + " (no prediction)";
  }
  require(missing.empty(), "evaluate: case id mismatch:" + missing);

  std::vector<CaseResult> results;
  for (const auto& [id, pred] : preds) {
    const Volume* gt = nullptr;
    for (const auto& [gid, g] : gts)
      if (gid == id) gt = &g;
    CaseResult r = evaluate_case(id, pred, *gt, cfg);
    auto it = seconds.find(id);
    if (it != seconds.end()) r.seconds = it->second;
    results.push_back(std::move(r));
  }
  return results;
}

// Aggregates per-case results: per-class mean ± std (population) across
// cases, a mean row across the class rows, and timing statistics.
inline EvalReport evaluate_run(const std::vector<CaseResult>& cases, const MetricsConfig& cfg) {
  require(!cases.empty(), "evaluate_run: no cases");
  const size_t classes = static_cast<size_t>(cfg.num_classes - 1);
  for (const auto& c : cases)
    require(c.dsc.size() == classes,
            "evaluate_run: case " + c.id + " has the wrong class count");

  EvalReport report;
  report.num_cases = static_cast<int>(cases.size());
  auto stats = [&](auto&& get) {
    std::vector<std::pair<double, double>> out(classes);
    for (size_t c = 0; c < classes; ++c) {
      double mean = 0;
      for (const auto& r : cases) mean += get(r, c);
      mean /= static_cast<double>(cases.size());
      double var = 0;
      for (const auto& r : cases) var += (get(r, c) - mean) * (get(r, c) - mean);
      var /= static_cast<double>(cases.size());
      out[c] = {mean, std::sqrt(var)};
    }
    return out;
  };
  const auto d = stats([](const CaseResult& r, size_t c) { return r.dsc[c]; });
  const auto n = stats([](const CaseResult& r, size_t c) { return r.nsd[c]; });
  for (size_t c = 0; c < classes; ++c)
    report.per_class.push_back({d[c].first, d[c].second, n[c].first, n[c].second});

  auto mean_of = [&](auto&& get) {
    double mean = 0;
    for (size_t c = 0; c < classes; ++c) mean += get(c);
    mean /= static_cast<double>(classes);
    double var = 0;
    for (size_t c = 0; c < classes; ++c) var += (get(c) - mean) * (get(c) - mean);
    return std::pair<double, double>{mean, std::sqrt(var / static_cast<double>(classes))};
  };
  const auto dm = mean_of([&](size_t c) { return report.per_class[c].dsc_mean; });
  const auto nm = mean_of([&](size_t c) { return report.per_class[c].nsd_mean; });
  report.mean = {dm.first, dm.second, nm.first, nm.second};

  for (const auto& r : cases) {
    report.seconds_mean += r.seconds;
    report.seconds_max = std::max(report.seconds_max, r.seconds);
  }
  report.seconds_mean /= static_cast<double>(cases.size());
  return report;
}

}  // namespace ctseg
