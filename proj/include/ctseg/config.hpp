#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "ctseg/augment.hpp"
#include "ctseg/infer.hpp"
#include "ctseg/metrics.hpp"
#include "ctseg/trainer.hpp"

namespace ctseg {

// Fully resolved run configuration. Parsed from a sectioned JSON document;
// unknown keys are rejected and a resolved copy is written next to every
// run's outputs.
struct RunConfig {
  uint64_t seed = 7;
  int threads = 1;

  int64_t num_classes = 4;
  float clip_lo = -300.f;
  float clip_hi = 300.f;
  std::array<int64_t, 3> coarse_extents{24, 24, 24};
  std::array<int64_t, 3> fine_extents{24, 24, 24};

  int64_t base_features = 8;
  int num_stages = 2;
  int64_t se_reduction = 8;
  int64_t in_channels = 1;

  int epochs = 100;
  std::array<int64_t, 3> patch{24, 16, 24};
  double lr0 = 0.01;
  double momentum = 0.99;
  double weight_decay = 3e-5;
  int checkpoint_interval = 0;
  int val_interval = 1;

  LossConfig<float> loss;
  AugmentConfig augment;
  AblationToggles ablation;

  double sigma_scale = 0.125;
  double pad_fraction = 0.10;
  int connectivity = 26;
  double nsd_tolerance_mm = 1.0;

  TrainConfig<float> train_config() const {
    TrainConfig<float> cfg;
    cfg.epochs = epochs;
    cfg.patch = patch;
    cfg.lr0 = lr0;
    cfg.momentum = momentum;
    cfg.weight_decay = weight_decay;
    cfg.num_classes = num_classes;
    cfg.in_channels = in_channels;
    cfg.base_features = base_features;
    cfg.num_stages = num_stages;
    cfg.se_reduction = se_reduction;
    cfg.loss = loss;
    cfg.augment = augment;
    cfg.ablation = ablation;
    cfg.seed = seed;
    cfg.checkpoint_interval = checkpoint_interval;
    cfg.val_interval = val_interval;
    return cfg;
  }

  InferenceSettings inference_settings() const {
    InferenceSettings s;
    s.coarse_extents = coarse_extents;
    s.patch = patch;
    s.fine_extents = fine_extents;
    s.clip_lo = clip_lo;
    s.clip_hi = clip_hi;
    s.sigma_scale = sigma_scale;
    s.pad_fraction = pad_fraction;
    s.connectivity = connectivity;
    return s;
  }

  MetricsConfig metrics_config() const {
    MetricsConfig m;
    m.num_classes = num_classes;
    m.nsd_tolerance_mm = nsd_tolerance_mm;
    return m;
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                                const std::string& section) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const auto& k : known) ok = ok || k == key;
    if (!ok)
      throw config_error("unknown config key '" + (section.empty() ? key : section + "." + key) +
                         "'");
  }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw config_error("bad value for config key '" + std::string(key) + "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["data"] = {{"num_classes", c.num_classes},
               {"clip_lo", c.clip_lo},
               {"clip_hi", c.clip_hi},
               {"coarse_extents", c.coarse_extents},
               {"fine_extents", c.fine_extents}};
  j["network"] = {{"base_features", c.base_features},
                  {"num_stages", c.num_stages},
                  {"se_reduction", c.se_reduction},
                  {"in_channels", c.in_channels}};
  j["train"] = {{"epochs", c.epochs},
                {"patch", c.patch},
                {"lr0", c.lr0},
                {"momentum", c.momentum},
                {"weight_decay", c.weight_decay},
                {"checkpoint_interval", c.checkpoint_interval},
                {"val_interval", c.val_interval}};
  j["loss"] = {{"focal_alpha", c.loss.focal_alpha},
               {"focal_gamma", c.loss.focal_gamma},
               {"dice_eps", c.loss.dice_eps},
               {"dice_classes", c.loss.dice_classes},
               {"lambda0_dis", c.loss.lambda0_dis},
               {"lambda0_ssl", c.loss.lambda0_ssl}};
  j["augment"] = {{"prob", c.augment.prob},
                  {"rotation_max_deg", c.augment.rotation_max_deg},
                  {"scale_min", c.augment.scale_min},
                  {"scale_max", c.augment.scale_max},
                  {"elastic_alpha", c.augment.elastic_alpha},
                  {"elastic_grid", c.augment.elastic_grid},
                  {"noise_sigma_max", c.augment.noise_sigma_max},
                  {"brightness_max", c.augment.brightness_max}};
  j["inference"] = {{"sigma_scale", c.sigma_scale},
                    {"pad_fraction", c.pad_fraction},
                    {"connectivity", c.connectivity}};
  j["metrics"] = {{"nsd_tolerance_mm", c.nsd_tolerance_mm}};
  j["ablation"] = {{"fsl", c.ablation.fsl},
                   {"no_kd", c.ablation.no_kd},
                   {"no_psv", c.ablation.no_psv},
                   {"no_ctl", c.ablation.no_ctl},
                   {"cts", c.ablation.cts},
                   {"same_decoder_teachers", c.ablation.same_decoder_teachers},
                   {"single_teacher", c.ablation.single_teacher}};
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::reject_unknown_keys(j, {"seed", "threads", "data", "network", "train", "loss", "augment",
                                  "inference", "metrics", "ablation"},
                              "");
  detail::read_key(j, "seed", c.seed);
  detail::read_key(j, "threads", c.threads);
  if (j.contains("data")) {
    const auto& s = j.at("data");
    detail::reject_unknown_keys(
        s, {"num_classes", "clip_lo", "clip_hi", "coarse_extents", "fine_extents"}, "data");
    detail::read_key(s, "num_classes", c.num_classes);
    detail::read_key(s, "clip_lo", c.clip_lo);
    detail::read_key(s, "clip_hi", c.clip_hi);
    detail::read_key(s, "coarse_extents", c.coarse_extents);
    detail::read_key(s, "fine_extents", c.fine_extents);
  }
  if (j.contains("network")) {
    const auto& s = j.at("network");
    detail::reject_unknown_keys(s, {"base_features", "num_stages", "se_reduction", "in_channels"},
                                "network");
    detail::read_key(s, "base_features", c.base_features);
    detail::read_key(s, "num_stages", c.num_stages);
    detail::read_key(s, "se_reduction", c.se_reduction);
    detail::read_key(s, "in_channels", c.in_channels);
  }
  if (j.contains("train")) {
    const auto& s = j.at("train");
    detail::reject_unknown_keys(s,
                                {"epochs", "patch", "lr0", "momentum", "weight_decay",
                                 "checkpoint_interval", "val_interval"},
                                "train");
    detail::read_key(s, "epochs", c.epochs);
    detail::read_key(s, "patch", c.patch);
    detail::read_key(s, "lr0", c.lr0);
    detail::read_key(s, "momentum", c.momentum);
    detail::read_key(s, "weight_decay", c.weight_decay);
    detail::read_key(s, "checkpoint_interval", c.checkpoint_interval);
    detail::read_key(s, "val_interval", c.val_interval);
  }
  if (j.contains("loss")) {
    const auto& s = j.at("loss");
    detail::reject_unknown_keys(s,
                                {"focal_alpha", "focal_gamma", "dice_eps", "dice_classes",
                                 "lambda0_dis", "lambda0_ssl"},
                                "loss");
    detail::read_key(s, "focal_alpha", c.loss.focal_alpha);
    detail::read_key(s, "focal_gamma", c.loss.focal_gamma);
    detail::read_key(s, "dice_eps", c.loss.dice_eps);
    detail::read_key(s, "dice_classes", c.loss.dice_classes);
    detail::read_key(s, "lambda0_dis", c.loss.lambda0_dis);
    detail::read_key(s, "lambda0_ssl", c.loss.lambda0_ssl);
  }
  if (j.contains("augment")) {
    const auto& s = j.at("augment");
    detail::reject_unknown_keys(s,
                                {"prob", "rotation_max_deg", "scale_min", "scale_max",
                                 "elastic_alpha", "elastic_grid", "noise_sigma_max",
                                 "brightness_max"},
                                "augment");
    detail::read_key(s, "prob", c.augment.prob);
    detail::read_key(s, "rotation_max_deg", c.augment.rotation_max_deg);
    detail::read_key(s, "scale_min", c.augment.scale_min);
    detail::read_key(s, "scale_max", c.augment.scale_max);
    detail::read_key(s, "elastic_alpha", c.augment.elastic_alpha);
    detail::read_key(s, "elastic_grid", c.augment.elastic_grid);
    detail::read_key(s, "noise_sigma_max", c.augment.noise_sigma_max);
    detail::read_key(s, "brightness_max", c.augment.brightness_max);
  }
  if (j.contains("inference")) {
    const auto& s = j.at("inference");
    detail::reject_unknown_keys(s, {"sigma_scale", "pad_fraction", "connectivity"}, "inference");
    detail::read_key(s, "sigma_scale", c.sigma_scale);
    detail::read_key(s, "pad_fraction", c.pad_fraction);
    detail::read_key(s, "connectivity", c.connectivity);
  }
  if (j.contains("metrics")) {
    const auto& s = j.at("metrics");
    detail::reject_unknown_keys(s, {"nsd_tolerance_mm"}, "metrics");
    detail::read_key(s, "nsd_tolerance_mm", c.nsd_tolerance_mm);
  }
  if (j.contains("ablation")) {
    const auto& s = j.at("ablation");
    detail::reject_unknown_keys(s,
                                {"fsl", "no_kd", "no_psv", "no_ctl", "cts",
                                 "same_decoder_teachers", "single_teacher"},
                                "ablation");
    detail::read_key(s, "fsl", c.ablation.fsl);
    detail::read_key(s, "no_kd", c.ablation.no_kd);
    detail::read_key(s, "no_psv", c.ablation.no_psv);
    detail::read_key(s, "no_ctl", c.ablation.no_ctl);
    detail::read_key(s, "cts", c.ablation.cts);
    detail::read_key(s, "same_decoder_teachers", c.ablation.same_decoder_teachers);
    detail::read_key(s, "single_teacher", c.ablation.single_teacher);
  }
  c.ablation.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("malformed config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw io_error("cannot write config: " + path.string());
  out << run_config_to_json(c).dump(2) << "\n";
}

// Table-3 row presets, applied on top of a base config.
inline void apply_ablation_preset(RunConfig& cfg, const std::string& name) {
  AblationToggles& t = cfg.ablation;
  t = AblationToggles{};
  if (name.empty() || name == "proposed") return;
  if (name == "fsl") {
    t.fsl = true;
  } else if (name == "kd") {  // fully supervised + KD from one teacher
    t.fsl = true;
    t.single_teacher = true;
  } else if (name == "ssl-kd") {
    t.single_teacher = true;
    t.no_psv = true;
  } else if (name == "ssl-psv") {
    t.single_teacher = true;
    t.no_kd = true;
  } else if (name == "ssl-kd-psv") {
    t.single_teacher = true;
  } else if (name == "cts") {
    t.cts = true;
  } else if (name == "ctt-kd") {
    t.no_psv = true;
  } else if (name == "ctt-psv") {
    t.no_kd = true;
  } else if (name == "ctt-sd") {
    t.same_decoder_teachers = true;
  } else {
    throw config_error(
        "unknown ablation preset '" + name +
        "' (expected: proposed, fsl, kd, ssl-kd, ssl-psv, ssl-kd-psv, cts, ctt-kd, ctt-psv, "
        "ctt-sd)");
  }
  t.validate();
}

}  // namespace ctseg
