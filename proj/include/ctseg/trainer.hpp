#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ctseg/augment.hpp"
#include "ctseg/checkpoint.hpp"
#include "ctseg/losses.hpp"
#include "ctseg/metrics.hpp"
#include "ctseg/network.hpp"
#include "ctseg/optimizer.hpp"
#include "ctseg/sampler.hpp"

namespace ctseg {

// Table-3 style training variants. `fsl` drops the unlabeled branch, `cts`
// cross-teaches two student-sized models, `single_teacher` drops T2.
struct AblationToggles {
  bool fsl = false;
  bool no_kd = false;
  bool no_psv = false;
  bool no_ctl = false;
  bool cts = false;
  bool same_decoder_teachers = false;
  bool single_teacher = false;

  void validate() const {
    require(!(cts && single_teacher), "ablation: cts and single_teacher are mutually exclusive");
    require(!(cts && same_decoder_teachers),
            "ablation: cts and same_decoder_teachers are mutually exclusive");
    require(!(cts && fsl), "ablation: cts needs the unlabeled branch (fsl set)");
  }
};

template <typename T>
struct TrainConfig {
  int epochs = 100;
  std::array<int64_t, 3> patch{32, 16, 32};
  double lr0 = 0.01;
  double momentum = 0.99;
  double weight_decay = 3e-5;
  int64_t num_classes = 4;
  int64_t in_channels = 1;
  int64_t base_features = 8;
  int num_stages = 2;
  int64_t se_reduction = 8;
  LossConfig<T> loss;
  AugmentConfig augment;
  AblationToggles ablation;
  uint64_t seed = 0;
  int checkpoint_interval = 0;  // 0 = final epoch only
  int val_interval = 1;

  NetworkConfig teacher_config(Upsampling up) const {
    NetworkConfig cfg;
    cfg.in_channels = in_channels;
    cfg.num_classes = num_classes;
    cfg.base_features = base_features;
    cfg.num_stages = num_stages;
    cfg.se_reduction = se_reduction;
    cfg.decoder_upsampling = up;
    cfg.conv_style = ConvStyle::regular;
    return cfg;
  }

  NetworkConfig student_config(Upsampling up = Upsampling::transposed) const {
    NetworkConfig cfg = teacher_config(up);
    cfg.conv_style = ConvStyle::separable;
    return cfg;
  }

  // Effective loss config: toggles folded in, warm-up horizon = epochs.
  LossConfig<T> loss_config() const {
    LossConfig<T> cfg = loss;
    cfg.t_max = epochs;
    cfg.fsl = ablation.fsl;
    cfg.no_kd = ablation.no_kd;
    cfg.no_psv = ablation.no_psv;
    cfg.no_ctl = ablation.no_ctl;
    return cfg;
  }
};

enum class ModelRole { teacher1, teacher2, student };

template <typename T>
struct ModelSlot {
  std::string name;
  ModelRole role;
  NetworkConfig config;
  ModelParams<T> params;
  ModelParams<T> momentum;
};

// The set of concurrently trained models for a configuration.
template <typename T>
struct ModelSet {
  std::vector<ModelSlot<T>> slots;
  std::string inference_model;

  ModelSlot<T>* find(const std::string& name) {
    for (auto& s : slots)
      if (s.name == name) return &s;
    return nullptr;
  }
};

template <typename T>
ModelSet<T> build_model_set(const TrainConfig<T>& cfg) {
  cfg.ablation.validate();
  ModelSet<T> set;
  auto add = [&](const std::string& name, ModelRole role, const NetworkConfig& net) {
    ModelSlot<T> slot;
    slot.name = name;
    slot.role = role;
    slot.config = net;
    slot.params = build_model<T>(net, mix_seed(cfg.seed, hash_tag("init-" + name)));
    slot.params.make_leaves();
    slot.momentum.order = slot.params.order;
    for (const auto& pname : slot.params.order)
      slot.momentum.tensors.emplace(pname, Tensor<T>(slot.params.at(pname).shape()));
    set.slots.push_back(std::move(slot));
  };

  if (cfg.ablation.cts) {
    add("s1", ModelRole::teacher1, cfg.student_config(Upsampling::transposed));
    add("s2", ModelRole::teacher2, cfg.student_config(Upsampling::trilinear));
    set.inference_model = "s1";  // the transposed-convolution one
    return set;
  }
  if (cfg.ablation.fsl && !cfg.ablation.single_teacher) {
    add("s", ModelRole::student, cfg.student_config());
    set.inference_model = "s";
    return set;
  }
  add("t1", ModelRole::teacher1, cfg.teacher_config(Upsampling::transposed));
  if (!cfg.ablation.single_teacher) {
    add("t2", ModelRole::teacher2,
        cfg.teacher_config(cfg.ablation.same_decoder_teachers ? Upsampling::transposed
                                                              : Upsampling::trilinear));
  }
  add("s", ModelRole::student, cfg.student_config());
  set.inference_model = "s";
  return set;
}

template <typename T>
struct StepLosses {
  T seg = 0, ctl = 0, psv = 0, kd = 0, total = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0, lambda_dis = 0, lambda_ssl = 0;
  double seg = 0, ctl = 0, psv = 0, kd = 0, total = 0;
  double val_dsc = std::numeric_limits<double>::quiet_NaN();
};

// Joint online training of the model set on preprocessed stage data.
template <typename T>
class Trainer {
 public:
  Trainer(TrainConfig<T> cfg, std::vector<Case> data, std::filesystem::path run_dir)
      : cfg_(std::move(cfg)), run_dir_(std::move(run_dir)) {
    cfg_.augment.patch = cfg_.patch;
    models_ = build_model_set(cfg_);
    for (Case& c : data) {
      if (c.split == "labeled") {
        require(c.label.has_value(), "trainer: labeled case " + c.id + " has no label");
        labeled_ids_.push_back(c.id);
      } else if (c.split == "unlabeled") {
        unlabeled_ids_.push_back(c.id);
      } else if (c.split == "validation") {
        require(c.label.has_value(), "trainer: validation case " + c.id + " has no label");
        validation_ids_.push_back(c.id);
      } else {
        throw invalid_argument_error("trainer: unknown split '" + c.split + "' on case " + c.id);
      }
      cases_.emplace(c.id, std::move(c));
    }
    require(!labeled_ids_.empty(), "trainer: no labeled cases");
    if (!cfg_.ablation.fsl)
      require(!unlabeled_ids_.empty(), "trainer: no unlabeled cases (use the fsl toggle instead)");
  }

  // Restores parameters, momentum and the epoch counter from a checkpoint
  // directory written by this trainer.
  void resume_from(const std::filesystem::path& ckpt_dir) {
    nlohmann::json state;
    {
      std::ifstream in(ckpt_dir / "state.json");
      if (!in) throw io_error("cannot open " + (ckpt_dir / "state.json").string());
      in >> state;
    }
    epochs_completed_ = state.at("epochs_completed").get<int>();
    best_val_ = state.at("best_val_dsc").get<double>();
    best_epoch_ = state.at("best_epoch").get<int>();
    for (auto& slot : models_.slots) {
      auto loaded = load_checkpoint<T>(ckpt_dir / (slot.name + ".params.ckpt"));
      auto mom = load_checkpoint<T>(ckpt_dir / (slot.name + ".momentum.ckpt"));
      require(loaded.params.order == slot.params.order,
              "resume: parameter set mismatch for model " + slot.name);
      for (const auto& pname : slot.params.order) {
        slot.params.at(pname).values() = loaded.params.at(pname).values();
        slot.momentum.at(pname).values() = mom.params.at(pname).values();
      }
    }
  }

  void run() {
    std::filesystem::create_directories(run_dir_);
    const LossConfig<T> loss_cfg = cfg_.loss_config();
    for (int epoch = epochs_completed_; epoch < cfg_.epochs; ++epoch) {
      const double lr = poly_lr(epoch, cfg_.epochs, cfg_.lr0);
      EpochMetrics em;
      em.epoch = epoch;
      em.lr = lr;
      em.lambda_dis = warmup_weight(epoch, cfg_.epochs, cfg_.loss.lambda0_dis);
      em.lambda_ssl = warmup_weight(epoch, cfg_.epochs, cfg_.loss.lambda0_ssl);

      EpochPlan plan = build_epoch_plan(labeled_ids_, unlabeled_ids_, epoch, cfg_.seed,
                                        !cfg_.ablation.fsl);
      int pairs = 0;
      for (size_t s = 0; s < plan.steps.size();) {
        const Case& labeled = cases_.at(plan.steps[s].case_id);
        const Case* unlabeled = nullptr;
        ++s;
        if (s < plan.steps.size() && plan.steps[s].branch == Branch::unlabeled) {
          unlabeled = &cases_.at(plan.steps[s].case_id);
          ++s;
        }
        StepLosses<T> losses = train_step(labeled, unlabeled, epoch, pairs, lr, loss_cfg);
        em.seg += losses.seg;
        em.ctl += losses.ctl;
        em.psv += losses.psv;
        em.kd += losses.kd;
        em.total += losses.total;
        ++pairs;
      }
      em.seg /= pairs;
      em.ctl /= pairs;
      em.psv /= pairs;
      em.kd /= pairs;
      em.total /= pairs;

      if (cfg_.val_interval > 0 &&
          ((epoch + 1) % cfg_.val_interval == 0 || epoch + 1 == cfg_.epochs) &&
          !validation_ids_.empty()) {
        em.val_dsc = validate();
        if (em.val_dsc > best_val_) {
          best_val_ = em.val_dsc;
          best_epoch_ = epoch;
          save_checkpoints(run_dir_ / "ckpt_best", epoch + 1);
        }
      }
      history.push_back(em);
      append_metrics(em);
      epochs_completed_ = epoch + 1;
      if (cfg_.checkpoint_interval > 0 && (epoch + 1) % cfg_.checkpoint_interval == 0)
        save_checkpoints(run_dir_ / ("ckpt_epoch_" + std::to_string(epoch + 1)), epoch + 1);
    }
    save_checkpoints(run_dir_ / ("ckpt_epoch_" + std::to_string(cfg_.epochs)), cfg_.epochs);
  }

  // One optimization step on a labeled/unlabeled patch pair: forward all
  // active models on both patches, one total objective, one backward, one
  // optimizer step per model.
  StepLosses<T> train_step(const Case& labeled, const Case* unlabeled, int epoch, int pair,
                           double lr, const LossConfig<T>& loss_cfg) {
    Rng rng_l(mix_seed(cfg_.seed, hash_tag("augment-labeled"), static_cast<uint64_t>(epoch),
                       static_cast<uint64_t>(pair)));
    auto [img_l, mask_l] = augment(labeled.image, *labeled.label, cfg_.augment, rng_l);
    Tensor<T> x_l = volume_to_tensor<T>(img_l);
    Tensor<T> y_l = mask_to_one_hot<T>(mask_l, cfg_.num_classes);

    BranchPredictions<T> preds_l = forward_all(x_l);
    ObjectiveParts<T> labeled_parts = labeled_objective(preds_l, y_l, epoch, loss_cfg);

    ObjectiveParts<T> unlabeled_parts;
    if (unlabeled != nullptr && !cfg_.ablation.fsl) {
      Rng rng_u(mix_seed(cfg_.seed, hash_tag("augment-unlabeled"), static_cast<uint64_t>(epoch),
                         static_cast<uint64_t>(pair)));
      Volume no_mask = Volume::make_mask(unlabeled->image.extents);
      auto [img_u, ignored] = augment(unlabeled->image, no_mask, cfg_.augment, rng_u);
      Tensor<T> x_u = volume_to_tensor<T>(img_u);
      BranchPredictions<T> preds_u = forward_all(x_u);
      unlabeled_parts = unlabeled_objective(preds_u, epoch, loss_cfg);
    }

    Tensor<T> total = combined_objectives(labeled_parts, unlabeled_parts, epoch, loss_cfg);
    StepLosses<T> out;
    out.seg = labeled_parts.seg_value();
    out.ctl = unlabeled_parts.ctl_value();
    out.psv = unlabeled_parts.psv_value();
    out.kd = labeled_parts.kd_value() + unlabeled_parts.kd_value();
    out.total = total.item();
    if (!std::isfinite(static_cast<double>(out.total)))
      throw diverged_training_error("training diverged: non-finite loss at epoch " +
                                        std::to_string(epoch) + ", step " + std::to_string(pair),
                                    epoch, pair);
    backward(total);
    for (auto& slot : models_.slots) {
      for (const auto& pname : slot.params.order) {
        Tensor<T>& p = slot.params.at(pname);
        sgd_nesterov_step(p, p.grad(), slot.momentum.at(pname), static_cast<T>(lr),
                          static_cast<T>(cfg_.momentum), static_cast<T>(cfg_.weight_decay));
        p.zero_grad();
      }
    }
    return out;
  }

  // Mean foreground DSC of the inference model over the validation cases.
  double validate() {
    ModelSlot<T>* slot = models_.find(models_.inference_model);
    double mean = 0;
    for (const auto& id : validation_ids_) {
      const Case& c = cases_.at(id);
      Tensor<T> x = volume_to_tensor<T>(c.image);
      Tensor<T> probs = softmax_channel(forward_segmentation(slot->params, slot->config, x));
      Volume pred = tensor_argmax_to_mask(probs, c.image);
      double case_mean = 0;
      for (int64_t cls = 1; cls < cfg_.num_classes; ++cls)
        case_mean += dsc(pred, *c.label, static_cast<uint8_t>(cls));
      mean += case_mean / static_cast<double>(cfg_.num_classes - 1);
    }
    return mean / static_cast<double>(validation_ids_.size());
  }

  void save_checkpoints(const std::filesystem::path& dir, int epochs_done) const {
    std::filesystem::create_directories(dir);
    for (const auto& slot : models_.slots) {
      save_checkpoint(dir / (slot.name + ".params.ckpt"), slot.params, slot.config);
      save_checkpoint(dir / (slot.name + ".momentum.ckpt"), slot.momentum, slot.config);
    }
    nlohmann::json state;
    state["epochs_completed"] = epochs_done;
    state["seed"] = cfg_.seed;
    state["best_val_dsc"] = best_val_;
    state["best_epoch"] = best_epoch_;
    state["inference_model"] = models_.inference_model;
    nlohmann::json names = nlohmann::json::array();
    for (const auto& slot : models_.slots) names.push_back(slot.name);
    state["models"] = names;
    std::ofstream out(dir / "state.json");
    if (!out) throw io_error("cannot write " + (dir / "state.json").string());
    out << state.dump(2) << "\n";
  }

  ModelSet<T>& models() { return models_; }
  const TrainConfig<T>& config() const { return cfg_; }
  int epochs_completed() const { return epochs_completed_; }
  double best_val() const { return best_val_; }

  std::vector<EpochMetrics> history;

 private:
  BranchPredictions<T> forward_all(const Tensor<T>& x) {
    BranchPredictions<T> preds;
    for (auto& slot : models_.slots) {
      Tensor<T> probs = softmax_channel(forward_segmentation(slot.params, slot.config, x));
      switch (slot.role) {
        case ModelRole::teacher1: preds.teacher1 = probs; break;
        case ModelRole::teacher2: preds.teacher2 = probs; break;
        case ModelRole::student: preds.student = probs; break;
      }
    }
    return preds;
  }

  void append_metrics(const EpochMetrics& em) {
    const std::filesystem::path path = run_dir_ / "metrics.csv";
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw io_error("cannot write " + path.string());
    if (fresh) out << "epoch,lr,lambda_dis,lambda_ssl,L_seg,L_ctl,L_psv,L_kd,total,val_dsc\n";
    out << em.epoch << "," << std::setprecision(17) << em.lr << "," << em.lambda_dis << ","
        << em.lambda_ssl << "," << em.seg << "," << em.ctl << "," << em.psv << "," << em.kd << ","
        << em.total << ",";
    if (std::isnan(em.val_dsc))
      out << "";
    else
      out << em.val_dsc;
    out << "\n";
  }

  TrainConfig<T> cfg_;
  std::filesystem::path run_dir_;
  ModelSet<T> models_;
  std::unordered_map<std::string, Case> cases_;
  std::vector<std::string> labeled_ids_;
  std::vector<std::string> unlabeled_ids_;
  std::vector<std::string> validation_ids_;
  int epochs_completed_ = 0;
  double best_val_ = -1.0;
  int best_epoch_ = -1;
};

}  // namespace ctseg
