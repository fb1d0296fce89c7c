#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "ctseg/infer.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/trainer.hpp"
#include "oracles.hpp"

using namespace ctseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("ctseg_trainer_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Tiny preprocessed stage data: phantoms resampled to 16x8x16.
std::vector<Case> tiny_stage_data(int labeled, int unlabeled, int validation) {
  std::vector<Case> cases;
  uint64_t seed = 1000;
  auto make = [&](const std::string& split, int i) {
    Case c = generate_phantom(seed++, {16, 16, 16}, 3);
    c.id = split.substr(0, 1) + std::to_string(i);
    c.split = split;
    c.image = zscore(resample_to(c.image, {16, 8, 16}, ResampleMode::trilinear));
    Volume label = resample_to(*c.label, {16, 8, 16}, ResampleMode::nearest);
    if (split == "unlabeled")
      c.label.reset();
    else
      c.label = label;
    cases.push_back(std::move(c));
  };
  for (int i = 0; i < labeled; ++i) make("labeled", i);
  for (int i = 0; i < unlabeled; ++i) make("unlabeled", i);
  for (int i = 0; i < validation; ++i) make("validation", i);
  return cases;
}

TrainConfig<float> tiny_config(int epochs) {
  TrainConfig<float> cfg;
  cfg.epochs = epochs;
  cfg.patch = {16, 8, 16};
  cfg.num_classes = 3;
  cfg.base_features = 4;
  cfg.num_stages = 2;
  cfg.se_reduction = 4;
  cfg.augment = AugmentConfig::disabled();
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("sgd_nesterov_step") {
  SECTION("hand-evaluated update") {
    Tensor<double> theta(Shape{1}, std::vector<double>{1.0});
    Tensor<double> buf(Shape{1});
    std::vector<double> grad{0.1};
    sgd_nesterov_step<double>(theta, grad, buf, 0.1, 0.9, 0.0);
    CHECK_THAT(buf.values()[0], Catch::Matchers::WithinAbs(0.1, 1e-15));
    CHECK_THAT(theta.values()[0], Catch::Matchers::WithinAbs(0.981, 1e-15));
  }
  SECTION("stationary point: zero gradient, zero decay, zero buffer") {
    Tensor<double> theta(Shape{3}, std::vector<double>{1, -2, 3});
    Tensor<double> buf(Shape{3});
    std::vector<double> grad{0, 0, 0};
    sgd_nesterov_step<double>(theta, grad, buf, 0.1, 0.99, 0.0);
    CHECK(theta.values() == std::vector<double>{1, -2, 3});
  }
  SECTION("pure weight decay shrinks parameters toward zero") {
    Tensor<double> theta(Shape{1}, std::vector<double>{1.0});
    Tensor<double> buf(Shape{1});
    std::vector<double> grad{0.0};
    double prev = 1.0;
    for (int i = 0; i < 50; ++i) {
      sgd_nesterov_step<double>(theta, grad, buf, 0.1, 0.9, 3e-5);
      CHECK(theta.values()[0] < prev);
      CHECK(theta.values()[0] > 0);
      prev = theta.values()[0];
    }
  }
  SECTION("shape mismatch is rejected") {
    Tensor<double> theta(Shape{2});
    Tensor<double> buf(Shape{3});
    std::vector<double> grad{0, 0};
    CHECK_THROWS_AS(sgd_nesterov_step<double>(theta, grad, buf, 0.1, 0.9, 0.0),
                    invalid_argument_error);
  }
}

TEST_CASE("overfit smoke: 50 steps on one labeled patch halve the loss") {
  std::vector<Case> data = tiny_stage_data(1, 0, 0);
  TrainConfig<float> cfg = tiny_config(50);
  cfg.ablation.fsl = true;
  // gentler momentum than the paper-scale default: a 50-step horizon is far
  // below the mu = 0.99 momentum timescale
  cfg.base_features = 8;
  cfg.se_reduction = 8;
  cfg.momentum = 0.9;
  cfg.lr0 = 0.05;
  Trainer<float> trainer(cfg, data, temp_dir("overfit"));
  trainer.run();
  REQUIRE(trainer.history.size() == 50);
  const double first = trainer.history.front().total;
  const double last = trainer.history.back().total;
  INFO("loss " << first << " -> " << last);
  CHECK(last <= 0.5 * first);
}

TEST_CASE("ablation path integrity: severed terms reproduce FSL bitwise") {
  std::vector<Case> data = tiny_stage_data(5, 5, 0);
  // 20 steps = 4 epochs over 5 labeled cases
  TrainConfig<float> ablated = tiny_config(4);
  ablated.ablation.no_kd = true;
  ablated.ablation.no_psv = true;
  ablated.ablation.no_ctl = true;
  Trainer<float> run_a(ablated, data, temp_dir("ablation_a"));
  run_a.run();

  TrainConfig<float> fsl = tiny_config(4);
  fsl.ablation.fsl = true;
  Trainer<float> run_b(fsl, data, temp_dir("ablation_b"));
  run_b.run();

  ModelSlot<float>* sa = run_a.models().find("s");
  ModelSlot<float>* sb = run_b.models().find("s");
  REQUIRE(sa != nullptr);
  REQUIRE(sb != nullptr);
  for (const auto& name : sa->params.order) {
    REQUIRE(sa->params.at(name).values() == sb->params.at(name).values());
    REQUIRE(sa->momentum.at(name).values() == sb->momentum.at(name).values());
  }
}

TEST_CASE("KD and PSV terms contribute zero gradient to teachers") {
  TrainConfig<float> cfg = tiny_config(10);
  ModelSet<float> models = build_model_set(cfg);
  std::vector<Case> data = tiny_stage_data(1, 1, 0);
  Tensor<float> x_l = volume_to_tensor<float>(data[0].image);
  Tensor<float> y_l = mask_to_one_hot<float>(*data[0].label, cfg.num_classes);
  Tensor<float> x_u = volume_to_tensor<float>(data[1].image);

  auto teacher_grads = [&](const LossConfig<float>& loss_cfg) {
    for (auto& slot : models.slots) slot.params.zero_grads();
    BranchPredictions<float> preds_l, preds_u;
    for (auto& slot : models.slots) {
      Tensor<float> pl = softmax_channel(forward_segmentation(slot.params, slot.config, x_l));
      Tensor<float> pu = softmax_channel(forward_segmentation(slot.params, slot.config, x_u));
      if (slot.role == ModelRole::teacher1) {
        preds_l.teacher1 = pl;
        preds_u.teacher1 = pu;
      } else if (slot.role == ModelRole::teacher2) {
        preds_l.teacher2 = pl;
        preds_u.teacher2 = pu;
      } else {
        preds_l.student = pl;
        preds_u.student = pu;
      }
    }
    auto labeled = labeled_objective(preds_l, y_l, 5.0, loss_cfg);
    auto unlabeled = unlabeled_objective(preds_u, 5.0, loss_cfg);
    backward(combined_objectives(labeled, unlabeled, 5.0, loss_cfg));
    std::vector<std::vector<float>> grads;
    for (auto& slot : models.slots) {
      if (slot.role == ModelRole::student) continue;
      for (const auto& name : slot.params.order) {
        auto g = slot.params.at(name).grad();
        grads.emplace_back(g.begin(), g.end());
      }
    }
    return grads;
  };

  LossConfig<float> full = cfg.loss_config();
  LossConfig<float> stripped = full;
  stripped.no_kd = true;
  stripped.no_psv = true;
  const auto with_terms = teacher_grads(full);
  const auto without_terms = teacher_grads(stripped);
  REQUIRE(with_terms.size() == without_terms.size());
  for (size_t i = 0; i < with_terms.size(); ++i) REQUIRE(with_terms[i] == without_terms[i]);
}

TEST_CASE("checkpoints round-trip bitwise") {
  fs::path dir = temp_dir("ckpt");
  NetworkConfig net;
  net.num_classes = 3;
  net.base_features = 4;
  net.num_stages = 2;
  net.se_reduction = 4;
  auto params = build_model<float>(net, 42);
  save_checkpoint(dir / "m.ckpt", params, net);
  auto loaded = load_checkpoint<float>(dir / "m.ckpt");
  REQUIRE(loaded.params.order == params.order);
  for (const auto& name : params.order)
    REQUIRE(loaded.params.at(name).values() == params.at(name).values());
  CHECK(loaded.config.base_features == 4);
  CHECK(loaded.config.conv_style == ConvStyle::regular);
}

TEST_CASE("resume reproduces the remaining trajectory bitwise") {
  std::vector<Case> data = tiny_stage_data(2, 2, 1);
  TrainConfig<float> cfg = tiny_config(4);
  cfg.checkpoint_interval = 2;

  fs::path dir_a = temp_dir("resume_a");
  Trainer<float> run_a(cfg, data, dir_a);
  run_a.run();

  fs::path dir_b = temp_dir("resume_b");
  Trainer<float> run_b(cfg, data, dir_b);
  run_b.resume_from(dir_a / "ckpt_epoch_2");
  run_b.run();
  REQUIRE(run_b.history.size() == 2);  // epochs 2 and 3 only

  for (auto& slot : run_a.models().slots) {
    ModelSlot<float>* other = run_b.models().find(slot.name);
    REQUIRE(other != nullptr);
    for (const auto& name : slot.params.order) {
      REQUIRE(slot.params.at(name).values() == other->params.at(name).values());
      REQUIRE(slot.momentum.at(name).values() == other->momentum.at(name).values());
    }
  }
  CHECK(run_a.history[2].total == run_b.history[0].total);
  CHECK(run_a.history[3].total == run_b.history[1].total);
}

TEST_CASE("metrics log layout and schedule columns") {
  std::vector<Case> data = tiny_stage_data(2, 2, 1);
  TrainConfig<float> cfg = tiny_config(3);
  fs::path dir = temp_dir("metrics");
  Trainer<float> trainer(cfg, data, dir);
  trainer.run();

  std::ifstream in(dir / "metrics.csv");
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,lr,lambda_dis,lambda_ssl,L_seg,L_ctl,L_psv,L_kd,total,val_dsc");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == cfg.epochs);

  REQUIRE(trainer.history.size() == 3);
  for (int e = 0; e < 3; ++e) {
    CHECK_THAT(trainer.history[static_cast<size_t>(e)].lambda_dis,
               Catch::Matchers::WithinAbs(warmup_weight(e, cfg.epochs, cfg.loss.lambda0_dis), 1e-12));
    CHECK_THAT(trainer.history[static_cast<size_t>(e)].lambda_ssl,
               Catch::Matchers::WithinAbs(warmup_weight(e, cfg.epochs, cfg.loss.lambda0_ssl), 1e-12));
    CHECK_THAT(trainer.history[static_cast<size_t>(e)].lr,
               Catch::Matchers::WithinAbs(poly_lr(e, cfg.epochs, cfg.lr0), 1e-15));
  }
  CHECK(trainer.history[0].lr == 0.01);
}

TEST_CASE("non-finite loss raises diverged_training_error with context") {
  std::vector<Case> data = tiny_stage_data(1, 1, 0);
  TrainConfig<float> cfg = tiny_config(1);
  Trainer<float> trainer(cfg, data, temp_dir("diverge"));
  ModelSlot<float>* s = trainer.models().find("s");
  s->params.at("head.b").values()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    trainer.run();
    FAIL("expected diverged_training_error");
  } catch (const diverged_training_error& e) {
    CHECK(e.epoch == 0);
    CHECK(e.step == 0);
  }
}

TEST_CASE("ablation model sets") {
  TrainConfig<float> cfg = tiny_config(1);
  SECTION("proposed: two teachers and a student") {
    ModelSet<float> set = build_model_set(cfg);
    REQUIRE(set.slots.size() == 3);
    CHECK(set.slots[0].config.decoder_upsampling == Upsampling::transposed);
    CHECK(set.slots[1].config.decoder_upsampling == Upsampling::trilinear);
    CHECK(set.slots[2].config.conv_style == ConvStyle::separable);
    CHECK(set.inference_model == "s");
  }
  SECTION("same-decoder teachers differ only by init") {
    cfg.ablation.same_decoder_teachers = true;
    ModelSet<float> set = build_model_set(cfg);
    CHECK(set.slots[1].config.decoder_upsampling == Upsampling::transposed);
    bool differ = false;
    for (const auto& name : set.slots[0].params.order)
      differ = differ || set.slots[0].params.at(name).values() !=
                             set.slots[1].params.at(name).values();
    CHECK(differ);
  }
  SECTION("cts trains two student-sized models, inference on the transposed one") {
    cfg.ablation.cts = true;
    ModelSet<float> set = build_model_set(cfg);
    REQUIRE(set.slots.size() == 2);
    CHECK(set.slots[0].config.conv_style == ConvStyle::separable);
    CHECK(set.slots[1].config.conv_style == ConvStyle::separable);
    CHECK(set.slots[0].config.decoder_upsampling == Upsampling::transposed);
    CHECK(set.slots[1].config.decoder_upsampling == Upsampling::trilinear);
    CHECK(set.inference_model == "s1");
  }
  SECTION("single teacher plus student") {
    cfg.ablation.single_teacher = true;
    ModelSet<float> set = build_model_set(cfg);
    REQUIRE(set.slots.size() == 2);
    CHECK(set.slots[0].name == "t1");
    CHECK(set.slots[1].name == "s");
  }
  SECTION("inconsistent toggles are rejected") {
    cfg.ablation.cts = true;
    cfg.ablation.single_teacher = true;
    CHECK_THROWS_AS(build_model_set(cfg), invalid_argument_error);
  }
}
