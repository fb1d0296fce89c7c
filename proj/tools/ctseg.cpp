// Coarse-to-fine 3D organ segmentation workbench: phantom dataset
// generation, semi-supervised training with cross-teaching teachers and a
// distilled student, coarse-to-fine inference, and DSC/NSD evaluation.
#include <CLI11.hpp>
#include <chrono>
#include <iostream>

#include "ctseg/checkpoint.hpp"
#include "ctseg/config.hpp"
#include "ctseg/nifti.hpp"
#include "ctseg/parallel.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ctseg;

namespace {

constexpr int EXIT_CONFIG = 2;
constexpr int EXIT_DATA = 3;
constexpr int EXIT_RUNTIME = 4;

struct GlobalOptions {
  std::string config_path;
  int64_t seed = -1;  // -1: keep the config value
  int threads = 0;    // 0: keep the config value
};

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig cfg;
  if (!g.config_path.empty()) cfg = load_run_config(g.config_path);
  if (g.seed >= 0) cfg.seed = static_cast<uint64_t>(g.seed);
  if (g.threads > 0) cfg.threads = g.threads;
  set_thread_count(cfg.threads);
  return cfg;
}

int cmd_phantoms(const GlobalOptions& g, const std::string& out_dir, int n_labeled,
                 int n_unlabeled, int n_val, std::vector<int64_t> extents) {
  RunConfig cfg = resolve_config(g);
  require(n_labeled >= 1 && n_val >= 1 && n_unlabeled >= 0,
          "phantoms: need n-labeled >= 1, n-val >= 1, n-unlabeled >= 0");
  PhantomConfig pcfg;
  pcfg.extents = {extents.at(0), extents.at(1), extents.at(2)};
  pcfg.num_classes = cfg.num_classes;

  std::vector<Case> cases;
  uint64_t id = 0;
  auto add = [&](const std::string& split, int count) {
    for (int i = 0; i < count; ++i) {
      Case c = generate_phantom(mix_seed(cfg.seed, hash_tag("case"), id), pcfg);
      c.id = split.substr(0, 3) + "_" + std::to_string(i);
      c.split = split;
      ++id;
      cases.push_back(std::move(c));
    }
  };
  add("labeled", n_labeled);
  add("unlabeled", n_unlabeled);
  add("validation", n_val);
  write_dataset(out_dir, cases, cfg.num_classes);
  save_run_config(fs::path(out_dir) / "config.resolved.json", cfg);
  std::cout << "wrote " << cases.size() << " cases to " << out_dir << "\n";
  return 0;
}

int cmd_train(const GlobalOptions& g, const std::string& data_dir, const std::string& stage,
              const std::string& out_dir, const std::string& ablation,
              const std::string& pseudo_dir, const std::string& resume_dir) {
  RunConfig cfg = resolve_config(g);
  if (!ablation.empty()) apply_ablation_preset(cfg, ablation);

  DatasetManifest manifest = read_dataset(data_dir);
  require(manifest.num_classes == cfg.num_classes,
          "dataset has " + std::to_string(manifest.num_classes) + " classes, config expects " +
              std::to_string(cfg.num_classes));
  std::vector<Case> data = prepare_stage_data(manifest, stage, pseudo_dir, cfg);

  TrainConfig<float> tc = cfg.train_config();
  if (stage == "fine") tc.patch = cfg.fine_extents;  // single-shot fine inputs
  fs::create_directories(out_dir);
  save_run_config(fs::path(out_dir) / "config.resolved.json", cfg);

  Trainer<float> trainer(tc, std::move(data), out_dir);
  if (!resume_dir.empty()) trainer.resume_from(resume_dir);
  trainer.run();
  std::cout << "trained " << stage << " stage for " << trainer.epochs_completed()
            << " epochs, best validation DSC " << trainer.best_val() << "\n"
            << "checkpoints in " << out_dir << "\n";
  return 0;
}

std::vector<Case> load_inference_cases(const fs::path& data_dir, const std::string& split) {
  std::vector<Case> cases;
  if (fs::exists(data_dir / "dataset.json")) {
    DatasetManifest manifest = read_dataset(data_dir);
    for (const auto& entry : manifest.entries) {
      if (split != "all" && entry.split != split) continue;
      cases.push_back(load_case(entry));
    }
  } else {
    // a directory of single-file .nii volumes
    std::vector<fs::path> nii_paths;
    for (const auto& item : fs::directory_iterator(data_dir))
      if (item.path().extension() == ".nii") nii_paths.push_back(item.path());
    std::sort(nii_paths.begin(), nii_paths.end());
    for (const auto& path : nii_paths) {
      NiftiVolume nv = read_nifti(path, VolumeKind::image);
      Case c;
      c.id = path.stem().string();
      c.split = "external";
      c.image = std::move(nv.volume);
      c.nifti_header = std::move(nv.header_bytes);
      cases.push_back(std::move(c));
    }
  }
  require(!cases.empty(), "no cases to infer in " + data_dir.string() + " (split " + split + ")");
  return cases;
}

int cmd_infer(const GlobalOptions& g, const std::string& data_dir, const std::string& out_dir,
              const std::string& coarse_ckpt, const std::string& fine_ckpt,
              const std::string& stage, const std::string& split) {
  RunConfig cfg = resolve_config(g);
  const InferenceSettings settings = cfg.inference_settings();

  auto coarse = load_checkpoint<float>(coarse_ckpt);
  LoadedCheckpoint<float> fine;
  const bool full = stage == "full";
  if (full) {
    require(!fine_ckpt.empty(), "infer: --fine-ckpt is required for full coarse-to-fine inference");
    fine = load_checkpoint<float>(fine_ckpt);
  }

  std::vector<Case> cases = load_inference_cases(data_dir, split);
  fs::create_directories(out_dir);
  save_run_config(fs::path(out_dir) / "config.resolved.json", cfg);

  std::ofstream timing(fs::path(out_dir) / "timings.csv");
  timing << "case,seconds\n";
  for (const Case& c : cases) {
    const auto t0 = std::chrono::steady_clock::now();
    bool fallback = false;
    Volume pred;
    if (full) {
      pred = coarse_to_fine_infer(coarse.params, coarse.config, fine.params, fine.config, c,
                                  settings, &fallback);
    } else {
      pred = coarse_infer(coarse.params, coarse.config, c, settings);
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_volume(out_dir, c.id + "_pred", pred);
    if (!c.nifti_header.empty())
      write_nifti_mask(fs::path(out_dir) / (c.id + "_pred.nii"), pred, c.nifti_header);
    timing << c.id << "," << std::setprecision(6) << std::fixed << seconds << "\n";
    std::cout << c.id << ": " << seconds << " s"
              << (fallback ? " (coarse mask empty, whole-volume fallback)" : "") << "\n";
  }
  std::cout << "wrote " << cases.size() << " predictions to " << out_dir << "\n";
  return 0;
}

int cmd_evaluate(const GlobalOptions& g, const std::string& pred_dir, const std::string& gt_dir,
                 const std::string& out_csv, const std::string& split) {
  RunConfig cfg = resolve_config(g);
  DatasetManifest manifest = read_dataset(gt_dir);

  std::vector<std::pair<std::string, Volume>> preds, gts;
  std::unordered_map<std::string, double> seconds;
  for (const auto& entry : manifest.entries) {
    if (split != "all" && entry.split != split) continue;
    require(!entry.label_path.empty(), "evaluate: case " + entry.id + " has no ground truth");
    gts.emplace_back(entry.id, read_volume(entry.label_path));
    const fs::path pred_path = fs::path(pred_dir) / (entry.id + "_pred.json");
    if (fs::exists(pred_path)) preds.emplace_back(entry.id, read_volume(pred_path));
  }
  {
    std::ifstream timing(fs::path(pred_dir) / "timings.csv");
    std::string line;
    std::getline(timing, line);  // header
    while (std::getline(timing, line)) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) continue;
      seconds[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
    }
  }

  const MetricsConfig mc = cfg.metrics_config();
  std::vector<CaseResult> results = match_and_evaluate(preds, gts, mc, seconds);
  EvalReport report = evaluate_run(results, mc);
  std::cout << report.to_table();
  if (!out_csv.empty()) {
    fs::path path(out_csv);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw io_error("cannot write report: " + out_csv);
    out << report.to_csv();
    std::cout << "report written to " << out_csv << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coarse-to-fine semi-supervised 3D organ segmentation workbench"};
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--config", g.config_path, "run configuration JSON")->envname("CTSEG_CONFIG");
  app.add_option("--seed", g.seed, "override the config seed")->envname("CTSEG_SEED");
  app.add_option("--threads", g.threads, "worker threads (default 1; results are identical at any count)")
      ->envname("CTSEG_THREADS");

  auto* phantoms = app.add_subcommand("phantoms", "generate a synthetic phantom dataset");
  std::string out_dir;
  int n_labeled = 5, n_unlabeled = 40, n_val = 5;
  std::vector<int64_t> extents{48, 48, 48};
  phantoms->add_option("--out", out_dir, "output dataset directory")->required();
  phantoms->add_option("--n-labeled", n_labeled, "labeled cases");
  phantoms->add_option("--n-unlabeled", n_unlabeled, "unlabeled cases");
  phantoms->add_option("--n-val", n_val, "validation cases");
  phantoms->add_option("--extents", extents, "volume extents")->expected(3);

  auto* train = app.add_subcommand("train", "train one stage (coarse or fine)");
  std::string data_dir, stage = "coarse", run_dir, ablation, pseudo_dir, resume_dir;
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--stage", stage, "coarse | fine")->check(CLI::IsMember({"coarse", "fine"}));
  train->add_option("--out", run_dir, "run output directory")->required();
  train->add_option("--ablation", ablation,
                    "preset: proposed, fsl, kd, ssl-kd, ssl-psv, ssl-kd-psv, cts, ctt-kd, "
                    "ctt-psv, ctt-sd");
  train->add_option("--pseudo-masks", pseudo_dir, "coarse pseudo-masks for the fine stage");
  train->add_option("--resume", resume_dir, "checkpoint directory to resume from");

  auto* infer = app.add_subcommand("infer", "run inference with trained checkpoints");
  std::string infer_data, infer_out, coarse_ckpt, fine_ckpt, infer_stage = "full",
                                                             infer_split = "validation";
  infer->add_option("--data", infer_data, "dataset directory (or a directory of .nii files)")
      ->required();
  infer->add_option("--out", infer_out, "prediction output directory")->required();
  infer->add_option("--coarse-ckpt", coarse_ckpt, "coarse student checkpoint")->required();
  infer->add_option("--fine-ckpt", fine_ckpt, "fine student checkpoint");
  infer->add_option("--stage", infer_stage, "full | coarse (coarse masks only)")
      ->check(CLI::IsMember({"full", "coarse"}));
  infer->add_option("--split", infer_split,
                    "dataset split: validation | unlabeled | labeled | all");

  auto* evaluate = app.add_subcommand("evaluate", "evaluate predictions against ground truth");
  std::string pred_dir, gt_dir, report_csv, eval_split = "validation";
  evaluate->add_option("--pred", pred_dir, "prediction directory")->required();
  evaluate->add_option("--gt", gt_dir, "ground-truth dataset directory")->required();
  evaluate->add_option("--out", report_csv, "report CSV path");
  evaluate->add_option("--split", eval_split, "dataset split to evaluate");

  try {
    app.parse(argc, argv);
    if (*phantoms) return cmd_phantoms(g, out_dir, n_labeled, n_unlabeled, n_val, extents);
    if (*train) return cmd_train(g, data_dir, stage, run_dir, ablation, pseudo_dir, resume_dir);
    if (*infer)
      return cmd_infer(g, infer_data, infer_out, coarse_ckpt, fine_ckpt, infer_stage, infer_split);
    if (*evaluate) return cmd_evaluate(g, pred_dir, gt_dir, report_csv, eval_split);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : EXIT_CONFIG;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return EXIT_CONFIG;
  } catch (const io_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return EXIT_DATA;
  } catch (const unsupported_format_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return EXIT_DATA;
  } catch (const unsupported_orientation_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return EXIT_DATA;
  } catch (const error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return EXIT_RUNTIME;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return EXIT_RUNTIME;
  }
  return 0;
}
