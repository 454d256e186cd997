// Command-line entry point: data synthesis, fold splitting, preprocessing,
// stage training, hybrid training, evaluation and DCT inspection.
//
// Exit codes: 0 success, 2 configuration/parse failure, 3 data error,
// 4 numeric divergence. Every run echoes its effective options into
// <out>/config_used.ini so results are reproducible from the recorded
// config + seed.

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "leukonet/leukonet.hpp"

namespace fs = std::filesystem;
using namespace leukonet;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

void echo_config(CLI::App& app, const std::string& out_dir) {
  ensure_dir(out_dir);
  write_text((fs::path(out_dir) / "config_used.ini").string(),
             app.config_to_str(true, false));
}

struct GlobalOpts {
  std::uint64_t seed = kDefaultSeed;
  std::string out_dir = "out";
  int threads = 0;
};

StageConfig stage_config_from_flags(const std::string& stage, const std::string& act,
                                    const std::string& aug, const std::string& stain,
                                    const std::string& stain_file, bool no_sqrt,
                                    bool no_l2, bool freeze_sd, bool no_dct_grad,
                                    double energy_fraction, std::int64_t input_size) {
  StageConfig cfg;
  cfg.stage = parse_stage(stage);
  cfg.activation = parse_activation(act);
  cfg.augmentation = parse_augment_mode(aug);
  cfg.stain_init = parse_stain_init(stain);
  cfg.stain_file = stain_file;
  cfg.bilinear_signed_sqrt = !no_sqrt;
  cfg.bilinear_l2 = !no_l2;
  cfg.sd_trainable = !freeze_sd;
  cfg.train_sd_through_dct = !no_dct_grad;
  cfg.dct.energy_fraction = energy_fraction;
  cfg.input_size = input_size;
  return cfg;
}

std::vector<int> split_selection(const DatasetManifest& manifest, const std::string& split,
                                 const std::string& folds_file) {
  std::vector<int> idx;
  if (split == "test" || split == "train" || split == "all") {
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
      const bool is_test = manifest.records[i].is_test;
      if (split == "all" || (split == "test" && is_test) || (split == "train" && !is_test))
        idx.push_back(static_cast<int>(i));
    }
    return idx;
  }
  if (split.rfind("fold:", 0) == 0) {
    if (folds_file.empty())
      throw ConfigError("--split fold:N needs --folds-file");
    const int fold = std::stoi(split.substr(5));
    FoldAssignment fa = load_folds(folds_file);
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
      const auto& r = manifest.records[i];
      if (!r.is_test && fa.fold_of(r.subject_id) == fold)
        idx.push_back(static_cast<int>(i));
    }
    return idx;
  }
  throw ConfigError("unknown --split '" + split + "' (expected test|train|all|fold:N)");
}

void save_train_outputs(const TrainResult& result, const std::string& out_dir) {
  write_checkpoint(result.best_checkpoint, (fs::path(out_dir) / "best.ckpt").string());
  write_text((fs::path(out_dir) / "metrics.log").string(), result.metrics_log);
  write_text((fs::path(out_dir) / "best_val_report.txt").string(),
             result.best_val_report.to_text("val"));
  std::cout << "best epoch " << result.best_epoch << ", validation accuracy "
            << fmt_fixed(result.best_val_accuracy, 2) << "\n";
}

// Min-max scaled grayscale visualization of one plane.
void write_plane_png(const std::string& path, const Real* plane, std::int64_t h,
                     std::int64_t w) {
  Real lo = plane[0], hi = plane[0];
  for (std::int64_t i = 0; i < h * w; ++i) {
    lo = std::min(lo, plane[i]);
    hi = std::max(hi, plane[i]);
  }
  const Real range = hi > lo ? hi - lo : Real(1);
  ImageU8 img = ImageU8::blank(h, w);
  for (std::int64_t i = 0; i < h * w; ++i) {
    const auto v = static_cast<std::uint8_t>(
        std::lround(255.0 * (plane[i] - lo) / range));
    img.rgb[static_cast<std::size_t>(3 * i)] = v;
    img.rgb[static_cast<std::size_t>(3 * i + 1)] = v;
    img.rgb[static_cast<std::size_t>(3 * i + 2)] = v;
  }
  write_png(path, img);
}

int dispatch(CLI::App& app, int argc, char** argv);

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"leukonet: staged OD/DCT leukocyte classifier pipeline"};
  try {
    return dispatch(app, argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 4;
  } catch (const SingularMatrixError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {  // shape/contract/range/io
    std::cerr << "error: data: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 3;
  }
}

namespace {

int dispatch(CLI::App& app, int argc, char** argv) {
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "INI config file; command-line flags override it");

  GlobalOpts g;
  app.add_option("--seed", g.seed, "Master RNG seed")->capture_default_str();
  app.add_option("--out", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = library default)")
      ->capture_default_str();

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "Generate a synthetic two-class cell dataset");
  int synth_subjects = 8, synth_cells = 100, synth_test_subjects = 0;
  std::int64_t synth_size = 96;
  synth->add_option("--subjects", synth_subjects, "Subjects per class")->capture_default_str();
  synth->add_option("--cells", synth_cells, "Cells per subject")->capture_default_str();
  synth->add_option("--size", synth_size, "Image size in pixels")->capture_default_str();
  synth->add_option("--test-subjects", synth_test_subjects,
                    "Extra held-out test subjects per class")
      ->capture_default_str();

  // ---- split ----
  auto* split = app.add_subcommand("split", "Subject-level fold assignment");
  std::string split_manifest;
  int split_k = 4;
  split->add_option("--manifest", split_manifest, "Dataset manifest")->required();
  split->add_option("--folds", split_k, "Number of folds")->capture_default_str();

  // ---- preprocess ----
  auto* prep = app.add_subcommand("preprocess", "Center cells on blank canvases");
  std::string prep_manifest;
  std::int64_t prep_canvas = 350;
  prep->add_option("--manifest", prep_manifest, "Dataset manifest")->required();
  prep->add_option("--canvas", prep_canvas, "Canvas size in pixels")->capture_default_str();

  // ---- shared stage/train flags ----
  std::string stage_str = "s1", act_str = "relu", aug_str = "none";
  std::string stain_str = "standard-stain", stain_file;
  bool no_sqrt = false, no_l2 = false, freeze_sd = false, no_dct_grad = false;
  double energy_fraction = 0.95;
  std::int64_t input_size = 350;
  std::string train_manifest, folds_file;
  int val_fold = 0;
  TrainConfig tcfg;

  auto add_stage_flags = [&](CLI::App* cmd, bool hybrid) {
    cmd->add_option("--stage", stage_str,
                    hybrid ? "Hybrid stage (s3|s3c)" : "Pipeline stage (s1|s2|s2c)")
        ->required();
    cmd->add_option("--aug", aug_str, "Augmentation mode (none|full|normal_only)")
        ->capture_default_str();
    if (!hybrid) {
      cmd->add_option("--activation", act_str, "Activation (relu|prelu|ptelu)")
          ->capture_default_str();
      cmd->add_option("--stain", stain_str,
                      "Stain matrix init (standard-stain|identity|seeded-random)")
          ->capture_default_str();
      cmd->add_option("--stain-file", stain_file, "Override the bundled stain constants");
      cmd->add_flag("--no-bilinear-sqrt", no_sqrt, "Disable the signed square root");
      cmd->add_flag("--no-bilinear-l2", no_l2, "Disable bilinear L2 normalization");
      cmd->add_flag("--freeze-sd", freeze_sd, "Keep the stain matrix fixed");
      cmd->add_flag("--no-dct-grad", no_dct_grad,
                    "Block gradients through the DCT branch into the SD layer");
      cmd->add_option("--energy-fraction", energy_fraction, "DCT energy threshold")
          ->capture_default_str();
      cmd->add_option("--input-size", input_size, "Expected input image size")
          ->capture_default_str();
    }
  };
  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--manifest", train_manifest, "Dataset manifest")->required();
    cmd->add_option("--folds-file", folds_file, "Fold assignment file")->required();
    cmd->add_option("--val-fold", val_fold, "Validation fold index")->capture_default_str();
    cmd->add_option("--lr", tcfg.learning_rate, "Learning rate")->capture_default_str();
    cmd->add_option("--momentum", tcfg.momentum, "SGD momentum")->capture_default_str();
    cmd->add_option("--batch", tcfg.batch_size, "Batch size")->capture_default_str();
    cmd->add_option("--epochs", tcfg.max_epochs, "Maximum epochs")->capture_default_str();
    cmd->add_option("--patience", tcfg.patience, "Early-stopping patience")
        ->capture_default_str();
    cmd->add_option("--weight-normal", tcfg.class_weight_normal,
                    "Loss weight for the Normal class")
        ->capture_default_str();
    cmd->add_option("--weight-cancer", tcfg.class_weight_cancer,
                    "Loss weight for the Cancer class")
        ->capture_default_str();
  };

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "Train one stage (s1|s2|s2c)");
  add_stage_flags(train_cmd, false);
  add_train_flags(train_cmd);

  // ---- train-hybrid ----
  auto* hybrid_cmd =
      app.add_subcommand("train-hybrid", "Train the fusion layer of s3/s3c");
  std::string ckpt_a, ckpt_b;
  add_stage_flags(hybrid_cmd, true);
  add_train_flags(hybrid_cmd);
  hybrid_cmd->add_option("--ckpt-a", ckpt_a, "First component checkpoint")->required();
  hybrid_cmd->add_option("--ckpt-b", ckpt_b, "Second component checkpoint")->required();

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string eval_stage, eval_ckpt, eval_manifest, eval_split = "test", eval_folds_file;
  std::int64_t eval_batch = 16;
  eval_cmd->add_option("--stage", eval_stage, "Expected stage of the checkpoint")->required();
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "Dataset manifest")->required();
  eval_cmd->add_option("--split", eval_split, "test|train|all|fold:N")->capture_default_str();
  eval_cmd->add_option("--folds-file", eval_folds_file, "Fold file (for fold:N splits)");
  eval_cmd->add_option("--batch", eval_batch, "Evaluation batch size")->capture_default_str();

  // ---- inspect-dct ----
  auto* inspect = app.add_subcommand("inspect-dct",
                                     "Write OD planes and thresholded signed-log DCT "
                                     "planes for one image");
  std::string inspect_image, inspect_stain = "identity", inspect_stain_file;
  double inspect_energy = 0.95;
  inspect->add_option("--image", inspect_image, "Input image (PNG or BMP)")->required();
  inspect->add_option("--stain", inspect_stain, "Stain matrix for the SD step")
      ->capture_default_str();
  inspect->add_option("--stain-file", inspect_stain_file, "Override stain constants");
  inspect->add_option("--energy-fraction", inspect_energy, "DCT energy threshold")
      ->capture_default_str();

  app.parse(argc, argv);

#ifdef _OPENMP
  if (g.threads > 0) omp_set_num_threads(g.threads);
#endif
  tcfg.seed = g.seed;
  tcfg.threads = g.threads;

  if (*synth) {
    echo_config(app, g.out_dir);
    SynthParams params;
    params.n_subjects_per_class = synth_subjects;
    params.cells_per_subject = synth_cells;
    params.size = synth_size;
    params.test_subjects_per_class = synth_test_subjects;
    Rng rng(g.seed);
    DatasetManifest m = synth_generate(params, rng, g.out_dir);
    std::cout << "wrote " << m.records.size() << " images under " << g.out_dir << "\n";
    return 0;
  }

  if (*split) {
    echo_config(app, g.out_dir);
    DatasetManifest m = load_manifest(split_manifest);
    Rng rng(g.seed);
    FoldAssignment fa = split_folds(m, split_k, rng);
    for (const auto& issue : check_fold_invariants(m, fa))
      std::cerr << "warning: " << issue << "\n";
    const std::string path = (fs::path(g.out_dir) / "folds.csv").string();
    save_folds(fa, path);
    std::cout << "wrote " << path << "\n";
    return 0;
  }

  if (*prep) {
    echo_config(app, g.out_dir);
    DatasetManifest m = load_manifest(prep_manifest);
    ensure_dir((fs::path(g.out_dir) / "images").string());
    DatasetManifest out_manifest;
    out_manifest.base_dir = g.out_dir;
    int counter = 0;
    for (const auto& r : m.records) {
      ImageU8 img = read_image(m.resolve(r.path));
      Tensor canvas = center_on_canvas(tensor_from_image(img), nullptr, prep_canvas);
      char name[64];
      std::snprintf(name, sizeof(name), "images/%06d.png", counter++);
      write_png((fs::path(g.out_dir) / name).string(), image_from_tensor(canvas));
      ManifestRecord rec = r;
      rec.path = name;
      out_manifest.records.push_back(std::move(rec));
    }
    save_manifest(out_manifest, (fs::path(g.out_dir) / "manifest.csv").string());
    std::cout << "centered " << counter << " images onto " << prep_canvas << "x"
              << prep_canvas << " canvases\n";
    return 0;
  }

  if (*train_cmd) {
    echo_config(app, g.out_dir);
    StageConfig cfg = stage_config_from_flags(stage_str, act_str, aug_str, stain_str,
                                              stain_file, no_sqrt, no_l2, freeze_sd,
                                              no_dct_grad, energy_fraction, input_size);
    if (cfg.stage == StageKind::S3 || cfg.stage == StageKind::S3C)
      throw ConfigError("use train-hybrid for s3/s3c");
    DatasetManifest m = load_manifest(train_manifest);
    FoldAssignment fa = load_folds(folds_file);
    TrainResult result = train(cfg, tcfg, m, fa, val_fold);
    save_train_outputs(result, g.out_dir);
    return 0;
  }

  if (*hybrid_cmd) {
    echo_config(app, g.out_dir);
    const StageKind stage = parse_stage(stage_str);
    if (stage != StageKind::S3 && stage != StageKind::S3C)
      throw ConfigError("train-hybrid stage must be s3 or s3c");
    DatasetManifest m = load_manifest(train_manifest);
    FoldAssignment fa = load_folds(folds_file);
    TrainResult result =
        train_hybrid(stage, parse_augment_mode(aug_str), read_checkpoint(ckpt_a),
                     read_checkpoint(ckpt_b), tcfg, m, fa, val_fold);
    save_train_outputs(result, g.out_dir);
    return 0;
  }

  if (*eval_cmd) {
    echo_config(app, g.out_dir);
    const StageKind want = parse_stage(eval_stage);
    CheckpointData ck = read_checkpoint(eval_ckpt);
    if (ck.stage != want)
      throw ConfigError("checkpoint " + eval_ckpt + " holds stage " +
                        stage_name(ck.stage) + ", requested " + stage_name(want));
    DatasetManifest m = load_manifest(eval_manifest);
    std::vector<int> idx = split_selection(m, eval_split, eval_folds_file);
    LoadedDataset ds = LoadedDataset::from_manifest(m);
    MetricsReport report;
    if (ck.stage == StageKind::S3 || ck.stage == StageKind::S3C) {
      HybridModel model = hybrid_model_from_checkpoint(ck);
      report = evaluate(model, ds, idx, eval_batch);
    } else {
      StageModel model = stage_model_from_checkpoint(ck);
      report = evaluate(model, ds, idx, eval_batch);
    }
    const std::string text = report.to_text(eval_split);
    std::string fname = "metrics_" + eval_split + ".txt";
    for (auto& c : fname)
      if (c == ':') c = '_';
    write_text((fs::path(g.out_dir) / fname).string(), text);
    std::cout << text;
    return 0;
  }

  if (*inspect) {
    echo_config(app, g.out_dir);
    ImageU8 img = read_image(inspect_image);
    Tensor rgb = tensor_from_image(img);
    Tensor batch = reshape(rgb, {1, 3, img.height, img.width});
    StainMatrix stain;
    const StainInit init = parse_stain_init(inspect_stain);
    Rng rng(g.seed);
    stain = init_stain_matrix(init, &rng, inspect_stain_file);
    Tensor q = stain_deconvolve(rgb_to_od(batch), stain.m);
    DctConfig dct_cfg;
    dct_cfg.energy_fraction = inspect_energy;
    Tensor dct_planes = dct_layer_forward(q, dct_cfg);

    const std::int64_t plane = img.height * img.width;
    std::ostringstream stats;
    stats << "image: " << inspect_image << "\n";
    for (int ch = 0; ch < 3; ++ch) {
      const Real* qp = q.data().data() + ch * plane;
      const Real* dp = dct_planes.data().data() + ch * plane;
      char name[32];
      std::snprintf(name, sizeof(name), "od_plane_%d.png", ch);
      write_plane_png((fs::path(g.out_dir) / name).string(), qp, img.height, img.width);
      std::snprintf(name, sizeof(name), "dct_plane_%d.png", ch);
      write_plane_png((fs::path(g.out_dir) / name).string(), dp, img.height, img.width);
      Real qlo = qp[0], qhi = qp[0], dlo = dp[0], dhi = dp[0];
      std::int64_t nonzero = 0;
      for (std::int64_t i = 0; i < plane; ++i) {
        qlo = std::min(qlo, qp[i]);
        qhi = std::max(qhi, qp[i]);
        dlo = std::min(dlo, dp[i]);
        dhi = std::max(dhi, dp[i]);
        nonzero += dp[i] != 0;
      }
      stats << "plane " << ch << ": od range [" << fmt_fixed(qlo, 6) << ", "
            << fmt_fixed(qhi, 6) << "], dct signed-log range [" << fmt_fixed(dlo, 6)
            << ", " << fmt_fixed(dhi, 6) << "], nonzero dct outputs " << nonzero << "/"
            << plane << "\n";
    }
    write_text((fs::path(g.out_dir) / "values.txt").string(), stats.str());
    std::cout << stats.str();
    return 0;
  }

  return 0;
}

}  // namespace
