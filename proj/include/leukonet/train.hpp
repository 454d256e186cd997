// Training and evaluation harness: momentum SGD over the staged models,
// early stopping on validation accuracy, metrics (accuracy, per-class
// precision/recall/F1 with Cancer as the positive class) and best-checkpoint
// selection.
//
// Metrics log format (line-oriented, deterministic byte-for-byte given a
// seed): header "epoch,split,acc,f1_n,f1_c,loss", then one line per epoch and
// split with percentages at 2 decimals and loss at 6.
#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "leukonet/data.hpp"
#include "leukonet/model.hpp"

namespace leukonet {

struct TrainConfig {
  Real learning_rate = Real(1e-2);
  Real momentum = Real(0.9);
  std::int64_t batch_size = 16;
  int max_epochs = 30;
  int patience = 8;            // epochs of non-improving validation accuracy
  Real lr_decay = Real(0.1);   // applied every patience/2 non-improving epochs
  std::uint64_t seed = kDefaultSeed;
  int threads = 0;             // 0 = leave the OpenMP default alone
  // optional class weighting for the loss (Normal, Cancer); 1,1 = off
  Real class_weight_normal = 1;
  Real class_weight_cancer = 1;

  void validate() const {
    if (learning_rate < 0) throw ContractError("train: learning_rate must be >= 0");
    if (batch_size < 2) throw ContractError("train: batch_size must be >= 2");
    if (max_epochs < 1 || patience < 1)
      throw ContractError("train: max_epochs and patience must be >= 1");
    if (class_weight_normal < 0 || class_weight_cancer < 0)
      throw ContractError("train: class weights must be >= 0");
  }

  std::vector<Real> class_weights() const {
    if (class_weight_normal == 1 && class_weight_cancer == 1) return {};
    return {class_weight_normal, class_weight_cancer};
  }
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// precision = tp/(tp+fp), recall = tp/(tp+fn), F1 = 2PR/(P+R); zero
// denominators yield 0 and set the degenerate flag.
inline Real f1_score(std::int64_t tp, std::int64_t fp, std::int64_t fn,
                     bool* degenerate = nullptr) {
  if (tp < 0 || fp < 0 || fn < 0) throw ContractError("f1_score: counts must be >= 0");
  if (degenerate) *degenerate = false;
  auto ratio = [&](std::int64_t num, std::int64_t den) -> Real {
    if (den == 0) {
      if (degenerate) *degenerate = true;
      return 0;
    }
    return static_cast<Real>(num) / static_cast<Real>(den);
  };
  const Real p = ratio(tp, tp + fp);
  const Real r = ratio(tp, tp + fn);
  if (p + r == 0) {
    if (degenerate) *degenerate = true;
    return 0;
  }
  return 2 * p * r / (p + r);
}

// Confusion counts with Cancer as the positive class.
struct MetricsReport {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::int64_t ties = 0;  // argmax ties, predicted Normal by rule

  std::int64_t total() const { return tp + fp + tn + fn; }
  double accuracy() const {
    return total() == 0 ? 0 : 100.0 * static_cast<double>(tp + tn) / static_cast<double>(total());
  }
  // Cancer as positive
  double f1_cancer(bool* degenerate = nullptr) const {
    return 100.0 * f1_score(tp, fp, fn, degenerate);
  }
  // Normal as positive: its true positives are the Cancer-negatives
  double f1_normal(bool* degenerate = nullptr) const {
    return 100.0 * f1_score(tn, fn, fp, degenerate);
  }
  double precision_cancer() const { return tp + fp == 0 ? 0 : 100.0 * tp / static_cast<double>(tp + fp); }
  double recall_cancer() const { return tp + fn == 0 ? 0 : 100.0 * tp / static_cast<double>(tp + fn); }
  double precision_normal() const { return tn + fn == 0 ? 0 : 100.0 * tn / static_cast<double>(tn + fn); }
  double recall_normal() const { return tn + fp == 0 ? 0 : 100.0 * tn / static_cast<double>(tn + fp); }

  // Schema-versioned structured text with a nested confusion block.
  std::string to_text(const std::string& split) const {
    bool deg_n = false, deg_c = false;
    const double f1c = f1_cancer(&deg_c), f1n = f1_normal(&deg_n);
    std::ostringstream os;
    os << "schema: leukonet-metrics-v1\n"
       << "split: " << split << '\n'
       << "samples: " << total() << '\n'
       << "accuracy: " << fmt_fixed(accuracy(), 2) << '\n'
       << "precision_normal: " << fmt_fixed(precision_normal(), 2) << '\n'
       << "recall_normal: " << fmt_fixed(recall_normal(), 2) << '\n'
       << "f1_normal: " << fmt_fixed(f1n, 2) << '\n'
       << "precision_cancer: " << fmt_fixed(precision_cancer(), 2) << '\n'
       << "recall_cancer: " << fmt_fixed(recall_cancer(), 2) << '\n'
       << "f1_cancer: " << fmt_fixed(f1c, 2) << '\n'
       << "confusion:\n"
       << "  tp: " << tp << '\n'
       << "  fp: " << fp << '\n'
       << "  tn: " << tn << '\n'
       << "  fn: " << fn << '\n'
       << "ties: " << ties << '\n'
       << "degenerate_f1: " << ((deg_n || deg_c) ? 1 : 0) << '\n';
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// In-memory dataset
// ---------------------------------------------------------------------------

struct LoadedDataset {
  std::vector<ImageU8> images;   // one per manifest record
  std::vector<Label> labels;
  std::int64_t image_size = 0;

  static LoadedDataset from_manifest(const DatasetManifest& manifest) {
    LoadedDataset ds;
    ds.images.reserve(manifest.records.size());
    for (const auto& r : manifest.records) {
      ImageU8 img = read_image(manifest.resolve(r.path));
      if (img.height != img.width)
        throw ContractError("dataset image " + r.path + " is not square");
      if (ds.image_size == 0) ds.image_size = img.height;
      if (img.height != ds.image_size)
        throw ContractError("dataset image " + r.path + " size differs from the rest");
      ds.images.push_back(std::move(img));
      ds.labels.push_back(r.label);
    }
    return ds;
  }
};

namespace detail {

// Stack items into an n x 3 x s x s batch, applying per-item augmentation
// streams. Items are independent, so the loop parallelizes without affecting
// the result.
inline Tensor make_batch(const LoadedDataset& ds, const std::vector<EpochItem>& items,
                         std::size_t begin, std::size_t end, const AugmentConfig& aug) {
  const std::int64_t n = static_cast<std::int64_t>(end - begin);
  const std::int64_t s = ds.image_size;
  const std::int64_t sample = 3 * s * s;
  std::vector<Real> data(static_cast<std::size_t>(n * sample));
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const EpochItem& item = items[begin + static_cast<std::size_t>(i)];
    Tensor img = tensor_from_image(ds.images[static_cast<std::size_t>(item.record)]);
    if (item.augment && aug.mode != AugmentMode::None) {
      Rng stream(item.rng_stream);
      img = augment(img, aug, stream);
    }
    std::copy(img.data().begin(), img.data().end(), data.begin() + i * sample);
  }
  return Tensor::from_data({n, 3, s, s}, std::move(data));
}

inline std::vector<int> batch_labels(const LoadedDataset& ds,
                                     const std::vector<EpochItem>& items,
                                     std::size_t begin, std::size_t end) {
  std::vector<int> labels;
  labels.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i)
    labels.push_back(static_cast<int>(ds.labels[static_cast<std::size_t>(items[i].record)]));
  return labels;
}

inline void tally(MetricsReport& report, const Tensor& logits,
                  const std::vector<int>& labels) {
  const std::int64_t n = logits.dim(0);
  for (std::int64_t i = 0; i < n; ++i) {
    const Real l0 = logits.data()[i * 2], l1 = logits.data()[i * 2 + 1];
    // tie -> Normal (and counted)
    int pred = l1 > l0 ? 1 : 0;
    if (l1 == l0) ++report.ties;
    const int truth = labels[static_cast<std::size_t>(i)];
    if (truth == 1)
      (pred == 1 ? report.tp : report.fn) += 1;
    else
      (pred == 1 ? report.fp : report.tn) += 1;
  }
}

}  // namespace detail

// Pure evaluation pass: argmax over the two logits per sample (ties predict
// Normal and are counted), no parameter or statistic mutation.
template <typename Model>
inline MetricsReport evaluate(Model& model, const LoadedDataset& ds,
                              const std::vector<int>& indices, std::int64_t batch_size,
                              double* mean_loss = nullptr) {
  if (indices.empty()) throw ContractError("evaluate: empty dataset");
  if (model.training_mode) throw ContractError("evaluate: model must be in eval mode");
  std::vector<EpochItem> items;
  items.reserve(indices.size());
  for (int idx : indices) items.push_back({idx, false, 0});
  AugmentConfig no_aug;
  no_aug.mode = AugmentMode::None;

  MetricsReport report;
  double loss_sum = 0;
  NoGradGuard no_grad;
  for (std::size_t begin = 0; begin < items.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(items.size(), begin + static_cast<std::size_t>(batch_size));
    Tensor batch = detail::make_batch(ds, items, begin, end, no_aug);
    std::vector<int> labels = detail::batch_labels(ds, items, begin, end);
    Tensor logits = model.forward(batch);
    detail::tally(report, logits, labels);
    if (mean_loss)
      loss_sum += softmax_cross_entropy(logits, labels).item() *
                  static_cast<double>(end - begin);
  }
  if (mean_loss) *mean_loss = loss_sum / static_cast<double>(items.size());
  return report;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  CheckpointData best_checkpoint;
  std::string metrics_log;
  double best_val_accuracy = 0;  // percent
  int best_epoch = -1;
  MetricsReport best_val_report;
};

namespace detail {

inline std::vector<int> fold_indices(const DatasetManifest& manifest,
                                     const FoldAssignment& folds, int val_fold,
                                     bool want_val) {
  std::vector<int> out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.is_test) continue;
    const bool in_val = folds.fold_of(r.subject_id) == val_fold;
    if (in_val == want_val) out.push_back(static_cast<int>(i));
  }
  return out;
}

inline std::string log_line(int epoch, const char* split, double acc, double f1n,
                            double f1c, double loss) {
  std::ostringstream os;
  os << epoch << ',' << split << ',' << fmt_fixed(acc, 2) << ',' << fmt_fixed(f1n, 2)
     << ',' << fmt_fixed(f1c, 2) << ',' << fmt_fixed(loss, 6) << '\n';
  return os.str();
}

inline void apply_thread_config(const TrainConfig& cfg) {
#ifdef _OPENMP
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#else
  (void)cfg;
#endif
}

// Shared epoch loop for single-stage and hybrid training. ModelOps bundles
// the small per-model differences.
template <typename Model>
inline TrainResult run_training(Model& model, AugmentMode aug_mode,
                                const TrainConfig& tcfg, const DatasetManifest& manifest,
                                const FoldAssignment& folds, int val_fold,
                                const LoadedDataset& ds) {
  tcfg.validate();
  apply_thread_config(tcfg);
  if (val_fold < 0 || val_fold >= folds.k)
    throw ConfigError("val fold " + std::to_string(val_fold) + " out of range for k=" +
                      std::to_string(folds.k));
  const std::vector<int> train_idx = detail::fold_indices(manifest, folds, val_fold, false);
  const std::vector<int> val_idx = detail::fold_indices(manifest, folds, val_fold, true);
  if (train_idx.empty() || val_idx.empty())
    throw ContractError("train: empty training or validation split");

  AugmentConfig aug;
  aug.mode = aug_mode;

  // stream 1: epoch construction and shuffling (stream 0 initialized the model)
  Rng rng = Rng(tcfg.seed).stream(1);
  SgdMomentum opt(tcfg.learning_rate, tcfg.momentum);
  opt.add_parameters(model.trainable_parameters());
  const std::vector<Real> class_weights = tcfg.class_weights();

  std::ostringstream log;
  log << "epoch,split,acc,f1_n,f1_c,loss\n";

  TrainResult result;
  result.best_val_accuracy = -1;
  int epochs_since_best = 0;
  const int decay_every = std::max(1, tcfg.patience / 2);

  for (int epoch = 0; epoch < tcfg.max_epochs; ++epoch) {
    std::vector<EpochItem> items = build_epoch(manifest, train_idx, aug, rng);
    rng.shuffle(items);

    model.set_train();
    MetricsReport train_report;
    double loss_sum = 0;
    std::int64_t seen = 0;
    for (std::size_t begin = 0; begin < items.size();
         begin += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t end =
          std::min(items.size(), begin + static_cast<std::size_t>(tcfg.batch_size));
      Tensor batch = detail::make_batch(ds, items, begin, end, aug);
      std::vector<int> labels = detail::batch_labels(ds, items, begin, end);
      Tensor logits = model.forward(batch);
      Tensor loss = softmax_cross_entropy(logits, labels, class_weights);
      if (!std::isfinite(loss.item()))
        throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                           " (learning rate " + fmt_fixed(opt.lr, 6) + ")");
      detail::tally(train_report, logits, labels);
      loss_sum += loss.item() * static_cast<double>(end - begin);
      seen += static_cast<std::int64_t>(end - begin);
      opt.zero_grad();
      loss.backward();
      opt.step();
      model.apply_constraints();
    }
    const double train_loss = loss_sum / static_cast<double>(seen);

    model.set_eval();
    double val_loss = 0;
    MetricsReport val_report = evaluate(model, ds, val_idx, tcfg.batch_size, &val_loss);

    log << detail::log_line(epoch, "train", train_report.accuracy(),
                            train_report.f1_normal(), train_report.f1_cancer(),
                            train_loss);
    log << detail::log_line(epoch, "val", val_report.accuracy(), val_report.f1_normal(),
                            val_report.f1_cancer(), val_loss);

    if (val_report.accuracy() > result.best_val_accuracy) {
      result.best_val_accuracy = val_report.accuracy();
      result.best_epoch = epoch;
      result.best_val_report = val_report;
      result.best_checkpoint = make_checkpoint(model, val_report.accuracy());
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= tcfg.patience) break;
      if (epochs_since_best % decay_every == 0) opt.lr *= tcfg.lr_decay;
    }
  }
  result.metrics_log = log.str();
  return result;
}

}  // namespace detail

// Trains one of S1/S2/S2C on the non-validation folds, evaluating on
// val_fold each epoch; returns the best-validation-accuracy checkpoint and
// the full metrics log.
inline TrainResult train(const StageConfig& stage_cfg, const TrainConfig& tcfg,
                         const DatasetManifest& manifest, const FoldAssignment& folds,
                         int val_fold, const LoadedDataset* preloaded = nullptr) {
  Rng init_rng = Rng(tcfg.seed).stream(0);
  StageModel model = build_stage(stage_cfg, init_rng);
  LoadedDataset local;
  if (!preloaded) local = LoadedDataset::from_manifest(manifest);
  const LoadedDataset& ds = preloaded ? *preloaded : local;
  return detail::run_training(model, stage_cfg.augmentation, tcfg, manifest, folds,
                              val_fold, ds);
}

// Fuses two pre-trained component checkpoints (S3: S1+S2, S3C: S1+S2C) and
// trains only the new linear layer; component parameters and batchnorm
// statistics stay frozen.
inline TrainResult train_hybrid(StageKind hybrid_stage, AugmentMode aug_mode,
                                const CheckpointData& ckpt_a, const CheckpointData& ckpt_b,
                                const TrainConfig& tcfg, const DatasetManifest& manifest,
                                const FoldAssignment& folds, int val_fold,
                                const LoadedDataset* preloaded = nullptr) {
  StageModel a = stage_model_from_checkpoint(ckpt_a);
  StageModel b = stage_model_from_checkpoint(ckpt_b);
  Rng init_rng = Rng(tcfg.seed).stream(0);
  HybridModel model =
      build_hybrid(hybrid_stage, std::move(a), std::move(b), aug_mode, init_rng);
  LoadedDataset local;
  if (!preloaded) local = LoadedDataset::from_manifest(manifest);
  const LoadedDataset& ds = preloaded ? *preloaded : local;
  return detail::run_training(model, aug_mode, tcfg, manifest, folds, val_fold, ds);
}

}  // namespace leukonet
