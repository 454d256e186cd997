// Dataset plumbing: manifest handling, subject-level fold splitting, cell
// centering on the blank canvas, augmentation, Normal-class oversampling and
// the seeded synthetic cell-image generator.
//
// Manifest format: UTF-8 text, header "subject_id,label,path,is_test", one
// record per line. Paths are resolved relative to the manifest's directory.
// Fold assignments persist as "subject_id,fold" lines.
#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "leukonet/image.hpp"
#include "leukonet/rng.hpp"
#include "leukonet/tensor.hpp"

namespace leukonet {

enum class Label { Normal = 0, Cancer = 1 };

inline const char* label_name(Label l) { return l == Label::Normal ? "Normal" : "Cancer"; }

inline Label parse_label(const std::string& s) {
  if (s == "Normal") return Label::Normal;
  if (s == "Cancer") return Label::Cancer;
  throw ConfigError("unknown label '" + s + "' (expected Normal|Cancer)");
}

struct ManifestRecord {
  std::string subject_id;
  Label label = Label::Normal;
  std::string path;
  bool is_test = false;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::string base_dir;  // directory the paths are relative to

  // One subject, one label; no duplicate paths.
  void validate() const {
    std::unordered_map<std::string, Label> subject_label;
    std::unordered_set<std::string> paths;
    for (const auto& r : records) {
      auto [it, inserted] = subject_label.emplace(r.subject_id, r.label);
      if (!inserted && it->second != r.label)
        throw ContractError("manifest: subject " + r.subject_id +
                            " appears with both labels");
      if (!paths.insert(r.path).second)
        throw ContractError("manifest: duplicate path " + r.path);
    }
  }

  std::string resolve(const std::string& rel) const {
    std::filesystem::path p(rel);
    if (p.is_absolute() || base_dir.empty()) return rel;
    return (std::filesystem::path(base_dir) / p).string();
  }

  std::int64_t count_label(Label l, bool include_test = false) const {
    std::int64_t n = 0;
    for (const auto& r : records)
      if (r.label == l && (include_test || !r.is_test)) ++n;
    return n;
  }
};

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << "subject_id,label,path,is_test\n";
  for (const auto& r : m.records)
    out << r.subject_id << ',' << label_name(r.label) << ',' << r.path << ','
        << (r.is_test ? 1 : 0) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  DatasetManifest m;
  m.base_dir = std::filesystem::path(path).parent_path().string();
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty manifest: " + path);
  if (line != "subject_id,label,path,is_test")
    throw ConfigError("manifest " + path + " has unexpected header: " + line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<std::string, 4> field;
    std::size_t start = 0;
    for (int i = 0; i < 4; ++i) {
      const std::size_t end = i < 3 ? line.find(',', start) : line.size();
      if (end == std::string::npos)
        throw ConfigError("manifest " + path + ": malformed line: " + line);
      field[static_cast<std::size_t>(i)] = line.substr(start, end - start);
      start = end + 1;
    }
    ManifestRecord r;
    r.subject_id = field[0];
    r.label = parse_label(field[1]);
    r.path = field[2];
    r.is_test = field[3] == "1" || field[3] == "true";
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Fold assignment
// ---------------------------------------------------------------------------

struct FoldAssignment {
  int k = 4;
  std::map<std::string, int> fold_of_subject;

  int fold_of(const std::string& subject) const {
    auto it = fold_of_subject.find(subject);
    if (it == fold_of_subject.end())
      throw ContractError("no fold assignment for subject " + subject);
    return it->second;
  }
};

inline void save_folds(const FoldAssignment& f, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write fold file: " + path);
  out << "subject_id,fold\n";
  for (const auto& [subject, fold] : f.fold_of_subject)
    out << subject << ',' << fold << '\n';
}

inline FoldAssignment load_folds(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fold file: " + path);
  FoldAssignment f;
  f.k = 0;
  std::string line;
  if (!std::getline(in, line) || line != "subject_id,fold")
    throw ConfigError("fold file " + path + " has unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ConfigError("fold file " + path + ": malformed line: " + line);
    const int fold = std::stoi(line.substr(comma + 1));
    f.fold_of_subject[line.substr(0, comma)] = fold;
    f.k = std::max(f.k, fold + 1);
  }
  return f;
}

// Class-stratified greedy split: per class, subjects are shuffled, then each
// goes to the fold currently holding the fewest images of that class. All
// cells of one subject land in one fold by construction.
inline FoldAssignment split_folds(const DatasetManifest& manifest, int k, Rng& rng) {
  if (k < 2) throw ContractError("split_folds: need k >= 2 folds");
  manifest.validate();

  // per class: subjects in first-appearance order with image counts
  std::array<std::vector<std::pair<std::string, std::int64_t>>, 2> subjects;
  std::array<std::map<std::string, std::size_t>, 2> index_of;
  for (const auto& r : manifest.records) {
    if (r.is_test) continue;
    auto& subs = subjects[static_cast<std::size_t>(r.label)];
    auto& idx = index_of[static_cast<std::size_t>(r.label)];
    auto [it, inserted] = idx.emplace(r.subject_id, subs.size());
    if (inserted) subs.emplace_back(r.subject_id, 0);
    subs[it->second].second += 1;
  }

  FoldAssignment fa;
  fa.k = k;
  for (int cls = 0; cls < 2; ++cls) {
    auto& subs = subjects[static_cast<std::size_t>(cls)];
    if (static_cast<int>(subs.size()) < k)
      throw ContractError(std::string("split_folds: class ") +
                          label_name(static_cast<Label>(cls)) + " has only " +
                          std::to_string(subs.size()) + " subjects for " +
                          std::to_string(k) + " folds");
    std::int64_t total = 0;
    for (const auto& [s, n] : subs) total += n;
    for (const auto& [s, n] : subs)
      if (static_cast<double>(n) > 0.35 * static_cast<double>(total))
        std::fprintf(stderr,
                     "leukonet: warning: subject %s holds %lld of %lld %s images; "
                     "fold balance is best-effort\n",
                     s.c_str(), static_cast<long long>(n), static_cast<long long>(total),
                     label_name(static_cast<Label>(cls)));
    rng.shuffle(subs);
    // bin packing: place big subjects first (the shuffle randomizes ties and
    // the placement of equal-sized subjects)
    std::stable_sort(subs.begin(), subs.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::int64_t> fold_count(static_cast<std::size_t>(k), 0);
    for (const auto& [subject, n] : subs) {
      int best = 0;
      for (int f = 1; f < k; ++f)
        if (fold_count[static_cast<std::size_t>(f)] <
            fold_count[static_cast<std::size_t>(best)])
          best = f;
      fa.fold_of_subject[subject] = best;
      fold_count[static_cast<std::size_t>(best)] += n;
    }
  }
  return fa;
}

// Invariant audit used by tests and the split subcommand. Returns a list of
// violations (empty when the assignment is sound).
inline std::vector<std::string> check_fold_invariants(const DatasetManifest& manifest,
                                                      const FoldAssignment& fa) {
  std::vector<std::string> issues;
  std::set<std::string> non_test_subjects;
  for (const auto& r : manifest.records)
    if (!r.is_test) non_test_subjects.insert(r.subject_id);
  for (const auto& s : non_test_subjects)
    if (!fa.fold_of_subject.count(s)) issues.push_back("subject " + s + " unassigned");
  for (const auto& [s, f] : fa.fold_of_subject) {
    if (!non_test_subjects.count(s)) issues.push_back("extra subject " + s);
    if (f < 0 || f >= fa.k) issues.push_back("subject " + s + " has bad fold index");
  }

  // per-fold class counts
  std::vector<std::array<std::int64_t, 2>> counts(static_cast<std::size_t>(fa.k),
                                                  {0, 0});
  std::array<std::int64_t, 2> global = {0, 0};
  for (const auto& r : manifest.records) {
    if (r.is_test) continue;
    auto it = fa.fold_of_subject.find(r.subject_id);
    if (it == fa.fold_of_subject.end()) continue;
    counts[static_cast<std::size_t>(it->second)][static_cast<std::size_t>(r.label)] += 1;
    global[static_cast<std::size_t>(r.label)] += 1;
  }
  const double global_total = static_cast<double>(global[0] + global[1]);
  if (global_total <= 0) {
    issues.push_back("no non-test records");
    return issues;
  }
  const double global_prop = static_cast<double>(global[1]) / global_total;
  for (int f = 0; f < fa.k; ++f) {
    const auto& c = counts[static_cast<std::size_t>(f)];
    const double n = static_cast<double>(c[0] + c[1]);
    if (n == 0) {
      issues.push_back("fold " + std::to_string(f) + " is empty");
      continue;
    }
    const double prop = static_cast<double>(c[1]) / n;
    if (std::abs(prop - global_prop) > 0.05 + 1e-12)
      issues.push_back("fold " + std::to_string(f) + " class proportion " +
                       fmt_fixed(100 * prop, 2) + "% deviates more than 5 points from " +
                       fmt_fixed(100 * global_prop, 2) + "%");
  }
  return issues;
}

// ---------------------------------------------------------------------------
// Canvas centering
// ---------------------------------------------------------------------------

// Absorbance-weighted centroid (255 - intensity averaged over channels), the
// weighting used to place cells: bright blank background contributes nothing.
inline std::pair<double, double> cell_centroid(const Tensor& cell,
                                               const Tensor* mask = nullptr) {
  const std::int64_t h = cell.dim(1), w = cell.dim(2), plane = h * w;
  double wsum = 0, rsum = 0, csum = 0;
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) {
      double weight;
      if (mask) {
        weight = mask->data()[r * w + c];
      } else {
        double absorb = 0;
        for (int ch = 0; ch < 3; ++ch)
          absorb += 255.0 - cell.data()[ch * plane + r * w + c];
        weight = absorb / 3.0;
      }
      wsum += weight;
      rsum += weight * static_cast<double>(r);
      csum += weight * static_cast<double>(c);
    }
  if (wsum <= 0)
    return {static_cast<double>(h - 1) / 2.0, static_cast<double>(w - 1) / 2.0};
  return {rsum / wsum, csum / wsum};
}

// Places the cell on a blank (white) canvas with its centroid at the canvas
// center, offsets rounded to the nearest pixel and clamped so no cell pixel
// is clipped.
inline Tensor center_on_canvas(const Tensor& cell, const Tensor* mask = nullptr,
                               std::int64_t canvas = 350) {
  if (cell.ndim() != 3 || cell.dim(0) != 3)
    throw ShapeError("center_on_canvas: cell must be 3 x h x w, got " +
                     shape_str(cell.shape()));
  const std::int64_t hc = cell.dim(1), wc = cell.dim(2);
  if (hc > canvas || wc > canvas)
    throw ShapeError("center_on_canvas: cell " + shape_str(cell.shape()) +
                     " larger than canvas " + std::to_string(canvas) +
                     " (downscaling is not performed)");
  if (mask && (mask->ndim() != 2 || mask->dim(0) != hc || mask->dim(1) != wc))
    throw ShapeError("center_on_canvas: mask shape " + shape_str(mask->shape()) +
                     " does not match cell " + shape_str(cell.shape()));

  const auto [cr, cc] = cell_centroid(cell, mask);
  const double target = static_cast<double>(canvas - 1) / 2.0;
  auto clamp_off = [&](double t, std::int64_t extent) {
    std::int64_t off = static_cast<std::int64_t>(std::llround(t));
    return std::max<std::int64_t>(0, std::min(off, canvas - extent));
  };
  const std::int64_t off_r = clamp_off(target - cr, hc);
  const std::int64_t off_c = clamp_off(target - cc, wc);

  std::vector<Real> out(static_cast<std::size_t>(3 * canvas * canvas), Real(255));
  const std::int64_t cplane = hc * wc, plane = canvas * canvas;
  for (int ch = 0; ch < 3; ++ch)
    for (std::int64_t r = 0; r < hc; ++r)
      for (std::int64_t c = 0; c < wc; ++c)
        out[static_cast<std::size_t>(ch * plane + (off_r + r) * canvas + (off_c + c))] =
            cell.data()[ch * cplane + r * wc + c];
  return Tensor::from_data({3, canvas, canvas}, std::move(out));
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

enum class AugmentMode { None, Full, NormalOnly };

inline const char* augment_mode_name(AugmentMode m) {
  switch (m) {
    case AugmentMode::None: return "none";
    case AugmentMode::Full: return "full";
    case AugmentMode::NormalOnly: return "normal_only";
  }
  return "?";
}

inline AugmentMode parse_augment_mode(const std::string& s) {
  if (s == "none") return AugmentMode::None;
  if (s == "full") return AugmentMode::Full;
  if (s == "normal_only") return AugmentMode::NormalOnly;
  throw ConfigError("unknown augmentation mode '" + s +
                    "' (expected none|full|normal_only)");
}

struct AugmentConfig {
  bool rotation = true;          // uniform 0..360 degrees when enabled
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  double shear_lo = -20, shear_hi = 20;   // degrees
  double blur_lo = 0.0, blur_hi = 0.75;   // gaussian sigma
  AugmentMode mode = AugmentMode::Full;

  void validate() const {
    if (shear_lo > shear_hi || blur_lo > blur_hi)
      throw ContractError("augment: intervals must be ordered");
    if (blur_lo < 0) throw ContractError("augment: blur sigma must be >= 0");
    if (hflip_p < 0 || hflip_p > 1 || vflip_p < 0 || vflip_p > 1)
      throw ContractError("augment: flip probabilities must be in [0, 1]");
  }
};

namespace detail {

// Inverse-mapping bilinear resample about the image center; out-of-range
// samples read the blank fill. inv is the row-major 2x2 inverse map acting on
// (x, y) = (col, row) offsets from the center.
inline Tensor resample_affine(const Tensor& img, const std::array<double, 4>& inv,
                              Real fill = 255) {
  const std::int64_t h = img.dim(1), w = img.dim(2), plane = h * w;
  const double cx = static_cast<double>(w - 1) / 2.0;
  const double cy = static_cast<double>(h - 1) / 2.0;
  std::vector<Real> out(static_cast<std::size_t>(3 * plane));
  const Real* src = img.data().data();
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      const double x = static_cast<double>(c) - cx;
      const double y = static_cast<double>(r) - cy;
      const double sx = inv[0] * x + inv[1] * y + cx;
      const double sy = inv[2] * x + inv[3] * y + cy;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const std::int64_t x0 = static_cast<std::int64_t>(fx0);
      const std::int64_t y0 = static_cast<std::int64_t>(fy0);
      const double ax = sx - fx0, ay = sy - fy0;
      for (int ch = 0; ch < 3; ++ch) {
        auto sample = [&](std::int64_t yy, std::int64_t xx) -> double {
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) return fill;
          return src[ch * plane + yy * w + xx];
        };
        double v = (1 - ay) * ((1 - ax) * sample(y0, x0) + ax * sample(y0, x0 + 1)) +
                   ay * ((1 - ax) * sample(y0 + 1, x0) + ax * sample(y0 + 1, x0 + 1));
        // interpolation is convex but roundoff can overshoot by an ulp
        v = v < 0 ? 0 : (v > 255 ? 255 : v);
        out[static_cast<std::size_t>(ch * plane + r * w + c)] = static_cast<Real>(v);
      }
    }
  }
  return Tensor::from_data(img.shape(), std::move(out));
}

inline Tensor flip_horizontal(const Tensor& img) {
  const std::int64_t h = img.dim(1), w = img.dim(2), plane = h * w;
  std::vector<Real> out(static_cast<std::size_t>(3 * plane));
  for (int ch = 0; ch < 3; ++ch)
    for (std::int64_t r = 0; r < h; ++r)
      for (std::int64_t c = 0; c < w; ++c)
        out[static_cast<std::size_t>(ch * plane + r * w + c)] =
            img.data()[ch * plane + r * w + (w - 1 - c)];
  return Tensor::from_data(img.shape(), std::move(out));
}

inline Tensor flip_vertical(const Tensor& img) {
  const std::int64_t h = img.dim(1), w = img.dim(2), plane = h * w;
  std::vector<Real> out(static_cast<std::size_t>(3 * plane));
  for (int ch = 0; ch < 3; ++ch)
    for (std::int64_t r = 0; r < h; ++r)
      std::copy(img.data().begin() + ch * plane + (h - 1 - r) * w,
                img.data().begin() + ch * plane + (h - r) * w,
                out.begin() + ch * plane + r * w);
  return Tensor::from_data(img.shape(), std::move(out));
}

// Separable gaussian, kernel truncated at 3 sigma, clamp-to-edge borders.
inline Tensor gaussian_blur(const Tensor& img, double sigma) {
  const std::int64_t h = img.dim(1), w = img.dim(2), plane = h * w;
  const std::int64_t radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0;
  for (std::int64_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    ksum += v;
  }
  for (auto& v : kernel) v /= ksum;

  std::vector<Real> tmp(static_cast<std::size_t>(3 * plane));
  std::vector<Real> out(static_cast<std::size_t>(3 * plane));
  const Real* src = img.data().data();
  for (int ch = 0; ch < 3; ++ch) {
    for (std::int64_t r = 0; r < h; ++r)
      for (std::int64_t c = 0; c < w; ++c) {
        double acc = 0;
        for (std::int64_t i = -radius; i <= radius; ++i) {
          const std::int64_t cc = std::max<std::int64_t>(0, std::min(w - 1, c + i));
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 src[ch * plane + r * w + cc];
        }
        tmp[static_cast<std::size_t>(ch * plane + r * w + c)] = static_cast<Real>(acc);
      }
    for (std::int64_t r = 0; r < h; ++r)
      for (std::int64_t c = 0; c < w; ++c) {
        double acc = 0;
        for (std::int64_t i = -radius; i <= radius; ++i) {
          const std::int64_t rr = std::max<std::int64_t>(0, std::min(h - 1, r + i));
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 tmp[static_cast<std::size_t>(ch * plane + rr * w + c)];
        }
        acc = acc < 0 ? 0 : (acc > 255 ? 255 : acc);
        out[static_cast<std::size_t>(ch * plane + r * w + c)] = static_cast<Real>(acc);
      }
  }
  return Tensor::from_data(img.shape(), std::move(out));
}

}  // namespace detail

// Samples and applies, in a fixed draw order: rotation (bilinear, blank
// fill), horizontal/vertical flips, shear about the center, gaussian blur.
// Sigma below 1e-6 is the identity. Mode None returns the input unchanged
// without consuming draws.
inline Tensor augment(const Tensor& img, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (img.ndim() != 3 || img.dim(0) != 3)
    throw ShapeError("augment: image must be 3 x h x w, got " + shape_str(img.shape()));
  if (cfg.mode == AugmentMode::None)
    return Tensor::from_data(img.shape(),
                             std::vector<Real>(img.data().begin(), img.data().end()));

  Tensor current = img;
  const double deg2rad = 3.14159265358979323846 / 180.0;
  if (cfg.rotation) {
    const double theta = rng.uniform(0.0, 360.0) * deg2rad;
    // inverse rotation
    const std::array<double, 4> inv = {std::cos(theta), std::sin(theta),
                                       -std::sin(theta), std::cos(theta)};
    current = detail::resample_affine(current, inv);
  }
  if (rng.bernoulli(cfg.hflip_p)) current = detail::flip_horizontal(current);
  if (rng.bernoulli(cfg.vflip_p)) current = detail::flip_vertical(current);
  {
    const double shear_deg = rng.uniform(cfg.shear_lo, cfg.shear_hi);
    const double t = std::tan(shear_deg * deg2rad);
    const std::array<double, 4> inv = {1.0, -t, 0.0, 1.0};  // x' = x + t*y forward
    current = detail::resample_affine(current, inv);
  }
  {
    const double sigma = rng.uniform(cfg.blur_lo, cfg.blur_hi);
    if (sigma >= 1e-6) current = detail::gaussian_blur(current, sigma);
  }
  return current;
}

// ---------------------------------------------------------------------------
// Epoch construction and Normal-class oversampling
// ---------------------------------------------------------------------------

struct EpochItem {
  int record = 0;              // index into the manifest's records
  bool augment = false;
  std::uint64_t rng_stream = 0;  // per-item stream for the augmentation draws
};

// Emits an epoch list where every record appears once and Normal records are
// re-sampled with replacement (each occurrence a fresh augmentation draw)
// until the Normal count reaches `target`. Cancer entries stay unaugmented.
inline std::vector<EpochItem> balance_normal_oversample(
    const DatasetManifest& manifest, const std::vector<int>& records,
    std::int64_t target, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<int> normals;
  std::vector<EpochItem> epoch;
  for (int idx : records) {
    const auto& r = manifest.records[static_cast<std::size_t>(idx)];
    if (r.label == Label::Normal) {
      normals.push_back(idx);
      epoch.push_back({idx, true, rng.next_u64()});
    } else {
      epoch.push_back({idx, false, 0});
    }
  }
  if (normals.empty())
    throw ConfigError("balance_normal_oversample: no Normal images to oversample");
  if (target < static_cast<std::int64_t>(normals.size()))
    throw ContractError("balance_normal_oversample: target " + std::to_string(target) +
                        " below Normal count " + std::to_string(normals.size()));
  for (std::int64_t extra = target - static_cast<std::int64_t>(normals.size());
       extra > 0; --extra) {
    const int idx = normals[static_cast<std::size_t>(rng.uniform_int(normals.size()))];
    epoch.push_back({idx, true, rng.next_u64()});
  }
  return epoch;
}

// Epoch list for the configured augmentation mode. NormalOnly balances the
// Normal class up to the Cancer count; Full augments everything without
// oversampling; None is the plain record list.
inline std::vector<EpochItem> build_epoch(const DatasetManifest& manifest,
                                          const std::vector<int>& records,
                                          const AugmentConfig& cfg, Rng& rng) {
  switch (cfg.mode) {
    case AugmentMode::None: {
      std::vector<EpochItem> epoch;
      for (int idx : records) epoch.push_back({idx, false, 0});
      return epoch;
    }
    case AugmentMode::Full: {
      std::vector<EpochItem> epoch;
      for (int idx : records) epoch.push_back({idx, true, rng.next_u64()});
      return epoch;
    }
    case AugmentMode::NormalOnly: {
      std::int64_t cancer = 0;
      for (int idx : records)
        if (manifest.records[static_cast<std::size_t>(idx)].label == Label::Cancer)
          ++cancer;
      return balance_normal_oversample(manifest, records, cancer, cfg, rng);
    }
  }
  throw ContractError("build_epoch: unknown mode");
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

// Two-class synthetic cells: elliptical nucleus blobs rendered in OD space.
// The classes differ in their stain color direction (an R/G swap, which keeps
// the mean gray level uninformative) and in the frequency band of the
// band-limited texture noise; per-subject jitter in color, amplitude and band
// mimics subject-level variability.
struct SynthParams {
  int n_subjects_per_class = 8;
  int cells_per_subject = 100;
  std::int64_t size = 96;
  int test_subjects_per_class = 0;
};

namespace detail {

struct SubjectParams {
  std::array<double, 3> dir;
  double amplitude;
  double band_lo, band_hi;
  double texture_amp;
};

inline SubjectParams draw_subject(Label cls, Rng& rng) {
  static const std::array<double, 3> base_n = {0.60, 0.76, 0.26};
  static const std::array<double, 3> base_c = {0.76, 0.60, 0.26};
  SubjectParams p;
  const auto& base = cls == Label::Normal ? base_n : base_c;
  double norm = 0;
  for (int i = 0; i < 3; ++i) {
    p.dir[static_cast<std::size_t>(i)] =
        base[static_cast<std::size_t>(i)] + rng.normal() * 0.035;
    if (p.dir[static_cast<std::size_t>(i)] < 0.02) p.dir[static_cast<std::size_t>(i)] = 0.02;
    norm += p.dir[static_cast<std::size_t>(i)] * p.dir[static_cast<std::size_t>(i)];
  }
  norm = std::sqrt(norm);
  for (auto& d : p.dir) d /= norm;
  p.amplitude = 0.85 * rng.uniform(0.85, 1.15);
  const double lo = cls == Label::Normal ? 3.0 : 9.0;
  const double hi = cls == Label::Normal ? 7.0 : 15.0;
  const double shift = rng.uniform(-1.5, 1.5);
  p.band_lo = lo + shift;
  p.band_hi = hi + shift;
  p.texture_amp = 0.16 * rng.uniform(0.8, 1.25);
  return p;
}

inline ImageU8 render_cell(const SubjectParams& sp, std::int64_t size, Rng& rng) {
  const double a = static_cast<double>(size) * rng.uniform(0.22, 0.32);
  const double b = static_cast<double>(size) * rng.uniform(0.22, 0.32);
  const double phi = rng.uniform(0.0, 3.14159265358979323846);
  const double cx = (static_cast<double>(size) - 1) / 2.0 +
                    static_cast<double>(size) * rng.uniform(-0.04, 0.04);
  const double cy = (static_cast<double>(size) - 1) / 2.0 +
                    static_cast<double>(size) * rng.uniform(-0.04, 0.04);

  constexpr int K = 10;
  std::array<double, K> freq, orient, phase, amp;
  for (int k = 0; k < K; ++k) {
    freq[static_cast<std::size_t>(k)] =
        rng.uniform(sp.band_lo, sp.band_hi) / static_cast<double>(size);
    orient[static_cast<std::size_t>(k)] = rng.uniform(0.0, 6.283185307179586);
    phase[static_cast<std::size_t>(k)] = rng.uniform(0.0, 6.283185307179586);
    amp[static_cast<std::size_t>(k)] =
        sp.texture_amp / std::sqrt(static_cast<double>(K)) * rng.uniform(0.5, 1.5);
  }

  const double cphi = std::cos(phi), sphi = std::sin(phi);
  ImageU8 img = ImageU8::blank(size, size);
  for (std::int64_t r = 0; r < size; ++r) {
    for (std::int64_t c = 0; c < size; ++c) {
      const double x = static_cast<double>(c) - cx;
      const double y = static_cast<double>(r) - cy;
      const double u = (cphi * x + sphi * y) / a;
      const double v = (-sphi * x + cphi * y) / b;
      const double rho2 = u * u + v * v;
      if (rho2 >= 1.3) continue;
      const double rho = std::sqrt(rho2);
      // soft edge over ~8% of the radius
      const double alpha = std::max(0.0, std::min(1.0, (1.0 - rho) / 0.08));
      if (alpha <= 0) continue;
      double tex = 0;
      for (int k = 0; k < K; ++k)
        tex += amp[static_cast<std::size_t>(k)] *
               std::cos(6.283185307179586 * freq[static_cast<std::size_t>(k)] *
                            (std::cos(orient[static_cast<std::size_t>(k)]) * x +
                             std::sin(orient[static_cast<std::size_t>(k)]) * y) +
                        phase[static_cast<std::size_t>(k)]);
      double density = sp.amplitude * (0.75 + 0.25 * (1.0 - rho2)) + tex;
      density = std::max(density, 0.02);
      for (int ch = 0; ch < 3; ++ch) {
        const double od = density * sp.dir[static_cast<std::size_t>(ch)];
        const double cell_i = 255.0 * std::pow(10.0, -od);
        const double blended = alpha * cell_i + (1.0 - alpha) * 255.0;
        img.rgb[static_cast<std::size_t>((r * size + c) * 3 + ch)] =
            static_cast<std::uint8_t>(std::lround(std::max(0.0, std::min(255.0, blended))));
      }
    }
  }
  return img;
}

}  // namespace detail

// Writes <out_dir>/images/*.png plus <out_dir>/manifest.csv and returns the
// manifest. Deterministic per seed: same seed, byte-identical tree.
inline DatasetManifest synth_generate(const SynthParams& params, Rng& rng,
                                      const std::string& out_dir) {
  if (params.size < 32)
    throw ContractError("synth_generate: size must be >= 32, got " +
                        std::to_string(params.size));
  if (params.n_subjects_per_class < 1 || params.cells_per_subject < 1)
    throw ContractError("synth_generate: need at least one subject and one cell");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw IoError("cannot create " + out_dir + "/images: " + ec.message());

  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  const int total_subjects = params.n_subjects_per_class + params.test_subjects_per_class;
  for (Label cls : {Label::Normal, Label::Cancer}) {
    const char prefix = cls == Label::Normal ? 'N' : 'C';
    for (int s = 0; s < total_subjects; ++s) {
      char sid[16];
      std::snprintf(sid, sizeof(sid), "%c%02d", prefix, s);
      const auto sp = detail::draw_subject(cls, rng);
      const bool is_test = s >= params.n_subjects_per_class;
      for (int i = 0; i < params.cells_per_subject; ++i) {
        ImageU8 img = detail::render_cell(sp, params.size, rng);
        char name[48];
        std::snprintf(name, sizeof(name), "images/%s_%03d.png", sid, i);
        write_png((fs::path(out_dir) / name).string(), img);
        ManifestRecord rec;
        rec.subject_id = sid;
        rec.label = cls;
        rec.path = name;
        rec.is_test = is_test;
        manifest.records.push_back(std::move(rec));
      }
    }
  }
  save_manifest(manifest, (fs::path(out_dir) / "manifest.csv").string());
  return manifest;
}

}  // namespace leukonet
