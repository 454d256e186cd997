#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "leukonet/data.hpp"
#include "temp_dir.hpp"

using namespace leukonet;

namespace {

DatasetManifest make_manifest(const std::vector<std::tuple<std::string, Label, int>>& subjects) {
  DatasetManifest m;
  for (const auto& [sid, label, count] : subjects)
    for (int i = 0; i < count; ++i) {
      ManifestRecord r;
      r.subject_id = sid;
      r.label = label;
      r.path = sid + "_" + std::to_string(i) + ".png";
      m.records.push_back(std::move(r));
    }
  return m;
}

// Independent centroid oracle: weight by mean-channel absorbance.
std::pair<double, double> centroid_oracle(const Tensor& img) {
  const std::int64_t h = img.dim(1), w = img.dim(2), plane = h * w;
  double ws = 0, rs = 0, cs = 0;
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) {
      double weight = 0;
      for (int ch = 0; ch < 3; ++ch) weight += 255.0 - img.data()[ch * plane + r * w + c];
      ws += weight;
      rs += weight * r;
      cs += weight * c;
    }
  return {rs / ws, cs / ws};
}

}  // namespace

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

TEST(Manifest, SaveLoadRoundTrip) {
  testutil::TempDir dir("manifest");
  DatasetManifest m = make_manifest({{"A", Label::Normal, 2}, {"B", Label::Cancer, 3}});
  m.records[4].is_test = true;
  save_manifest(m, dir.file("m.csv"));
  DatasetManifest back = load_manifest(dir.file("m.csv"));
  ASSERT_EQ(back.records.size(), m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    EXPECT_EQ(back.records[i].subject_id, m.records[i].subject_id);
    EXPECT_EQ(back.records[i].label, m.records[i].label);
    EXPECT_EQ(back.records[i].path, m.records[i].path);
    EXPECT_EQ(back.records[i].is_test, m.records[i].is_test);
  }
  EXPECT_EQ(back.base_dir, dir.str());
}

TEST(Manifest, LabelInconsistentSubjectRejected) {
  DatasetManifest m = make_manifest({{"A", Label::Normal, 1}});
  ManifestRecord r;
  r.subject_id = "A";
  r.label = Label::Cancer;
  r.path = "other.png";
  m.records.push_back(r);
  EXPECT_THROW(m.validate(), ContractError);
}

TEST(Manifest, DuplicatePathRejected) {
  DatasetManifest m = make_manifest({{"A", Label::Normal, 1}});
  m.records.push_back(m.records[0]);
  EXPECT_THROW(m.validate(), ContractError);
}

// ---------------------------------------------------------------------------
// fold splitting
// ---------------------------------------------------------------------------

TEST(SplitFolds, SymmetricCaseIsExactlyBalanced) {
  // 8 subjects per class, equal image counts: 2 subjects of each class per fold
  std::vector<std::tuple<std::string, Label, int>> subs;
  for (int i = 0; i < 8; ++i) subs.push_back({"N" + std::to_string(i), Label::Normal, 10});
  for (int i = 0; i < 8; ++i) subs.push_back({"C" + std::to_string(i), Label::Cancer, 10});
  DatasetManifest m = make_manifest(subs);
  Rng rng(1);
  FoldAssignment fa = split_folds(m, 4, rng);
  std::array<std::array<int, 2>, 4> count{};
  for (const auto& [sid, fold] : fa.fold_of_subject)
    count[static_cast<std::size_t>(fold)][sid[0] == 'C'] += 1;
  for (int f = 0; f < 4; ++f) {
    EXPECT_EQ(count[static_cast<std::size_t>(f)][0], 2);
    EXPECT_EQ(count[static_cast<std::size_t>(f)][1], 2);
  }
  EXPECT_TRUE(check_fold_invariants(m, fa).empty());
}

TEST(SplitFolds, NoSubjectSpansTwoFolds) {
  std::vector<std::tuple<std::string, Label, int>> subs;
  Rng sizes(5);
  for (int i = 0; i < 12; ++i)
    subs.push_back({"N" + std::to_string(i), Label::Normal,
                    3 + static_cast<int>(sizes.uniform_int(20))});
  for (int i = 0; i < 15; ++i)
    subs.push_back({"C" + std::to_string(i), Label::Cancer,
                    3 + static_cast<int>(sizes.uniform_int(30))});
  DatasetManifest m = make_manifest(subs);
  Rng rng(2);
  FoldAssignment fa = split_folds(m, 4, rng);
  // exhaustive scan: every record of a subject maps to that subject's single fold
  std::map<std::string, std::set<int>> folds_seen;
  for (const auto& r : m.records) folds_seen[r.subject_id].insert(fa.fold_of(r.subject_id));
  for (const auto& [sid, folds] : folds_seen) EXPECT_EQ(folds.size(), 1u);
}

TEST(SplitFolds, RandomizedManifestsRespectProportionBound) {
  Rng meta(77);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<std::tuple<std::string, Label, int>> subs;
    const int nn = 8 + static_cast<int>(meta.uniform_int(20));
    const int nc = 8 + static_cast<int>(meta.uniform_int(20));
    for (int i = 0; i < nn; ++i)
      subs.push_back({"N" + std::to_string(i), Label::Normal,
                      5 + static_cast<int>(meta.uniform_int(45))});
    for (int i = 0; i < nc; ++i)
      subs.push_back({"C" + std::to_string(i), Label::Cancer,
                      5 + static_cast<int>(meta.uniform_int(45))});
    DatasetManifest m = make_manifest(subs);
    Rng rng(1000 + static_cast<std::uint64_t>(trial));
    FoldAssignment fa = split_folds(m, 4, rng);
    auto issues = check_fold_invariants(m, fa);
    EXPECT_TRUE(issues.empty()) << "trial " << trial << ": " << issues.front();
  }
}

TEST(SplitFolds, DeterministicPerSeed) {
  DatasetManifest m = make_manifest({{"A", Label::Normal, 5}, {"B", Label::Normal, 5},
                                     {"C", Label::Normal, 5}, {"D", Label::Normal, 5},
                                     {"E", Label::Cancer, 5}, {"F", Label::Cancer, 5},
                                     {"G", Label::Cancer, 5}, {"H", Label::Cancer, 5}});
  Rng r1(9), r2(9);
  FoldAssignment a = split_folds(m, 4, r1);
  FoldAssignment b = split_folds(m, 4, r2);
  EXPECT_EQ(a.fold_of_subject, b.fold_of_subject);
}

TEST(SplitFolds, TooFewSubjectsRejected) {
  DatasetManifest m = make_manifest({{"A", Label::Normal, 5}, {"B", Label::Normal, 5},
                                     {"C", Label::Cancer, 5}, {"D", Label::Cancer, 5},
                                     {"E", Label::Cancer, 5}, {"F", Label::Cancer, 5}});
  Rng rng(3);
  EXPECT_THROW(split_folds(m, 4, rng), ContractError);
}

TEST(SplitFolds, SaveLoadRoundTrip) {
  testutil::TempDir dir("folds");
  DatasetManifest m = make_manifest({{"A", Label::Normal, 5}, {"B", Label::Normal, 5},
                                     {"C", Label::Normal, 5}, {"D", Label::Normal, 5},
                                     {"E", Label::Cancer, 5}, {"F", Label::Cancer, 5},
                                     {"G", Label::Cancer, 5}, {"H", Label::Cancer, 5}});
  Rng rng(4);
  FoldAssignment fa = split_folds(m, 4, rng);
  save_folds(fa, dir.file("folds.csv"));
  FoldAssignment back = load_folds(dir.file("folds.csv"));
  EXPECT_EQ(back.k, fa.k);
  EXPECT_EQ(back.fold_of_subject, fa.fold_of_subject);
}

// ---------------------------------------------------------------------------
// canvas centering
// ---------------------------------------------------------------------------

TEST(CenterOnCanvas, SymmetricCellGetsEqualMargins) {
  // uniform 300x300 gray cell: 25-pixel margins all around on the 350 canvas
  Tensor cell = Tensor::full({3, 300, 300}, 100);
  Tensor canvas = center_on_canvas(cell, nullptr, 350);
  const std::int64_t plane = 350 * 350;
  for (int ch = 0; ch < 3; ++ch) {
    EXPECT_EQ(canvas.data()[ch * plane + 24 * 350 + 175], 255);   // above
    EXPECT_EQ(canvas.data()[ch * plane + 25 * 350 + 25], 100);    // top-left corner
    EXPECT_EQ(canvas.data()[ch * plane + 324 * 350 + 324], 100);  // bottom-right corner
    EXPECT_EQ(canvas.data()[ch * plane + 325 * 350 + 175], 255);  // below
    EXPECT_EQ(canvas.data()[ch * plane + 175 * 350 + 24], 255);   // left
    EXPECT_EQ(canvas.data()[ch * plane + 175 * 350 + 325], 255);  // right
  }
}

TEST(CenterOnCanvas, SinglePixelLandsAtCenter) {
  Tensor cell = Tensor::full({3, 1, 1}, 0);
  Tensor canvas = center_on_canvas(cell, nullptr, 350);
  const std::int64_t plane = 350 * 350;
  for (int ch = 0; ch < 3; ++ch) {
    EXPECT_EQ(canvas.data()[ch * plane + 175 * 350 + 175], 0);
  }
  double dark = 0;
  for (Real v : canvas.data()) dark += 255 - v;
  EXPECT_DOUBLE_EQ(dark, 3 * 255);
}

TEST(CenterOnCanvas, AsymmetricBlobCentroidWithinHalfPixel) {
  Rng rng(6);
  // irregular blob in a 60x80 patch
  std::vector<Real> v(3 * 60 * 80, 255);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 10; r < 50; ++r)
      for (int c = 15; c < 70; ++c) {
        const double d = std::hypot(r - 28.0, (c - 40.0) * 0.7);
        if (d < 18)
          v[static_cast<std::size_t>(ch * 60 * 80 + r * 80 + c)] =
              static_cast<Real>(80 + rng.uniform(0, 60) + 1.5 * (c - 40));
      }
  Tensor cell = Tensor::from_data({3, 60, 80}, v);
  Tensor canvas = center_on_canvas(cell, nullptr, 350);
  auto [cr, cc] = centroid_oracle(canvas);
  // canvas center: the geometric midpoint (350-1)/2 of the pixel grid
  EXPECT_NEAR(cr, 174.5, 0.5);
  EXPECT_NEAR(cc, 174.5, 0.5);
}

TEST(CenterOnCanvas, MaskCentroidTakesPriority) {
  // all-dark 3x3 cell but mask marks only the top-left pixel
  Tensor cell = Tensor::full({3, 3, 3}, 0);
  std::vector<Real> mv(9, 0);
  mv[0] = 1;
  Tensor mask = Tensor::from_data({3, 3}, mv);
  Tensor canvas = center_on_canvas(cell, &mask, 350);
  const std::int64_t plane = 350 * 350;
  // masked pixel (0,0) of the cell should land at ~the canvas center
  EXPECT_EQ(canvas.data()[0 * plane + 175 * 350 + 175], 0);
  EXPECT_EQ(canvas.data()[0 * plane + 177 * 350 + 177], 0);
  EXPECT_EQ(canvas.data()[0 * plane + 174 * 350 + 174], 255);
}

TEST(CenterOnCanvas, OversizeCellIsSizeError) {
  EXPECT_THROW(center_on_canvas(Tensor::full({3, 351, 10}, 0), nullptr, 350), ShapeError);
  EXPECT_THROW(center_on_canvas(Tensor::full({3, 10, 400}, 0), nullptr, 350), ShapeError);
}

TEST(CenterOnCanvas, NeverClipsCellPixels) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const std::int64_t hc = 20 + static_cast<std::int64_t>(rng.uniform_int(300));
    const std::int64_t wc = 20 + static_cast<std::int64_t>(rng.uniform_int(300));
    std::vector<Real> v(static_cast<std::size_t>(3 * hc * wc), 255);
    // blob crammed into one corner to push against the clamp
    for (int ch = 0; ch < 3; ++ch)
      for (std::int64_t r = 0; r < hc / 3 + 1; ++r)
        for (std::int64_t c = 0; c < wc / 3 + 1; ++c)
          v[static_cast<std::size_t>(ch * hc * wc + r * wc + c)] =
              static_cast<Real>(rng.uniform(0, 120));
    Tensor cell = Tensor::from_data({3, hc, wc}, v);
    double cell_absorb = 0;
    for (Real e : cell.data()) cell_absorb += 255 - e;
    Tensor canvas = center_on_canvas(cell, nullptr, 350);
    double canvas_absorb = 0;
    for (Real e : canvas.data()) canvas_absorb += 255 - e;
    ASSERT_NEAR(canvas_absorb, cell_absorb, 1e-6);
  }
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

namespace {

AugmentConfig identity_config() {
  AugmentConfig cfg;
  cfg.rotation = false;
  cfg.hflip_p = 0;
  cfg.vflip_p = 0;
  cfg.shear_lo = cfg.shear_hi = 0;
  cfg.blur_lo = cfg.blur_hi = 0;
  cfg.mode = AugmentMode::Full;
  return cfg;
}

Tensor random_cell_image(std::int64_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Real> v(static_cast<std::size_t>(3 * size * size), 255);
  const double c0 = (static_cast<double>(size) - 1) / 2.0;
  for (int ch = 0; ch < 3; ++ch)
    for (std::int64_t r = 0; r < size; ++r)
      for (std::int64_t c = 0; c < size; ++c)
        if (std::hypot(r - c0, c - c0) < size * 0.3)
          v[static_cast<std::size_t>(ch * size * size + r * size + c)] =
              static_cast<Real>(rng.uniform(30, 220));
  return Tensor::from_data({3, size, size}, v);
}

}  // namespace

TEST(Augment, DegenerateRangesAreIdentity) {
  Tensor img = random_cell_image(64, 1);
  Rng rng(2);
  Tensor out = augment(img, identity_config(), rng);
  for (std::int64_t i = 0; i < img.size(); ++i)
    ASSERT_EQ(out.data()[i], img.data()[i]) << "index " << i;
}

TEST(Augment, ModeNoneIsIdentityWithoutDraws) {
  Tensor img = random_cell_image(48, 2);
  AugmentConfig cfg;  // full ranges
  cfg.mode = AugmentMode::None;
  Rng rng(3);
  Tensor out = augment(img, cfg, rng);
  for (std::int64_t i = 0; i < img.size(); ++i) ASSERT_EQ(out.data()[i], img.data()[i]);
  Rng fresh(3);
  EXPECT_EQ(rng.next_u64(), fresh.next_u64());  // no draws consumed
}

TEST(Augment, HorizontalFlipIsInvolution) {
  Tensor img = random_cell_image(48, 3);
  AugmentConfig cfg = identity_config();
  cfg.hflip_p = 1;
  Rng rng(4);
  Tensor once = augment(img, cfg, rng);
  Tensor twice = augment(once, cfg, rng);
  bool changed = false;
  for (std::int64_t i = 0; i < img.size(); ++i) changed = changed || once.data()[i] != img.data()[i];
  EXPECT_TRUE(changed);
  for (std::int64_t i = 0; i < img.size(); ++i) ASSERT_EQ(twice.data()[i], img.data()[i]);
}

TEST(Augment, VerticalFlipIsInvolution) {
  Tensor img = random_cell_image(48, 5);
  AugmentConfig cfg = identity_config();
  cfg.vflip_p = 1;
  Rng rng(6);
  Tensor twice = augment(augment(img, cfg, rng), cfg, rng);
  for (std::int64_t i = 0; i < img.size(); ++i) ASSERT_EQ(twice.data()[i], img.data()[i]);
}

TEST(Augment, ShearMatchesIndependentAffineOracle) {
  // 20-degree shear of a centered vertical bar vs a direct inverse-mapping
  // resample written from scratch here.
  const std::int64_t S = 64;
  std::vector<Real> v(static_cast<std::size_t>(3 * S * S), 255);
  for (int ch = 0; ch < 3; ++ch)
    for (std::int64_t r = 8; r < S - 8; ++r)
      for (std::int64_t c = 28; c < 36; ++c)
        v[static_cast<std::size_t>(ch * S * S + r * S + c)] = 40;
  Tensor img = Tensor::from_data({3, S, S}, v);

  AugmentConfig cfg = identity_config();
  cfg.shear_lo = cfg.shear_hi = 20;
  Rng rng(7);
  Tensor sheared = augment(img, cfg, rng);

  const double t = std::tan(20.0 * 3.14159265358979323846 / 180.0);
  const double ctr = (static_cast<double>(S) - 1) / 2.0;
  const std::int64_t plane = S * S;
  for (std::int64_t r = 0; r < S; ++r)
    for (std::int64_t c = 0; c < S; ++c) {
      // forward map x' = x + t*y about the center; sample at the inverse
      const double sx = (static_cast<double>(c) - ctr) - t * (static_cast<double>(r) - ctr) + ctr;
      const double sy = static_cast<double>(r);
      const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
      const double ax = sx - std::floor(sx);
      for (int ch = 0; ch < 3; ++ch) {
        auto at = [&](std::int64_t yy, std::int64_t xx) -> double {
          if (yy < 0 || yy >= S || xx < 0 || xx >= S) return 255.0;
          return v[static_cast<std::size_t>(ch * plane + yy * S + xx)];
        };
        const double expect = (1 - ax) * at(static_cast<std::int64_t>(sy), x0) +
                              ax * at(static_cast<std::int64_t>(sy), x0 + 1);
        ASSERT_NEAR(sheared.data()[ch * plane + r * S + c], expect, 1.0)
            << "r=" << r << " c=" << c;
      }
    }
}

TEST(Augment, PreservesShapeAndValueRange) {
  Tensor img = random_cell_image(96, 8);
  AugmentConfig cfg;  // everything enabled at defaults
  Rng rng(9);
  for (int i = 0; i < 5; ++i) {
    Tensor out = augment(img, cfg, rng);
    ASSERT_EQ(out.shape(), (Shape{3, 96, 96}));
    for (Real e : out.data()) {
      ASSERT_GE(e, 0);
      ASSERT_LE(e, 255);
    }
  }
}

TEST(Augment, DeterministicPerSeed) {
  Tensor img = random_cell_image(64, 10);
  AugmentConfig cfg;
  Rng r1(11), r2(11);
  Tensor a = augment(img, cfg, r1);
  Tensor b = augment(img, cfg, r2);
  for (std::int64_t i = 0; i < a.size(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
}

// ---------------------------------------------------------------------------
// oversampling
// ---------------------------------------------------------------------------

TEST(Oversample, BalancesNormalCountToTarget) {
  DatasetManifest m = make_manifest({{"N0", Label::Normal, 3}, {"C0", Label::Cancer, 7}});
  std::vector<int> records(m.records.size());
  std::iota(records.begin(), records.end(), 0);
  AugmentConfig cfg;
  cfg.mode = AugmentMode::NormalOnly;
  Rng rng(1);
  auto epoch = balance_normal_oversample(m, records, 7, cfg, rng);
  std::int64_t n_normal = 0, n_cancer = 0;
  for (const auto& item : epoch) {
    const auto& r = m.records[static_cast<std::size_t>(item.record)];
    if (r.label == Label::Normal) {
      ++n_normal;
      EXPECT_TRUE(item.augment);
    } else {
      ++n_cancer;
      EXPECT_FALSE(item.augment);
    }
  }
  EXPECT_EQ(n_normal, 7);
  EXPECT_EQ(n_cancer, 7);
}

TEST(Oversample, AlreadyBalancedIsIdentityMultiset) {
  DatasetManifest m = make_manifest({{"N0", Label::Normal, 5}, {"C0", Label::Cancer, 5}});
  std::vector<int> records(m.records.size());
  std::iota(records.begin(), records.end(), 0);
  AugmentConfig cfg;
  cfg.mode = AugmentMode::NormalOnly;
  Rng rng(2);
  auto epoch = balance_normal_oversample(m, records, 5, cfg, rng);
  ASSERT_EQ(epoch.size(), 10u);
  std::multiset<int> seen;
  for (const auto& e : epoch) seen.insert(e.record);
  std::multiset<int> expect(records.begin(), records.end());
  EXPECT_EQ(seen, expect);
}

TEST(Oversample, DeterministicPerSeed) {
  DatasetManifest m = make_manifest({{"N0", Label::Normal, 4}, {"N1", Label::Normal, 3},
                                     {"C0", Label::Cancer, 12}});
  std::vector<int> records(m.records.size());
  std::iota(records.begin(), records.end(), 0);
  AugmentConfig cfg;
  cfg.mode = AugmentMode::NormalOnly;
  Rng r1(3), r2(3);
  auto a = balance_normal_oversample(m, records, 12, cfg, r1);
  auto b = balance_normal_oversample(m, records, 12, cfg, r2);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].record, b[i].record);
    EXPECT_EQ(a[i].rng_stream, b[i].rng_stream);
  }
}

TEST(Oversample, ZeroNormalIsConfigError) {
  DatasetManifest m = make_manifest({{"C0", Label::Cancer, 5}});
  std::vector<int> records(m.records.size());
  std::iota(records.begin(), records.end(), 0);
  AugmentConfig cfg;
  Rng rng(4);
  EXPECT_THROW(balance_normal_oversample(m, records, 5, cfg, rng), ConfigError);
}

TEST(Oversample, CancerMultisetUnchanged) {
  DatasetManifest m = make_manifest({{"N0", Label::Normal, 2}, {"C0", Label::Cancer, 6},
                                     {"C1", Label::Cancer, 4}});
  std::vector<int> records(m.records.size());
  std::iota(records.begin(), records.end(), 0);
  AugmentConfig cfg;
  cfg.mode = AugmentMode::NormalOnly;
  Rng rng(5);
  auto epoch = balance_normal_oversample(m, records, 10, cfg, rng);
  std::multiset<int> cancer_seen, cancer_expect;
  for (const auto& e : epoch)
    if (m.records[static_cast<std::size_t>(e.record)].label == Label::Cancer)
      cancer_seen.insert(e.record);
  for (int idx : records)
    if (m.records[static_cast<std::size_t>(idx)].label == Label::Cancer)
      cancer_expect.insert(idx);
  EXPECT_EQ(cancer_seen, cancer_expect);
}

// ---------------------------------------------------------------------------
// synthetic generator
// ---------------------------------------------------------------------------

namespace {

std::map<std::string, std::vector<char>> slurp_tree(const std::filesystem::path& root) {
  std::map<std::string, std::vector<char>> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    files[std::filesystem::relative(entry.path(), root).string()] =
        std::vector<char>((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  }
  return files;
}

}  // namespace

TEST(Synth, SameSeedProducesByteIdenticalTrees) {
  testutil::TempDir a("syntha"), b("synthb");
  SynthParams params;
  params.n_subjects_per_class = 2;
  params.cells_per_subject = 3;
  params.size = 48;
  Rng r1(7), r2(7);
  synth_generate(params, r1, a.str());
  synth_generate(params, r2, b.str());
  auto ta = slurp_tree(a.path());
  auto tb = slurp_tree(b.path());
  ASSERT_FALSE(ta.empty());
  EXPECT_EQ(ta, tb);
}

TEST(Synth, ManifestShapeAndInvariants) {
  testutil::TempDir dir("synthm");
  SynthParams params;
  params.n_subjects_per_class = 3;
  params.cells_per_subject = 4;
  params.size = 40;
  params.test_subjects_per_class = 1;
  Rng rng(8);
  DatasetManifest m = synth_generate(params, rng, dir.str());
  m.validate();
  EXPECT_EQ(m.records.size(), 2u * 4u * 4u);
  EXPECT_EQ(m.count_label(Label::Normal), 12);
  EXPECT_EQ(m.count_label(Label::Cancer), 12);
  std::int64_t test_count = 0;
  for (const auto& r : m.records) test_count += r.is_test;
  EXPECT_EQ(test_count, 8);
  // every image really exists and decodes at the right size
  ImageU8 img = read_png(m.resolve(m.records[0].path));
  EXPECT_EQ(img.height, 40);
  EXPECT_EQ(img.width, 40);
}

TEST(Synth, SubjectJitterChangesMeanColor) {
  testutil::TempDir dir("synthj");
  SynthParams params;
  params.n_subjects_per_class = 2;
  params.cells_per_subject = 5;
  params.size = 48;
  Rng rng(9);
  DatasetManifest m = synth_generate(params, rng, dir.str());
  auto mean_rgb = [&](const std::string& sid) {
    std::array<double, 3> acc = {0, 0, 0};
    std::int64_t count = 0;
    for (const auto& r : m.records) {
      if (r.subject_id != sid) continue;
      ImageU8 img = read_png(m.resolve(r.path));
      for (std::size_t i = 0; i < img.rgb.size(); i += 3)
        for (int c = 0; c < 3; ++c) acc[static_cast<std::size_t>(c)] += img.rgb[i + static_cast<std::size_t>(c)];
      count += static_cast<std::int64_t>(img.rgb.size() / 3);
    }
    for (auto& v : acc) v /= static_cast<double>(count);
    return acc;
  };
  auto a = mean_rgb("N00");
  auto b = mean_rgb("N01");
  const double dist = std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
  EXPECT_GT(dist, 0.2);
}

TEST(Synth, TooSmallCanvasRejected) {
  SynthParams params;
  params.size = 31;
  Rng rng(10);
  EXPECT_THROW(synth_generate(params, rng, "/tmp/never_created"), ContractError);
}
