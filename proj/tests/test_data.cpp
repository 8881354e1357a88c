#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "axial/data.hpp"
#include "oracles.hpp"

using namespace axial;
namespace fs = std::filesystem;

namespace {

Rng rng_for(std::uint64_t k) { return Rng(derive_seed(5, "test.data", k)); }

std::vector<double> sorted_values(const Tensor& t) {
  auto v = t.values();
  std::sort(v.begin(), v.end());
  return v;
}

// Boundary-radius spread measured directly on voxels: march outward from the
// mask centroid along evenly spread directions until the intensity drops
// below one half, then take variance / mean^2 of the radii.
double radial_roughness(const Tensor& vol) {
  const std::size_t n = vol.dim(0);
  double cz = 0, cw = 0, ch = 0, mass = 0;
  for (std::size_t z = 0; z < n; ++z) {
    for (std::size_t w = 0; w < n; ++w) {
      for (std::size_t h = 0; h < n; ++h) {
        if (vol.at({z, w, h}) > 0.5) {
          cz += z, cw += w, ch += h, mass += 1;
        }
      }
    }
  }
  cz /= mass, cw /= mass, ch /= mass;
  const int dirs = 300;
  std::vector<double> radii;
  for (int i = 0; i < dirs; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / dirs, r = std::sqrt(1.0 - y * y);
    const double phi = i * 2.399963229728653;
    const double u[3] = {y, r * std::cos(phi), r * std::sin(phi)};
    double t = 0.0;
    for (;; t += 0.25) {
      const long z = std::lround(cz + t * u[0]), w = std::lround(cw + t * u[1]), h = std::lround(ch + t * u[2]);
      if (z < 0 || w < 0 || h < 0 || z >= long(n) || w >= long(n) || h >= long(n)) break;
      if (vol.at({std::size_t(z), std::size_t(w), std::size_t(h)}) < 0.5) break;
    }
    radii.push_back(t);
  }
  double mean = 0, var = 0;
  for (double v : radii) mean += v;
  mean /= dirs;
  for (double v : radii) var += (v - mean) * (v - mean);
  return var / dirs / (mean * mean);
}

Sample sample_of(Tensor vol, Label label = Label::kBenign, std::uint32_t id = 0) {
  return {std::move(vol), label, id};
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("axial_test_" + name); }

}  // namespace

TEST(Synth, CountsLabelsAndIds) {
  EXPECT_TRUE(synth_generate(0, 0, 1).empty());
  const auto s = synth_generate(3, 2, 1);
  ASSERT_EQ(s.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(s[i].nodule_id, i);
    EXPECT_EQ(s[i].label, i < 3 ? Label::kBenign : Label::kMalignant);
    EXPECT_EQ(s[i].volume.shape(), (Shape{32, 32, 32}));
    EXPECT_TRUE(s[i].volume.all_finite());
    for (double v : s[i].volume.data()) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
  }
}

TEST(Synth, DeterministicPerSeed) {
  const auto a = synth_generate(2, 2, 9), b = synth_generate(2, 2, 9), c = synth_generate(2, 2, 10);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a[i].volume, b[i].volume);
    EXPECT_NE(a[i].volume, c[i].volume);
  }
}

TEST(Synth, ClassesSeparableByRadialRoughness) {
  const auto s = synth_generate(100, 100, 2024);
  std::vector<double> score, label;
  for (const auto& x : s) {
    score.push_back(radial_roughness(x.volume));
    label.push_back(x.target());
  }
  EXPECT_GE(oracle::auc_pairs(score, label), 0.9);
}

TEST(Rotation, GroupLaws) {
  Rng rng = rng_for(1);
  const Tensor v = oracle::random_tensor({5, 5, 5}, rng);
  for (auto axis : {RotationAxis::kX, RotationAxis::kY, RotationAxis::kZ}) {
    Tensor t = v;
    for (int k = 0; k < 4; ++k) t = rotate_quarter(t, axis, 1);
    EXPECT_EQ(t, v);
    EXPECT_EQ(rotate_quarter(rotate_quarter(v, axis, 1), axis, 1), rotate_quarter(v, axis, 2));
    EXPECT_EQ(rotate_quarter(v, axis, 0), v);
    EXPECT_EQ(rotate_quarter(v, axis, -1), rotate_quarter(v, axis, 3));
    EXPECT_EQ(sorted_values(rotate_quarter(v, axis, 1)), sorted_values(v));
  }
}

TEST(Rotation, ZTurnActsOnInPlaneAxes) {
  Tensor v({3, 3, 3});
  v.at({1, 0, 2}) = 1.0;
  const Tensor r = rotate_quarter(v, RotationAxis::kZ, 1);
  for (std::size_t z = 0; z < 3; ++z) {
    for (std::size_t w = 0; w < 3; ++w) {
      for (std::size_t h = 0; h < 3; ++h) {
        if (r.at({z, w, h}) != 0.0) EXPECT_EQ(z, 1u);
      }
    }
  }
  EXPECT_EQ(sorted_values(r), sorted_values(v));
  EXPECT_THROW(rotate_quarter(Tensor({3, 3, 4}), RotationAxis::kX, 1), ShapeError);
}

TEST(Augment, TenDistinctCopiesSharingId) {
  Rng rng = rng_for(2);
  const Sample s = sample_of(oracle::random_tensor({4, 4, 4}, rng), Label::kMalignant, 17);
  const auto copies = augment_rotations(s);
  ASSERT_EQ(copies.size(), 10u);
  EXPECT_EQ(copies[0].volume, s.volume);
  std::set<std::vector<double>> distinct;
  for (const auto& c : copies) {
    EXPECT_EQ(c.nodule_id, 17u);
    EXPECT_EQ(c.label, Label::kMalignant);
    EXPECT_EQ(sorted_values(c.volume), sorted_values(s.volume));
    distinct.insert(c.volume.values());
  }
  EXPECT_EQ(distinct.size(), 10u);

  for (const auto& c : augment_rotations(sample_of(Tensor::full({4, 4, 4}, 2.0)))) {
    EXPECT_EQ(c.volume, Tensor::full({4, 4, 4}, 2.0));
  }
  EXPECT_THROW(augment_rotations(sample_of(Tensor({4, 4, 2}))), ShapeError);
}

TEST(Scale, StandardizesTrainingVoxels) {
  Rng rng = rng_for(3);
  std::vector<Sample> train, test;
  for (int i = 0; i < 3; ++i) train.push_back(sample_of(oracle::random_tensor({4, 4, 4}, rng, 3.0)));
  for (auto& s : train) {
    for (auto& v : s.volume.data()) v += 5.0;
  }
  test.push_back(train[0]);
  const ScaleStats stats = standard_scale(train, test);
  double mean = 0, sq = 0, count = 0;
  for (const auto& s : train) {
    for (double v : s.volume.data()) mean += v, sq += v * v, count += 1;
  }
  mean /= count;
  EXPECT_LE(std::abs(mean), 1e-9);
  EXPECT_NEAR(std::sqrt(sq / count - mean * mean), 1.0, 1e-9);
  EXPECT_EQ(test[0].volume, train[0].volume);
  EXPECT_GT(stats.mean, 4.0);
}

TEST(Scale, StatisticsIgnoreTheOtherSet) {
  Rng rng = rng_for(4);
  std::vector<Sample> train = {sample_of(oracle::random_tensor({3, 3, 3}, rng))};
  std::vector<Sample> a = {sample_of(Tensor::full({3, 3, 3}, 100.0))}, b = {sample_of(Tensor::full({3, 3, 3}, -4.0))};
  auto t1 = train, t2 = train;
  const ScaleStats s1 = standard_scale(t1, a), s2 = standard_scale(t2, b);
  EXPECT_EQ(s1.mean, s2.mean);
  EXPECT_EQ(s1.std, s2.std);
}

TEST(Scale, IdentityOnStandardizedAndDegenerateThrows) {
  std::vector<Sample> train = {sample_of(Tensor({2, 1, 1}, {-1.0, 1.0}))};
  std::vector<Sample> none;
  const ScaleStats s = standard_scale(train, none);
  EXPECT_NEAR(s.mean, 0.0, 1e-12);
  EXPECT_NEAR(s.std, 1.0, 1e-12);
  EXPECT_NEAR(train[0].volume[1], 1.0, 1e-9);
  std::vector<Sample> flat = {sample_of(Tensor::full({2, 2, 2}, 3.0))};
  EXPECT_THROW(standard_scale(flat, none), DegenerateDataError);
  std::vector<Sample> empty;
  EXPECT_THROW(fit_standard_scale(empty), DegenerateDataError);
}

TEST(Folds, OneNodulePerFoldAndStratification) {
  std::vector<Sample> ten;
  for (std::uint32_t i = 0; i < 10; ++i) ten.push_back(sample_of(Tensor({1, 1, 1}), Label(i % 2), i));
  const FoldAssignment f10 = kfold_split(ten, 10, 3);
  std::set<std::size_t> used;
  for (const auto& s : ten) used.insert(f10.fold_of(s));
  EXPECT_EQ(used.size(), 10u);

  std::vector<Sample> hundred;
  for (std::uint32_t i = 0; i < 100; ++i) {
    for (int copy = 0; copy < 3; ++copy) hundred.push_back(sample_of(Tensor({1, 1, 1}), Label(i >= 50), i));
  }
  const FoldAssignment f = kfold_split(hundred, 10, 8);
  EXPECT_EQ(f.fold_of_nodule.size(), 100u);
  std::vector<std::array<int, 2>> counts(10, {0, 0});
  for (const auto& [id, fold] : f.fold_of_nodule) {
    ASSERT_LT(fold, 10u);
    counts[fold][id >= 50 ? 1 : 0] += 1;
  }
  for (const auto& c : counts) EXPECT_EQ(c, (std::array<int, 2>{5, 5}));
  for (const auto& s : hundred) EXPECT_EQ(f.fold_of(s), f.fold_of_nodule.at(s.nodule_id));
  EXPECT_EQ(kfold_split(hundred, 10, 8).fold_of_nodule, f.fold_of_nodule);
}

TEST(Folds, StratificationWithinOneOfPerfect) {
  std::vector<Sample> s;
  for (std::uint32_t i = 0; i < 37; ++i) s.push_back(sample_of(Tensor({1, 1, 1}), Label(i < 13), i));
  const FoldAssignment f = kfold_split(s, 10, 1);
  std::vector<std::array<int, 2>> counts(10, {0, 0});
  for (const auto& x : s) counts[f.fold_of(x)][x.label == Label::kMalignant] += 1;
  for (const auto& c : counts) {
    EXPECT_LE(std::abs(c[1] - 1.3), 1.0);
    EXPECT_LE(std::abs(c[0] - 2.4), 1.0);
  }
}

TEST(Folds, TooFewNodulesThrows) {
  std::vector<Sample> s;
  for (std::uint32_t i = 0; i < 4; ++i) {
    for (int copy = 0; copy < 10; ++copy) s.push_back(sample_of(Tensor({1, 1, 1}), Label::kBenign, i));
  }
  EXPECT_THROW(kfold_split(s, 10, 0), ConfigError);
}

TEST(Axv1, RoundTripAndLayout) {
  Rng rng = rng_for(5);
  Tensor vol = oracle::random_tensor({2, 3, 4}, rng);
  for (auto& v : vol.data()) v = static_cast<float>(v);
  const Sample s = sample_of(vol, Label::kMalignant, 0x01020304);
  const auto bytes = encode_volume(s);
  ASSERT_EQ(bytes.size(), 21u + 4 * 24);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "AXV1");
  EXPECT_EQ(bytes[4], 2);
  EXPECT_EQ(bytes[8], 3);
  EXPECT_EQ(bytes[12], 4);
  EXPECT_EQ(bytes[16], 0x04);
  EXPECT_EQ(bytes[19], 0x01);
  EXPECT_EQ(bytes[20], 1);
  const Sample back = decode_volume(bytes);
  EXPECT_EQ(back.volume, s.volume);
  EXPECT_EQ(back.label, s.label);
  EXPECT_EQ(back.nodule_id, s.nodule_id);

  const fs::path p = temp_path("roundtrip.axv");
  write_volume(s, p);
  EXPECT_EQ(read_volume(p).volume, s.volume);
  fs::remove(p);
}

TEST(Axv1, FormatErrors) {
  const auto good = encode_volume(sample_of(Tensor::full({2, 2, 2}, 1.0)));
  auto bad = good;
  bad[3] = '2';
  try {
    decode_volume(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("AXV1"), std::string::npos);
  }
  auto cut = good;
  cut.resize(cut.size() - 2);
  try {
    decode_volume(cut);
    FAIL();
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("32"), std::string::npos) << msg;
    EXPECT_NE(msg.find("30"), std::string::npos) << msg;
  }
  auto huge = good;
  for (int i = 4; i < 16; ++i) huge[i] = 0xff;
  EXPECT_THROW(decode_volume(huge), FormatError);
  EXPECT_THROW(decode_volume(std::vector<std::uint8_t>(good.begin(), good.begin() + 10)), FormatError);
}

TEST(Manifest, RoundTripAndErrors) {
  const fs::path p = temp_path("manifest.tsv");
  const std::vector<ManifestEntry> entries = {{"a.axv", 0}, {"sub/b.axv", 9}};
  write_manifest(p, entries);
  const auto back = read_manifest(p);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].path, "sub/b.axv");
  EXPECT_EQ(back[1].fold, 9u);
  {
    std::ofstream os(p);
    os << "a.axv\tx\n";
  }
  EXPECT_THROW(read_manifest(p), FormatError);
  fs::remove(p);
}
