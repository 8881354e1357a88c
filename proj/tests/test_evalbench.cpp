#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "axial/evalbench.hpp"
#include "oracles.hpp"

using namespace axial;

namespace {

Rng rng_for(std::uint64_t k) { return Rng(derive_seed(3, "test.evalbench", k)); }

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(Auc, Examples) {
  EXPECT_EQ(auc(std::vector<double>{0.1, 0.9}, std::vector<double>{0, 1}), 1.0);
  EXPECT_EQ(auc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<double>{0, 1, 1}), 0.5);
  EXPECT_EQ(auc(std::vector<double>{0.2, 0.4, 0.6, 0.8}, std::vector<double>{0, 1, 0, 1}), 0.75);
  EXPECT_FALSE(auc(std::vector<double>{0.2, 0.4}, std::vector<double>{1, 1}).has_value());
  EXPECT_THROW(auc(std::vector<double>{0.2}, std::vector<double>{1, 0}), ShapeError);
}

TEST(Auc, MatchesBruteForceWithTies) {
  Rng rng = rng_for(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(19);
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(6)) / 5.0;
      y[i] = static_cast<double>(rng.below(2));
    }
    y[0] = 0.0;
    y[1] = 1.0;
    const auto a = auc(s, y);
    ASSERT_TRUE(a.has_value());
    EXPECT_NEAR(*a, oracle::auc_pairs(s, y), 1e-12);
  }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  Rng rng = rng_for(2);
  std::vector<double> s(30), t(30), y(30);
  for (std::size_t i = 0; i < 30; ++i) {
    s[i] = rng.uniform(-2.0, 2.0);
    t[i] = std::exp(3.0 * s[i]) + 1.0;
    y[i] = i % 3 == 0;
  }
  EXPECT_EQ(auc(s, y), auc(t, y));
}

TEST(Confusion, Fixtures) {
  const auto perfect = confusion_metrics(std::vector<double>{0.9, 0.1, 0.7}, std::vector<double>{1, 0, 1});
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.sensitivity, 1.0);

  const auto all_pos = confusion_metrics(std::vector<double>{0.9, 0.6, 0.5, 0.8}, std::vector<double>{1, 0, 1, 0});
  EXPECT_EQ(all_pos.accuracy, 0.5);
  EXPECT_EQ(all_pos.precision, 0.5);
  EXPECT_EQ(all_pos.sensitivity, 1.0);

  const auto none_pos = confusion_metrics(std::vector<double>{0.1, 0.2, 0.3}, std::vector<double>{1, 0, 1});
  EXPECT_FALSE(none_pos.precision.has_value());
  EXPECT_EQ(none_pos.sensitivity, 0.0);
  EXPECT_NEAR(none_pos.accuracy, 1.0 / 3.0, 1e-15);

  EXPECT_THROW(confusion_metrics(std::vector<double>{0.1}, std::vector<double>{1, 0}), ShapeError);
}

TEST(Metrics, FormatFourDecimals) {
  const Metrics m = evaluate_metrics(std::vector<double>{0.9, 0.2, 0.6, 0.4}, std::vector<double>{1, 0, 0, 1});
  EXPECT_EQ(format_metrics(m), "AUC=0.7500 ACC=0.5000 PREC=0.5000 SENS=0.5000");
  const Metrics u = evaluate_metrics(std::vector<double>{0.1, 0.2}, std::vector<double>{0, 0});
  EXPECT_EQ(format_metrics(u), "AUC=undef ACC=1.0000 PREC=undef SENS=undef");
}

TEST(CostModel, NominalConstants) {
  const CostReport r = cost_model(32, 32, 32);
  EXPECT_EQ(r.n, 32768u);
  EXPECT_EQ(r.nonlocal_nominal, 1073741824u);
  EXPECT_EQ(r.axial_nominal, 5931641u);
  EXPECT_GT(r.nominal_savings(), 0.994);
  const std::uint64_t n = 32768;
  EXPECT_EQ(r.axial_nominal, static_cast<std::uint64_t>(std::floor(n * std::sqrt(static_cast<double>(n)))));
}

TEST(CostModel, NonCubicReducesToCubic) {
  const CostReport a = cost_model(8, 8, 8);
  EXPECT_EQ(a.axial_nominal, 11585u);
  const CostReport b = cost_model(4, 8, 16);
  EXPECT_EQ(b.nonlocal_nominal, 512u * 512u);
  const double expected = 512.0 * std::pow((16.0 + 64.0 + 256.0) / 3.0, 0.75);
  EXPECT_EQ(b.axial_nominal, static_cast<std::uint64_t>(std::floor(expected)));
  EXPECT_THROW(cost_model(0, 4, 4), ShapeError);
}

TEST(MeasuredCost, HandCountAndClosedForms) {
  EXPECT_EQ(measured_cost(AttentionKind::kNonLocal, 1, 1, 2, 1), 8u);
  for (std::size_t e : {4, 8}) {
    const std::uint64_t n = e * e * e;
    EXPECT_EQ(measured_cost(AttentionKind::kNonLocal, e, e, e, 3), 2 * 3 * n * n);
    EXPECT_EQ(measured_cost(AttentionKind::kAxial, e, e, e, 3), 2 * 3 * n * (3 * e));
  }
  EXPECT_EQ(measured_cost(AttentionKind::kAxial, 2, 3, 5, 1), 2u * 30 * (2 + 3 + 5));
  EXPECT_EQ(measured_cost(AttentionKind::kAxial, 4, 4, 4, 2), measured_cost(AttentionKind::kAxial, 4, 4, 4, 2));
}

TEST(MeasuredCost, QuadraticScalingAndAxialRatio) {
  const double c4 = measured_cost(AttentionKind::kNonLocal, 4, 4, 4, 1);
  const double c8 = measured_cost(AttentionKind::kNonLocal, 8, 8, 8, 1);
  const double c16 = measured_cost(AttentionKind::kNonLocal, 16, 16, 16, 1);
  EXPECT_NEAR(c8 / c4, 64.0, 0.64);
  EXPECT_NEAR(c16 / c8, 64.0, 0.64);
  const double a16 = measured_cost(AttentionKind::kAxial, 16, 16, 16, 1);
  EXPECT_LE(a16 / c16, 1.0 / 50.0);
}

TEST(Bench, ParseShapes) {
  EXPECT_TRUE(parse_shapes("").empty());
  const auto s = parse_shapes("2x3x4,8x8x8");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].z, 2u);
  EXPECT_EQ(s[0].h, 4u);
  EXPECT_THROW(parse_shapes("8x8"), ConfigError);
  EXPECT_THROW(parse_shapes("8x0x8"), ConfigError);
  EXPECT_THROW(parse_shapes("axbxc"), ConfigError);
}

TEST(Bench, RowsSortedAndHeaderOnlyWhenEmpty) {
  std::ostringstream empty;
  write_bench_report(empty, bench(std::vector<Extent3>{}, 8));
  const auto header = lines_of(empty.str());
  ASSERT_EQ(header.size(), 1u);
  EXPECT_EQ(header[0],
            "Z\tW\tH\tN\tnonlocal_nominal\taxial_nominal\tnonlocal_macs\taxial_macs\tsavings\ttime_nonlocal_ms\t"
            "time_axial_ms");

  const std::vector<Extent3> shapes = {{8, 8, 8}, {2, 2, 2}, {4, 4, 4}};
  const auto rows = bench(shapes, 4);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].cost.n, 8u);
  EXPECT_EQ(rows[1].cost.n, 64u);
  EXPECT_EQ(rows[2].cost.n, 512u);
  EXPECT_EQ(rows[2].cost.nonlocal_measured, 2u * 4 * 512 * 512);
  std::ostringstream os;
  write_bench_report(os, rows);
  EXPECT_EQ(lines_of(os.str()).size(), 4u);
}
