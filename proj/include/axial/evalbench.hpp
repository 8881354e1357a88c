#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace axial {

/// Classification metrics. A metric whose denominator is empty (or AUC on a
/// single-class set) is std::nullopt rather than a silent zero.
struct Metrics {
  std::optional<double> auc;
  double accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> sensitivity;
};

/// Probability that a random positive outranks a random negative, ties
/// counted one half. nullopt unless both classes are present.
std::optional<double> auc(std::span<const double> scores, std::span<const double> labels);

struct ConfusionMetrics {
  double accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> sensitivity;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline constexpr double kDecisionThreshold = 0.5;

/// A sample is predicted positive when its score is >= threshold.
ConfusionMetrics confusion_metrics(std::span<const double> scores, std::span<const double> labels,
                                   double threshold = kDecisionThreshold);

Metrics evaluate_metrics(std::span<const double> scores, std::span<const double> labels);

/// "AUC=0.9617 ACC=0.9281 PREC=0.9259 SENS=0.9236"; undefined values print "undef".
std::string format_metrics(const Metrics& m);

// Cost model ----------------------------------------------------------------

struct CostReport {
  std::size_t z = 0, w = 0, h = 0;
  std::uint64_t n = 0;
  std::uint64_t nonlocal_nominal = 0;
  std::uint64_t axial_nominal = 0;
  std::uint64_t nonlocal_measured = 0;
  std::uint64_t axial_measured = 0;

  double nominal_savings() const;
  double measured_savings() const;
};

/// Nominal costs: N^2 for full attention; floor(N^(3/2)) for cubic shapes
/// and floor(N * ((Z^2 + W^2 + H^2) / 3)^(3/4)) otherwise, which reduces to
/// the cubic value when Z = W = H.
CostReport cost_model(std::size_t z, std::size_t w, std::size_t h);

enum class AttentionKind { kNonLocal, kAxial };

/// Counted multiply-accumulates of one forward pass of the attention proper
/// (scores plus weighted sums, no embedding) on a d x Z x W x H input.
std::uint64_t measured_cost(AttentionKind kind, std::size_t z, std::size_t w, std::size_t h, std::size_t d);

struct BenchRow {
  CostReport cost;
  double time_nonlocal_ms = 0.0;
  double time_axial_ms = 0.0;
};

struct Extent3 {
  std::size_t z = 0, w = 0, h = 0;
};

/// Parses "ZxWxH[,ZxWxH...]"; an empty string yields no shapes.
std::vector<Extent3> parse_shapes(const std::string& text);

/// One row per shape, sorted by N ascending. Wall-clock timings are machine
/// dependent and informational only.
std::vector<BenchRow> bench(std::span<const Extent3> shapes, std::size_t d = 8);

void write_bench_report(std::ostream& os, std::span<const BenchRow> rows);

}  // namespace axial
