#include "axial/evalbench.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "axial/attention.hpp"
#include "axial/random.hpp"

namespace axial {

namespace {

void check_lengths(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("metrics: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                     " labels");
  }
}

bool positive(double label) { return label >= 0.5; }

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

std::uint64_t isqrt(std::uint64_t v) {
  auto r = static_cast<std::uint64_t>(std::sqrt(static_cast<long double>(v)));
  while (r * r > v) --r;
  while ((r + 1) * (r + 1) <= v) ++r;
  return r;
}

}  // namespace

std::optional<double> auc(std::span<const double> scores, std::span<const double> labels) {
  check_lengths(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Mann-Whitney: sum of (tie-averaged, 1-based) ranks of the positives.
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (positive(labels[order[k]])) {
        pos_rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double p = static_cast<double>(n_pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(n_neg));
}

ConfusionMetrics confusion_metrics(std::span<const double> scores, std::span<const double> labels, double threshold) {
  check_lengths(scores, labels);
  if (scores.empty()) throw ShapeError("metrics: empty input");
  ConfusionMetrics m;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool truth = positive(labels[i]);
    if (pred && truth) ++m.tp;
    if (pred && !truth) ++m.fp;
    if (!pred && !truth) ++m.tn;
    if (!pred && truth) ++m.fn;
  }
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(scores.size());
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.sensitivity = ratio(m.tp, m.tp + m.fn);
  return m;
}

Metrics evaluate_metrics(std::span<const double> scores, std::span<const double> labels) {
  const auto c = confusion_metrics(scores, labels);
  return {auc(scores, labels), c.accuracy, c.precision, c.sensitivity};
}

std::string format_metrics(const Metrics& m) {
  const auto fmt = [](std::optional<double> v) {
    if (!v) return std::string("undef");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return std::string(buf);
  };
  return "AUC=" + fmt(m.auc) + " ACC=" + fmt(m.accuracy) + " PREC=" + fmt(m.precision) + " SENS=" + fmt(m.sensitivity);
}

double CostReport::nominal_savings() const {
  return 1.0 - static_cast<double>(axial_nominal) / static_cast<double>(nonlocal_nominal);
}

double CostReport::measured_savings() const {
  if (nonlocal_measured == 0) return 0.0;
  return 1.0 - static_cast<double>(axial_measured) / static_cast<double>(nonlocal_measured);
}

CostReport cost_model(std::size_t z, std::size_t w, std::size_t h) {
  if (z == 0 || w == 0 || h == 0) throw ShapeError("cost_model: dimensions must be positive");
  CostReport r;
  r.z = z;
  r.w = w;
  r.h = h;
  r.n = static_cast<std::uint64_t>(z) * w * h;
  r.nonlocal_nominal = r.n * r.n;
  if (z == w && w == h && r.n <= (std::uint64_t{1} << 21)) {
    r.axial_nominal = isqrt(r.n * r.n * r.n);
  } else {
    const long double sq = (static_cast<long double>(z) * z + static_cast<long double>(w) * w +
                            static_cast<long double>(h) * h) / 3.0L;
    r.axial_nominal = static_cast<std::uint64_t>(std::floor(static_cast<long double>(r.n) * std::pow(sq, 0.75L)));
  }
  return r;
}

std::uint64_t measured_cost(AttentionKind kind, std::size_t z, std::size_t w, std::size_t h, std::size_t d) {
  Rng rng(derive_seed(0, "bench", z * 1000003 + w * 1009 + h, d));
  Tensor emb({d, z, w, h});
  for (auto& v : emb.data()) v = rng.uniform(-0.5, 0.5);
  MacCounter counter;
  if (kind == AttentionKind::kNonLocal) {
    (void)nonlocal_attend(emb);
  } else {
    Tensor t = axis_attention_along(emb, 3);
    t = axis_attention_along(t, 2);
    (void)axis_attention_along(t, 1);
  }
  return counter.count();
}

std::vector<Extent3> parse_shapes(const std::string& text) {
  std::vector<Extent3> out;
  std::size_t start = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
  };
  if (trim(text).empty()) return out;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string token = trim(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    std::size_t dims[3] = {0, 0, 0};
    std::size_t pos = 0;
    bool ok = !token.empty();
    for (int i = 0; i < 3 && ok; ++i) {
      std::size_t used = 0;
      try {
        if (pos >= token.size() || !std::isdigit(static_cast<unsigned char>(token[pos]))) throw std::invalid_argument("");
        dims[i] = std::stoul(token.substr(pos), &used);
      } catch (const std::exception&) {
        ok = false;
        break;
      }
      pos += used;
      if (i < 2) {
        if (pos >= token.size() || (token[pos] != 'x' && token[pos] != 'X')) ok = false;
        ++pos;
      }
      if (dims[i] == 0) ok = false;
    }
    if (!ok || pos != token.size()) throw ConfigError("bad shape token '" + token + "' (expected ZxWxH)");
    out.push_back({dims[0], dims[1], dims[2]});
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<BenchRow> bench(std::span<const Extent3> shapes, std::size_t d) {
  std::vector<Extent3> sorted(shapes.begin(), shapes.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Extent3& a, const Extent3& b) { return a.z * a.w * a.h < b.z * b.w * b.h; });
  std::vector<BenchRow> rows;
  for (const auto& s : sorted) {
    BenchRow row;
    row.cost = cost_model(s.z, s.w, s.h);
    using clock = std::chrono::steady_clock;
    auto t0 = clock::now();
    row.cost.nonlocal_measured = measured_cost(AttentionKind::kNonLocal, s.z, s.w, s.h, d);
    auto t1 = clock::now();
    row.cost.axial_measured = measured_cost(AttentionKind::kAxial, s.z, s.w, s.h, d);
    auto t2 = clock::now();
    row.time_nonlocal_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    row.time_axial_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    rows.push_back(row);
  }
  return rows;
}

void write_bench_report(std::ostream& os, std::span<const BenchRow> rows) {
  os << "Z\tW\tH\tN\tnonlocal_nominal\taxial_nominal\tnonlocal_macs\taxial_macs\tsavings\ttime_nonlocal_ms\t"
        "time_axial_ms\n";
  for (const auto& r : rows) {
    char buf[64];
    os << r.cost.z << '\t' << r.cost.w << '\t' << r.cost.h << '\t' << r.cost.n << '\t' << r.cost.nonlocal_nominal
       << '\t' << r.cost.axial_nominal << '\t' << r.cost.nonlocal_measured << '\t' << r.cost.axial_measured << '\t';
    std::snprintf(buf, sizeof(buf), "%.6f\t%.3f\t%.3f", r.cost.measured_savings(), r.time_nonlocal_ms,
                  r.time_axial_ms);
    os << buf << '\n';
  }
}

}  // namespace axial
