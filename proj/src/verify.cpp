#include "axial/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>

#include "axial/attention.hpp"
#include "axial/data.hpp"
#include "axial/evalbench.hpp"
#include "axial/network.hpp"
#include "axial/random.hpp"
#include "axial/training.hpp"

namespace axial {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

// Per-fiber attention along the last axis with explicit loops.
Tensor naive_axis_attention(const Tensor& t) {
  const std::size_t d = t.dim(0), len = t.dim(t.rank() - 1);
  const std::size_t mid = t.size() / (d * len);
  Tensor out(t.shape());
  std::vector<double> w(len);
  for (std::size_t m = 0; m < mid; ++m) {
    const auto at = [&](std::size_t c, std::size_t l) { return t[(c * mid + m) * len + l]; };
    for (std::size_t l = 0; l < len; ++l) {
      double mx = -INFINITY;
      for (std::size_t i = 0; i < len; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += at(c, i) * at(c, l);
        w[i] = s;
        mx = std::max(mx, s);
      }
      double sum = 0.0;
      for (auto& v : w) sum += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < d; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < len; ++i) acc += at(c, i) * w[i] / sum;
        out[(c * mid + m) * len + l] = acc;
      }
    }
  }
  return out;
}

AxialLayerParams random_layer(std::size_t c, std::size_t d, std::size_t z, std::size_t w, std::size_t h, Rng& rng,
                              bool zero_pos = false) {
  AxialLayerParams p;
  p.embed.w_q = random_tensor({d, c}, rng);
  p.pos.r_z = random_tensor({d, z}, rng, zero_pos ? 0.0 : 1.0);
  p.pos.r_h = random_tensor({d, h}, rng, zero_pos ? 0.0 : 1.0);
  p.pos.r_w = random_tensor({d, w}, rng, zero_pos ? 0.0 : 1.0);
  p.norm_gain = random_tensor({c}, rng);
  for (auto& g : p.norm_gain.data()) g += 1.5;
  p.norm_bias = random_tensor({c}, rng, 0.2);
  return p;
}

std::string fmt(const char* f, double v) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : seed_(seed) {}

  void run(const std::string& group, const std::string& name, const std::function<std::string(bool&)>& body) {
    CheckResult r{group, name, false, {}};
    try {
      bool ok = false;
      r.detail = body(ok);
      r.passed = ok;
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    report.checks.push_back(std::move(r));
  }

  Rng rng(std::string_view stream) const { return Rng(derive_seed(seed_, stream)); }

  VerifyReport report;

 private:
  std::uint64_t seed_;
};

}  // namespace

bool VerifyReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::string with_commas(std::uint64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

VerifyReport run_verification(std::uint64_t seed) {
  Suite s(seed);

  s.run("oracle", "axis_attention_vs_naive", [&](bool& ok) {
    Rng rng = s.rng("verify.axis");
    double worst = 0.0;
    for (int trial = 0; trial < 60; ++trial) {
      Shape shape(4);
      for (auto& n : shape) n = 1 + rng.below(7);
      const Tensor t = random_tensor(shape, rng);
      worst = std::max(worst, max_abs_diff(axis_attention(t), naive_axis_attention(t)));
    }
    ok = worst <= 1e-10;
    return fmt("max_abs_err=%.3e", worst);
  });

  s.run("oracle", "degenerate_nonlocal", [&](bool& ok) {
    Rng rng = s.rng("verify.degenerate");
    double worst = 0.0;
    for (std::size_t z = 1; z <= 7; ++z) {
      const std::size_t c = 3, d = 2;
      const AxialLayerParams p = random_layer(c, d, z, 1, 1, rng);
      const Tensor x = random_tensor({c, z, 1, 1}, rng);
      const Tensor h = shared_embedding(x, p);
      worst = std::max(worst, max_abs_diff(axial_attention_3d(x, p), nonlocal_attend(h).output));
    }
    ok = worst <= 1e-10;
    return fmt("max_abs_err=%.3e", worst);
  });

  s.run("oracle", "weights_normalized", [&](bool& ok) {
    Rng rng = s.rng("verify.norm");
    const Tensor h = random_tensor({2, 3, 2, 2}, rng);
    const auto r = nonlocal_attend(h);
    const std::size_t n = r.weights.dim(0);
    double worst = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += r.weights[j * n + i];
      worst = std::max(worst, std::abs(sum - 1.0));
    }
    ok = worst <= 1e-12;
    return fmt("max_row_sum_err=%.3e", worst);
  });

  s.run("oracle", "equivariance_without_pos", [&](bool& ok) {
    Rng rng = s.rng("verify.equiv");
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const AxialLayerParams p = random_layer(2, 3, 4, 3, 5, rng, true);
      const Tensor x = random_tensor({2, 4, 3, 5}, rng);
      // Reverse the H axis; with P = 0 the layer commutes with it.
      Tensor xr(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t hh = i % 5;
        xr[i - hh + (4 - hh)] = x[i];
      }
      const Tensor a = axial_attention_3d(xr, p);
      const Tensor b = axial_attention_3d(x, p);
      Tensor br(b.shape());
      for (std::size_t i = 0; i < b.size(); ++i) {
        const std::size_t hh = i % 5;
        br[i - hh + (4 - hh)] = b[i];
      }
      worst = std::max(worst, max_abs_diff(a, br));
    }
    ok = worst <= 1e-12;
    return fmt("max_abs_err=%.3e", worst);
  });

  s.run("gradient", "grad_check_tiny_model", [&](bool& ok) {
    Model model({1, 2, 2, 2}, {LayerSpec::axial(2), LayerSpec::fc(16, 0.0)}, derive_seed(seed, "verify.grad"));
    Rng rng = s.rng("verify.grad.data");
    for (auto& [name, t] : model.parameters()) {
      if (name.find("norm") != std::string::npos || name == "fc.bias") {
        for (auto& v : t->data()) v += rng.uniform(-0.3, 0.3);
      }
    }
    const std::vector<Tensor> batch = {random_tensor({1, 2, 2, 2}, rng)};
    const std::vector<double> labels = {1.0};
    const auto r = grad_check(model, batch, labels, 1e-5);
    ok = r.passed(1e-4) && r.by_kind.size() == 8;
    return fmt("max_rel_err=%.3e", r.max_rel_error) + " kinds=" + std::to_string(r.by_kind.size());
  });

  s.run("cost", "nominal_constants", [&](bool& ok) {
    const auto c = cost_model(32, 32, 32);
    s.report.nonlocal_32 = c.nonlocal_nominal;
    s.report.axial_32 = c.axial_nominal;
    ok = c.nonlocal_nominal == 1073741824ULL && c.axial_nominal == 5931641ULL && c.nominal_savings() > 0.994;
    return "nonlocal=" + with_commas(c.nonlocal_nominal) + " axial=" + with_commas(c.axial_nominal) +
           fmt(" savings=%.6f", c.nominal_savings());
  });

  s.run("cost", "measured_scaling", [&](bool& ok) {
    const auto n4 = measured_cost(AttentionKind::kNonLocal, 4, 4, 4, 8);
    const auto n8 = measured_cost(AttentionKind::kNonLocal, 8, 8, 8, 8);
    const auto a8 = measured_cost(AttentionKind::kAxial, 8, 8, 8, 8);
    const double r1 = static_cast<double>(n8) / static_cast<double>(n4);
    ok = std::abs(r1 / 64.0 - 1.0) <= 0.01 && n8 == 2ULL * 8 * 512 * 512 && a8 < n8;
    return fmt("ratio_4_to_8=%.4f", r1) + " axial_8=" + std::to_string(a8);
  });

  s.run("data", "augmentation_and_folds", [&](bool& ok) {
    const auto base = synth_generate(10, 10, derive_seed(seed, "verify.synth"), 8);
    std::vector<Sample> all;
    for (const auto& b : base) {
      for (auto& a : augment_rotations(b)) all.push_back(std::move(a));
    }
    const auto folds = kfold_split(all, 10, seed);
    std::set<std::pair<std::uint32_t, std::size_t>> seen;
    for (const auto& smp : all) seen.emplace(smp.nodule_id, folds.fold_of(smp));
    Tensor r = base[3].volume;
    for (int i = 0; i < 4; ++i) r = rotate_quarter(r, RotationAxis::kZ, 1);
    const Sample back = decode_volume(encode_volume(base[3]));
    ok = all.size() == 200 && seen.size() == 20 && r == base[3].volume && back.volume == base[3].volume &&
         back.nodule_id == base[3].nodule_id && back.label == base[3].label;
    return "samples=" + std::to_string(all.size()) + " nodule_fold_pairs=" + std::to_string(seen.size());
  });

  s.run("metrics", "auc_brute_force", [&](bool& ok) {
    Rng rng = s.rng("verify.auc");
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 2 + rng.below(19);
      std::vector<double> sc(n), lb(n);
      for (std::size_t i = 0; i < n; ++i) {
        sc[i] = static_cast<double>(rng.below(6)) / 5.0;
        lb[i] = static_cast<double>(rng.below(2));
      }
      lb[0] = 0.0;
      lb[1] = 1.0;
      double wins = 0.0, pairs = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (lb[i] == 1.0 && lb[j] == 0.0) {
            pairs += 1.0;
            wins += sc[i] > sc[j] ? 1.0 : sc[i] == sc[j] ? 0.5 : 0.0;
          }
        }
      }
      worst = std::max(worst, std::abs(*auc(sc, lb) - wins / pairs));
    }
    ok = worst <= 1e-12;
    return fmt("max_abs_err=%.3e", worst);
  });

  return std::move(s.report);
}

void write_verify_report(std::ostream& os, const VerifyReport& report) {
  std::size_t width = 0;
  for (const auto& c : report.checks) width = std::max(width, c.group.size() + 1 + c.name.size());
  for (const auto& c : report.checks) {
    std::string label = c.group + "/" + c.name;
    label.resize(width, ' ');
    os << (c.passed ? "PASS  " : "FAIL  ") << label << "  " << c.detail << '\n';
  }
  os << "cost: nonlocal(32,32,32)=" << with_commas(report.nonlocal_32)
     << " axial(32,32,32)=" << with_commas(report.axial_32) << '\n';
  std::size_t failed = 0;
  for (const auto& c : report.checks) failed += !c.passed;
  os << (failed == 0 ? "all " + std::to_string(report.checks.size()) + " checks passed"
                     : std::to_string(failed) + " of " + std::to_string(report.checks.size()) + " checks failed")
     << '\n';
}

}  // namespace axial
