// Command-line front end: synth, train, eval, bench, verify.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "axial/attention.hpp"
#include "axial/config.hpp"
#include "axial/data.hpp"
#include "axial/evalbench.hpp"
#include "axial/network.hpp"
#include "axial/training.hpp"
#include "axial/verify.hpp"

namespace fs = std::filesystem;
using namespace axial;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// A usage or configuration problem detected by the CLI itself.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::size_t> folds;
};

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest = dir / kManifestName;
  if (!fs::is_regular_file(manifest)) throw UsageError("no " + std::string(kManifestName) + " in " + dir.string());
  Dataset ds;
  for (const auto& e : read_manifest(manifest)) {
    ds.samples.push_back(read_volume(dir / e.path));
    ds.folds.push_back(e.fold);
  }
  return ds;
}

std::string volume_name(std::uint32_t id, std::size_t copy) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "nodule%05u_r%02zu.axv", id, copy);
  return buf;
}

int cmd_synth(std::size_t n_benign, std::size_t n_malignant, std::uint64_t seed, const fs::path& out,
              std::size_t folds) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw UsageError("cannot create output directory " + out.string());

  std::vector<Sample> all;
  std::vector<std::size_t> copy_index;
  for (const auto& base : synth_generate(n_benign, n_malignant, seed)) {
    auto copies = augment_rotations(base);
    for (std::size_t c = 0; c < copies.size(); ++c) {
      all.push_back(std::move(copies[c]));
      copy_index.push_back(c);
    }
  }
  std::vector<ManifestEntry> entries;
  if (!all.empty()) {
    const FoldAssignment fa = kfold_split(all, folds, seed);
    for (std::size_t i = 0; i < all.size(); ++i) {
      const std::string name = volume_name(all[i].nodule_id, copy_index[i]);
      write_volume(all[i], out / name);
      entries.push_back({name, fa.fold_of(all[i])});
    }
  }
  write_manifest(out / kManifestName, entries);
  std::cout << "wrote " << entries.size() << " volumes and " << (out / kManifestName).string() << '\n';
  return kExitOk;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw Error("failed writing " + path.string());
}

NamedTensors checkpoint_entries(const Model& model, const ScaleStats& stats) {
  NamedTensors entries = model_entries(model);
  entries.emplace_back("data.mean", Tensor::scalar(stats.mean));
  entries.emplace_back("data.std", Tensor::scalar(stats.std));
  return entries;
}

void train_fold(const RunConfig& config, const Dataset& ds, std::size_t fold, const fs::path& out) {
  fs::create_directories(out);
  std::vector<Sample> train_set, val;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) (ds.folds[i] == fold ? val : train_set).push_back(ds.samples[i]);
  if (train_set.empty()) throw UsageError("fold " + std::to_string(fold) + " leaves no training samples");
  const ScaleStats stats = standard_scale(train_set, val);

  Model model(default_input_shape(), default_specs(config.d_sizes, config.dropout), config.seed);
  write_checkpoint(out / "init.axck", checkpoint_entries(model, stats));

  std::string log = "epoch\tlr\tloss\ttrain_acc\tval_acc\tval_auc\n";
  TrainOptions options;
  options.seed = config.seed;
  options.on_epoch = [&](const EpochLog& e) {
    const std::string line = format_epoch_log(e);
    log += line + '\n';
    std::cout << "fold " << fold << '\t' << line << std::endl;
  };
  options.on_checkpoint = [&](std::size_t phase, const Model& m) {
    write_checkpoint(out / ("phase" + std::to_string(phase + 1) + ".axck"), checkpoint_entries(m, stats));
  };
  train(model, train_set, val, config.schedule, options);
  write_checkpoint(out / "final.axck", checkpoint_entries(model, stats));
  write_text(out / "train.log", log);
}

int cmd_train(const fs::path& config_path, const std::optional<std::string>& fold_flag) {
  RunConfig config = load_run_config(config_path);
  if (fold_flag) config.fold = parse_run_config("fold=" + *fold_flag).fold;
  validate_paths(config);
  const Dataset ds = load_dataset(config.data_dir);
  if (ds.samples.empty()) throw UsageError("dataset in " + config.data_dir.string() + " is empty");
  std::size_t n_folds = 0;
  for (auto f : ds.folds) n_folds = std::max(n_folds, f + 1);
  if (config.fold && *config.fold >= n_folds) {
    throw UsageError("fold " + std::to_string(*config.fold) + " out of range; dataset has " +
                     std::to_string(n_folds) + " folds");
  }
  write_text(config.out_dir / "run.cfg", serialize_run_config(config));
  if (config.fold) {
    train_fold(config, ds, *config.fold, config.out_dir);
  } else {
    for (std::size_t f = 0; f < n_folds; ++f) train_fold(config, ds, f, config.out_dir / ("fold" + std::to_string(f)));
  }
  return kExitOk;
}

double scalar_entry(const NamedTensors& entries, const std::string& name, const fs::path& path) {
  for (const auto& [n, t] : entries) {
    if (n == name) return t[0];
  }
  throw FormatError(path.string() + ": checkpoint lacks " + name);
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, const std::optional<std::size_t>& fold,
             std::optional<double> min_auc, std::optional<double> min_acc) {
  NamedTensors entries;
  try {
    entries = read_checkpoint(ckpt);
  } catch (const FormatError& e) {
    throw FormatError(ckpt.string() + ": " + e.what());
  }
  const Model model = default_model_from_entries(entries);
  const ScaleStats stats{scalar_entry(entries, "data.mean", ckpt), scalar_entry(entries, "data.std", ckpt)};
  Dataset ds = load_dataset(data);
  std::vector<Sample> chosen;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (!fold || ds.folds[i] == *fold) chosen.push_back(std::move(ds.samples[i]));
  }
  if (chosen.empty()) throw UsageError("no samples selected for evaluation");
  apply_standard_scale(chosen, stats);
  const auto scores = predict(model, chosen);
  std::vector<double> labels;
  for (const auto& s : chosen) labels.push_back(s.target());
  const Metrics m = evaluate_metrics(scores, labels);
  std::cout << format_metrics(m) << '\n';
  bool ok = true;
  if (min_auc && !(m.auc && *m.auc >= *min_auc)) ok = false;
  if (min_acc && m.accuracy < *min_acc) ok = false;
  return ok ? kExitOk : kExitFailure;
}

int cmd_bench(const std::string& shapes, std::size_t d) {
  const auto parsed = parse_shapes(shapes);
  const auto rows = bench(parsed, d);
  write_bench_report(std::cout, rows);
  return kExitOk;
}

int cmd_verify(std::uint64_t seed, double perturb) {
  testing::set_kernel_perturbation(perturb);
  const VerifyReport report = run_verification(seed);
  testing::set_kernel_perturbation(0.0);
  write_verify_report(std::cout, report);
  return report.all_passed() ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep large activation buffers on the heap between samples.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"3D axial-attention nodule classifier"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic nodule dataset");
  std::size_t n_benign = 0, n_malignant = 0, folds = 10;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--n-benign", n_benign, "Benign nodules")->required();
  synth->add_option("--n-malignant", n_malignant, "Malignant nodules")->required();
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--folds", folds, "Cross-validation folds")->check(CLI::PositiveNumber);

  auto* train_cmd = app.add_subcommand("train", "Train on a dataset described by a config file");
  std::string config_path;
  std::optional<std::string> train_fold_flag;
  train_cmd->add_option("--config", config_path, "Run config (key=value lines)")->required();
  train_cmd->add_option("--fold", train_fold_flag, "Held-out fold index or \"all\"; overrides the config");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ckpt, data;
  std::optional<std::size_t> eval_fold;
  std::optional<double> min_auc, min_acc;
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data, "Dataset directory")->required();
  eval_cmd->add_option("--fold", eval_fold, "Evaluate only this fold");
  eval_cmd->add_option("--min-auc", min_auc, "Exit 1 if AUC is below this value");
  eval_cmd->add_option("--min-acc", min_acc, "Exit 1 if accuracy is below this value");

  auto* bench_cmd = app.add_subcommand("bench", "Compare non-local and axial attention costs");
  std::string shapes = "4x4x4,8x8x8,16x16x16";
  std::size_t bench_d = 8;
  bench_cmd->add_option("--shapes", shapes, "Comma-separated ZxWxH list");
  bench_cmd->add_option("--d", bench_d, "Embedding size")->check(CLI::PositiveNumber);

  auto* verify_cmd = app.add_subcommand("verify", "Run the self-verification suite");
  std::uint64_t verify_seed = 0;
  double perturb = 0.0;
  verify_cmd->add_option("--seed", verify_seed, "Random seed");
  verify_cmd->add_option("--perturb-kernel", perturb, "Test hook: offset added to every attended fiber");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(n_benign, n_malignant, synth_seed, synth_out, folds);
    if (*train_cmd) return cmd_train(config_path, train_fold_flag);
    if (*eval_cmd) return cmd_eval(ckpt, data, eval_fold, min_auc, min_acc);
    if (*bench_cmd) return cmd_bench(shapes, bench_d);
    if (*verify_cmd) return cmd_verify(verify_seed, perturb);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
