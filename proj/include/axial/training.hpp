#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "axial/data.hpp"
#include "axial/init.hpp"
#include "axial/network.hpp"

namespace axial {

/// One gradient tensor per model parameter, in `Model::parameters()` order.
struct GradientSet {
  std::vector<std::string> names;
  std::vector<Tensor> grads;

  static GradientSet zeros_like(const Model& model);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool all_finite() const;
};

inline constexpr double kProbClamp = 1e-12;

/// Mean binary cross-entropy with probabilities clamped to [1e-12, 1-1e-12].
double bce_loss(std::span<const double> probs, std::span<const double> labels);

/// Accumulates `scale * dLoss/dtheta` for one sample whose forward pass was
/// recorded in `cache`, given dLoss/dlogit.
void backward_sample(const Model& model, const ForwardCache& cache, double grad_logit, GradientSet& grads);

struct BackwardResult {
  double loss = 0.0;
  std::vector<double> probs;
  GradientSet grads;
};

/// Mean BCE over the batch and its gradient for every parameter. Sample b
/// uses dropout key (key.seed, key.epoch, key.sample_id + b), so repeated
/// calls see identical masks. `loss_scale` multiplies the objective.
BackwardResult backward(const Model& model, std::span<const Tensor> batch, std::span<const double> labels,
                        Mode mode = Mode::kTrain, DropoutKey key = {}, double loss_scale = 1.0);

/// The objective `backward` differentiates, without gradients.
double batch_loss(const Model& model, std::span<const Tensor> batch, std::span<const double> labels, Mode mode,
                  DropoutKey key = {});

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<GradCheckEntry> worst;                   // largest errors first
  std::vector<std::pair<std::string, double>> by_kind; // e.g. ("r_z", err)

  bool passed(double tol = 1e-4) const { return max_rel_error <= tol; }
};

/// Compares `backward` with central differences on every parameter
/// coordinate. Relative error is |a - n| / max(1e-8, |a| + |n|).
GradCheckReport grad_check(const Model& model, std::span<const Tensor> batch, std::span<const double> labels,
                           double eps = 1e-5, Mode mode = Mode::kTrain, DropoutKey key = {},
                           std::size_t worst_count = 10);

struct OptimizerState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::vector<double> weight_decay;  // per parameter

  /// Zero moments; weight decay only on "fc.weight".
  static OptimizerState for_model(const Model& model, double lr, double fc_weight_decay);
};

/// Bias-corrected Adam. Weight decay is added to the gradient (g += wd * theta)
/// before the moment update.
void adam_step(OptimizerState& state, std::span<Tensor* const> params, std::span<const Tensor> grads);
void adam_step(OptimizerState& state, Model& model, const GradientSet& grads);

struct Phase {
  std::size_t epochs = 0;
  double lr = 0.0;
};

struct Schedule {
  std::vector<Phase> phases = {{20, 1e-3}, {40, 1e-4}};
  std::size_t batch_size = 64;
  double fc_weight_decay = 1e-4;

  std::size_t total_epochs() const;
  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double val_auc = 0.0;  // NaN when undefined
};

/// "epoch\tlr\tloss\ttrain_acc\tval_acc\tval_auc", floats with 6 decimals and
/// NaN fields as "undef".
std::string format_epoch_log(const EpochLog& e);

struct TrainOptions {
  std::uint64_t seed = 0;
  /// Called after the last epoch of every phase (phase index, model).
  std::function<void(std::size_t, const Model&)> on_checkpoint;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> log;
  OptimizerState optimizer;
};

/// Runs the schedule with per-epoch shuffled mini-batches (last batch kept).
/// Validation metrics are computed in eval mode on `val` after every epoch.
TrainResult train(Model& model, std::span<const Sample> train_set, std::span<const Sample> val,
                  const Schedule& schedule, const TrainOptions& options);

/// Eval-mode probabilities for every sample.
std::vector<double> predict(const Model& model, std::span<const Sample> samples);

}  // namespace axial
