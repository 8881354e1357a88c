#include "axial/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "axial/evalbench.hpp"

namespace axial {

Tensor xavier_init(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  if (fan_in == 0 || fan_out == 0) throw ParameterError("xavier_init: fans must be positive");
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(-a, a);
  return t;
}

GradientSet GradientSet::zeros_like(const Model& model) {
  GradientSet g;
  for (const auto& [name, t] : model.parameters()) {
    g.names.push_back(name);
    g.grads.emplace_back(t->shape());
  }
  return g;
}

const Tensor& GradientSet::at(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ParameterError("no gradient for " + name);
  return grads[static_cast<std::size_t>(it - names.begin())];
}

Tensor& GradientSet::at(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const GradientSet&>(*this).at(name));
}

bool GradientSet::all_finite() const {
  return std::all_of(grads.begin(), grads.end(), [](const Tensor& t) { return t.all_finite(); });
}

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double sample_bce(double p, double y) {
  const double q = clamp_prob(p);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

// d(sample_bce)/d(logit); zero where the clamp is active.
double sample_bce_grad_logit(double p, double y) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  return p - y;
}

void check_batch(std::span<const Tensor> batch, std::span<const double> labels) {
  if (batch.size() != labels.size()) {
    throw ShapeError("batch has " + std::to_string(batch.size()) + " samples but " + std::to_string(labels.size()) +
                     " labels");
  }
  if (batch.empty()) throw ShapeError("empty batch");
}

}  // namespace

double bce_loss(std::span<const double> probs, std::span<const double> labels) {
  if (probs.size() != labels.size()) throw ShapeError("bce_loss: length mismatch");
  if (probs.empty()) throw ShapeError("bce_loss: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) sum += sample_bce(probs[i], labels[i]);
  return sum / static_cast<double>(probs.size());
}

void backward_sample(const Model& model, const ForwardCache& cache, double grad_logit, GradientSet& grads) {
  const auto& specs = model.specs();
  const std::size_t n_axial = model.axial_count();
  const std::size_t fc_w = 6 * n_axial;

  Tensor& gw = grads.grads[fc_w];
  for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += grad_logit * cache.fc_input[k];
  grads.grads[fc_w + 1][0] += grad_logit;

  const auto& shapes = model.layer_shapes();
  const auto input_shape_of = [&](std::size_t i) { return i == 0 ? model.input_shape() : shapes[i - 1]; };

  // Gradient w.r.t. the flattened FC input before dropout.
  const std::size_t last = specs.size() - 1;
  Tensor g(input_shape_of(last));
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = grad_logit * model.fc_weight()[k] * cache.dropout_scale[k];

  std::size_t axial_index = n_axial;
  std::size_t pool_index = cache.pool_argmax.size();
  for (std::size_t i = last; i-- > 0;) {
    switch (specs[i].kind) {
      case LayerKind::kMaxPool: {
        const auto& argmax = cache.pool_argmax[--pool_index];
        Tensor dx(input_shape_of(i));
        for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += g[o];
        g = std::move(dx);
        break;
      }
      case LayerKind::kAxial: {
        --axial_index;
        const std::size_t base = 6 * axial_index;
        AxialLayerGrads lg{std::move(grads.grads[base]),     std::move(grads.grads[base + 1]),
                           std::move(grads.grads[base + 2]), std::move(grads.grads[base + 3]),
                           std::move(grads.grads[base + 4]), std::move(grads.grads[base + 5])};
        g = axial_attention_3d_backward(g, model.axial(axial_index), cache.axial[axial_index], lg);
        grads.grads[base] = std::move(lg.w_q);
        grads.grads[base + 1] = std::move(lg.r_z);
        grads.grads[base + 2] = std::move(lg.r_h);
        grads.grads[base + 3] = std::move(lg.r_w);
        grads.grads[base + 4] = std::move(lg.norm_gain);
        grads.grads[base + 5] = std::move(lg.norm_bias);
        break;
      }
      case LayerKind::kFc:
        break;
    }
  }
}

BackwardResult backward(const Model& model, std::span<const Tensor> batch, std::span<const double> labels, Mode mode,
                        DropoutKey key, double loss_scale) {
  check_batch(batch, labels);
  BackwardResult r;
  r.grads = GradientSet::zeros_like(model);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  ForwardCache cache;
  double sum = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    DropoutKey k = key;
    k.sample_id = key.sample_id + b;
    const double p = forward_sample(model, batch[b], mode, k, &cache);
    r.probs.push_back(p);
    sum += sample_bce(p, labels[b]);
    backward_sample(model, cache, loss_scale * inv_b * sample_bce_grad_logit(p, labels[b]), r.grads);
  }
  r.loss = loss_scale * sum * inv_b;
  if (!std::isfinite(r.loss)) throw NumericError("non-finite loss");
  if (!r.grads.all_finite()) throw NumericError("non-finite gradient");
  return r;
}

double batch_loss(const Model& model, std::span<const Tensor> batch, std::span<const double> labels, Mode mode,
                  DropoutKey key) {
  check_batch(batch, labels);
  std::vector<double> probs;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    DropoutKey k = key;
    k.sample_id = key.sample_id + b;
    probs.push_back(forward_sample(model, batch[b], mode, k));
  }
  return bce_loss(probs, labels);
}

GradCheckReport grad_check(const Model& model, std::span<const Tensor> batch, std::span<const double> labels,
                           double eps, Mode mode, DropoutKey key, std::size_t worst_count) {
  const BackwardResult analytic = backward(model, batch, labels, mode, key);
  Model probe = model;
  GradCheckReport report;
  std::vector<GradCheckEntry> all;
  std::size_t pi = 0;
  for (auto& [name, tensor] : probe.parameters()) {
    const Tensor& g = analytic.grads.grads[pi++];
    const std::size_t dot = name.find('.');
    const std::string kind = name.rfind("axial", 0) == 0 ? name.substr(dot + 1) : name;
    double kind_max = 0.0;
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      const double orig = (*tensor)[i];
      (*tensor)[i] = orig + eps;
      const double plus = batch_loss(probe, batch, labels, mode, key);
      (*tensor)[i] = orig - eps;
      const double minus = batch_loss(probe, batch, labels, mode, key);
      (*tensor)[i] = orig;
      GradCheckEntry e{name, i, g[i], (plus - minus) / (2.0 * eps), 0.0};
      e.rel_error = std::abs(e.analytic - e.numeric) / std::max(1e-8, std::abs(e.analytic) + std::abs(e.numeric));
      kind_max = std::max(kind_max, e.rel_error);
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      all.push_back(std::move(e));
    }
    auto it = std::find_if(report.by_kind.begin(), report.by_kind.end(), [&](const auto& p) { return p.first == kind; });
    if (it == report.by_kind.end()) {
      report.by_kind.emplace_back(kind, kind_max);
    } else {
      it->second = std::max(it->second, kind_max);
    }
  }
  report.checked = all.size();
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.rel_error > b.rel_error; });
  all.resize(std::min(all.size(), worst_count));
  report.worst = std::move(all);
  return report;
}

OptimizerState OptimizerState::for_model(const Model& model, double lr, double fc_weight_decay) {
  OptimizerState s;
  s.lr = lr;
  for (const auto& [name, t] : model.parameters()) {
    s.m.emplace_back(t->shape());
    s.v.emplace_back(t->shape());
    s.weight_decay.push_back(name == "fc.weight" ? fc_weight_decay : 0.0);
  }
  return s;
}

void adam_step(OptimizerState& state, std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size() ||
      params.size() != state.weight_decay.size()) {
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.m[i].shape()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const double wd = state.weight_decay[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = grads[i][k] + wd * p[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void adam_step(OptimizerState& state, Model& model, const GradientSet& grads) {
  std::vector<Tensor*> ptrs;
  for (auto& [name, t] : model.parameters()) ptrs.push_back(t);
  adam_step(state, ptrs, grads.grads);
}

std::size_t Schedule::total_epochs() const {
  std::size_t n = 0;
  for (const auto& p : phases) n += p.epochs;
  return n;
}

void Schedule::validate() const {
  if (phases.empty()) throw ConfigError("schedule has no phases");
  for (const auto& p : phases) {
    if (p.epochs == 0) throw ConfigError("schedule phase with zero epochs");
    if (!(p.lr >= 0.0) || !std::isfinite(p.lr)) throw ConfigError("schedule learning rate must be finite and >= 0");
  }
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(fc_weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
}

std::string format_epoch_log(const EpochLog& e) {
  const auto field = [](double v) {
    if (std::isnan(v)) return std::string("undef");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  return std::to_string(e.epoch) + "\t" + field(e.lr) + "\t" + field(e.mean_loss) + "\t" + field(e.train_accuracy) +
         "\t" + field(e.val_accuracy) + "\t" + field(e.val_auc);
}

std::vector<double> predict(const Model& model, std::span<const Sample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(forward_sample(model, s.as_input(), Mode::kEval, {}));
  return out;
}

TrainResult train(Model& model, std::span<const Sample> train_set, std::span<const Sample> val,
                  const Schedule& schedule, const TrainOptions& options) {
  schedule.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");

  TrainResult result;
  result.optimizer = OptimizerState::for_model(model, schedule.phases.front().lr, schedule.fc_weight_decay);
  OptimizerState& opt = result.optimizer;
  GradientSet grads = GradientSet::zeros_like(model);
  ForwardCache cache;

  std::vector<std::size_t> order(train_set.size());
  std::size_t epoch = 0;
  for (std::size_t phase = 0; phase < schedule.phases.size(); ++phase) {
    opt.lr = schedule.phases[phase].lr;
    for (std::size_t pe = 0; pe < schedule.phases[phase].epochs; ++pe) {
      ++epoch;
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle(derive_seed(options.seed, "shuffle", epoch));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

      double loss_sum = 0.0;
      std::size_t correct = 0;
      for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
        const std::size_t end = std::min(order.size(), start + schedule.batch_size);
        const double inv_b = 1.0 / static_cast<double>(end - start);
        for (auto& g : grads.grads) std::fill(g.data().begin(), g.data().end(), 0.0);
        for (std::size_t j = start; j < end; ++j) {
          const Sample& s = train_set[order[j]];
          const double y = s.target();
          const double p =
              forward_sample(model, s.as_input(), Mode::kTrain, {options.seed, epoch, order[j]}, &cache);
          loss_sum += sample_bce(p, y);
          correct += (p >= kDecisionThreshold) == (y == 1.0);
          backward_sample(model, cache, inv_b * sample_bce_grad_logit(p, y), grads);
        }
        if (!grads.all_finite()) throw NumericError("non-finite gradient in epoch " + std::to_string(epoch));
        adam_step(opt, model, grads);
      }

      EpochLog log;
      log.epoch = epoch;
      log.lr = opt.lr;
      log.mean_loss = loss_sum / static_cast<double>(order.size());
      log.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
      log.val_accuracy = std::numeric_limits<double>::quiet_NaN();
      log.val_auc = std::numeric_limits<double>::quiet_NaN();
      if (!val.empty()) {
        const auto scores = predict(model, val);
        std::vector<double> labels;
        for (const auto& s : val) labels.push_back(s.target());
        log.val_accuracy = confusion_metrics(scores, labels).accuracy;
        log.val_auc = auc(scores, labels).value_or(std::numeric_limits<double>::quiet_NaN());
      }
      result.log.push_back(log);
      if (options.on_epoch) options.on_epoch(log);
    }
    if (options.on_checkpoint) options.on_checkpoint(phase, model);
  }
  return result;
}

}  // namespace axial
