#include "ufcmil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ufcmil/losses.hpp"
#include "ufcmil/parallel.hpp"

namespace ufcmil {

SrlsSchedule TrainConfig::schedule() const {
  SrlsSchedule s = default_schedule(epochs);
  if (record_epoch) s.record_epoch = *record_epoch;
  return s;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  LossConfig{delta}.validate();
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in [0, 1)");
  if (accumulation == 0) throw ConfigError("accumulation window must be at least 1");
  schedule().validate();
}

double cosine_lr(double base, std::size_t epoch, std::size_t total) {
  if (total == 0) return base;
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * double(epoch) / double(total)));
}

namespace {

Params zeros_like(const Params& p) {
  Params z;
  for (const auto& [name, t] : p.entries()) z.add(name, Tensor(t.shape()));
  return z;
}

struct BagStep {
  Params grad;
  double loss = 0.0;
  bool correct = false;
};

}  // namespace

Trainer::Trainer(ModelConfig model, TrainConfig train, std::vector<MultiResBag> bags, Params init)
    : model_(model), train_(train), bags_(std::move(bags)), params_(std::move(init)) {
  model_.validate();
  train_.validate();
  check_params(params_, model_);
  if (bags_.empty()) throw DataError("training set is empty");
  for (const auto& b : bags_) {
    b.validate();
    if (b.num_levels() != model_.levels || b.dim() != model_.dim)
      throw DataError("bag '" + b.sample_id + "' does not match the model configuration");
  }
  m_ = zeros_like(params_);
  v_ = zeros_like(params_);
}

void Trainer::take_snapshot() {
  std::vector<ForwardOutput> outs(bags_.size());
  parallel_for(bags_.size(), [&](std::size_t i) { outs[i] = predict(params_, bags_[i], model_); });
  snapshot_passes_ += bags_.size();
  std::vector<std::string> ids;
  for (const auto& b : bags_) ids.push_back(b.sample_id);
  stats_ = record_entropy_stats(outs, ids, train_.alpha);
}

void Trainer::adam_step(const Params& grad, double lr) {
  ++step_;
  const double bc1 = 1.0 - std::pow(train_.beta1, double(step_));
  const double bc2 = 1.0 - std::pow(train_.beta2, double(step_));
  for (std::size_t e = 0; e < params_.size(); ++e) {
    auto& p = params_.entries()[e].second;
    auto& m = m_.entries()[e].second;
    auto& v = v_.entries()[e].second;
    const auto& g = grad.entries()[e].second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g[i];
      const double mi = train_.beta1 * m[i] + (1.0 - train_.beta1) * gi;
      const double vi = train_.beta2 * v[i] + (1.0 - train_.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p[i] = static_cast<float>(double(p[i]) -
                                lr * (mi / bc1) / (std::sqrt(vi / bc2) + train_.adam_eps));
    }
  }
  if (!std::all_of(params_.entries().begin(), params_.entries().end(),
                   [](const auto& e) { return e.second.all_finite(); }))
    throw NumericError("non-finite parameter after optimizer step " + std::to_string(step_));
}

void Trainer::run_epoch() {
  if (done()) return;
  const auto schedule = train_.schedule();
  if (train_.srls && epoch_ == schedule.record_epoch && !stats_) take_snapshot();
  const bool calibrating = train_.srls && stats_ && epoch_ >= schedule.record_epoch;
  const Phase phase = calibrating ? Phase::kCalibration : Phase::kMain;
  const double lr = cosine_lr(train_.lr, epoch_, train_.epochs);

  std::vector<std::size_t> order(bags_.size());
  std::iota(order.begin(), order.end(), 0);
  KeyedRng shuffle_rng{train_.seed, static_cast<std::uint64_t>(Stream::kShuffle), epoch_};
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  double loss_sum = 0.0;
  std::size_t hits = 0;
  const std::size_t window = train_.accumulation;
  std::vector<BagStep> steps(window);
  for (std::size_t start = 0; start < order.size(); start += window) {
    const std::size_t count = std::min(window, order.size() - start);
    parallel_for(count, [&](std::size_t w) {
      const std::size_t idx = order[start + w];
      const MultiResBag& bag = bags_[idx];
      Tape<float> tape;
      ParamVars<float> pv(tape, params_, true);
      ForwardOptions opt;
      opt.mode = Mode::kTrain;
      opt.deterministic_mask = false;
      opt.seed = train_.seed;
      opt.epoch = epoch_;
      opt.sample = idx;
      auto fv = model::forward_bag(tape, pv, bag, model_, opt);
      Var<float> loss = phase == Phase::kMain
                            ? total_loss(fv, bag.label, train_.delta, phase)
                            : total_loss(fv, bag.label, train_.delta, phase,
                                         stats_->targets(idx, bag.label));
      tape.backward(loss);
      steps[w].grad = pv.gradients(tape);
      steps[w].loss = loss.value().item();
      const auto& fp = fv.final_p.value();
      steps[w].correct = (fp[1] > fp[0] ? 1 : 0) == bag.label;
    });
    training_passes_ += count;
    // Merge in window order so the sum is independent of thread scheduling.
    Params grad = std::move(steps[0].grad);
    for (std::size_t w = 1; w < count; ++w)
      for (std::size_t e = 0; e < grad.size(); ++e) {
        auto& dst = grad.entries()[e].second;
        const auto& src = steps[w].grad.entries()[e].second;
        for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
      }
    for (std::size_t w = 0; w < count; ++w) {
      loss_sum += steps[w].loss;
      hits += steps[w].correct ? 1 : 0;
    }
    if (!std::isfinite(loss_sum))
      throw NumericError("non-finite training loss at epoch " + std::to_string(epoch_));
    adam_step(grad, lr);
  }
  log_.push_back({epoch_, lr, loss_sum / double(bags_.size()),
                  double(hits) / double(bags_.size()), calibrating ? "calibration" : "main"});
  ++epoch_;
}

void Trainer::run() {
  while (!done()) run_epoch();
}

Evaluation evaluate(const Params& params, const ModelConfig& config,
                    const std::vector<MultiResBag>& bags) {
  Evaluation ev;
  ev.outputs.resize(bags.size());
  parallel_for(bags.size(), [&](std::size_t i) { ev.outputs[i] = predict(params, bags[i], config); });
  for (std::size_t i = 0; i < bags.size(); ++i) {
    Prediction p;
    p.probs = {ev.outputs[i].final_p[0], ev.outputs[i].final_p[1]};
    p.label = bags[i].label;
    ev.predictions.push_back(p);
  }
  return ev;
}

std::vector<std::vector<double>> pooled_entropy(const std::vector<ForwardOutput>& outputs) {
  std::vector<std::vector<double>> pooled;
  for (const auto& o : outputs) {
    if (pooled.size() < o.levels.size()) pooled.resize(o.levels.size());
    for (std::size_t r = 0; r < o.levels.size(); ++r)
      for (float h : o.levels[r].entropy) pooled[r].push_back(h);
  }
  return pooled;
}

}  // namespace ufcmil
