#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ufcmil/calibrate.hpp"
#include "ufcmil/metrics.hpp"
#include "ufcmil/model.hpp"

namespace ufcmil {

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double delta = 0.49;
  double alpha = 0.1;
  bool srls = false;
  /// Epoch before which the entropy snapshot is taken; unset → 80% of epochs.
  std::optional<std::size_t> record_epoch;
  std::uint64_t seed = 0;
  /// Bags whose gradients are summed per optimizer step.
  std::size_t accumulation = 1;
  /// Worker cap; 0 keeps the OpenMP default.
  int threads = 0;

  SrlsSchedule schedule() const;
  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;  // mean per-sample objective
  double accuracy = 0.0;
  std::string phase;  // "main" | "calibration"
};

/// Cosine annealing from `base` at epoch 0 toward 0 at `total`.
double cosine_lr(double base, std::size_t epoch, std::size_t total);

/// Adam with per-epoch cosine learning rate, the joint MIL objective and an
/// optional SRLS calibration phase. Copyable: a copy forks the full optimizer
/// state, so two runs can share a common prefix.
class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig train, std::vector<MultiResBag> bags, Params init);

  /// Runs the next epoch. At the record epoch (SRLS on) the entropy snapshot
  /// is taken first and the objective switches to smoothed-label CE.
  void run_epoch();
  void run();
  bool done() const { return epoch_ >= train_.epochs; }

  std::size_t epoch() const { return epoch_; }
  const Params& params() const { return params_; }
  const ModelConfig& model_config() const { return model_; }
  const TrainConfig& train_config() const { return train_; }
  const std::vector<EpochLog>& log() const { return log_; }
  const std::optional<EntropyStatsTable>& srls_stats() const { return stats_; }

  void set_srls(bool on) { train_.srls = on; }

  /// Forward passes spent on entropy snapshots (one per bag per snapshot).
  std::size_t snapshot_passes() const { return snapshot_passes_; }
  /// Forward passes spent on gradient steps.
  std::size_t training_passes() const { return training_passes_; }

 private:
  void take_snapshot();
  void adam_step(const Params& grad, double lr);

  ModelConfig model_;
  TrainConfig train_;
  std::vector<MultiResBag> bags_;
  Params params_;
  Params m_, v_;
  std::size_t step_ = 0;
  std::size_t epoch_ = 0;
  std::optional<EntropyStatsTable> stats_;
  std::vector<EpochLog> log_;
  std::size_t snapshot_passes_ = 0;
  std::size_t training_passes_ = 0;
};

struct Evaluation {
  std::vector<Prediction> predictions;
  std::vector<ForwardOutput> outputs;
};

/// Deterministic eval-mode predictions, parallel over bags.
Evaluation evaluate(const Params& params, const ModelConfig& config,
                    const std::vector<MultiResBag>& bags);

/// Pools patch entropies per resolution across evaluated bags.
std::vector<std::vector<double>> pooled_entropy(const std::vector<ForwardOutput>& outputs);

}  // namespace ufcmil
