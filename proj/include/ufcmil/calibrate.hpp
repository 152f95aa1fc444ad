#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ufcmil/model.hpp"

namespace ufcmil {

// --- Sample- and resolution-wise label smoothing -----------------------------

/// Population mean and standard deviation (divide by n).
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(std::span<const float> values);

/// (v − min)/(max − min); a constant set maps to all zeros.
std::vector<double> minmax_scale(std::span<const double> values);

/// ε = ½(M̃ + S̃)·α.
double smoothing_factor(double scaled_mean, double scaled_std, double alpha);

/// (1 − ε)·onehot(Y) + ε/C.
std::vector<double> smoothed_label(int label, double epsilon, std::size_t classes = 2);

/// Dataset-constant label smoothing baseline.
std::vector<double> uniform_smooth(int label, double epsilon, std::size_t classes = 2);

struct EntropyStats {
  std::string sample_id;
  std::size_t resolution = 0;  // 1-based
  double mean = 0.0;
  double std = 0.0;
  double scaled_mean = 0.0;
  double scaled_std = 0.0;
  double epsilon = 0.0;
};

class EntropyStatsTable {
 public:
  EntropyStatsTable() = default;
  EntropyStatsTable(std::size_t samples, std::size_t levels, double alpha,
                    std::vector<EntropyStats> rows);

  std::size_t samples() const { return samples_; }
  std::size_t levels() const { return levels_; }
  double alpha() const { return alpha_; }
  const std::vector<EntropyStats>& rows() const { return rows_; }
  /// `level` is 0-based.
  const EntropyStats& at(std::size_t sample, std::size_t level) const {
    return rows_.at(sample * levels_ + level);
  }

  /// Smoothed target per resolution for one sample.
  std::vector<std::vector<double>> targets(std::size_t sample, int label) const;

  /// sample_id,resolution,mean,std,scaled_mean,scaled_std,epsilon
  std::string to_csv() const;

 private:
  std::size_t samples_ = 0;
  std::size_t levels_ = 0;
  double alpha_ = 0.0;
  std::vector<EntropyStats> rows_;
};

/// Per-(sample, resolution) entropy statistics from one snapshot pass, min-max
/// scaled across samples within each resolution.
EntropyStatsTable record_entropy_stats(std::span<const ForwardOutput> outputs,
                                       std::span<const std::string> sample_ids, double alpha);

struct SrlsSchedule {
  std::size_t total_epochs = 0;
  std::size_t record_epoch = 0;  // snapshot taken before this epoch runs

  std::size_t calibration_epochs() const { return total_epochs - record_epoch; }
  void validate() const;
};

/// Snapshot at 80% of training; calibrate for the remaining epochs.
SrlsSchedule default_schedule(std::size_t total_epochs);

// --- Temperature scaling baseline --------------------------------------------

std::vector<double> apply_temperature(std::span<const double> logits, double temperature);

/// Mean negative log-likelihood of softmax(logits/T).
double temperature_nll(std::span<const std::vector<double>> logits, std::span<const int> labels,
                       double temperature);

/// Golden-section search for T ∈ [0.05, 20] minimising validation NLL.
double temperature_fit(std::span<const std::vector<double>> logits, std::span<const int> labels,
                       double tolerance = 1e-4);

}  // namespace ufcmil
