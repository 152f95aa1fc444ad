#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ufcmil {

/// One sample's binary class distribution and ground truth.
struct Prediction {
  std::array<double, 2> probs{0.5, 0.5};
  int label = 0;
};

/// Argmax with ties broken toward the lowest class index.
int predicted_class(const Prediction& p);
double confidence(const Prediction& p);

struct ReliabilityBin {
  double lo = 0.0;  // exclusive (except bin 1 also holds confidence 0)
  double hi = 0.0;  // inclusive
  std::size_t count = 0;
  double acc = 0.0;
  double conf = 0.0;
};

struct ReliabilityBins {
  std::vector<ReliabilityBin> bins;
  std::size_t total = 0;
};

/// 0-based bin of a confidence under M equal-width bins over (0, 1]; bin m
/// covers (m/M, (m+1)/M] and confidence 0 falls in the first bin.
std::size_t confidence_bin(double conf, std::size_t bins);

ReliabilityBins reliability_bins(std::span<const Prediction> preds, std::size_t bins = 15);

/// Σ_m |B_m|/N · |Acc(B_m) − Conf(B_m)|.
double ece(std::span<const Prediction> preds, std::size_t bins = 15);

double accuracy(std::span<const Prediction> preds);

/// Recall among the ⌈k·N/100⌉ most confident samples (stable order on ties).
/// A subset without actual positives has recall 1.
double recall_at_k(std::span<const Prediction> preds, double k_percent);

/// Subset size used by recall_at_k.
std::size_t top_k_count(std::size_t n, double k_percent);

/// Mann–Whitney AUC on the positive-class probability, ties counted ½.
/// Throws std::invalid_argument when only one class is present.
double auc(std::span<const Prediction> preds);

struct EntropySummary {
  std::size_t resolution = 0;  // 1-based
  double mean = 0.0;
  double std = 0.0;
};

struct EvalReport {
  double ece = 0.0;
  double accuracy = 0.0;
  std::optional<double> auc;  // absent for single-class sets
  std::map<std::string, double> recall_at;
  ReliabilityBins bins;
  std::vector<EntropySummary> entropy_summary;
};

/// `patch_entropy[r]` pools every patch entropy observed at resolution r+1.
EvalReport build_report(std::span<const Prediction> preds,
                        const std::vector<std::vector<double>>& patch_entropy,
                        std::size_t bins = 15, const std::vector<double>& ks = {10.0, 30.0});

std::string report_json(const EvalReport& report);

/// lo,hi,count,acc,conf per bin.
std::string reliability_csv(const EvalReport& report);

}  // namespace ufcmil
