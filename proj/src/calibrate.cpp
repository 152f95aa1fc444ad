#include "ufcmil/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ufcmil {

MeanStd mean_std(std::span<const float> values) {
  if (values.empty()) throw std::invalid_argument("mean_std: empty set");
  double sum = 0;
  for (float v : values) sum += v;
  const double mean = sum / double(values.size());
  double var = 0;
  for (float v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / double(values.size()))};
}

std::vector<double> minmax_scale(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (range <= 0.0) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
  return out;
}

double smoothing_factor(double scaled_mean, double scaled_std, double alpha) {
  return 0.5 * (scaled_mean + scaled_std) * alpha;
}

std::vector<double> smoothed_label(int label, double epsilon, std::size_t classes) {
  if (!(epsilon >= 0.0 && epsilon < 1.0))
    throw std::invalid_argument("smoothing factor must lie in [0, 1)");
  if (label < 0 || static_cast<std::size_t>(label) >= classes)
    throw std::invalid_argument("label out of range");
  std::vector<double> t(classes, epsilon / double(classes));
  t[static_cast<std::size_t>(label)] += 1.0 - epsilon;
  return t;
}

std::vector<double> uniform_smooth(int label, double epsilon, std::size_t classes) {
  return smoothed_label(label, epsilon, classes);
}

EntropyStatsTable::EntropyStatsTable(std::size_t samples, std::size_t levels, double alpha,
                                     std::vector<EntropyStats> rows)
    : samples_(samples), levels_(levels), alpha_(alpha), rows_(std::move(rows)) {
  if (rows_.size() != samples_ * levels_)
    throw std::invalid_argument("entropy table size mismatch");
}

std::vector<std::vector<double>> EntropyStatsTable::targets(std::size_t sample, int label) const {
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < levels_; ++r) out.push_back(smoothed_label(label, at(sample, r).epsilon));
  return out;
}

std::string EntropyStatsTable::to_csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "sample_id,resolution,mean,std,scaled_mean,scaled_std,epsilon\n";
  for (const auto& s : rows_)
    os << s.sample_id << ',' << s.resolution << ',' << s.mean << ',' << s.std << ','
       << s.scaled_mean << ',' << s.scaled_std << ',' << s.epsilon << '\n';
  return os.str();
}

EntropyStatsTable record_entropy_stats(std::span<const ForwardOutput> outputs,
                                       std::span<const std::string> sample_ids, double alpha) {
  if (outputs.empty()) throw std::invalid_argument("record_entropy_stats: empty dataset");
  if (sample_ids.size() != outputs.size())
    throw std::invalid_argument("record_entropy_stats: one sample id per output required");
  const std::size_t levels = outputs.front().levels.size();
  std::vector<EntropyStats> rows(outputs.size() * levels);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].levels.size() != levels)
      throw std::invalid_argument("record_entropy_stats: inconsistent resolution count");
    for (std::size_t r = 0; r < levels; ++r) {
      const auto ms = mean_std(outputs[i].levels[r].entropy);
      auto& row = rows[i * levels + r];
      row.sample_id = sample_ids[i];
      row.resolution = r + 1;
      row.mean = ms.mean;
      row.std = ms.std;
    }
  }
  for (std::size_t r = 0; r < levels; ++r) {
    std::vector<double> means, stds;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      means.push_back(rows[i * levels + r].mean);
      stds.push_back(rows[i * levels + r].std);
    }
    const auto sm = minmax_scale(means);
    const auto ss = minmax_scale(stds);
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      auto& row = rows[i * levels + r];
      row.scaled_mean = sm[i];
      row.scaled_std = ss[i];
      row.epsilon = smoothing_factor(sm[i], ss[i], alpha);
    }
  }
  return EntropyStatsTable(outputs.size(), levels, alpha, std::move(rows));
}

void SrlsSchedule::validate() const {
  if (record_epoch > total_epochs)
    throw ConfigError("SRLS record epoch " + std::to_string(record_epoch) +
                      " exceeds total epochs " + std::to_string(total_epochs));
}

SrlsSchedule default_schedule(std::size_t total_epochs) {
  return {total_epochs, static_cast<std::size_t>(std::llround(0.8 * double(total_epochs)))};
}

std::vector<double> apply_temperature(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  std::vector<double> out(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (std::size_t c = 0; c < logits.size(); ++c) z += out[c] = std::exp((logits[c] - mx) / temperature);
  for (auto& v : out) v /= z;
  return out;
}

double temperature_nll(std::span<const std::vector<double>> logits, std::span<const int> labels,
                       double temperature) {
  double nll = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto& l = logits[i];
    const double mx = *std::max_element(l.begin(), l.end());
    double z = 0;
    for (double v : l) z += std::exp((v - mx) / temperature);
    nll -= (l[static_cast<std::size_t>(labels[i])] - mx) / temperature - std::log(z);
  }
  return nll / double(logits.size());
}

double temperature_fit(std::span<const std::vector<double>> logits, std::span<const int> labels,
                       double tolerance) {
  if (logits.empty() || logits.size() != labels.size())
    throw std::invalid_argument("temperature_fit: need one label per logit vector");
  const bool has0 = std::find(labels.begin(), labels.end(), 0) != labels.end();
  const bool has1 = std::find(labels.begin(), labels.end(), 1) != labels.end();
  if (!has0 || !has1) throw std::invalid_argument("temperature_fit: single-class validation set");
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0.05, b = 20.0;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = temperature_nll(logits, labels, c), fd = temperature_nll(logits, labels, d);
  while (b - a > tolerance) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = temperature_nll(logits, labels, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = temperature_nll(logits, labels, d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace ufcmil
