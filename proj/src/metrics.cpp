#include "ufcmil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ufcmil {

int predicted_class(const Prediction& p) { return p.probs[1] > p.probs[0] ? 1 : 0; }

double confidence(const Prediction& p) { return std::max(p.probs[0], p.probs[1]); }

std::size_t confidence_bin(double conf, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("bin count must be at least 1");
  if (!(conf >= 0.0 && conf <= 1.0)) throw std::invalid_argument("confidence outside [0, 1]");
  if (conf <= 0.0) return 0;
  // ⌈conf·M⌉, then nudged so that hi = m/M is an inclusive upper edge under
  // the same double arithmetic used to report the edges.
  auto m = static_cast<std::size_t>(std::ceil(conf * double(bins)));
  m = std::clamp<std::size_t>(m, 1, bins);
  while (m > 1 && conf <= double(m - 1) / double(bins)) --m;
  while (m < bins && conf > double(m) / double(bins)) ++m;
  return m - 1;
}

ReliabilityBins reliability_bins(std::span<const Prediction> preds, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("bin count must be at least 1");
  ReliabilityBins out;
  out.total = preds.size();
  out.bins.resize(bins);
  std::vector<double> correct(bins, 0.0), conf_sum(bins, 0.0);
  for (const auto& p : preds) {
    const double c = confidence(p);
    const std::size_t b = confidence_bin(c, bins);
    ++out.bins[b].count;
    conf_sum[b] += c;
    correct[b] += predicted_class(p) == p.label ? 1.0 : 0.0;
  }
  for (std::size_t m = 0; m < bins; ++m) {
    auto& b = out.bins[m];
    b.lo = double(m) / double(bins);
    b.hi = double(m + 1) / double(bins);
    if (b.count) {
      b.acc = correct[m] / double(b.count);
      b.conf = conf_sum[m] / double(b.count);
    }
  }
  return out;
}

double ece(std::span<const Prediction> preds, std::size_t bins) {
  if (preds.empty()) throw std::invalid_argument("ece: no predictions");
  const auto rb = reliability_bins(preds, bins);
  double e = 0.0;
  for (const auto& b : rb.bins)
    if (b.count) e += double(b.count) / double(rb.total) * std::abs(b.acc - b.conf);
  return e;
}

double accuracy(std::span<const Prediction> preds) {
  if (preds.empty()) throw std::invalid_argument("accuracy: no predictions");
  std::size_t hits = 0;
  for (const auto& p : preds) hits += predicted_class(p) == p.label ? 1 : 0;
  return double(hits) / double(preds.size());
}

std::size_t top_k_count(std::size_t n, double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0))
    throw std::invalid_argument("recall_at_k: k must lie in (0, 100]");
  // Guard against k·N/100 landing a hair above an integer.
  const double exact = k_percent * double(n) / 100.0;
  auto count = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  return std::clamp<std::size_t>(count, 1, n);
}

double recall_at_k(std::span<const Prediction> preds, double k_percent) {
  if (preds.empty()) throw std::invalid_argument("recall_at_k: no predictions");
  const std::size_t take = top_k_count(preds.size(), k_percent);
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return confidence(preds[a]) > confidence(preds[b]);
  });
  std::size_t tp = 0, fn = 0;
  for (std::size_t i = 0; i < take; ++i) {
    const auto& p = preds[order[i]];
    if (p.label != 1) continue;
    (predicted_class(p) == 1 ? tp : fn)++;
  }
  return tp + fn == 0 ? 1.0 : double(tp) / double(tp + fn);
}

double auc(std::span<const Prediction> preds) {
  std::vector<std::pair<double, int>> scored;
  std::size_t n_pos = 0;
  for (const auto& p : preds) {
    scored.emplace_back(p.probs[1], p.label);
    n_pos += p.label == 1 ? 1 : 0;
  }
  const std::size_t n_neg = preds.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc: both classes required");
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // Midranks over tie groups.
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < scored.size();) {
    std::size_t j = i;
    while (j < scored.size() && scored[j].first == scored[i].first) ++j;
    const double midrank = (double(i + 1) + double(j)) / 2.0;
    for (std::size_t q = i; q < j; ++q)
      if (scored[q].second == 1) pos_rank_sum += midrank;
    i = j;
  }
  const double u = pos_rank_sum - double(n_pos) * double(n_pos + 1) / 2.0;
  return u / (double(n_pos) * double(n_neg));
}

EvalReport build_report(std::span<const Prediction> preds,
                        const std::vector<std::vector<double>>& patch_entropy,
                        std::size_t bins, const std::vector<double>& ks) {
  EvalReport r;
  r.ece = ece(preds, bins);
  r.accuracy = accuracy(preds);
  try {
    r.auc = auc(preds);
  } catch (const std::invalid_argument&) {
    r.auc.reset();
  }
  for (double k : ks) {
    std::ostringstream key;
    key << k;
    r.recall_at[key.str()] = recall_at_k(preds, k);
  }
  r.bins = reliability_bins(preds, bins);
  for (std::size_t lvl = 0; lvl < patch_entropy.size(); ++lvl) {
    const auto& h = patch_entropy[lvl];
    EntropySummary s;
    s.resolution = lvl + 1;
    if (!h.empty()) {
      double sum = 0;
      for (double v : h) sum += v;
      s.mean = sum / double(h.size());
      double var = 0;
      for (double v : h) var += (v - s.mean) * (v - s.mean);
      s.std = std::sqrt(var / double(h.size()));
    }
    r.entropy_summary.push_back(s);
  }
  return r;
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["ece"] = r.ece;
  j["accuracy"] = r.accuracy;
  j["auc"] = r.auc ? nlohmann::ordered_json(*r.auc) : nlohmann::ordered_json(nullptr);
  j["recall_at"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.recall_at) j["recall_at"][k] = v;
  j["bins"] = nlohmann::ordered_json::array();
  for (const auto& b : r.bins.bins)
    j["bins"].push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"acc", b.acc},
                         {"conf", b.conf}});
  j["entropy_summary"] = nlohmann::ordered_json::array();
  for (const auto& s : r.entropy_summary)
    j["entropy_summary"].push_back({{"resolution", s.resolution}, {"mean", s.mean}, {"std", s.std}});
  return j.dump(2) + "\n";
}

std::string reliability_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "lo,hi,count,acc,conf\n";
  for (const auto& b : r.bins.bins)
    os << b.lo << ',' << b.hi << ',' << b.count << ',' << b.acc << ',' << b.conf << '\n';
  return os.str();
}

}  // namespace ufcmil
