#include <algorithm>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "ufcmil/metrics.hpp"

using namespace ufcmil;
using doctest::Approx;

namespace {

// Binary prediction with the given confidence, right or wrong.
Prediction pred(double conf, bool correct, int label = 1) {
  Prediction p;
  p.label = label;
  const int cls = correct ? label : 1 - label;
  p.probs[cls] = conf;
  p.probs[1 - cls] = 1.0 - conf;
  return p;
}

Prediction scored(double p1, int label) {
  Prediction p;
  p.probs = {1.0 - p1, p1};
  p.label = label;
  return p;
}

}  // namespace

TEST_CASE("confidence bins") {
  CHECK(confidence_bin(0.0, 15) == 0);
  CHECK(confidence_bin(1.0, 15) == 14);
  CHECK(confidence_bin(0.5, 2) == 0);
  CHECK(confidence_bin(0.5000001, 2) == 1);
  CHECK(confidence_bin(0.2, 10) == 1);
}

TEST_CASE("expected calibration error") {
  std::vector<Prediction> perfect{pred(0.75, true), pred(0.75, true), pred(0.75, true),
                                  pred(0.75, false)};
  CHECK(ece(perfect, 10) == Approx(0.0).epsilon(1e-12));

  std::vector<Prediction> three{pred(0.9, true), pred(0.8, false), pred(0.6, true)};
  const auto bins = reliability_bins(three, 2);
  CHECK(bins.bins[0].count == 0);
  CHECK(bins.bins[1].count == 3);
  CHECK(bins.bins[1].acc == Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(bins.bins[1].conf == Approx(0.76667).epsilon(1e-5));
  CHECK(ece(three, 2) == Approx(0.1).epsilon(1e-12));

  std::vector<Prediction> one{pred(1.0, true)};
  CHECK(ece(one) == 0.0);
}

TEST_CASE("recall among the most confident") {
  std::vector<Prediction> right;
  for (int i = 0; i < 10; ++i) right.push_back(pred(0.55 + 0.04 * i, true, i % 2));
  CHECK(recall_at_k(right, 10) == 1.0);
  CHECK(recall_at_k(right, 30) == 1.0);

  std::vector<Prediction> ten;
  for (int i = 0; i < 7; ++i) ten.push_back(pred(0.6, i % 2 == 0, 0));
  ten.push_back(pred(0.95, true, 1));   // top 1: positive caught
  ten.push_back(pred(0.9, false, 0));   // top 2: negative
  ten.push_back(pred(0.85, false, 1));  // top 3: positive missed
  CHECK(top_k_count(10, 10) == 1);
  CHECK(top_k_count(10, 30) == 3);
  CHECK(recall_at_k(ten, 10) == 1.0);
  CHECK(recall_at_k(ten, 30) == 0.5);
}

TEST_CASE("AUC") {
  std::vector<Prediction> sep{scored(0.9, 1), scored(0.8, 1), scored(0.2, 0), scored(0.1, 0)};
  CHECK(auc(sep) == 1.0);
  std::vector<Prediction> ties{scored(0.5, 1), scored(0.5, 0), scored(0.5, 0)};
  CHECK(auc(ties) == 0.5);
  std::vector<Prediction> pairs{scored(0.9, 1), scored(0.4, 1), scored(0.5, 0)};
  CHECK(auc(pairs) == 0.5);
  std::vector<Prediction> single{scored(0.9, 1)};
  CHECK_THROWS(auc(single));

  // Pairwise-count oracle on random scores with deliberate ties.
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Prediction> ps;
    for (int i = 0; i < 40; ++i) ps.push_back(scored(double(rng() % 9) / 8.0, int(rng() % 2)));
    ps[0].label = 0;
    ps[1].label = 1;
    double wins = 0, total = 0;
    for (const auto& a : ps)
      for (const auto& b : ps) {
        if (a.label != 1 || b.label != 0) continue;
        wins += a.probs[1] > b.probs[1] ? 1.0 : a.probs[1] == b.probs[1] ? 0.5 : 0.0;
        total += 1;
      }
    CHECK(auc(ps) == Approx(wins / total).epsilon(1e-12));
  }
}

TEST_CASE("accuracy") {
  std::vector<Prediction> all{pred(0.7, true), pred(0.9, true, 0)};
  CHECK(accuracy(all) == 1.0);
  Prediction tie;
  tie.label = 0;
  CHECK(predicted_class(tie) == 0);
  std::vector<Prediction> ties{tie};
  CHECK(accuracy(ties) == 1.0);
  std::vector<Prediction> mixed{pred(0.7, true), pred(0.6, false), scored(0.5, 1)};
  CHECK(accuracy(mixed) == Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("evaluation report") {
  std::vector<Prediction> ps{scored(0.9, 1), scored(0.3, 0), scored(0.6, 0), scored(0.2, 1)};
  const std::vector<std::vector<double>> h{{1.0, 0.0}, {0.5, 0.5, 0.5}};
  const auto report = build_report(ps, h, 15);
  CHECK(report.accuracy == 0.5);
  REQUIRE(report.auc.has_value());
  CHECK(*report.auc == 0.5);
  CHECK(report.entropy_summary.size() == 2);
  CHECK(report.entropy_summary[0].mean == 0.5);
  CHECK(report.entropy_summary[0].std == 0.5);
  CHECK(report.entropy_summary[1].std == 0.0);

  const std::string js = report_json(report);
  CHECK(js == report_json(build_report(ps, h, 15)));
  const auto j = nlohmann::json::parse(js);
  for (const char* key : {"ece", "accuracy", "auc", "recall_at", "bins", "entropy_summary"})
    CHECK(j.contains(key));
  CHECK(j["recall_at"].contains("10"));
  CHECK(j["recall_at"].contains("30"));
  CHECK(j["bins"].size() == 15);

  const std::string csv = reliability_csv(report);
  CHECK(csv.rfind("lo,hi,count,acc,conf\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 16);

  std::vector<Prediction> negatives{scored(0.2, 0), scored(0.4, 0)};
  CHECK(!build_report(negatives, {}, 15).auc.has_value());
}
