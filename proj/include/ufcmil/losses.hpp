#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ufcmil/autodiff.hpp"
#include "ufcmil/model.hpp"

namespace ufcmil {

struct LossConfig {
  double delta = 0.49;  // PW margin, must stay below 0.5

  void validate() const {
    if (!(delta > 0.0 && delta < 0.5)) throw ConfigError("delta must lie in (0, 0.5)");
  }
};

enum class Phase { kMain, kCalibration };

inline std::vector<double> one_hot(int label, std::size_t classes = 2) {
  std::vector<double> t(classes, 0.0);
  t.at(static_cast<std::size_t>(label)) = 1.0;
  return t;
}

/// −Σ_c target[c]·log p[c] for a 1×C prediction (log clamped at 1e-6).
template <class T>
Var<T> ce_loss(Var<T> p_agg, const std::vector<double>& target) {
  const auto& p = p_agg.value();
  if (p.numel() != target.size()) throw ShapeError("ce_loss: target length mismatch");
  double ps = 0, ts = 0;
  for (std::size_t c = 0; c < target.size(); ++c) {
    ps += p[c];
    ts += target[c];
    if (p[c] < 0 || target[c] < 0)
      throw std::invalid_argument("ce_loss: negative probability");
  }
  if (std::abs(ps - 1.0) > 1e-4 || std::abs(ts - 1.0) > 1e-6)
    throw std::invalid_argument("ce_loss: prediction and target must be distributions");
  BasicTensor<T> tt(p.shape());
  for (std::size_t c = 0; c < target.size(); ++c) tt[c] = static_cast<T>(target[c]);
  Var<T> tv = p_agg.tape().constant(std::move(tt));
  return ad::scale(ad::sum_all(ad::mul(tv, ad::log(p_agg))), -1.0);
}

/// Patch-wise loss on the positive-class column of p_inst (n×C):
///   label 0: mean_n ReLU(p_n[1] − δ)          every instance must stay ≤ δ
///   label 1: ReLU(1 − δ − max_n p_n[1])       at least one instance ≥ 1 − δ
template <class T>
Var<T> pw_loss(Var<T> p_inst, int label, double delta) {
  if (p_inst.rows() == 0 || p_inst.value().rank() != 2)
    throw std::invalid_argument("pw_loss: empty instance set");
  Var<T> pos = ad::slice_cols(p_inst, 1, 2);
  if (label == 0) return ad::mean_all(ad::relu(ad::add_scalar(pos, -delta)));
  if (label == 1)
    return ad::sum_all(ad::relu(ad::add_scalar(ad::scale(ad::max_axis(pos, 0), -1.0), 1.0 - delta)));
  throw std::invalid_argument("pw_loss: label must be 0 or 1");
}

/// Joint objective for one sample, summed over resolutions.
///   main phase:        Σ_r CE(p_aggʳ, onehot(Y)) + PW(p_instʳ, Y, δ)
///   calibration phase: Σ_r CE(p_aggʳ, Ỹʳ)
/// `smoothed` holds one target distribution per resolution (calibration only).
template <class T>
Var<T> total_loss(const model::ForwardVars<T>& fv, int label, double delta, Phase phase,
                  const std::vector<std::vector<double>>& smoothed = {}) {
  if (fv.levels.empty()) throw std::invalid_argument("total_loss: no resolution outputs");
  if (phase == Phase::kCalibration && smoothed.size() != fv.levels.size())
    throw std::invalid_argument("total_loss: missing smoothed target for a resolution");
  std::vector<Var<T>> terms;
  for (std::size_t r = 0; r < fv.levels.size(); ++r) {
    const auto& lv = fv.levels[r];
    if (!lv.p_agg.valid() || !lv.p_inst.valid())
      throw std::invalid_argument("total_loss: missing resolution output");
    if (phase == Phase::kMain) {
      terms.push_back(ce_loss(lv.p_agg, one_hot(label, lv.p_agg.numel())));
      terms.push_back(pw_loss(lv.p_inst, label, delta));
    } else {
      terms.push_back(ce_loss(lv.p_agg, smoothed[r]));
    }
  }
  return ad::sum_all(ad::concat_rows(terms));
}

}  // namespace ufcmil
