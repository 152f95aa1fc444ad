#pragma once

// Multi-resolution attention MIL network with uncertainty-masked fusion.
//
// Per resolution r (coarsest first):
//   Z̃ʳ = SelfAttention([clsʳ; Zʳ])
//   r ≥ 2: Xʳ = CrossAttention(Fuse(mʳ⁻¹, Zʳ⁻¹, Z̃ʳ), Z̃ʳ), else Xʳ = Z̃ʳ
//   Fʳ = [cls row of Xʳ; patches + neighbour aggregate]
//   p_aggʳ = Head(Fʳ row 0), p_instʳ = Head(Fʳ rows 1..n)
//   Hʳ = entropy(p_instʳ), mʳ = GumbelMask(Hʳ)
// The sample prediction is the mean of p_aggʳ over resolutions.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ufcmil/autodiff.hpp"
#include "ufcmil/bag.hpp"
#include "ufcmil/params.hpp"
#include "ufcmil/rng.hpp"

namespace ufcmil {

struct ModelConfig {
  std::size_t dim = 16;
  std::size_t levels = 3;
  std::size_t hidden = 32;
  std::size_t classes = 2;
  std::size_t attention_heads = 1;
  double dropout_p = 0.5;
  double tau = 1.0;
  double gumbel_scale = 0.2;
  double mask_threshold = 0.5;
  bool eval_deterministic_mask = true;

  void validate() const;
};

enum class Mode { kTrain, kEval };

/// How the binary mask carries gradient.
enum class MaskGradient {
  kStraightThrough,  // hard mask forward, relaxed-probability gradient backward
  kSoft,             // relaxed probability forward and backward (smooth; for gradient checks)
};

struct ForwardOptions {
  Mode mode = Mode::kEval;
  /// Zero Gumbel noise. Eval mode honours ModelConfig::eval_deterministic_mask.
  bool deterministic_mask = true;
  MaskGradient mask_gradient = MaskGradient::kStraightThrough;
  /// Keys for dropout and Gumbel noise streams.
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t sample = 0;
  /// Make the raw coarse features entering the fusion step gradient leaves.
  bool track_fusion_sources = false;
  /// Per-level forced hard mask (tests); an empty inner vector means no override.
  std::vector<std::vector<std::uint8_t>> mask_override;
};

/// Plain-value results of one forward pass.
struct LevelOutput {
  std::vector<double> p_agg;                // C
  Tensor p_inst;                            // n_r × C
  std::vector<float> entropy;               // n_r, bits
  std::vector<std::uint8_t> mask;           // n_r
  std::vector<float> mask_probability;      // n_r, relaxed q
};

struct ForwardOutput {
  std::vector<LevelOutput> levels;
  std::vector<double> final_p;  // mean of p_agg over levels
};

std::string param_name(std::size_t level, const std::string& suffix);

/// Fresh parameters: d×d projections and TNAM weights U(−1/√d, 1/√d), head
/// weights U(−1/√fan_in, 1/√fan_in), class tokens and biases zero.
Params init_params(const ModelConfig& config, std::uint64_t seed);

/// Throws ConfigError unless names and shapes match init_params(config).
void check_params(const Params& params, const ModelConfig& config);

namespace model {

template <class T>
struct AttentionVars {
  Var<T> q, k, v, o;
};

template <class T>
AttentionVars<T> attention_vars(const ParamVars<T>& pv, std::size_t level,
                                const std::string& block) {
  return {pv[param_name(level, block + ".q")], pv[param_name(level, block + ".k")],
          pv[param_name(level, block + ".v")], pv[param_name(level, block + ".o")]};
}

/// query + softmax(Q Kᵀ/√d_h) V W_o with Q = query·W_q, K = context·W_k,
/// V = context·W_v, split into `heads` column groups.
template <class T>
Var<T> attend(Var<T> query, Var<T> context, const AttentionVars<T>& w, std::size_t heads) {
  if (query.cols() != context.cols())
    throw ShapeError("attention: query/context widths differ");
  const std::size_t d = query.cols();
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: heads must divide d");
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(double(dh));
  Var<T> q = ad::matmul(query, w.q);
  Var<T> k = ad::matmul(context, w.k);
  Var<T> v = ad::matmul(context, w.v);
  std::vector<Var<T>> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var<T> qh = heads == 1 ? q : ad::slice_cols(q, h * dh, (h + 1) * dh);
    Var<T> kh = heads == 1 ? k : ad::slice_cols(k, h * dh, (h + 1) * dh);
    Var<T> vh = heads == 1 ? v : ad::slice_cols(v, h * dh, (h + 1) * dh);
    Var<T> scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    outs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
  }
  Var<T> heads_out = heads == 1 ? outs.front() : ad::concat_cols(outs);
  return ad::add(query, ad::matmul(heads_out, w.o));
}

/// Prepends the class token and applies residual self-attention:
/// (n×d, 1×d) → (n+1)×d.
template <class T>
Var<T> attention_block(Var<T> features, Var<T> cls, const AttentionVars<T>& w,
                       std::size_t heads = 1) {
  if (cls.rows() != 1 || cls.cols() != features.cols())
    throw ShapeError("attention_block: class token must be 1×d");
  Var<T> x = ad::concat_rows<T>({cls, features});
  return attend(x, x, w, heads);
}

/// Fused rows as queries, Z̃ as keys and values, residual from the fused rows.
template <class T>
Var<T> cross_attention(Var<T> fused, Var<T> ztilde, const AttentionVars<T>& w,
                       std::size_t heads = 1) {
  if (fused.rows() != ztilde.rows())
    throw ShapeError("cross_attention: row counts differ");
  return attend(fused, ztilde, w, heads);
}

template <class T>
struct TnamVars {
  Var<T> w, at, as;
};

/// Gated neighbour scores e_k = wᵀ(tanh(A_t z_k) ⊙ σ(A_s z_k)), as n×1.
template <class T>
Var<T> tnam_scores(Var<T> patches, const TnamVars<T>& p) {
  Var<T> gate_t = ad::tanh(ad::matmul(patches, p.at));
  Var<T> gate_s = ad::sigmoid(ad::matmul(patches, p.as));
  return ad::matmul(ad::mul(gate_t, gate_s), p.w);
}

/// Row 0 (class token) passes through; patch rows become z̃_n + Σ_k α_{n,k} z̃_k.
template <class T>
Var<T> tnam_aggregate(Var<T> ztilde, const std::vector<std::vector<std::size_t>>& adj,
                      const TnamVars<T>& p) {
  const std::size_t n = ztilde.rows() - 1;
  if (adj.size() != n)
    throw ShapeError("tnam_aggregate: grid has " + std::to_string(adj.size()) +
                     " patches but features have " + std::to_string(n));
  Var<T> cls = ad::slice_rows(ztilde, 0, 1);
  Var<T> patches = ad::slice_rows(ztilde, 1, n + 1);
  Var<T> agg = ad::neighbor_aggregate(tnam_scores(patches, p), patches, adj);
  return ad::concat_rows<T>({cls, ad::add(patches, agg)});
}

/// Aggregation weights of patch n over its neighbourhood, in adjacency
/// order (empty for an isolated patch).
template <class T>
std::vector<double> tnam_weights(const BasicTensor<T>& patches,
                                 const std::vector<std::size_t>& neighborhood,
                                 const BasicTensor<T>& w, const BasicTensor<T>& at,
                                 const BasicTensor<T>& as) {
  const std::size_t d = patches.cols();
  std::vector<double> e;
  for (auto k : neighborhood) {
    double s = 0;
    for (std::size_t i = 0; i < at.cols(); ++i) {
      double ti = 0, si = 0;
      for (std::size_t j = 0; j < d; ++j) {
        ti += double(patches(k, j)) * at(j, i);
        si += double(patches(k, j)) * as(j, i);
      }
      s += double(w[i]) * std::tanh(ti) / (1.0 + std::exp(-si));
    }
    e.push_back(s);
  }
  if (e.empty()) return e;
  const double mx = *std::max_element(e.begin(), e.end());
  double z = 0;
  for (auto& v : e) z += (v = std::exp(v - mx));
  for (auto& v : e) v /= z;
  return e;
}

template <class T>
struct HeadVars {
  Var<T> w1, b1, w2, b2;
};

/// linear → ELU → dropout → linear → row softmax. Returns probabilities.
template <class T, class Uniform>
Var<T> reduce_head(Var<T> rows, const HeadVars<T>& h, double dropout_p, bool train,
                   Uniform&& uniform) {
  Var<T> hidden = ad::elu(ad::add_rowvec(ad::matmul(rows, h.w1), h.b1));
  hidden = ad::dropout(hidden, dropout_p, train, uniform);
  return ad::softmax_rows(ad::add_rowvec(ad::matmul(hidden, h.w2), h.b2));
}

/// Per-row probability clamp used by the entropy map.
inline constexpr double kProbFloor = 1e-6;

/// Patch entropies in bits, −Σ_c p log₂ p with p clamped to [1e-6, 1−1e-6],
/// returned as n×1.
template <class T>
Var<T> entropy_map(Var<T> probs) {
  const auto& p = probs.value();
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0;
    for (auto v : p.row(i)) s += v;
    if (std::abs(s - 1.0) > 1e-4)
      throw std::invalid_argument("entropy_map: row " + std::to_string(i) +
                                  " is not a probability vector");
  }
  Var<T> pc = ad::clamp(probs, kProbFloor, 1.0 - kProbFloor);
  return ad::scale(ad::sum_axis(ad::mul(pc, ad::log(pc)), 1), -1.0 / std::log(2.0));
}

template <class T>
struct MaskVars {
  Var<T> mask;                        // n×1 as used downstream
  Var<T> probability;                 // n×1 relaxed q
  std::vector<std::uint8_t> hard;     // n
};

/// Gumbel-softmax mask over {uncertain, certain}:
///   q_n = σ(((log H_n + g₁) − (log(1−H_n) + g₀)) / τ),  m_n = 1(q_n > threshold)
/// with g₀, g₁ ~ Gumbel(0, scale) drawn as −scale·ln(−ln u). `noise` holds the
/// n differences g₁ − g₀ (all zero in deterministic mode). The hard decision
/// is evaluated directly on H when the noise is zero, so that at threshold
/// 0.5 it is exactly H_n > 0.5.
template <class T>
MaskVars<T> gumbel_mask(Var<T> entropy, const std::vector<double>& noise, double tau,
                        double threshold, MaskGradient grad_mode,
                        const std::vector<std::uint8_t>& override_mask = {}) {
  const std::size_t n = entropy.numel();
  if (noise.size() != n) throw ShapeError("gumbel_mask: noise length mismatch");
  Tape<T>& tape = entropy.tape();
  Var<T> hc = ad::clamp(entropy, kProbFloor, 1.0 - kProbFloor);
  Var<T> log_ratio = ad::sub(ad::log(hc), ad::log(ad::add_scalar(ad::scale(hc, -1.0), 1.0)));
  BasicTensor<T> noise_t(hc.shape());
  bool any_noise = false;
  for (std::size_t i = 0; i < n; ++i) {
    noise_t[i] = static_cast<T>(noise[i]);
    any_noise = any_noise || noise[i] != 0.0;
  }
  Var<T> logits = ad::scale(ad::add(log_ratio, tape.constant(std::move(noise_t))), 1.0 / tau);
  Var<T> q = ad::sigmoid(logits);

  MaskVars<T> out;
  out.probability = q;
  out.hard.resize(n);
  const double logit_threshold = std::log(threshold) - std::log1p(-threshold);
  const double h_threshold = 1.0 / (1.0 + std::exp(-tau * logit_threshold));
  for (std::size_t i = 0; i < n; ++i) {
    const double h = std::clamp(double(hc.value()[i]), kProbFloor, 1.0 - kProbFloor);
    bool on;
    if (!any_noise) {
      on = threshold == 0.5 ? h > 0.5 : h > h_threshold;
    } else {
      on = (std::log(h) - std::log1p(-h) + noise[i]) / tau > logit_threshold;
    }
    out.hard[i] = on ? 1 : 0;
  }
  if (!override_mask.empty()) {
    if (override_mask.size() != n) throw ShapeError("gumbel_mask: override length mismatch");
    out.hard = override_mask;
  }
  if (grad_mode == MaskGradient::kSoft && override_mask.empty()) {
    out.mask = q;
  } else {
    BasicTensor<T> hard_t(hc.shape());
    for (std::size_t i = 0; i < n; ++i) hard_t[i] = out.hard[i] ? T{1} : T{0};
    out.mask = ad::straight_through(std::move(hard_t), q);
  }
  return out;
}

/// Differences g₁ − g₀ of two independent Gumbel(0, scale) draws per entry.
inline std::vector<double> gumbel_noise(std::size_t n, double scale, KeyedRng& rng) {
  std::vector<double> out(n);
  for (auto& v : out) {
    const double g1 = -scale * std::log(-std::log(rng.uniform_open()));
    const double g0 = -scale * std::log(-std::log(rng.uniform_open()));
    v = g1 - g0;
  }
  return out;
}

/// [cls; (1 − R(m)) ⊙ Z̃_patches + R(m ⊙ Z_coarse)] where R repeats each row
/// k times. `mask` is n_r×1, `coarse` n_r×d, `ztilde` (k·n_r + 1)×d.
template <class T>
Var<T> fuse_features(Var<T> mask, Var<T> coarse, Var<T> ztilde, std::size_t k) {
  const std::size_t n_coarse = coarse.rows();
  if (mask.numel() != n_coarse) throw ShapeError("fuse_features: mask length mismatch");
  if (ztilde.rows() != k * n_coarse + 1)
    throw ShapeError("fuse_features: branching mismatch (" + std::to_string(ztilde.rows() - 1) +
                     " fine patches for " + std::to_string(n_coarse) + " coarse, k=" +
                     std::to_string(k) + ")");
  Var<T> cls = ad::slice_rows(ztilde, 0, 1);
  Var<T> fine = ad::slice_rows(ztilde, 1, ztilde.rows());
  Var<T> rep_mask = ad::repeat_rows(mask, k);
  Var<T> kept = ad::sub(fine, ad::mul_rows(fine, rep_mask));
  Var<T> substituted = ad::repeat_rows(ad::mul_rows(coarse, mask), k);
  return ad::concat_rows<T>({cls, ad::add(kept, substituted)});
}

template <class T>
struct LevelVars {
  Var<T> p_agg;     // 1×C
  Var<T> p_inst;    // n×C
  Var<T> entropy;   // n×1
  MaskVars<T> mask;
  Var<T> fusion_source;  // coarse features used when fusing into the next level
};

template <class T>
struct ForwardVars {
  std::vector<LevelVars<T>> levels;
  Var<T> final_p;  // 1×C
};

template <class T>
ForwardVars<T> forward_bag(Tape<T>& tape, const ParamVars<T>& pv, const MultiResBag& bag,
                           const ModelConfig& cfg, const ForwardOptions& opt) {
  if (bag.num_levels() != cfg.levels)
    throw ShapeError("forward_bag: bag has " + std::to_string(bag.num_levels()) +
                     " levels, model expects " + std::to_string(cfg.levels));
  if (bag.dim() != cfg.dim)
    throw ShapeError("forward_bag: bag feature dim " + std::to_string(bag.dim()) +
                     " differs from model dim " + std::to_string(cfg.dim));
  const bool train = opt.mode == Mode::kTrain;
  const bool deterministic =
      train ? opt.deterministic_mask : (cfg.eval_deterministic_mask || opt.deterministic_mask);

  ForwardVars<T> out;
  std::vector<Var<T>> p_aggs;
  for (std::size_t r = 0; r < cfg.levels; ++r) {
    const std::size_t lvl = r + 1;
    const auto& level = bag.levels[r];
    Var<T> features = tape.constant(level.features.template cast<T>());
    Var<T> ztilde = attention_block(features, pv[param_name(lvl, "cls")],
                                    attention_vars(pv, lvl, "attn"), cfg.attention_heads);
    Var<T> x = ztilde;
    if (r > 0) {
      const auto& prev = out.levels.back();
      Var<T> fused = fuse_features(prev.mask.mask, prev.fusion_source, ztilde, bag.branching);
      x = cross_attention(fused, ztilde, attention_vars(pv, lvl, "xattn"), cfg.attention_heads);
    }
    TnamVars<T> tn{pv[param_name(lvl, "tnam.w")], pv[param_name(lvl, "tnam.at")],
                   pv[param_name(lvl, "tnam.as")]};
    Var<T> f = tnam_aggregate(x, adjacency(level), tn);

    HeadVars<T> hv{pv[param_name(lvl, "head.w1")], pv[param_name(lvl, "head.b1")],
                   pv[param_name(lvl, "head.w2")], pv[param_name(lvl, "head.b2")]};
    KeyedRng drop_rng{opt.seed, static_cast<std::uint64_t>(Stream::kDropout), opt.epoch,
                      opt.sample, lvl};
    auto uniform = [&drop_rng] { return drop_rng.uniform(); };
    Var<T> probs = reduce_head(f, hv, cfg.dropout_p, train, uniform);

    LevelVars<T> lv;
    lv.p_agg = ad::slice_rows(probs, 0, 1);
    lv.p_inst = ad::slice_rows(probs, 1, probs.rows());
    lv.entropy = entropy_map(lv.p_inst);
    std::vector<double> noise(level.num_patches(), 0.0);
    if (!deterministic) {
      KeyedRng g_rng{opt.seed, static_cast<std::uint64_t>(Stream::kGumbel), opt.epoch,
                     opt.sample, lvl};
      noise = gumbel_noise(level.num_patches(), cfg.gumbel_scale, g_rng);
    }
    static const std::vector<std::uint8_t> kNoOverride;
    const auto& ov = r < opt.mask_override.size() ? opt.mask_override[r] : kNoOverride;
    lv.mask = gumbel_mask(lv.entropy, noise, cfg.tau, cfg.mask_threshold, opt.mask_gradient, ov);
    if (r + 1 < cfg.levels) {
      lv.fusion_source = opt.track_fusion_sources
                             ? tape.leaf(level.features.template cast<T>(), true)
                             : features;
    }
    p_aggs.push_back(lv.p_agg);
    out.levels.push_back(std::move(lv));
  }
  out.final_p = ad::mean_axis(ad::concat_rows(p_aggs), 0);
  return out;
}

}  // namespace model

/// Plain-value copy of a taped forward pass.
template <class T>
ForwardOutput extract_output(const model::ForwardVars<T>& fv) {
  ForwardOutput out;
  for (const auto& lv : fv.levels) {
    LevelOutput lo;
    for (auto v : lv.p_agg.value().data()) lo.p_agg.push_back(double(v));
    lo.p_inst = lv.p_inst.value().template cast<float>();
    for (auto v : lv.entropy.value().data()) lo.entropy.push_back(float(v));
    lo.mask = lv.mask.hard;
    for (auto v : lv.mask.probability.value().data()) lo.mask_probability.push_back(float(v));
    out.levels.push_back(std::move(lo));
  }
  for (auto v : fv.final_p.value().data()) out.final_p.push_back(double(v));
  return out;
}

/// Evaluation-mode forward pass returning plain values.
ForwardOutput predict(const Params& params, const MultiResBag& bag, const ModelConfig& config,
                      ForwardOptions options = {});

}  // namespace ufcmil
