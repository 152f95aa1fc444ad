#include "ufcmil/model.hpp"

namespace ufcmil {

void ModelConfig::validate() const {
  if (dim == 0 || levels == 0 || hidden == 0) throw ConfigError("model dimensions must be positive");
  if (classes != 2) throw ConfigError("only binary classification (C = 2) is supported");
  if (attention_heads == 0 || dim % attention_heads != 0)
    throw ConfigError("attention_heads must divide the feature dimension");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0))
    throw ConfigError("mask_threshold must lie in (0, 1)");
  if (!(gumbel_scale >= 0.0)) throw ConfigError("gumbel_scale must be non-negative");
}

std::string param_name(std::size_t level, const std::string& suffix) {
  return "r" + std::to_string(level) + "." + suffix;
}

namespace {

struct ParamSpec {
  std::string name;
  Shape shape;
  double bound;  // 0 → zero init
};

std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  const double bd = 1.0 / std::sqrt(double(c.dim));
  const double bh = 1.0 / std::sqrt(double(c.hidden));
  std::vector<ParamSpec> specs;
  for (std::size_t r = 1; r <= c.levels; ++r) {
    specs.push_back({param_name(r, "cls"), {1, c.dim}, 0.0});
    for (const char* p : {"q", "k", "v", "o"})
      specs.push_back({param_name(r, std::string("attn.") + p), {c.dim, c.dim}, bd});
    if (r > 1)
      for (const char* p : {"q", "k", "v", "o"})
        specs.push_back({param_name(r, std::string("xattn.") + p), {c.dim, c.dim}, bd});
    specs.push_back({param_name(r, "tnam.w"), {c.dim, 1}, bd});
    specs.push_back({param_name(r, "tnam.at"), {c.dim, c.dim}, bd});
    specs.push_back({param_name(r, "tnam.as"), {c.dim, c.dim}, bd});
    specs.push_back({param_name(r, "head.w1"), {c.dim, c.hidden}, bd});
    specs.push_back({param_name(r, "head.b1"), {1, c.hidden}, 0.0});
    specs.push_back({param_name(r, "head.w2"), {c.hidden, c.classes}, bh});
    specs.push_back({param_name(r, "head.b2"), {1, c.classes}, 0.0});
  }
  return specs;
}

}  // namespace

Params init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Params params;
  std::uint64_t index = 0;
  for (const auto& spec : param_specs(config)) {
    Tensor t(spec.shape);
    KeyedRng rng{seed, static_cast<std::uint64_t>(Stream::kInit), index++};
    if (spec.bound > 0)
      for (auto& v : t.data()) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * spec.bound);
    params.add(spec.name, std::move(t));
  }
  return params;
}

void check_params(const Params& params, const ModelConfig& config) {
  const auto specs = param_specs(config);
  if (specs.size() != params.size())
    throw ConfigError("checkpoint holds " + std::to_string(params.size()) +
                      " tensors, model config expects " + std::to_string(specs.size()));
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& [name, value] = params.entries()[i];
    if (name != specs[i].name)
      throw ConfigError("checkpoint tensor " + std::to_string(i) + " is '" + name +
                        "', expected '" + specs[i].name + "'");
    if (value.shape() != specs[i].shape)
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(value.shape()) +
                        ", model config expects " + shape_str(specs[i].shape));
  }
}

ForwardOutput predict(const Params& params, const MultiResBag& bag, const ModelConfig& config,
                      ForwardOptions options) {
  options.mode = Mode::kEval;
  Tape<float> tape;
  ParamVars<float> pv(tape, params, false);
  return extract_output(model::forward_bag(tape, pv, bag, config, options));
}

}  // namespace ufcmil
