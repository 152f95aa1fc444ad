#include "ufcmil/config.hpp"

#include <fstream>

namespace ufcmil {

void apply_json(const nlohmann::json& j, RunConfig& cfg) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  auto& m = cfg.model;
  auto& t = cfg.train;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "dim") m.dim = value.get<std::size_t>();
      else if (key == "levels") m.levels = value.get<std::size_t>();
      else if (key == "hidden") m.hidden = value.get<std::size_t>();
      else if (key == "attention_heads") m.attention_heads = value.get<std::size_t>();
      else if (key == "dropout_p") m.dropout_p = value.get<double>();
      else if (key == "tau") m.tau = value.get<double>();
      else if (key == "gumbel_scale") m.gumbel_scale = value.get<double>();
      else if (key == "mask_threshold") m.mask_threshold = value.get<double>();
      else if (key == "eval_deterministic_mask") m.eval_deterministic_mask = value.get<bool>();
      else if (key == "epochs") t.epochs = value.get<std::size_t>();
      else if (key == "lr") t.lr = value.get<double>();
      else if (key == "beta1") t.beta1 = value.get<double>();
      else if (key == "beta2") t.beta2 = value.get<double>();
      else if (key == "delta") t.delta = value.get<double>();
      else if (key == "alpha") t.alpha = value.get<double>();
      else if (key == "srls") t.srls = value.get<bool>();
      else if (key == "record_epoch") {
        if (value.is_null()) t.record_epoch.reset();
        else t.record_epoch = value.get<std::size_t>();
      }
      else if (key == "seed") t.seed = value.get<std::uint64_t>();
      else if (key == "accumulation") t.accumulation = value.get<std::size_t>();
      else if (key == "threads") t.threads = value.get<int>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config value has the wrong type: ") + ex.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("malformed config " + path.string() + ": " + ex.what());
  }
  RunConfig cfg;
  apply_json(j, cfg);
  return cfg;
}

nlohmann::ordered_json to_json(const RunConfig& cfg) {
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  nlohmann::ordered_json j;
  j["dim"] = m.dim;
  j["levels"] = m.levels;
  j["hidden"] = m.hidden;
  j["attention_heads"] = m.attention_heads;
  j["dropout_p"] = m.dropout_p;
  j["tau"] = m.tau;
  j["gumbel_scale"] = m.gumbel_scale;
  j["mask_threshold"] = m.mask_threshold;
  j["eval_deterministic_mask"] = m.eval_deterministic_mask;
  j["epochs"] = t.epochs;
  j["lr"] = t.lr;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["delta"] = t.delta;
  j["alpha"] = t.alpha;
  j["srls"] = t.srls;
  j["record_epoch"] = t.schedule().record_epoch;
  j["seed"] = t.seed;
  j["accumulation"] = t.accumulation;
  j["threads"] = t.threads;
  return j;
}

}  // namespace ufcmil
