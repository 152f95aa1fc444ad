#include "ufcmil/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>

#include "ufcmil/bagio.hpp"
#include "ufcmil/rng.hpp"

namespace ufcmil {

void SynthConfig::validate() const {
  if (samples == 0) throw ConfigError("samples must be at least 1");
  if (dim == 0) throw ConfigError("feature dimension must be at least 1");
  if (levels == 0) throw ConfigError("levels must be at least 1");
  if (grid_w == 0 || grid_h == 0) throw ConfigError("grid dimensions must be at least 1");
  if (!(pos_fraction >= 0.0 && pos_fraction <= 1.0))
    throw ConfigError("pos_fraction must lie in [0, 1]");
  if (pos_fraction > 0.0 && lesion_size == 0)
    throw ConfigError("lesion_size must be at least 1 when positive bags are requested");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
  if (!(refine_sigma >= 0.0)) throw ConfigError("refine_sigma must be non-negative");
  if (!(signal_min >= 0.0 && signal_max >= signal_min))
    throw ConfigError("signal range must satisfy 0 <= signal_min <= signal_max");
  if (!(train_fraction >= 0.0 && val_fraction >= 0.0 && train_fraction + val_fraction <= 1.0))
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  if (levels > 12) throw ConfigError("levels above 12 are not supported");
}

std::vector<MultiResBag> synth_bags(const SynthConfig& cfg) {
  cfg.validate();
  const std::uint64_t synth = static_cast<std::uint64_t>(Stream::kSynth);

  std::normal_distribution<double> normal(0.0, 1.0);
  KeyedRng center_rng{cfg.seed, synth, 0};
  std::vector<double> background(cfg.dim), direction(cfg.dim);
  for (auto& v : background) v = normal(center_rng);
  double norm = 0;
  for (auto& v : direction) {
    v = normal(center_rng);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : direction) v /= norm;

  // Exactly round(pos_fraction · samples) positives, at shuffled positions.
  const auto n_pos = static_cast<std::size_t>(std::llround(cfg.pos_fraction * double(cfg.samples)));
  std::vector<std::size_t> order(cfg.samples);
  std::iota(order.begin(), order.end(), 0);
  KeyedRng label_rng{cfg.seed, synth, 1};
  std::shuffle(order.begin(), order.end(), label_rng);
  std::vector<bool> positive(cfg.samples, false);
  for (std::size_t i = 0; i < n_pos; ++i) positive[order[i]] = true;

  std::vector<MultiResBag> bags(cfg.samples);
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    KeyedRng rng{cfg.seed, synth, 2, i};
    MultiResBag& bag = bags[i];
    char id[32];
    std::snprintf(id, sizeof id, "bag_%04zu", i);
    bag.sample_id = id;

    std::size_t lx = 0, ly = 0, lw = 0, lh = 0;
    double strength = 0.0;
    if (positive[i]) {
      lw = 1 + rng.below(std::min(cfg.lesion_size, cfg.grid_w));
      lh = 1 + rng.below(std::min(cfg.lesion_size, cfg.grid_h));
      lx = rng.below(cfg.grid_w - lw + 1);
      ly = rng.below(cfg.grid_h - lh + 1);
      strength = cfg.signal_min + (cfg.signal_max - cfg.signal_min) * rng.uniform();
    }
    auto in_lesion = [&](GridPos coarse) {
      return coarse.x >= lx && coarse.x < lx + lw && coarse.y >= ly && coarse.y < ly + lh;
    };

    for (std::size_t r = 0; r < cfg.levels; ++r) {
      ResolutionLevel lv;
      lv.depth = r;
      lv.grid_w = cfg.grid_w << r;
      lv.grid_h = cfg.grid_h << r;
      lv.mpp = cfg.base_mpp / double(1u << r);
      const std::size_t n = lv.num_patches();
      lv.features = Tensor({n, cfg.dim});
      lv.instance_labels.assign(n, 0);
      for (std::size_t p = 0; p < n; ++p) {
        const GridPos pos = patch_position(lv, p);
        const bool lesion = in_lesion({pos.x >> r, pos.y >> r});
        lv.instance_labels[p] = lesion ? 1 : 0;
        for (std::size_t j = 0; j < cfg.dim; ++j) {
          double v;
          if (r == 0) {
            v = background[j] + cfg.noise_sigma * normal(rng);
            if (lesion) v += strength * direction[j];
          } else {
            v = bag.levels[r - 1].features(p / kQuadBranching, j) + cfg.refine_sigma * normal(rng);
          }
          lv.features(p, j) = static_cast<float>(v);
        }
      }
      bag.levels.push_back(std::move(lv));
    }
    bag.label = bag_label_from_instances(bag.levels.front().instance_labels);
  }

  // Stratified split assignment.
  KeyedRng split_rng{cfg.seed, static_cast<std::uint64_t>(Stream::kSplit)};
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < cfg.samples; ++i)
      if (bags[i].label == cls) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), split_rng);
    const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * double(idx.size())));
    const auto n_val = std::min(idx.size() - n_train,
        static_cast<std::size_t>(std::llround(cfg.val_fraction * double(idx.size()))));
    for (std::size_t k = 0; k < idx.size(); ++k)
      bags[idx[k]].split = k < n_train ? "train" : (k < n_train + n_val ? "val" : "test");
  }
  return bags;
}

void synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir) {
  save_dataset(synth_bags(config), out_dir);
}

}  // namespace ufcmil
