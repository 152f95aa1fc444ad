#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ufcmil/bag.hpp"

namespace ufcmil {

/// Planted-lesion generator settings.
///
/// Coarsest-level background patches are drawn from N(μ_b, σ²I). A positive
/// bag receives one axis-aligned rectangle of lesion patches on the coarsest
/// grid (sides drawn from [1, lesion_size]) drawn from N(μ_b + s·u, σ²I), where
/// u is a fixed unit direction and s ~ U[signal_min, signal_max] per bag.
/// Each finer patch is its parent's feature plus N(0, refine_sigma²I) noise,
/// and inherits the parent's lesion status.
struct SynthConfig {
  std::size_t samples = 200;
  std::size_t dim = 16;
  std::size_t levels = 3;
  std::size_t grid_w = 4;
  std::size_t grid_h = 4;
  double pos_fraction = 0.3;
  std::size_t lesion_size = 2;
  double noise_sigma = 1.0;
  double refine_sigma = 0.5;
  double signal_min = 3.0;
  double signal_max = 6.0;
  double base_mpp = 2.0;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  /// Throws ConfigError describing the first invalid field.
  void validate() const;
};

/// Deterministic in the config (including seed).
std::vector<MultiResBag> synth_bags(const SynthConfig& config);

/// synth_bags() followed by save_dataset() into `out_dir`.
void synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace ufcmil
