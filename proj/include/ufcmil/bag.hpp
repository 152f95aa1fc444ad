#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ufcmil/tensor.hpp"

namespace ufcmil {

/// Malformed or inconsistent input data (files, manifests, bag structure).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-supplied configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Children per coarse patch under 2×2 refinement.
inline constexpr std::size_t kQuadBranching = 4;

/// One resolution of a bag.
///
/// Patch rows are stored row-major on the coarsest level (depth 0). Every
/// finer level is stored child-major: the four children of coarse row n occupy
/// rows [4n, 4n+4) in (top-left, top-right, bottom-left, bottom-right) order,
/// recursively. `depth` records how many refinements separate this level from
/// the row-major root, which is all that is needed to recover grid positions.
struct ResolutionLevel {
  double mpp = 0.0;
  std::size_t grid_w = 0;
  std::size_t grid_h = 0;
  std::size_t depth = 0;
  Tensor features;                          // n_r × d
  std::vector<std::uint8_t> instance_labels;  // empty when unknown

  std::size_t num_patches() const { return grid_w * grid_h; }
  std::size_t dim() const { return features.cols(); }
};

struct GridPos {
  std::size_t x = 0;
  std::size_t y = 0;
  friend bool operator==(const GridPos&, const GridPos&) = default;
};

/// Grid position of storage row `n` for a level.
GridPos patch_position(const ResolutionLevel& level, std::size_t n);

/// Storage row of the patch at grid position `p`.
std::size_t patch_index(const ResolutionLevel& level, GridPos p);

/// 4-neighbourhood (up, down, left, right) of patch `n`, excluding itself,
/// returned in ascending index order.
std::vector<std::size_t> neighbors(const ResolutionLevel& level, std::size_t n);

/// neighbors() for every patch of the level.
std::vector<std::vector<std::size_t>> adjacency(const ResolutionLevel& level);

/// Fine-level rows [n·k, (n+1)·k) owned by coarse patch n.
inline std::pair<std::size_t, std::size_t> children(std::size_t n, std::size_t k) {
  return {n * k, (n + 1) * k};
}

/// A bag is negative iff every instance is negative.
int bag_label_from_instances(std::span<const std::uint8_t> instance_labels);

struct MultiResBag {
  std::string sample_id;
  int label = 0;
  std::string split;
  std::size_t branching = kQuadBranching;
  std::vector<ResolutionLevel> levels;  // coarsest first

  std::size_t num_levels() const { return levels.size(); }
  std::size_t dim() const { return levels.empty() ? 0 : levels.front().dim(); }

  /// Throws DataError unless grid dims double between levels, rows match
  /// grids, dims agree and every feature is finite.
  void validate() const;
};

}  // namespace ufcmil
