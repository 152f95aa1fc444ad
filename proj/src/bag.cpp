#include "ufcmil/bag.hpp"

#include <algorithm>
#include <string>

namespace ufcmil {

namespace {

std::size_t root_width(const ResolutionLevel& level) { return level.grid_w >> level.depth; }

}  // namespace

GridPos patch_position(const ResolutionLevel& level, std::size_t n) {
  if (n >= level.num_patches())
    throw std::out_of_range("patch index " + std::to_string(n) + " out of range for " +
                            std::to_string(level.num_patches()) + " patches");
  std::vector<std::size_t> path(level.depth);
  for (std::size_t s = 0; s < level.depth; ++s) {
    path[s] = n % kQuadBranching;
    n /= kQuadBranching;
  }
  const std::size_t rw = root_width(level);
  GridPos p{n % rw, n / rw};
  for (std::size_t s = level.depth; s-- > 0;) {
    p.x = 2 * p.x + path[s] % 2;
    p.y = 2 * p.y + path[s] / 2;
  }
  return p;
}

std::size_t patch_index(const ResolutionLevel& level, GridPos p) {
  if (p.x >= level.grid_w || p.y >= level.grid_h)
    throw std::out_of_range("grid position outside level");
  std::vector<std::size_t> path(level.depth);
  for (std::size_t s = 0; s < level.depth; ++s) {
    path[s] = (p.y % 2) * 2 + p.x % 2;
    p.x /= 2;
    p.y /= 2;
  }
  std::size_t n = p.y * root_width(level) + p.x;
  for (std::size_t s = level.depth; s-- > 0;) n = n * kQuadBranching + path[s];
  return n;
}

std::vector<std::size_t> neighbors(const ResolutionLevel& level, std::size_t n) {
  const GridPos p = patch_position(level, n);
  std::vector<std::size_t> out;
  out.reserve(4);
  if (p.y > 0) out.push_back(patch_index(level, {p.x, p.y - 1}));
  if (p.x > 0) out.push_back(patch_index(level, {p.x - 1, p.y}));
  if (p.x + 1 < level.grid_w) out.push_back(patch_index(level, {p.x + 1, p.y}));
  if (p.y + 1 < level.grid_h) out.push_back(patch_index(level, {p.x, p.y + 1}));
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::vector<std::size_t>> adjacency(const ResolutionLevel& level) {
  std::vector<std::vector<std::size_t>> adj(level.num_patches());
  for (std::size_t n = 0; n < adj.size(); ++n) adj[n] = neighbors(level, n);
  return adj;
}

int bag_label_from_instances(std::span<const std::uint8_t> instance_labels) {
  if (instance_labels.empty())
    throw std::invalid_argument("bag_label_from_instances: empty instance set");
  return std::any_of(instance_labels.begin(), instance_labels.end(),
                     [](std::uint8_t y) { return y != 0; })
             ? 1
             : 0;
}

void MultiResBag::validate() const {
  const std::string where = "bag '" + sample_id + "': ";
  if (levels.empty()) throw DataError(where + "no resolution levels");
  if (label != 0 && label != 1) throw DataError(where + "label must be 0 or 1");
  if (branching != kQuadBranching && levels.size() > 1)
    throw DataError(where + "only 2x2 refinement (branching 4) is supported");
  const std::size_t d = levels.front().dim();
  for (std::size_t r = 0; r < levels.size(); ++r) {
    const auto& lv = levels[r];
    const std::string lw = where + "level " + std::to_string(r + 1) + ": ";
    if (lv.grid_w == 0 || lv.grid_h == 0) throw DataError(lw + "empty grid");
    if (lv.depth != r) throw DataError(lw + "depth does not match level index");
    if (lv.features.rank() != 2 || lv.features.rows() != lv.num_patches())
      throw DataError(lw + "feature rows " + std::to_string(lv.features.rows()) +
                      " do not match grid " + std::to_string(lv.grid_w) + "x" +
                      std::to_string(lv.grid_h));
    if (lv.dim() != d) throw DataError(lw + "feature dimension differs from level 1");
    if (!lv.features.all_finite()) throw DataError(lw + "non-finite feature value");
    if (!lv.instance_labels.empty() && lv.instance_labels.size() != lv.num_patches())
      throw DataError(lw + "instance label count does not match grid");
    if (r > 0) {
      const auto& prev = levels[r - 1];
      if (lv.grid_w != 2 * prev.grid_w || lv.grid_h != 2 * prev.grid_h)
        throw DataError(lw + "grid must double the previous level's dimensions");
    }
  }
}

}  // namespace ufcmil
