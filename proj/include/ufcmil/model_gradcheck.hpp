#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "ufcmil/gradcheck.hpp"
#include "ufcmil/model.hpp"

namespace ufcmil {

struct ModelGradCheck {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  /// Worst error per parameter group: cls, attn, xattn, tnam, head.
  std::map<std::string, double> per_group;
  /// Largest |analytic gradient| per group; zero would make that group's check vacuous.
  std::map<std::string, double> group_grad_max;
  std::size_t parameters = 0;
  /// Toy configurations rejected for sitting within 1e-2 of a PW kink.
  std::size_t redraws = 0;
};

/// Central-difference check of the joint loss, summed over one negative and
/// one positive toy bag, for every parameter of a tiny two-resolution model
/// (2×2 coarse grid → n₁ = 4, n₂ = 16, d = 8). Evaluated in double precision
/// with the relaxed mask so the objective is smooth.
ModelGradCheck model_gradcheck(std::uint64_t seed, double h);

/// Group name of a parameter ("r2.xattn.q" → "xattn").
std::string param_group(const std::string& name);

}  // namespace ufcmil
