#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rapl/autodiff.hpp"

namespace rapl {

struct GradCheckReport {
  std::string op_name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool passed = false;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  std::string diagnostic;
};

/// Builds the op on a fresh tape from leaf inputs and returns its output.
using DifferentiableFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Seed of the fixed cotangent used to reduce non-scalar outputs.
  std::uint64_t cotangent_seed = 0x5eed;
};

/// Compares reverse-mode gradients of every input coordinate against central
/// differences. A coordinate passes when its relative error is within
/// tolerance, or its absolute error is within tolerance·0.01 (near-zero
/// gradients); the check passes when every coordinate does.
GradCheckReport grad_check(std::string op_name, const DifferentiableFn& fn, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace rapl
