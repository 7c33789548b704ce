#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rapl/autodiff.hpp"

namespace rapl {

struct Parameter {
  std::string name;
  Tensor value;
  bool weight_decay = true;
};

using ParameterList = std::vector<Parameter>;

/// Puts every parameter on the tape as a leaf, in list order.
std::vector<Var> bind(Tape& tape, const ParameterList& params, bool requires_grad = true);

/// splitmix64 mixing of (seed, stream, index) into an independent seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

/// Per-purpose RNG streams derived from a master seed.
enum class Stream : std::uint64_t {
  kInit = 1,
  kDataOrder = 2,
  kAugment = 3,
  kProxyInit = 4,
  kCluster = 5,
  kGenerate = 6,
};

inline std::uint64_t stream_seed(std::uint64_t master, Stream s, std::uint64_t index = 0) {
  return derive_seed(master, static_cast<std::uint64_t>(s), index);
}

}  // namespace rapl
