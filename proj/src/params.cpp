#include "rapl/params.hpp"

namespace rapl {

std::vector<Var> bind(Tape& tape, const ParameterList& params, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Parameter& p : params) vars.push_back(tape.leaf(p.value, requires_grad));
  return vars;
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

}  // namespace rapl
