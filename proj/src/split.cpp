#include "rapl/split.hpp"

#include "rapl/error.hpp"

namespace rapl {

std::string_view to_string(SplitMode mode) { return mode == SplitMode::kNcd ? "ncd" : "gcd"; }

SplitMode split_mode_from_string(std::string_view s) {
  if (s == "ncd") return SplitMode::kNcd;
  if (s == "gcd") return SplitMode::kGcd;
  throw ConfigError("unknown split mode '" + std::string(s) + "'");
}

void SplitSpec::validate() const {
  if (num_old == 0 || num_new == 0) throw ConfigError("split needs at least one old and one new class");
  if (train_per_class == 0 || test_per_class == 0) throw ConfigError("split needs train and test images per class");
  if (mode == SplitMode::kGcd && train_per_class < 2) {
    throw ConfigError("GCD split needs at least 2 train images per class to move half to the unlabeled split");
  }
}

}  // namespace rapl
