#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace rapl {

enum class SplitMode { kNcd, kGcd };

std::string_view to_string(SplitMode mode);
SplitMode split_mode_from_string(std::string_view s);

/// Class layout of a labeled/unlabeled split. Old classes are ids [0, C_l),
/// new classes are [C_l, C_l + C_u).
struct SplitSpec {
  std::size_t num_old = 0;
  std::size_t num_new = 0;
  std::size_t train_per_class = 0;
  std::size_t test_per_class = 0;
  SplitMode mode = SplitMode::kNcd;

  std::size_t num_classes() const { return num_old + num_new; }
  bool is_old(std::size_t class_id) const { return class_id < num_old; }
  /// Old-class train images moved to the unlabeled split in GCD mode.
  std::size_t unlabeled_old_per_class() const { return mode == SplitMode::kGcd ? train_per_class / 2 : 0; }
  std::size_t labeled_per_class() const { return train_per_class - unlabeled_old_per_class(); }

  void validate() const;
};

}  // namespace rapl
