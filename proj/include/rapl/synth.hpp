#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "rapl/split.hpp"
#include "rapl/tensor.hpp"

namespace rapl {

/// Synthetic ultra-fine-grained data: every image is one shared template plus
/// a weak class signature (cell-sized patterns from a small shared vocabulary
/// placed in a few class-specific grid cells) plus per-sample noise.
struct SynthConfig {
  std::size_t num_classes = 20;
  std::size_t num_old = 10;
  std::size_t num_new = 10;
  std::size_t train_per_class = 12;
  std::size_t test_per_class = 4;
  std::array<std::size_t, 3> input_dims{1, 16, 16};
  /// Cell grid the class signal is placed on; matches the feature-map grid.
  std::array<std::size_t, 2> region_grid{4, 4};
  double template_strength = 1.0;
  double class_signal_strength = 0.5;
  std::size_t signal_regions_per_class = 3;
  std::size_t pattern_vocabulary = 4;
  double intra_class_noise = 0.4;
  /// Grid columns zeroed on the left and right edges.
  std::size_t blank_margin = 0;
  /// Horizontal flip probability of each augmented view.
  double flip_prob = 0.5;
  SplitMode mode = SplitMode::kNcd;
  std::uint64_t seed = 0;

  SplitSpec split() const;
  void validate() const;
};

enum class SplitTag { kLabeledTrain, kUnlabeledTrain, kTest };

std::string_view to_string(SplitTag tag);
SplitTag split_tag_from_string(std::string_view s);

struct LabeledSample {
  Tensor input;  // C × h × w
  std::size_t class_id = 0;
  SplitTag tag = SplitTag::kTest;
  /// Per-sample seed mixed into every augmentation draw.
  std::uint64_t recipe_seed = 0;
};

struct Dataset {
  SynthConfig config;
  SplitSpec split;
  Tensor template_image;
  std::vector<LabeledSample> samples;

  std::vector<std::size_t> indices(SplitTag tag) const;
  /// Stacks the inputs of the given samples into N × C × h × w.
  Tensor stack(std::span<const std::size_t> index) const;
  std::vector<std::size_t> labels(std::span<const std::size_t> index) const;
  /// One flag per region-grid cell: true when the cell lies in the blank margin.
  std::vector<bool> blank_regions() const;
};

Dataset generate(const SynthConfig& config);

struct ViewJitter {
  double noise = 0.0;
  double flip_prob = 0.0;

  static ViewJitter from(const SynthConfig& c) { return {c.intra_class_noise / 2.0, c.flip_prob}; }
};

/// Two independently jittered copies of a sample; deterministic in (sample, step_seed).
std::pair<Tensor, Tensor> augment_views(const LabeledSample& sample, const ViewJitter& jitter,
                                        std::uint64_t step_seed);

/// Single-file container: magic, JSON manifest (config echo, per-sample class
/// ids and split tags), then raw float64 payload. Round-trips bit-exactly.
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace rapl
