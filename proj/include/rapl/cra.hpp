#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "rapl/autodiff.hpp"

namespace rapl {

/// Partition of D feature channels into H·W contiguous region groups. Group j
/// is responsible for spatial cell (j / W, j % W). Sizes differ by at most one,
/// smaller groups first.
struct ChannelGrouping {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> group_of_channel;  // length D
  std::vector<std::size_t> group_sizes;       // length H·W
  std::vector<std::size_t> group_begin;       // first channel of each group

  std::size_t regions() const { return group_sizes.size(); }
};

ChannelGrouping build_grouping(std::size_t channels, std::size_t height, std::size_t width);

/// Region-alignment loss over feature maps N×D×H×W: every channel's flattened
/// H·W map is a logit vector whose target is its group's region; mean NLL over
/// all N·D channels.
Var cra_loss(const Var& feature_maps, const ChannelGrouping& grouping);

struct SaliencyMap {
  std::vector<double> region_scores;
  std::vector<bool> blank_mask;
  std::vector<std::size_t> topk_regions;
};

/// Region score = max activation over the group's channels and all spatial
/// cells; blank regions are forced to 0 and excluded from the top-k, which is
/// ordered by descending score with lower region index first on ties.
SaliencyMap region_saliency(const Tensor& feature_map, const ChannelGrouping& grouping,
                            const std::vector<bool>& blank_mask, std::size_t k);

/// JSON array of {sample, region_scores, topk_regions}.
void write_saliency_dump(const std::filesystem::path& path, std::span<const SaliencyMap> maps);

}  // namespace rapl
