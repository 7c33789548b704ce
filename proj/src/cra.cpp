#include "rapl/cra.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>

#include "json.hpp"

#include "rapl/error.hpp"

namespace rapl {

ChannelGrouping build_grouping(std::size_t channels, std::size_t height, std::size_t width) {
  const std::size_t regions = height * width;
  if (regions == 0 || channels < regions) {
    throw ConfigError("channel grouping needs D >= H*W > 0 (D=" + std::to_string(channels) +
                      ", H*W=" + std::to_string(regions) + ")");
  }
  ChannelGrouping g;
  g.channels = channels;
  g.height = height;
  g.width = width;
  const std::size_t base = channels / regions;
  const std::size_t extra = channels % regions;
  g.group_sizes.assign(regions, base);
  for (std::size_t j = regions - extra; j < regions; ++j) ++g.group_sizes[j];
  g.group_begin.resize(regions);
  g.group_of_channel.resize(channels);
  std::size_t start = 0;
  for (std::size_t j = 0; j < regions; ++j) {
    g.group_begin[j] = start;
    std::fill_n(g.group_of_channel.begin() + static_cast<std::ptrdiff_t>(start), g.group_sizes[j], j);
    start += g.group_sizes[j];
  }
  return g;
}

Var cra_loss(const Var& feature_maps, const ChannelGrouping& grouping) {
  const Shape& s = feature_maps.shape();
  if (s.size() != 4 || s[1] != grouping.channels || s[2] != grouping.height || s[3] != grouping.width) {
    throw DimensionError("cra_loss: feature maps " + shape_str(s) + " do not match grouping of " +
                         std::to_string(grouping.channels) + " channels over " + std::to_string(grouping.height) +
                         "x" + std::to_string(grouping.width));
  }
  const std::size_t rows = s[0] * s[1];
  std::vector<std::size_t> target(rows);
  for (std::size_t r = 0; r < rows; ++r) target[r] = grouping.group_of_channel[r % grouping.channels];
  Var logits = ops::reshape(feature_maps, {rows, grouping.regions()});
  return ops::mean(ops::sub(ops::logsumexp_rows(logits), ops::pick(logits, target)));
}

SaliencyMap region_saliency(const Tensor& feature_map, const ChannelGrouping& grouping,
                            const std::vector<bool>& blank_mask, std::size_t k) {
  const Shape& s = feature_map.shape();
  if (s.size() != 3 || s[0] != grouping.channels || s[1] != grouping.height || s[2] != grouping.width) {
    throw DimensionError("region_saliency: feature map " + shape_str(s) + " does not match grouping");
  }
  const std::size_t regions = grouping.regions();
  if (blank_mask.size() != regions) throw DimensionError("region_saliency: blank mask length mismatch");
  const auto open = static_cast<std::size_t>(std::count(blank_mask.begin(), blank_mask.end(), false));
  if (k == 0 || k > open) {
    throw ConfigError("region_saliency: k=" + std::to_string(k) + " exceeds " + std::to_string(open) +
                      " non-blank regions");
  }

  SaliencyMap out;
  out.blank_mask = blank_mask;
  out.region_scores.assign(regions, 0.0);
  const std::size_t cells = regions;
  for (std::size_t j = 0; j < regions; ++j) {
    if (blank_mask[j]) continue;
    const double* first = feature_map.data().data() + grouping.group_begin[j] * cells;
    out.region_scores[j] = *std::max_element(first, first + grouping.group_sizes[j] * cells);
  }

  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < regions; ++j)
    if (!blank_mask[j]) order.push_back(j);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.region_scores[a] > out.region_scores[b]; });
  order.resize(k);
  out.topk_regions = std::move(order);
  return out;
}

void write_saliency_dump(const std::filesystem::path& path, std::span<const SaliencyMap> maps) {
  nlohmann::json doc = nlohmann::json::array();
  for (std::size_t i = 0; i < maps.size(); ++i) {
    doc.push_back({{"sample", i}, {"region_scores", maps[i].region_scores}, {"topk_regions", maps[i].topk_regions}});
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot write saliency dump " + path.string());
  os << doc.dump(2) << '\n';
}

}  // namespace rapl
