#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "rapl/cluster.hpp"
#include "rapl/encoder.hpp"
#include "rapl/synth.hpp"

namespace rapl {

enum class ContrastiveMode { kProxy, kVanilla };

/// Loss weights, schedule and optimizer settings for both phases.
struct TrainConfig {
  double alpha = 0.6;
  double beta_pretrain = 2.0;
  double beta_discover = 1.0;
  double gamma = 1.0;
  double delta = 0.8;
  double tau = 0.1;
  double xi = 0.5;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t warmup_epochs = 5;
  std::size_t pretrain_epochs = 40;
  std::size_t discover_epochs = 40;
  std::size_t batch_size = 24;
  std::uint64_t seed = 0;
  ContrastiveMode contrastive = ContrastiveMode::kProxy;
  bool renormalize_new_proxies = true;
  /// Evaluate every this many epochs (0: only at phase ends).
  std::size_t eval_every = 10;
  /// Cluster pooled backbone features instead of head outputs.
  bool eval_on_pooled = false;

  void validate() const;
};

struct RunConfig {
  SynthConfig synth;
  EncoderConfig encoder;
  TrainConfig train;
  EvalOptions eval;

  /// Sets every seed field from one master seed.
  void apply_seed(std::uint64_t seed);
  void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const EvalOptions& c);
void from_json(const nlohmann::json& j, EvalOptions& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

}  // namespace rapl
