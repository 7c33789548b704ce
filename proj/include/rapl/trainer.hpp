#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rapl/config.hpp"
#include "rapl/cra.hpp"
#include "rapl/encoder.hpp"
#include "rapl/proxy.hpp"
#include "rapl/synth.hpp"

namespace rapl {

/// Linear warm-up to `lr` over warmup_epochs (epoch e gives lr·(e+1)/warmup),
/// then cosine annealing over the remaining epochs of the phase.
double lr_at(std::size_t epoch, std::size_t total_epochs, const TrainConfig& config);

/// SGD with momentum (buffer = μ·buffer + g + wd·w; w -= lr·buffer), buffers keyed by name.
class SgdMomentum {
 public:
  SgdMomentum() = default;
  explicit SgdMomentum(double momentum) : momentum_(momentum) {}

  void step(const std::string& name, Tensor& value, const Tensor& grad, double lr, double weight_decay);
  void reset() { buffers_.clear(); }

  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }
  double momentum() const { return momentum_; }

 private:
  double momentum_ = 0.9;
  std::map<std::string, Tensor> buffers_;
};

enum class Phase { kPretrain, kDiscover };

std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view s);

/// Everything needed to continue training bit-exactly.
struct PhaseState {
  Phase phase = Phase::kPretrain;
  /// Epochs completed in the current phase.
  std::size_t epoch = 0;
  Encoder encoder;
  ProxyBank bank;
  SgdMomentum optimizer;
  /// Master seed; every per-epoch stream is derived from it.
  std::uint64_t seed = 0;
};

struct LossComponents {
  double cra = 0.0;
  double pc = 0.0;
  double reg = 0.0;
  double pcl = 0.0;
  double total = 0.0;
};

struct PretrainBatch {
  Tensor inputs;                     // N × C × h × w
  std::vector<std::size_t> labels;   // old-class ids
};

/// Two views of every sample; the first `labels.size()` rows of each view are labeled.
struct DiscoverBatch {
  Tensor view1;
  Tensor view2;
  std::vector<std::size_t> labels;
};

struct EpochLog {
  Phase phase = Phase::kPretrain;
  std::size_t epoch = 0;
  double lr = 0.0;
  LossComponents mean;
  std::size_t steps = 0;
};

PhaseState make_initial_state(const RunConfig& config);

/// One optimizer step on α·CRA + β·PC + γ·REG. Updates encoder, head and old proxies.
LossComponents pretrain_step(const PretrainBatch& batch, PhaseState& state, const TrainConfig& config, double lr);

/// One optimizer step on α·CRA + β·PC + δ·PCL. Old proxies stay frozen; encoder,
/// head and new proxies are updated.
LossComponents discover_step(const DiscoverBatch& batch, PhaseState& state, const TrainConfig& config, double lr);

/// Runs k-means on unlabeled embeddings to seed the new proxies, freezes the old
/// ones and resets optimizer state.
void begin_discover(PhaseState& state, const Dataset& data, const RunConfig& config);

using StepObserver = std::function<void(const PhaseState&, const LossComponents&)>;

/// Trains the state's current phase for one epoch (batches and augmentations
/// are derived from (seed, phase, epoch), so epochs are independently replayable).
EpochLog run_epoch(PhaseState& state, const Dataset& data, const RunConfig& config,
                   const StepObserver& observer = {});

/// Embeddings used for clustering (head outputs, or pooled features when configured).
Tensor embed_for_eval(const PhaseState& state, const Dataset& data, std::span<const std::size_t> index,
                      const TrainConfig& config);

/// Versioned binary checkpoint: magic, JSON header (config echo, phase, epoch,
/// seed, freeze flag, tensor table), then raw float64 tensors.
void save_checkpoint(const std::filesystem::path& path, const PhaseState& state, const RunConfig& config);
PhaseState load_checkpoint(const std::filesystem::path& path, RunConfig* config_out = nullptr);

}  // namespace rapl
