#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rapl/cluster.hpp"
#include "rapl/cra.hpp"
#include "rapl/gradcheck.hpp"
#include "rapl/trainer.hpp"

namespace rapl {

struct MetricsRow {
  Phase phase = Phase::kPretrain;
  Protocol protocol = Protocol::kTaskAgnostic;
  double acc_all = 0.0;
  std::optional<double> acc_old;
  std::optional<double> acc_new;
  std::uint64_t seed = 0;
  /// Epochs completed in `phase` when the row was measured.
  std::size_t epoch = 0;
};

struct RunLog {
  std::vector<MetricsRow> metrics;
  std::vector<EpochLog> losses;
};

/// Task-agnostic on the test split, plus task-aware on unlabeled-train in NCD mode.
std::vector<MetricsRow> evaluate_state(const PhaseState& state, const Dataset& data, const RunConfig& config);

/// Trains the current phase until `until_epoch` epochs are done, evaluating every
/// eval_every epochs and after the last epoch of the phase.
void train_phase(PhaseState& state, const Dataset& data, const RunConfig& config, std::size_t until_epoch,
                 RunLog& log, const StepObserver& observer = {});

/// Pre-train, seed new proxies, discover. With an output directory, also writes
/// metrics, losses, both checkpoints and a saliency dump.
PhaseState run_experiment(const Dataset& data, const RunConfig& config, RunLog& log,
                          const std::optional<std::filesystem::path>& out_dir = std::nullopt);

void write_metrics(const std::filesystem::path& out_dir, const RunLog& log);
/// Reads back what write_metrics produced (missing files give empty logs).
RunLog read_run_log(const std::filesystem::path& out_dir);

/// Saliency of the first `count` test samples (top-k capped by the open regions).
std::vector<SaliencyMap> saliency_for(const PhaseState& state, const Dataset& data, std::size_t count,
                                      std::size_t k);

enum class Ablation { kFull, kNoCra, kNoReg, kVanilla };

std::string to_string(Ablation a);
Ablation ablation_from_string(std::string_view s);
RunConfig apply_ablation(RunConfig config, Ablation a);

struct AblationRow {
  Ablation variant = Ablation::kFull;
  MetricsRow metrics;
};

/// Final metrics of every variant on every seed; each seed regenerates its data.
std::vector<AblationRow> run_ablations(const RunConfig& base, std::span<const Ablation> variants,
                                       std::span<const std::uint64_t> seeds);
void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);

/// Central-difference checks of every loss and of the encoder + head composite
/// on small random inputs drawn from `seed`.
std::vector<GradCheckReport> gradcheck_suite(std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace rapl
