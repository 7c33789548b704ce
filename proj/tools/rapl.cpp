#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rapl/config.hpp"
#include "rapl/error.hpp"
#include "rapl/experiment.hpp"
#include "rapl/kernels.hpp"

namespace fs = std::filesystem;
using namespace rapl;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string data_path;
  std::string out = "out";
};

RunConfig resolve_config(const Common& c) {
  RunConfig config = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (c.seed) config.apply_seed(*c.seed);
  config.validate();
  return config;
}

Dataset resolve_data(const Common& c, const RunConfig& config) {
  if (c.data_path.empty()) return generate(config.synth);
  Dataset data = load_dataset(c.data_path);
  if (nlohmann::json(data.config) != nlohmann::json(config.synth)) {
    std::cerr << "note: dataset was generated with a different synth config than the run config\n";
  }
  return data;
}

void print_metrics(const std::vector<MetricsRow>& rows) {
  for (const MetricsRow& m : rows) {
    std::printf("%-8s %-13s epoch %3zu  all %.4f", std::string(to_string(m.phase)).c_str(),
                to_string(m.protocol).c_str(), m.epoch, m.acc_all);
    if (m.acc_old) std::printf("  old %.4f", *m.acc_old);
    if (m.acc_new) std::printf("  new %.4f", *m.acc_new);
    std::printf("\n");
  }
}

void print_epoch(const EpochLog& e) {
  std::printf("%-8s epoch %3zu  lr %.5f  total %.4f  cra %.4f  pc %.4f  reg %.4f  pcl %.4f\n",
              std::string(to_string(e.phase)).c_str(), e.epoch, e.lr, e.mean.total, e.mean.cra, e.mean.pc,
              e.mean.reg, e.mean.pcl);
}

void add_common(CLI::App* app, Common& c, bool with_data = true) {
  app->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Master seed overriding every seed in the config");
  if (with_data) app->add_option("--data", c.data_path, "Dataset file from gen-data (generated when omitted)");
  app->add_option("--out", c.out, "Output directory");
}

// Trains the checkpoint's (or a fresh state's) phase, appending to the logs in `out`.
void train_and_save(PhaseState& state, const Dataset& data, const RunConfig& config, std::size_t until,
                    const fs::path& out, const std::string& ckpt_name) {
  fs::create_directories(out);
  RunLog log = read_run_log(out);
  const std::size_t losses_before = log.losses.size();
  const std::size_t metrics_before = log.metrics.size();
  train_phase(state, data, config, until, log);
  for (std::size_t i = losses_before; i < log.losses.size(); ++i) print_epoch(log.losses[i]);
  print_metrics({log.metrics.begin() + static_cast<std::ptrdiff_t>(metrics_before), log.metrics.end()});
  write_metrics(out, log);
  save_run_config(out / "config.json", config);
  save_checkpoint(out / ckpt_name, state, config);
  std::printf("checkpoint %s (%s, %zu epochs done)\n", (out / ckpt_name).string().c_str(),
              std::string(to_string(state.phase)).c_str(), state.epoch);
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t count) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < count; ++i) seeds.push_back(first + i);
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Region-aligned proxy learning for novel class discovery on synthetic data"};
  app.require_subcommand(1);

  Common common;
  std::string resume;
  std::optional<std::size_t> until;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  add_common(gen, common, false);

  auto* pretrain = app.add_subcommand("pretrain", "Supervised pre-training on labeled classes");
  add_common(pretrain, common);
  pretrain->add_option("--resume", resume, "Continue from a pre-train checkpoint")->check(CLI::ExistingFile);
  pretrain->add_option("--until", until, "Stop after this many pre-train epochs");

  auto* discover = app.add_subcommand("discover", "Novel class discovery from a checkpoint");
  add_common(discover, common);
  discover->add_option("--checkpoint", resume, "Pre-train or discover checkpoint")->required()->check(CLI::ExistingFile);
  discover->add_option("--until", until, "Stop after this many discover epochs");

  auto* eval = app.add_subcommand("evaluate", "Clustering accuracy of a checkpoint");
  add_common(eval, common);
  eval->add_option("--checkpoint", resume, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);

  std::size_t num_seeds = 3;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss and the encoder");
  grad->add_option("--seed", common.seed, "First seed");
  grad->add_option("--seeds", num_seeds, "Number of consecutive seeds");

  std::vector<std::string> variants{"full", "no_cra", "no_reg", "vcl"};
  auto* ablate = app.add_subcommand("ablate", "Loss ablations over several seeds");
  add_common(ablate, common, false);
  ablate->add_option("--seeds", num_seeds, "Number of consecutive seeds");
  ablate->add_option("--variants", variants, "Subset of full, no_cra, no_reg, vcl");

  auto* run = app.add_subcommand("run", "Pre-train and discover end to end");
  add_common(run, common);

  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path out = common.out;
    if (*gen) {
      const RunConfig config = resolve_config(common);
      const Dataset data = generate(config.synth);
      fs::create_directories(out);
      save_dataset(out / "dataset.bin", data);
      save_run_config(out / "config.json", config);
      std::printf("%zu samples -> %s\n", data.samples.size(), (out / "dataset.bin").string().c_str());
    } else if (*pretrain) {
      RunConfig config;
      PhaseState state;
      if (!resume.empty()) {
        state = load_checkpoint(resume, &config);
        if (state.phase != Phase::kPretrain) throw ConfigError("--resume expects a pre-train checkpoint");
      } else {
        config = resolve_config(common);
        state = make_initial_state(config);
      }
      const Dataset data = resolve_data(common, config);
      train_and_save(state, data, config, until.value_or(config.train.pretrain_epochs), out, "pretrain.ckpt");
    } else if (*discover) {
      RunConfig config;
      PhaseState state = load_checkpoint(resume, &config);
      const Dataset data = resolve_data(common, config);
      if (state.phase == Phase::kPretrain) {
        if (state.epoch < config.train.pretrain_epochs) {
          std::cerr << "note: pre-training stopped at epoch " << state.epoch << " of "
                    << config.train.pretrain_epochs << "\n";
        }
        begin_discover(state, data, config);
      }
      train_and_save(state, data, config, until.value_or(config.train.discover_epochs), out, "final.ckpt");
      const auto maps = saliency_for(state, data, 8, 5);
      write_saliency_dump(out / "saliency.json", maps);
    } else if (*eval) {
      RunConfig config;
      const PhaseState state = load_checkpoint(resume, &config);
      const Dataset data = resolve_data(common, config);
      const auto rows = evaluate_state(state, data, config);
      print_metrics(rows);
      RunLog log;
      log.metrics = rows;
      write_metrics(out, log);
    } else if (*grad) {
      bool ok = true;
      for (std::uint64_t seed : seed_range(common.seed.value_or(0), num_seeds)) {
        for (const GradCheckReport& r : gradcheck_suite(seed)) {
          std::printf("seed %llu  %-20s %s  coords %4zu  max_rel %.3e  max_abs %.3e %s\n",
                      static_cast<unsigned long long>(seed), r.op_name.c_str(), r.passed ? "PASS" : "FAIL",
                      r.coordinates, r.max_rel_err, r.max_abs_err, r.diagnostic.c_str());
          ok = ok && r.passed;
        }
      }
      return ok ? 0 : 1;
    } else if (*ablate) {
      const RunConfig config = resolve_config(common);
      std::vector<Ablation> chosen;
      for (const std::string& v : variants) chosen.push_back(ablation_from_string(v));
      const auto seeds = seed_range(common.seed.value_or(config.train.seed), num_seeds);
      const auto rows = run_ablations(config, chosen, seeds);
      fs::create_directories(out);
      write_ablation_csv(out / "ablation.csv", rows);
      for (const AblationRow& r : rows) {
        std::printf("%-7s seed %llu  ", to_string(r.variant).c_str(), static_cast<unsigned long long>(r.metrics.seed));
        print_metrics({r.metrics});
      }
    } else if (*run) {
      const RunConfig config = resolve_config(common);
      const Dataset data = resolve_data(common, config);
      fs::create_directories(out);
      save_run_config(out / "config.json", config);
      RunLog log;
      run_experiment(data, config, log, out);
      for (const EpochLog& e : log.losses) print_epoch(e);
      print_metrics(log.metrics);
      std::printf("threads %d, outputs in %s\n", kernels::max_threads(), out.string().c_str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
