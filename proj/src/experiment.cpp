#include "rapl/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "rapl/error.hpp"
#include "rapl/params.hpp"
#include "rapl/proxy.hpp"

namespace rapl {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

Protocol protocol_from_string(std::string_view s) {
  if (s == to_string(Protocol::kTaskAgnostic)) return Protocol::kTaskAgnostic;
  if (s == to_string(Protocol::kTaskAware)) return Protocol::kTaskAware;
  throw ConfigError("unknown protocol '" + std::string(s) + "'");
}

MetricsRow to_row(const MetricsReport& r, const PhaseState& state) {
  return {state.phase, r.protocol, r.acc_all, r.acc_old, r.acc_new, state.seed, state.epoch};
}

std::size_t phase_length(Phase p, const TrainConfig& c) {
  return p == Phase::kPretrain ? c.pretrain_epochs : c.discover_epochs;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, scale);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

}  // namespace

std::vector<MetricsRow> evaluate_state(const PhaseState& state, const Dataset& data, const RunConfig& config) {
  std::vector<MetricsRow> rows;
  const std::vector<std::size_t> test = data.indices(SplitTag::kTest);
  const Tensor test_emb = embed_for_eval(state, data, test, config.train);
  rows.push_back(to_row(evaluate(test_emb, data.labels(test), data.split, Protocol::kTaskAgnostic, config.eval), state));
  if (data.split.mode == SplitMode::kNcd) {
    const std::vector<std::size_t> unlabeled = data.indices(SplitTag::kUnlabeledTrain);
    const Tensor emb = embed_for_eval(state, data, unlabeled, config.train);
    rows.push_back(to_row(evaluate(emb, data.labels(unlabeled), data.split, Protocol::kTaskAware, config.eval), state));
  }
  return rows;
}

void train_phase(PhaseState& state, const Dataset& data, const RunConfig& config, std::size_t until_epoch,
                 RunLog& log, const StepObserver& observer) {
  const std::size_t total = phase_length(state.phase, config.train);
  until_epoch = std::min(until_epoch, total);
  while (state.epoch < until_epoch) {
    log.losses.push_back(run_epoch(state, data, config, observer));
    const std::size_t every = config.train.eval_every;
    if (state.epoch == total || (every > 0 && state.epoch % every == 0)) {
      for (MetricsRow& row : evaluate_state(state, data, config)) log.metrics.push_back(row);
    }
  }
}

std::vector<SaliencyMap> saliency_for(const PhaseState& state, const Dataset& data, std::size_t count,
                                      std::size_t k) {
  std::vector<std::size_t> test = data.indices(SplitTag::kTest);
  test.resize(std::min(count, test.size()));
  std::vector<SaliencyMap> maps;
  if (test.empty()) return maps;
  const EncoderConfig& ec = state.encoder.config();
  const ChannelGrouping grouping = build_grouping(ec.feature_dims[0], ec.feature_dims[1], ec.feature_dims[2]);
  const std::vector<bool> blank = data.blank_regions();
  const std::size_t open = static_cast<std::size_t>(std::count(blank.begin(), blank.end(), false));
  const Tensor fm = state.encoder.feature_maps(data.stack(test));
  const std::size_t per = fm.size() / test.size();
  for (std::size_t i = 0; i < test.size(); ++i) {
    std::vector<double> values(fm.data().begin() + static_cast<std::ptrdiff_t>(i * per),
                               fm.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    Tensor one({ec.feature_dims[0], ec.feature_dims[1], ec.feature_dims[2]}, std::move(values));
    maps.push_back(region_saliency(one, grouping, blank, std::min(k, open)));
  }
  return maps;
}

PhaseState run_experiment(const Dataset& data, const RunConfig& config, RunLog& log,
                          const std::optional<std::filesystem::path>& out_dir) {
  if (out_dir) std::filesystem::create_directories(*out_dir);
  PhaseState state = make_initial_state(config);
  train_phase(state, data, config, config.train.pretrain_epochs, log);
  if (out_dir) save_checkpoint(*out_dir / "pretrain.ckpt", state, config);
  begin_discover(state, data, config);
  train_phase(state, data, config, config.train.discover_epochs, log);
  if (out_dir) {
    save_checkpoint(*out_dir / "final.ckpt", state, config);
    write_metrics(*out_dir, log);
    const auto maps = saliency_for(state, data, 8, 5);
    write_saliency_dump(*out_dir / "saliency.json", maps);
  }
  return state;
}

void write_metrics(const std::filesystem::path& out_dir, const RunLog& log) {
  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir / "metrics.csv");
  if (!csv) throw IoError("cannot write " + (out_dir / "metrics.csv").string());
  csv << "phase,protocol,acc_all,acc_old,acc_new,seed,epoch\n";
  nlohmann::json rows = nlohmann::json::array();
  for (const MetricsRow& m : log.metrics) {
    csv << to_string(m.phase) << ',' << to_string(m.protocol) << ',' << fmt(m.acc_all) << ',' << fmt(m.acc_old)
        << ',' << fmt(m.acc_new) << ',' << m.seed << ',' << m.epoch << '\n';
    nlohmann::json j;
    j["phase"] = std::string(to_string(m.phase));
    j["protocol"] = to_string(m.protocol);
    j["acc_all"] = m.acc_all;
    j["acc_old"] = m.acc_old ? nlohmann::json(*m.acc_old) : nlohmann::json(nullptr);
    j["acc_new"] = m.acc_new ? nlohmann::json(*m.acc_new) : nlohmann::json(nullptr);
    j["seed"] = m.seed;
    j["epoch"] = m.epoch;
    rows.push_back(std::move(j));
  }
  std::ofstream json(out_dir / "metrics.json");
  json << rows.dump(2) << '\n';

  std::ofstream losses(out_dir / "losses.csv");
  losses << "phase,epoch,lr,total,cra,pc,reg,pcl,steps\n";
  for (const EpochLog& e : log.losses) {
    losses << to_string(e.phase) << ',' << e.epoch << ',' << fmt(e.lr) << ',' << fmt(e.mean.total) << ','
           << fmt(e.mean.cra) << ',' << fmt(e.mean.pc) << ',' << fmt(e.mean.reg) << ',' << fmt(e.mean.pcl) << ','
           << e.steps << '\n';
  }
  if (!csv || !json || !losses) throw IoError("failed writing metrics to " + out_dir.string());
}

RunLog read_run_log(const std::filesystem::path& out_dir) {
  RunLog log;
  if (std::ifstream in(out_dir / "metrics.json"); in) {
    const nlohmann::json rows = nlohmann::json::parse(in);
    for (const auto& j : rows) {
      MetricsRow m;
      m.phase = phase_from_string(j.at("phase").get<std::string>());
      m.protocol = protocol_from_string(j.at("protocol").get<std::string>());
      m.acc_all = j.at("acc_all").get<double>();
      if (!j.at("acc_old").is_null()) m.acc_old = j.at("acc_old").get<double>();
      if (!j.at("acc_new").is_null()) m.acc_new = j.at("acc_new").get<double>();
      m.seed = j.at("seed").get<std::uint64_t>();
      m.epoch = j.at("epoch").get<std::size_t>();
      log.metrics.push_back(m);
    }
  }
  if (std::ifstream in(out_dir / "losses.csv"); in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::vector<std::string> f;
      for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
      if (f.size() != 9) throw IoError("malformed losses.csv line: " + line);
      EpochLog e;
      e.phase = phase_from_string(f[0]);
      e.epoch = std::stoull(f[1]);
      e.lr = std::stod(f[2]);
      e.mean = {std::stod(f[4]), std::stod(f[5]), std::stod(f[6]), std::stod(f[7]), std::stod(f[3])};
      e.steps = std::stoull(f[8]);
      log.losses.push_back(e);
    }
  }
  return log;
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNoCra: return "no_cra";
    case Ablation::kNoReg: return "no_reg";
    case Ablation::kVanilla: return "vcl";
  }
  return "?";
}

Ablation ablation_from_string(std::string_view s) {
  for (Ablation a : {Ablation::kFull, Ablation::kNoCra, Ablation::kNoReg, Ablation::kVanilla})
    if (s == to_string(a)) return a;
  throw ConfigError("unknown ablation '" + std::string(s) + "'");
}

RunConfig apply_ablation(RunConfig config, Ablation a) {
  switch (a) {
    case Ablation::kFull: break;
    case Ablation::kNoCra: config.train.alpha = 0.0; break;
    case Ablation::kNoReg: config.train.gamma = 0.0; break;
    case Ablation::kVanilla: config.train.contrastive = ContrastiveMode::kVanilla; break;
  }
  return config;
}

std::vector<AblationRow> run_ablations(const RunConfig& base, std::span<const Ablation> variants,
                                       std::span<const std::uint64_t> seeds) {
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    RunConfig config = base;
    config.apply_seed(seed);
    const Dataset data = generate(config.synth);
    for (Ablation v : variants) {
      RunConfig cfg = apply_ablation(config, v);
      cfg.train.eval_every = 0;
      RunLog log;
      const PhaseState state = run_experiment(data, cfg, log);
      for (const MetricsRow& m : evaluate_state(state, data, cfg)) rows.push_back({v, m});
    }
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "variant,protocol,acc_all,acc_old,acc_new,seed\n";
  for (const AblationRow& r : rows) {
    os << to_string(r.variant) << ',' << to_string(r.metrics.protocol) << ',' << fmt(r.metrics.acc_all) << ','
       << fmt(r.metrics.acc_old) << ',' << fmt(r.metrics.acc_new) << ',' << r.metrics.seed << '\n';
  }
}

std::vector<GradCheckReport> gradcheck_suite(std::uint64_t seed, const GradCheckOptions& options) {
  std::mt19937_64 rng(derive_seed(seed, 0x67636b));
  std::vector<GradCheckReport> reports;
  GradCheckOptions opts = options;
  opts.cotangent_seed = derive_seed(seed, 0x636f74);

  const ChannelGrouping grouping = build_grouping(6, 2, 2);
  reports.push_back(grad_check(
      "cra_loss", [&](Tape&, std::span<const Var> in) { return cra_loss(in[0], grouping); },
      {random_tensor({2, 6, 2, 2}, rng)}, opts));

  const std::vector<std::size_t> labels = {0, 2, 1, 3, 2};
  reports.push_back(grad_check(
      "pc_loss", [&](Tape&, std::span<const Var> in) { return pc_loss(in[0], labels, in[1], 2); },
      {random_tensor({5, 4}, rng), random_tensor({4, 4}, rng)}, opts));

  reports.push_back(grad_check(
      "proxy_reg_loss", [](Tape&, std::span<const Var> in) { return proxy_reg_loss(in[0]); },
      {random_tensor({4, 5}, rng)}, opts));

  const ViewPairing pairing = ViewPairing::halves(3);
  reports.push_back(grad_check(
      "pcl_loss", [&](Tape&, std::span<const Var> in) { return pcl_loss(in[0], pairing, in.subspan(1), 0.1); },
      {random_tensor({6, 4}, rng), random_tensor({3, 4}, rng), random_tensor({2, 4}, rng)}, opts));

  reports.push_back(grad_check(
      "pcl_loss_vanilla", [&](Tape&, std::span<const Var> in) { return pcl_loss(in[0], pairing, {}, 0.1); },
      {random_tensor({6, 4}, rng)}, opts));

  EncoderConfig ec;
  ec.input_dims = {1, 8, 8};
  ec.feature_dims = {8, 2, 2};
  ec.conv_channels = {3, 4};
  ec.mlp_hidden = 6;
  ec.embed_dim = 5;
  ec.seed = derive_seed(seed, 0x656e63);
  const Encoder encoder(ec);
  std::vector<Tensor> inputs{random_tensor({4, 1, 8, 8}, rng)};
  // Jitter every parameter (zero-initialized biases included) so no ReLU input sits exactly on its kink.
  for (const Parameter& p : encoder.parameters()) {
    Tensor jitter = random_tensor(p.value.shape(), rng);
    for (std::size_t i = 0; i < jitter.size(); ++i) jitter[i] = p.value[i] + 0.1 * jitter[i];
    inputs.push_back(std::move(jitter));
  }
  reports.push_back(grad_check(
      "encoder_head",
      [&](Tape&, std::span<const Var> in) {
        HeadBatchStats stats;
        return encoder.project(encoder.encode(in[0], in.subspan(1)), in.subspan(1), &stats);
      },
      inputs, opts));

  const ChannelGrouping enc_grouping = build_grouping(8, 2, 2);
  const std::vector<std::size_t> enc_labels = {1, 0, 2, 1};
  inputs.push_back(random_tensor({3, 5}, rng));
  const std::size_t np = encoder.parameters().size();
  reports.push_back(grad_check(
      "pretrain_objective",
      [&](Tape&, std::span<const Var> in) {
        const auto params = in.subspan(1, np);
        const Var& proxies = in[1 + np];
        Var fm = encoder.encode(in[0], params);
        HeadBatchStats stats;
        Var v = encoder.project(fm, params, &stats);
        return ops::add(ops::add(ops::scale(cra_loss(fm, enc_grouping), 0.6), ops::scale(pc_loss(v, enc_labels, proxies, 1), 2.0)),
                        proxy_reg_loss(proxies));
      },
      inputs, opts));
  return reports;
}

}  // namespace rapl
