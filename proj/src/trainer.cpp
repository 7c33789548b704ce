#include "rapl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "rapl/error.hpp"

namespace rapl {
namespace {

constexpr char kCheckpointMagic[8] = {'R', 'A', 'P', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t epoch_key(Phase phase, std::size_t epoch) {
  return (phase == Phase::kPretrain ? 0ULL : 1ULL << 32) + epoch;
}

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  Shape s = a.shape();
  s[0] += b.dim(0);
  std::vector<double> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor(std::move(s), std::move(data));
}

void apply_encoder_update(PhaseState& state, std::span<const Var> bound, const TrainConfig& config, double lr) {
  ParameterList& params = state.encoder.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.optimizer.step(params[i].name, params[i].value, bound[i].grad(), lr,
                         params[i].weight_decay ? config.weight_decay : 0.0);
  }
}

}  // namespace

double lr_at(std::size_t epoch, std::size_t total_epochs, const TrainConfig& config) {
  const std::size_t warm = config.warmup_epochs;
  if (warm > 0 && epoch < warm) {
    return config.lr * static_cast<double>(epoch + 1) / static_cast<double>(warm);
  }
  if (total_epochs <= warm) return config.lr;
  const double progress = static_cast<double>(epoch - warm) / static_cast<double>(total_epochs - warm);
  return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

void SgdMomentum::step(const std::string& name, Tensor& value, const Tensor& grad, double lr, double weight_decay) {
  if (grad.shape() != value.shape()) throw DimensionError("optimizer: gradient shape mismatch for " + name);
  auto [it, fresh] = buffers_.try_emplace(name, value.shape(), 0.0);
  Tensor& buf = it->second;
  for (std::size_t i = 0; i < value.size(); ++i) {
    buf[i] = momentum_ * buf[i] + grad[i] + weight_decay * value[i];
    value[i] -= lr * buf[i];
  }
}

std::string_view to_string(Phase p) { return p == Phase::kPretrain ? "pretrain" : "discover"; }

Phase phase_from_string(std::string_view s) {
  if (s == "pretrain") return Phase::kPretrain;
  if (s == "discover") return Phase::kDiscover;
  throw ConfigError("unknown phase '" + std::string(s) + "'");
}

PhaseState make_initial_state(const RunConfig& config) {
  config.validate();
  PhaseState state;
  state.phase = Phase::kPretrain;
  state.encoder = Encoder(config.encoder);
  state.bank = ProxyBank::random(config.synth.num_old, config.encoder.embed_dim,
                                 stream_seed(config.train.seed, Stream::kProxyInit));
  state.optimizer = SgdMomentum(config.train.momentum);
  state.seed = config.train.seed;
  return state;
}

LossComponents pretrain_step(const PretrainBatch& batch, PhaseState& state, const TrainConfig& config, double lr) {
  if (state.phase != Phase::kPretrain) throw ConfigError("pretrain_step called outside the pre-train phase");
  const std::size_t num_old = state.bank.num_old();
  for (std::size_t y : batch.labels) {
    if (y >= num_old) throw ConfigError("pre-train batch contains a sample outside the labeled classes");
  }
  if (batch.inputs.rank() != 4 || batch.inputs.dim(0) != batch.labels.size()) {
    throw DimensionError("pre-train batch inputs and labels disagree");
  }
  const EncoderConfig& ec = state.encoder.config();
  const ChannelGrouping grouping = build_grouping(ec.feature_dims[0], ec.feature_dims[1], ec.feature_dims[2]);

  Tape tape;
  const std::vector<Var> enc = rapl::bind(tape, state.encoder.parameters());
  Var old_proxies = tape.leaf(state.bank.old_proxies, !state.bank.old_frozen);
  Var fm = state.encoder.encode(tape.constant(batch.inputs), enc);
  Var cra = cra_loss(fm, grouping);
  HeadBatchStats stats;
  Var embeddings = state.encoder.project(fm, enc, &stats);
  Var pc = pc_loss(embeddings, batch.labels, old_proxies, topk_from_ratio(config.xi, num_old));
  Var reg = proxy_reg_loss(old_proxies);
  Var total = ops::add(ops::add(ops::scale(cra, config.alpha), ops::scale(pc, config.beta_pretrain)),
                       ops::scale(reg, config.gamma));
  tape.backward(total);

  apply_encoder_update(state, enc, config, lr);
  state.encoder.update_running_stats(stats);
  if (!state.bank.old_frozen) state.optimizer.step("proxy.old", state.bank.old_proxies, old_proxies.grad(), lr, 0.0);
  return {cra.value().item(), pc.value().item(), reg.value().item(), 0.0, total.value().item()};
}

LossComponents discover_step(const DiscoverBatch& batch, PhaseState& state, const TrainConfig& config, double lr) {
  if (state.phase != Phase::kDiscover) throw ConfigError("discover_step called outside the discover phase");
  if (!state.bank.new_proxies) throw ConfigError("discover_step needs initialized new proxies");
  if (batch.view1.shape() != batch.view2.shape() || batch.view1.rank() != 4) {
    throw DimensionError("discover batch views disagree");
  }
  const std::size_t n = batch.view1.dim(0);
  const std::size_t n_labeled = batch.labels.size();
  if (n_labeled > n) throw DimensionError("discover batch has more labels than samples");
  const std::size_t num_old = state.bank.num_old();
  for (std::size_t y : batch.labels)
    if (y >= num_old) throw ConfigError("discover batch label outside the labeled classes");

  const EncoderConfig& ec = state.encoder.config();
  const ChannelGrouping grouping = build_grouping(ec.feature_dims[0], ec.feature_dims[1], ec.feature_dims[2]);

  Tape tape;
  const std::vector<Var> enc = rapl::bind(tape, state.encoder.parameters());
  Var old_proxies = tape.constant(state.bank.old_proxies);
  Var new_proxies = tape.leaf(*state.bank.new_proxies, true);
  Var fm = state.encoder.encode(tape.constant(stack_rows(batch.view1, batch.view2)), enc);
  Var cra = cra_loss(fm, grouping);
  HeadBatchStats stats;
  Var embeddings = state.encoder.project(fm, enc, &stats);

  Var pc = tape.constant(Tensor::scalar(0.0));
  if (n_labeled > 0) {
    std::vector<std::size_t> rows, labels;
    for (std::size_t view = 0; view < 2; ++view)
      for (std::size_t i = 0; i < n_labeled; ++i) {
        rows.push_back(view * n + i);
        labels.push_back(batch.labels[i]);
      }
    pc = pc_loss(ops::gather_rows(embeddings, rows), labels, old_proxies, topk_from_ratio(config.xi, num_old));
  }
  std::vector<Var> proxy_sets;
  if (config.contrastive == ContrastiveMode::kProxy) proxy_sets = {old_proxies, new_proxies};
  Var pcl = pcl_loss(embeddings, ViewPairing::halves(n), proxy_sets, config.tau);

  Var total = ops::add(ops::add(ops::scale(cra, config.alpha), ops::scale(pc, config.beta_discover)),
                       ops::scale(pcl, config.delta));
  tape.backward(total);

  apply_encoder_update(state, enc, config, lr);
  state.encoder.update_running_stats(stats);
  if (config.contrastive == ContrastiveMode::kProxy) {
    state.optimizer.step("proxy.new", *state.bank.new_proxies, new_proxies.grad(), lr, 0.0);
    if (config.renormalize_new_proxies) renormalize(*state.bank.new_proxies);
  }
  return {cra.value().item(), pc.value().item(), 0.0, pcl.value().item(), total.value().item()};
}

Tensor embed_for_eval(const PhaseState& state, const Dataset& data, std::span<const std::size_t> index,
                      const TrainConfig& config) {
  return state.encoder.embed(data.stack(index), config.eval_on_pooled);
}

void begin_discover(PhaseState& state, const Dataset& data, const RunConfig& config) {
  const std::vector<std::size_t> unlabeled = data.indices(SplitTag::kUnlabeledTrain);
  const Tensor features = state.encoder.embed(data.stack(unlabeled));
  state.bank.new_proxies =
      init_new_proxies(features, data.split.num_new, stream_seed(state.seed, Stream::kProxyInit, 1));
  state.bank.old_frozen = true;
  state.phase = Phase::kDiscover;
  state.epoch = 0;
  state.optimizer = SgdMomentum(config.train.momentum);
}

EpochLog run_epoch(PhaseState& state, const Dataset& data, const RunConfig& config, const StepObserver& observer) {
  const TrainConfig& tc = config.train;
  const bool pretrain = state.phase == Phase::kPretrain;
  const std::size_t total_epochs = pretrain ? tc.pretrain_epochs : tc.discover_epochs;
  const std::uint64_t key = epoch_key(state.phase, state.epoch);
  std::mt19937_64 order_rng(stream_seed(state.seed, Stream::kDataOrder, key));
  const ViewJitter jitter = ViewJitter::from(data.config);
  const std::uint64_t augment_base = stream_seed(state.seed, Stream::kAugment, key);

  EpochLog log;
  log.phase = state.phase;
  log.epoch = state.epoch;
  log.lr = lr_at(state.epoch, total_epochs, tc);

  auto record = [&](const LossComponents& lc) {
    log.mean.cra += lc.cra;
    log.mean.pc += lc.pc;
    log.mean.reg += lc.reg;
    log.mean.pcl += lc.pcl;
    log.mean.total += lc.total;
    ++log.steps;
    if (observer) observer(state, lc);
  };

  std::vector<std::size_t> labeled = data.indices(SplitTag::kLabeledTrain);
  std::shuffle(labeled.begin(), labeled.end(), order_rng);
  if (pretrain) {
    if (labeled.empty()) throw ConfigError("pre-training needs labeled samples");
    for (std::size_t start = 0, end = 0; start < labeled.size(); start = end) {
      end = std::min(labeled.size(), start + tc.batch_size);
      // A lone trailing sample joins this batch: batch statistics need two rows.
      if (labeled.size() - end == 1) ++end;
      PretrainBatch batch;
      std::vector<std::size_t> idx(labeled.begin() + static_cast<std::ptrdiff_t>(start),
                                   labeled.begin() + static_cast<std::ptrdiff_t>(end));
      batch.inputs = data.stack(idx);
      batch.labels = data.labels(idx);
      const std::size_t per = batch.inputs.size() / idx.size();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto views = augment_views(data.samples[idx[i]], jitter, derive_seed(augment_base, log.steps, i));
        std::copy(views.first.data().begin(), views.first.data().end(),
                  batch.inputs.data().begin() + static_cast<std::ptrdiff_t>(i * per));
      }
      record(pretrain_step(batch, state, tc, log.lr));
    }
  } else {
    std::vector<std::size_t> unlabeled = data.indices(SplitTag::kUnlabeledTrain);
    if (unlabeled.empty()) throw ConfigError("discovery needs unlabeled samples");
    std::shuffle(unlabeled.begin(), unlabeled.end(), order_rng);
    const std::size_t per_unlabeled = tc.batch_size / 2;
    const std::size_t per_labeled = labeled.empty() ? 0 : tc.batch_size - per_unlabeled;
    std::size_t cursor = 0;
    for (std::size_t start = 0; start < unlabeled.size(); start += per_unlabeled) {
      const std::size_t end = std::min(unlabeled.size(), start + per_unlabeled);
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < per_labeled; ++i) idx.push_back(labeled[cursor++ % labeled.size()]);
      DiscoverBatch batch;
      batch.labels = data.labels(idx);
      idx.insert(idx.end(), unlabeled.begin() + static_cast<std::ptrdiff_t>(start),
                 unlabeled.begin() + static_cast<std::ptrdiff_t>(end));
      batch.view1 = data.stack(idx);
      batch.view2 = batch.view1;
      const std::size_t per = batch.view1.size() / idx.size();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto views = augment_views(data.samples[idx[i]], jitter, derive_seed(augment_base, log.steps, i));
        const auto off = static_cast<std::ptrdiff_t>(i * per);
        std::copy(views.first.data().begin(), views.first.data().end(), batch.view1.data().begin() + off);
        std::copy(views.second.data().begin(), views.second.data().end(), batch.view2.data().begin() + off);
      }
      record(discover_step(batch, state, tc, log.lr));
    }
  }
  const double steps = static_cast<double>(std::max<std::size_t>(log.steps, 1));
  log.mean.cra /= steps;
  log.mean.pc /= steps;
  log.mean.reg /= steps;
  log.mean.pcl /= steps;
  log.mean.total /= steps;
  ++state.epoch;
  return log;
}

namespace {

void write_raw(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_raw(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw IoError("truncated checkpoint");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PhaseState& state, const RunConfig& config) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const Parameter& p : state.encoder.parameters()) tensors.emplace_back("encoder/" + p.name, &p.value);
  for (const Parameter& b : state.encoder.buffers()) tensors.emplace_back("encoder_buffer/" + b.name, &b.value);
  tensors.emplace_back("proxy/old", &state.bank.old_proxies);
  if (state.bank.new_proxies) tensors.emplace_back("proxy/new", &*state.bank.new_proxies);
  for (const auto& [name, buf] : state.optimizer.buffers()) tensors.emplace_back("momentum/" + name, &buf);

  nlohmann::json header;
  header["config"] = config;
  header["encoder"] = state.encoder.config();
  header["phase"] = std::string(to_string(state.phase));
  header["epoch"] = state.epoch;
  header["seed"] = state.seed;
  header["momentum"] = state.optimizer.momentum();
  header["old_frozen"] = state.bank.old_frozen;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, t] : tensors) table.push_back({{"name", name}, {"shape", t->shape()}});
  header["tensors"] = std::move(table);
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  write_raw(os, kCheckpointMagic, sizeof kCheckpointMagic);
  write_raw(os, &kCheckpointVersion, sizeof kCheckpointVersion);
  const std::uint64_t len = text.size();
  write_raw(os, &len, sizeof len);
  write_raw(os, text.data(), text.size());
  for (const auto& [name, t] : tensors) write_raw(os, t->data().data(), t->data().size_bytes());
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

PhaseState load_checkpoint(const std::filesystem::path& path, RunConfig* config_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof kCheckpointMagic];
  read_raw(is, magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw IoError(path.string() + " is not a checkpoint");
  std::uint32_t version = 0;
  read_raw(is, &version, sizeof version);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t len = 0;
  read_raw(is, &len, sizeof len);
  std::string text(len, '\0');
  read_raw(is, text.data(), len);
  const nlohmann::json header = nlohmann::json::parse(text);

  PhaseState state;
  state.encoder = Encoder(header.at("encoder").get<EncoderConfig>());
  state.phase = phase_from_string(header.at("phase").get<std::string>());
  state.epoch = header.at("epoch").get<std::size_t>();
  state.seed = header.at("seed").get<std::uint64_t>();
  state.optimizer = SgdMomentum(header.at("momentum").get<double>());
  state.bank.old_frozen = header.at("old_frozen").get<bool>();

  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    Tensor t(entry.at("shape").get<Shape>());
    read_raw(is, t.data().data(), t.data().size_bytes());
    if (name.starts_with("encoder/")) {
      const std::string pname = name.substr(8);
      auto& params = state.encoder.parameters();
      auto it = std::find_if(params.begin(), params.end(), [&](const Parameter& p) { return p.name == pname; });
      if (it == params.end() || it->value.shape() != t.shape()) throw IoError("checkpoint tensor mismatch: " + name);
      it->value = std::move(t);
    } else if (name.starts_with("encoder_buffer/")) {
      const std::string bname = name.substr(15);
      auto& buffers = state.encoder.buffers();
      auto it = std::find_if(buffers.begin(), buffers.end(), [&](const Parameter& b) { return b.name == bname; });
      if (it == buffers.end() || it->value.shape() != t.shape()) throw IoError("checkpoint tensor mismatch: " + name);
      it->value = std::move(t);
    } else if (name == "proxy/old") {
      state.bank.old_proxies = std::move(t);
    } else if (name == "proxy/new") {
      state.bank.new_proxies = std::move(t);
    } else if (name.starts_with("momentum/")) {
      state.optimizer.buffers()[name.substr(9)] = std::move(t);
    } else {
      throw IoError("unknown checkpoint tensor " + name);
    }
  }
  if (config_out) *config_out = header.at("config").get<RunConfig>();
  return state;
}

}  // namespace rapl
