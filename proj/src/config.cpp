#include "rapl/config.hpp"

#include <fstream>
#include <set>

#include "rapl/error.hpp"

namespace rapl {
namespace {

using nlohmann::json;

// Rejects keys the struct does not know, so typos in run configs surface early.
void check_keys(const json& j, std::initializer_list<const char*> known, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be a JSON object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + key + "' in " + section);
  }
}

template <typename T>
void read(const json& j, const char* key, T& field) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      it->get_to(field);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

}  // namespace

void to_json(json& j, const SynthConfig& c) {
  j = json{{"num_classes", c.num_classes},
           {"num_old", c.num_old},
           {"num_new", c.num_new},
           {"train_per_class", c.train_per_class},
           {"test_per_class", c.test_per_class},
           {"input_dims", c.input_dims},
           {"region_grid", c.region_grid},
           {"template_strength", c.template_strength},
           {"class_signal_strength", c.class_signal_strength},
           {"signal_regions_per_class", c.signal_regions_per_class},
           {"pattern_vocabulary", c.pattern_vocabulary},
           {"intra_class_noise", c.intra_class_noise},
           {"blank_margin", c.blank_margin},
           {"flip_prob", c.flip_prob},
           {"mode", std::string(to_string(c.mode))},
           {"seed", c.seed}};
}

void from_json(const json& j, SynthConfig& c) {
  check_keys(j,
             {"num_classes", "num_old", "num_new", "train_per_class", "test_per_class", "input_dims", "region_grid",
              "template_strength", "class_signal_strength", "signal_regions_per_class", "pattern_vocabulary",
              "intra_class_noise", "blank_margin", "flip_prob", "mode", "seed"},
             "synth");
  read(j, "num_classes", c.num_classes);
  read(j, "num_old", c.num_old);
  read(j, "num_new", c.num_new);
  read(j, "train_per_class", c.train_per_class);
  read(j, "test_per_class", c.test_per_class);
  read(j, "input_dims", c.input_dims);
  read(j, "region_grid", c.region_grid);
  read(j, "template_strength", c.template_strength);
  read(j, "class_signal_strength", c.class_signal_strength);
  read(j, "signal_regions_per_class", c.signal_regions_per_class);
  read(j, "pattern_vocabulary", c.pattern_vocabulary);
  read(j, "intra_class_noise", c.intra_class_noise);
  read(j, "blank_margin", c.blank_margin);
  read(j, "flip_prob", c.flip_prob);
  if (j.contains("mode")) c.mode = split_mode_from_string(j.at("mode").get<std::string>());
  read(j, "seed", c.seed);
}

void to_json(json& j, const EncoderConfig& c) {
  j = json{{"input_dims", c.input_dims},   {"feature_dims", c.feature_dims}, {"conv_channels", c.conv_channels},
           {"mlp_hidden", c.mlp_hidden},   {"embed_dim", c.embed_dim},       {"seed", c.seed},
           {"identity_head", c.identity_head}, {"rectify_pool", c.rectify_pool},
           {"head_batch_norm", c.head_batch_norm}, {"bn_eps", c.bn_eps}, {"bn_momentum", c.bn_momentum}};
}

void from_json(const json& j, EncoderConfig& c) {
  check_keys(j, {"input_dims", "feature_dims", "conv_channels", "mlp_hidden", "embed_dim", "seed", "identity_head", "rectify_pool",
              "head_batch_norm", "bn_eps", "bn_momentum"},
             "encoder");
  read(j, "input_dims", c.input_dims);
  read(j, "feature_dims", c.feature_dims);
  read(j, "conv_channels", c.conv_channels);
  read(j, "mlp_hidden", c.mlp_hidden);
  read(j, "embed_dim", c.embed_dim);
  read(j, "seed", c.seed);
  read(j, "identity_head", c.identity_head);
  read(j, "rectify_pool", c.rectify_pool);
  read(j, "head_batch_norm", c.head_batch_norm);
  read(j, "bn_eps", c.bn_eps);
  read(j, "bn_momentum", c.bn_momentum);
}

void TrainConfig::validate() const {
  for (double wgt : {alpha, beta_pretrain, beta_discover, gamma, delta, lr, momentum, weight_decay}) {
    if (!(wgt >= 0.0)) throw ConfigError("loss weights, lr, momentum and weight decay must be non-negative");
  }
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(xi > 0.0 && xi <= 1.0)) throw ConfigError("xi must lie in (0, 1]");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"alpha", c.alpha},
           {"beta_pretrain", c.beta_pretrain},
           {"beta_discover", c.beta_discover},
           {"gamma", c.gamma},
           {"delta", c.delta},
           {"tau", c.tau},
           {"xi", c.xi},
           {"lr", c.lr},
           {"momentum", c.momentum},
           {"weight_decay", c.weight_decay},
           {"warmup_epochs", c.warmup_epochs},
           {"pretrain_epochs", c.pretrain_epochs},
           {"discover_epochs", c.discover_epochs},
           {"batch_size", c.batch_size},
           {"seed", c.seed},
           {"contrastive", c.contrastive == ContrastiveMode::kProxy ? "proxy" : "vanilla"},
           {"renormalize_new_proxies", c.renormalize_new_proxies},
           {"eval_every", c.eval_every},
           {"eval_on_pooled", c.eval_on_pooled}};
}

void from_json(const json& j, TrainConfig& c) {
  check_keys(j,
             {"alpha", "beta_pretrain", "beta_discover", "gamma", "delta", "tau", "xi", "lr", "momentum",
              "weight_decay", "warmup_epochs", "pretrain_epochs", "discover_epochs", "batch_size", "seed",
              "contrastive", "renormalize_new_proxies", "eval_every", "eval_on_pooled"},
             "train");
  read(j, "alpha", c.alpha);
  read(j, "beta_pretrain", c.beta_pretrain);
  read(j, "beta_discover", c.beta_discover);
  read(j, "gamma", c.gamma);
  read(j, "delta", c.delta);
  read(j, "tau", c.tau);
  read(j, "xi", c.xi);
  read(j, "lr", c.lr);
  read(j, "momentum", c.momentum);
  read(j, "weight_decay", c.weight_decay);
  read(j, "warmup_epochs", c.warmup_epochs);
  read(j, "pretrain_epochs", c.pretrain_epochs);
  read(j, "discover_epochs", c.discover_epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "seed", c.seed);
  if (j.contains("contrastive")) {
    const auto mode = j.at("contrastive").get<std::string>();
    if (mode == "proxy") {
      c.contrastive = ContrastiveMode::kProxy;
    } else if (mode == "vanilla") {
      c.contrastive = ContrastiveMode::kVanilla;
    } else {
      throw ConfigError("contrastive must be 'proxy' or 'vanilla'");
    }
  }
  read(j, "renormalize_new_proxies", c.renormalize_new_proxies);
  read(j, "eval_every", c.eval_every);
  read(j, "eval_on_pooled", c.eval_on_pooled);
}

void to_json(json& j, const EvalOptions& c) {
  j = json{{"kmeans_seed", c.kmeans.seed},        {"kmeans_max_iters", c.kmeans.max_iters},
           {"kmeans_tol", c.kmeans.tol},          {"kmeans_restarts", c.kmeans.restarts},
           {"normalize", c.normalize},            {"per_subset_permutation", c.per_subset_permutation}};
}

void from_json(const json& j, EvalOptions& c) {
  check_keys(j,
             {"kmeans_seed", "kmeans_max_iters", "kmeans_tol", "kmeans_restarts", "normalize",
              "per_subset_permutation"},
             "eval");
  read(j, "kmeans_seed", c.kmeans.seed);
  read(j, "kmeans_max_iters", c.kmeans.max_iters);
  read(j, "kmeans_tol", c.kmeans.tol);
  read(j, "kmeans_restarts", c.kmeans.restarts);
  read(j, "normalize", c.normalize);
  read(j, "per_subset_permutation", c.per_subset_permutation);
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"synth", c.synth}, {"encoder", c.encoder}, {"train", c.train}, {"eval", c.eval}};
}

void from_json(const json& j, RunConfig& c) {
  check_keys(j, {"synth", "encoder", "train", "eval"}, "run config");
  if (j.contains("synth")) from_json(j.at("synth"), c.synth);
  if (j.contains("encoder")) from_json(j.at("encoder"), c.encoder);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("eval")) from_json(j.at("eval"), c.eval);
}

void RunConfig::apply_seed(std::uint64_t seed) {
  synth.seed = seed;
  encoder.seed = seed;
  train.seed = seed;
  eval.kmeans.seed = seed;
}

void RunConfig::validate() const {
  synth.validate();
  encoder.validate();
  train.validate();
  if (synth.input_dims != encoder.input_dims) throw ConfigError("synth and encoder input dims disagree");
  if (synth.region_grid[0] != encoder.feature_dims[1] || synth.region_grid[1] != encoder.feature_dims[2]) {
    throw ConfigError("synth region grid must match the encoder feature grid");
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig cfg = j.get<RunConfig>();
  cfg.validate();
  return cfg;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write config " + path.string());
  os << json(config).dump(2) << '\n';
}

}  // namespace rapl
