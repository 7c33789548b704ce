#include "rapl/encoder.hpp"

#include <cmath>
#include <random>
#include <string>

#include "rapl/error.hpp"

namespace rapl {
namespace {

std::size_t conv_out(std::size_t in) { return (in + 2 - 3) / 2 + 1; }

Tensor he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = dist(rng);
  return t;
}

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Var linear(const Var& x, const Var& w, const Var& b) { return ops::add_row_bias(ops::matmul(x, w), b); }

}  // namespace

void EncoderConfig::validate() const {
  const auto [c, h, w] = input_dims;
  const auto [d, fh, fw] = feature_dims;
  if (c == 0 || h == 0 || w == 0 || d == 0 || fh == 0 || fw == 0 || mlp_hidden == 0 || embed_dim == 0 ||
      conv_channels[0] == 0 || conv_channels[1] == 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (d < fh * fw) {
    throw ConfigError("feature channels D=" + std::to_string(d) + " must be at least H*W=" + std::to_string(fh * fw));
  }
  if (conv_out(conv_out(h)) != fh || conv_out(conv_out(w)) != fw) {
    throw ConfigError("input " + std::to_string(h) + "x" + std::to_string(w) + " does not reduce to feature grid " +
                      std::to_string(fh) + "x" + std::to_string(fw) + " through two stride-2 convolutions");
  }
  if (!(bn_eps > 0.0) || !(bn_momentum > 0.0 && bn_momentum <= 1.0)) {
    throw ConfigError("bn_eps must be positive and bn_momentum in (0, 1]");
  }
  if (identity_head && (mlp_hidden != d || embed_dim != d)) {
    throw ConfigError("identity head requires mlp_hidden == embed_dim == D");
  }
}

ViewPairing::ViewPairing(std::vector<std::size_t> partner) : partner_(std::move(partner)) {
  for (std::size_t i = 0; i < partner_.size(); ++i) {
    const std::size_t j = partner_[i];
    if (j >= partner_.size() || j == i || partner_[j] != i) {
      throw ConfigError("view pairing must be an involution without fixed points (row " + std::to_string(i) + ")");
    }
  }
}

ViewPairing ViewPairing::halves(std::size_t n) {
  std::vector<std::size_t> p(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = i + n;
    p[i + n] = i;
  }
  return ViewPairing(std::move(p));
}

Encoder::Encoder(EncoderConfig config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(stream_seed(config_.seed, Stream::kInit));
  const auto [c, h, w] = config_.input_dims;
  const std::size_t d = config_.channels();
  const auto [c1, c2] = config_.conv_channels;
  params_.push_back({"conv1.weight", he_uniform({c1, c, 3, 3}, c * 9, rng)});
  params_.push_back({"conv1.bias", Tensor({c1})});
  params_.push_back({"conv2.weight", he_uniform({c2, c1, 3, 3}, c1 * 9, rng)});
  params_.push_back({"conv2.bias", Tensor({c2})});
  params_.push_back({"conv3.weight", he_uniform({d, c2, 1, 1}, c2, rng)});
  params_.push_back({"conv3.bias", Tensor({d})});
  const std::size_t hid = config_.mlp_hidden, emb = config_.embed_dim;
  if (config_.identity_head) {
    params_.push_back({"head.fc1.weight", identity(d)});
    params_.push_back({"head.fc1.bias", Tensor({d})});
    params_.push_back({"head.fc2.weight", identity(d)});
    params_.push_back({"head.fc2.bias", Tensor({d})});
    params_.push_back({"head.fc3.weight", identity(d)});
    params_.push_back({"head.fc3.bias", Tensor({d})});
  } else {
    params_.push_back({"head.fc1.weight", he_uniform({d, hid}, d, rng)});
    params_.push_back({"head.fc1.bias", Tensor({hid})});
    params_.push_back({"head.fc2.weight", he_uniform({hid, hid}, hid, rng)});
    params_.push_back({"head.fc2.bias", Tensor({hid})});
    params_.push_back({"head.fc3.weight", he_uniform({hid, emb}, hid, rng)});
    params_.push_back({"head.fc3.bias", Tensor({emb})});
  }
  if (config_.uses_batch_norm()) {
    for (const char* bn : {"head.bn1", "head.bn2"}) {
      params_.push_back({std::string(bn) + ".weight", Tensor({hid}, 1.0), false});
      params_.push_back({std::string(bn) + ".bias", Tensor({hid}), false});
      buffers_.push_back({std::string(bn) + ".running_mean", Tensor({hid}), false});
      buffers_.push_back({std::string(bn) + ".running_var", Tensor({hid}, 1.0), false});
    }
  }
}

Var Encoder::encode(const Var& input, std::span<const Var> params) const {
  if (params.size() != params_.size()) throw DimensionError("encode: wrong number of bound parameters");
  const Shape& s = input.shape();
  const auto [c, h, w] = config_.input_dims;
  if (s.size() != 4 || s[1] != c || s[2] != h || s[3] != w) {
    throw DimensionError("encode: input " + shape_str(s) + " does not match configured " + std::to_string(c) + "x" +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  Var x = ops::relu(ops::conv2d(input, params[0], params[1], 2, 1));
  x = ops::relu(ops::conv2d(x, params[2], params[3], 2, 1));
  return ops::conv2d(x, params[4], params[5], 1, 0);
}

Var Encoder::pool(const Var& feature_maps) const {
  const Shape& s = feature_maps.shape();
  if (s.size() != 4 || s[1] != config_.feature_dims[0] || s[2] != config_.feature_dims[1] ||
      s[3] != config_.feature_dims[2]) {
    throw DimensionError("feature map " + shape_str(s) + " does not match encoder config");
  }
  return ops::global_avg_pool(config_.rectify_pool ? ops::relu(feature_maps) : feature_maps);
}

Var Encoder::project(const Var& feature_maps, std::span<const Var> params, HeadBatchStats* stats) const {
  if (params.size() != params_.size()) throw DimensionError("project: wrong number of bound parameters");
  const auto head = params.subspan(kConvParams);
  Var v = pool(feature_maps);
  if (config_.identity_head) {
    v = linear(v, head[0], head[1]);
    v = linear(v, head[2], head[3]);
    return linear(v, head[4], head[5]);
  }
  if (stats) *stats = HeadBatchStats{v.shape()[0], {}, {}};
  const auto norm = [&](Var x, std::size_t layer) {
    if (!config_.uses_batch_norm()) return x;
    const Var& gamma = head[6 + 2 * layer];
    const Var& beta = head[7 + 2 * layer];
    if (!stats) {
      return ops::batch_norm_fixed(x, gamma, beta, buffers_[2 * layer].value, buffers_[2 * layer + 1].value,
                                   config_.bn_eps);
    }
    Tensor mean, var;
    x = ops::batch_norm(x, gamma, beta, config_.bn_eps, &mean, &var);
    stats->mean.push_back(std::move(mean));
    stats->var.push_back(std::move(var));
    return x;
  };
  v = ops::relu(norm(linear(v, head[0], head[1]), 0));
  v = ops::relu(norm(linear(v, head[2], head[3]), 1));
  return linear(v, head[4], head[5]);
}

void Encoder::update_running_stats(const HeadBatchStats& stats) {
  if (!config_.uses_batch_norm()) return;
  if (stats.mean.size() != 2 || stats.var.size() != 2 || stats.rows < 2) {
    throw DimensionError("update_running_stats: incomplete batch statistics");
  }
  const double m = config_.bn_momentum;
  const double unbias = static_cast<double>(stats.rows) / static_cast<double>(stats.rows - 1);
  for (std::size_t layer = 0; layer < 2; ++layer) {
    Tensor& rm = buffers_[2 * layer].value;
    Tensor& rv = buffers_[2 * layer + 1].value;
    for (std::size_t j = 0; j < rm.size(); ++j) {
      rm[j] = (1.0 - m) * rm[j] + m * stats.mean[layer][j];
      rv[j] = (1.0 - m) * rv[j] + m * stats.var[layer][j] * unbias;
    }
  }
}

Tensor Encoder::feature_maps(const Tensor& input) const {
  Tape tape;
  const auto vars = bind(tape, params_, false);
  return encode(tape.constant(input), vars).value();
}

Tensor Encoder::embed(const Tensor& input, bool pooled_only) const {
  Tape tape;
  const auto vars = bind(tape, params_, false);
  Var fm = encode(tape.constant(input), vars);
  return pooled_only ? pool(fm).value() : project(fm, vars).value();
}

}  // namespace rapl
