#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "rapl/encoder.hpp"
#include "rapl/error.hpp"
#include "rapl/gradcheck.hpp"
#include "test_util.hpp"

using namespace rapl;
using rapl::test::random_tensor;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.input_dims = {1, 8, 8};
  c.feature_dims = {8, 2, 2};
  c.conv_channels = {3, 4};
  c.mlp_hidden = 6;
  c.embed_dim = 5;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("default encoder shapes") {
  const Encoder enc(EncoderConfig{});
  const Tensor x = random_tensor({3, 1, 16, 16}, 1);
  CHECK(enc.feature_maps(x).shape() == Shape{3, 64, 4, 4});
  CHECK(enc.embed(x).shape() == Shape{3, 64});
  CHECK(enc.embed(x, true).shape() == Shape{3, 64});
  CHECK(enc.parameters().size() == Encoder::kConvParams + 6 + 4);
  CHECK(enc.buffers().size() == 4);
  CHECK_THROWS_AS(enc.feature_maps(random_tensor({3, 1, 8, 8}, 1)), DimensionError);
}

TEST_CASE("config validation") {
  EncoderConfig c;
  c.feature_dims = {8, 4, 4};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = EncoderConfig{};
  c.feature_dims = {64, 3, 3};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = EncoderConfig{};
  c.identity_head = true;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.mlp_hidden = 64;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("zero input with a zeroed last conv gives all-zero feature maps") {
  Encoder enc(small_config());
  for (Parameter& p : enc.parameters())
    if (p.name.starts_with("conv3")) std::fill(p.value.data().begin(), p.value.data().end(), 0.0);
  const Tensor fm = enc.feature_maps(Tensor({2, 1, 8, 8}, 0.0));
  for (double v : fm.data()) CHECK(v == 0.0);
}

TEST_CASE("same seed gives bit-identical outputs") {
  const Tensor x = random_tensor({2, 1, 8, 8}, 5);
  const Encoder a(small_config()), b(small_config());
  CHECK(a.embed(x) == b.embed(x));
  EncoderConfig other = small_config();
  other.seed = 4;
  CHECK_FALSE(Encoder(other).embed(x) == a.embed(x));
}

TEST_CASE("pooling: constant maps pool to the constant, spatial shuffles do not matter") {
  Tape tape;
  const Encoder enc(small_config());
  Var fm = tape.constant(Tensor({1, 8, 2, 2}, 2.5));
  for (double v : enc.pool(fm).value().data()) CHECK(v == 2.5);

  Tensor r = random_tensor({1, 8, 2, 2}, 6);
  Tensor shuffled = r;
  for (std::size_t c = 0; c < 8; ++c) std::reverse(shuffled.data().begin() + c * 4, shuffled.data().begin() + c * 4 + 4);
  const Tensor p1 = enc.pool(tape.constant(r)).value(), p2 = enc.pool(tape.constant(shuffled)).value();
  CHECK(rapl::test::max_abs_diff(p1, p2) <= 1e-15);
}

TEST_CASE("pooling rectifies negative maps unless disabled") {
  Tape tape;
  EncoderConfig c = small_config();
  Var fm = tape.constant(Tensor({1, 8, 2, 2}, -1.5));
  for (double v : Encoder(c).pool(fm).value().data()) CHECK(v == 0.0);
  c.rectify_pool = false;
  for (double v : Encoder(c).pool(fm).value().data()) CHECK(v == -1.5);
}

TEST_CASE("identity head passes pooled vectors through") {
  EncoderConfig c = small_config();
  c.mlp_hidden = c.embed_dim = 8;
  c.identity_head = true;
  const Encoder enc(c);
  const Tensor x = random_tensor({3, 1, 8, 8}, 7);
  CHECK(enc.embed(x) == enc.embed(x, true));
}

TEST_CASE("project is equivariant to batch permutations") {
  const Encoder enc(small_config());
  const Tensor x = random_tensor({4, 1, 8, 8}, 8);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  Tensor px(x.shape());
  const std::size_t per = 64;
  for (std::size_t i = 0; i < 4; ++i)
    std::copy_n(x.data().begin() + perm[i] * per, per, px.data().begin() + i * per);
  const Tensor e = enc.embed(x), pe = enc.embed(px);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(pe.at(i, j) == e.at(perm[i], j));
}

TEST_CASE("encode and project composite passes the gradient oracle") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    EncoderConfig c = small_config();
    c.seed = seed;
    const Encoder enc(c);
    std::vector<Tensor> inputs{random_tensor({4, 1, 8, 8}, seed + 10)};
    std::uint64_t k = 100;
    for (const Parameter& p : enc.parameters()) {
      Tensor v = random_tensor(p.value.shape(), seed * 1000 + k++);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = p.value[i] + 0.1 * v[i];
      inputs.push_back(std::move(v));
    }
    const auto inference = grad_check(
        "encoder",
        [&](Tape&, std::span<const Var> in) { return enc.project(enc.encode(in[0], in.subspan(1)), in.subspan(1)); },
        inputs);
    CHECK(inference.passed);
    const auto training = grad_check(
        "encoder_batch_stats",
        [&](Tape&, std::span<const Var> in) {
          HeadBatchStats stats;
          return enc.project(enc.encode(in[0], in.subspan(1)), in.subspan(1), &stats);
        },
        inputs);
    CHECK(training.passed);
  }
}

TEST_CASE("view pairing is an involution without fixed points") {
  const ViewPairing p = ViewPairing::halves(3);
  REQUIRE(p.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(p.partner(i) != i);
    CHECK(p.partner(p.partner(i)) == i);
  }
  CHECK(p.partner(0) == 3);
  CHECK_THROWS_AS(ViewPairing({0, 1}), ConfigError);
  CHECK_THROWS_AS(ViewPairing({1, 2, 0}), ConfigError);
  CHECK_NOTHROW(ViewPairing({1, 0, 3, 2}));
}

TEST_CASE("head batch norm: inference is per-sample, training uses the batch") {
  Encoder enc(small_config());
  const Tensor x = random_tensor({5, 1, 8, 8}, 31);
  const Tensor all = enc.embed(x);
  const Tensor first = enc.embed(Tensor({1, 1, 8, 8}, std::vector<double>(x.data().begin(), x.data().begin() + 64)));
  for (std::size_t j = 0; j < all.dim(1); ++j) CHECK(first.at(0, j) == all.at(0, j));

  Tape tape;
  const auto vars = rapl::bind(tape, enc.parameters(), false);
  HeadBatchStats stats;
  enc.project(enc.encode(tape.constant(x), vars), vars, &stats);
  CHECK(stats.rows == 5);
  REQUIRE(stats.mean.size() == 2);
  CHECK(stats.mean[0].size() == small_config().mlp_hidden);

  const Tensor rm0 = enc.buffers()[0].value, rv0 = enc.buffers()[1].value;
  enc.update_running_stats(stats);
  const double m = small_config().bn_momentum;
  for (std::size_t j = 0; j < rm0.size(); ++j) {
    CHECK(std::abs(enc.buffers()[0].value[j] - ((1 - m) * rm0[j] + m * stats.mean[0][j])) <= 1e-15);
    CHECK(std::abs(enc.buffers()[1].value[j] - ((1 - m) * rv0[j] + m * stats.var[0][j] * 5.0 / 4.0)) <= 1e-15);
  }
  CHECK_FALSE(enc.embed(x) == all);
}

TEST_CASE("identity head has no batch norm") {
  EncoderConfig c = small_config();
  c.mlp_hidden = c.embed_dim = 8;
  c.identity_head = true;
  const Encoder enc(c);
  CHECK(enc.buffers().empty());
  CHECK(enc.parameters().size() == Encoder::kConvParams + 6);
}
