#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "rapl/config.hpp"
#include "rapl/error.hpp"
#include "rapl/synth.hpp"

using namespace rapl;

namespace {

double sq_dist(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

Tensor class_mean(const Dataset& d, std::size_t cls) {
  Tensor m(d.samples[0].input.shape(), 0.0);
  double n = 0.0;
  for (const LabeledSample& s : d.samples)
    if (s.class_id == cls) {
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += s.input[i];
      n += 1.0;
    }
  for (double& v : m.data()) v /= n;
  return m;
}

}  // namespace

TEST_CASE("split sizes follow the split spec") {
  SynthConfig c;
  const Dataset d = generate(c);
  CHECK(d.samples.size() == 20 * 16);
  CHECK(d.indices(SplitTag::kLabeledTrain).size() == 10 * 12);
  CHECK(d.indices(SplitTag::kUnlabeledTrain).size() == 10 * 12);
  CHECK(d.indices(SplitTag::kTest).size() == 20 * 4);
  for (std::size_t i : d.indices(SplitTag::kUnlabeledTrain)) CHECK_FALSE(d.split.is_old(d.samples[i].class_id));
  for (std::size_t i : d.indices(SplitTag::kLabeledTrain)) CHECK(d.split.is_old(d.samples[i].class_id));

  c.mode = SplitMode::kGcd;
  const Dataset g = generate(c);
  CHECK(g.indices(SplitTag::kLabeledTrain).size() == 10 * 6);
  CHECK(g.indices(SplitTag::kUnlabeledTrain).size() == 10 * 6 + 10 * 12);
  std::size_t old_unlabeled = 0;
  for (std::size_t i : g.indices(SplitTag::kUnlabeledTrain)) old_unlabeled += g.split.is_old(g.samples[i].class_id);
  CHECK(old_unlabeled == 60);
}

TEST_CASE("generation is reproducible from the seed") {
  SynthConfig c;
  c.seed = 9;
  const Dataset a = generate(c), b = generate(c);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i].input == b.samples[i].input);
  c.seed = 10;
  CHECK_FALSE(generate(c).samples[0].input == a.samples[0].input);
}

TEST_CASE("degenerate configurations") {
  SynthConfig c;
  c.intra_class_noise = 0.0;
  const Dataset d = generate(c);
  for (const LabeledSample& s : d.samples) CHECK(s.input == d.samples[s.class_id * 16].input);

  c.class_signal_strength = 0.0;
  const Dataset flat = generate(c);
  for (const LabeledSample& s : flat.samples) CHECK(s.input == flat.template_image);
}

TEST_CASE("config validation") {
  SynthConfig c;
  c.num_new = 9;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.class_signal_strength = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.input_dims = {1, 15, 16};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.blank_margin = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.train_per_class = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.signal_regions_per_class = 17;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("blank margin zeroes border cells") {
  SynthConfig c;
  c.blank_margin = 1;
  const Dataset d = generate(c);
  const std::vector<bool> blank = d.blank_regions();
  CHECK(std::count(blank.begin(), blank.end(), true) == 8);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x : {0u, 3u, 12u, 15u}) CHECK(d.samples[5].input[y * 16 + x] == 0.0);
}

TEST_CASE("class means sit closer to each other than samples do to their own mean") {
  const Dataset d = generate(SynthConfig{});
  std::vector<Tensor> means;
  for (std::size_t c = 0; c < 20; ++c) means.push_back(class_mean(d, c));
  double between = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < 20; ++a)
    for (std::size_t b = a + 1; b < 20; ++b, ++pairs) between += std::sqrt(sq_dist(means[a], means[b]));
  between /= static_cast<double>(pairs);
  double within = 0.0;
  for (const LabeledSample& s : d.samples) within += std::sqrt(sq_dist(s.input, means[s.class_id]));
  within /= static_cast<double>(d.samples.size());
  CHECK(between < within);
}

TEST_CASE("augmented views") {
  SynthConfig c;
  const Dataset d = generate(c);
  const LabeledSample& s = d.samples[3];
  const auto [a, b] = augment_views(s, ViewJitter{0.0, 0.0}, 5);
  CHECK(a == s.input);
  CHECK(b == s.input);

  const ViewJitter j = ViewJitter::from(c);
  CHECK(j.noise == c.intra_class_noise / 2);
  const auto p1 = augment_views(s, j, 77), p2 = augment_views(s, j, 77);
  CHECK(p1.first == p2.first);
  CHECK(p1.second == p2.second);
  CHECK_FALSE(augment_views(s, j, 78).first == p1.first);

  const ViewJitter noise_only{j.noise, 0.0};
  double same = 0.0, other = 0.0;
  for (std::uint64_t step = 0; step < 100; ++step) {
    const auto v = augment_views(d.samples[0], noise_only, step);
    const auto w = augment_views(d.samples[1], noise_only, step);
    same += sq_dist(v.first, v.second);
    other += sq_dist(v.first, w.first);
  }
  CHECK(same < other);
}

TEST_CASE("dataset container round-trips bit-exactly") {
  SynthConfig c;
  c.seed = 4;
  c.mode = SplitMode::kGcd;
  const Dataset d = generate(c);
  const auto path = std::filesystem::temp_directory_path() / "rapl_dataset_test.bin";
  save_dataset(path, d);
  const Dataset e = load_dataset(path);
  CHECK(nlohmann::json(e.config) == nlohmann::json(d.config));
  CHECK(e.template_image == d.template_image);
  REQUIRE(e.samples.size() == d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    CHECK(e.samples[i].input == d.samples[i].input);
    CHECK(e.samples[i].class_id == d.samples[i].class_id);
    CHECK(e.samples[i].tag == d.samples[i].tag);
    CHECK(e.samples[i].recipe_seed == d.samples[i].recipe_seed);
  }
  {
    std::ofstream bad(path, std::ios::binary);
    bad << "not a dataset";
  }
  CHECK_THROWS_AS(load_dataset(path), IoError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_dataset(path), IoError);
}

TEST_CASE("run config JSON round trip and strictness") {
  RunConfig c;
  c.apply_seed(42);
  c.train.contrastive = ContrastiveMode::kVanilla;
  c.synth.mode = SplitMode::kGcd;
  c.eval.per_subset_permutation = true;
  const nlohmann::json j = c;
  const RunConfig back = j.get<RunConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.train.seed == 42);
  CHECK(back.synth.seed == 42);
  CHECK(back.encoder.seed == 42);
  CHECK(back.eval.kmeans.seed == 42);

  for (const char* section : {"synth", "encoder", "train", "eval"}) {
    nlohmann::json extra = j;
    extra[section]["bogus"] = 1;
    CHECK_THROWS_AS(extra.get<RunConfig>(), ConfigError);
  }
  nlohmann::json partial = nlohmann::json::object();
  partial["train"] = {{"alpha", 0.0}};
  const RunConfig p = partial.get<RunConfig>();
  CHECK(p.train.alpha == 0.0);
  CHECK(p.train.tau == 0.1);

  const auto path = std::filesystem::temp_directory_path() / "rapl_config_test.json";
  save_run_config(path, c);
  CHECK(nlohmann::json(load_run_config(path)) == j);
  std::filesystem::remove(path);

  RunConfig mismatch;
  mismatch.encoder.feature_dims = {64, 2, 2};
  mismatch.encoder.conv_channels = {16, 32};
  CHECK_THROWS_AS(mismatch.validate(), ConfigError);
  RunConfig bad_train;
  bad_train.train.tau = 0.0;
  CHECK_THROWS_AS(bad_train.validate(), ConfigError);
  bad_train = RunConfig{};
  bad_train.train.xi = 0.0;
  CHECK_THROWS_AS(bad_train.validate(), ConfigError);
  bad_train = RunConfig{};
  bad_train.train.alpha = -1.0;
  CHECK_THROWS_AS(bad_train.validate(), ConfigError);
}
