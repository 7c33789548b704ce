#include "rapl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "json.hpp"
#include "rapl/config.hpp"
#include "rapl/error.hpp"
#include "rapl/params.hpp"

namespace rapl {
namespace {

constexpr char kDatasetMagic[8] = {'R', 'A', 'P', 'L', 'D', 'S', '0', '1'};

struct ClassSignature {
  std::vector<std::size_t> regions;
  std::vector<std::size_t> patterns;
};

Tensor make_template(const SynthConfig& c, std::mt19937_64& rng) {
  const auto [ch, h, w] = c.input_dims;
  Tensor t({ch, h, w});
  std::uniform_real_distribution<double> freq(0.3, 1.2), phase(0.0, 2.0 * std::numbers::pi), amp(0.5, 1.0);
  for (std::size_t k = 0; k < ch; ++k) {
    for (int m = 0; m < 4; ++m) {
      const double fy = freq(rng), fx = freq(rng), ph = phase(rng), a = amp(rng);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          t[(k * h + y) * w + x] += a * std::cos(2.0 * std::numbers::pi *
                                                     (fy * static_cast<double>(y) / static_cast<double>(h) +
                                                      fx * static_cast<double>(x) / static_cast<double>(w)) +
                                                 ph);
    }
  }
  double peak = 0.0;
  for (double v : t.data()) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : t.storage()) v *= c.template_strength / peak;
  return t;
}

std::vector<Tensor> make_patterns(const SynthConfig& c, std::mt19937_64& rng) {
  const std::size_t ch = c.input_dims[0];
  const std::size_t cell_h = c.input_dims[1] / c.region_grid[0], cell_w = c.input_dims[2] / c.region_grid[1];
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<Tensor> out;
  for (std::size_t p = 0; p < c.pattern_vocabulary; ++p) {
    Tensor t({ch, cell_h, cell_w});
    for (double& v : t.storage()) v = dist(rng);
    double mean = 0.0;
    for (double v : t.data()) mean += v;
    mean /= static_cast<double>(t.size());
    double ss = 0.0;
    for (double& v : t.storage()) {
      v -= mean;
      ss += v * v;
    }
    const double rms = std::sqrt(ss / static_cast<double>(t.size()));
    for (double& v : t.storage()) v /= rms;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::size_t> open_regions(const SynthConfig& c) {
  std::vector<std::size_t> out;
  const auto [gh, gw] = c.region_grid;
  for (std::size_t r = 0; r < gh; ++r)
    for (std::size_t col = c.blank_margin; col + c.blank_margin < gw; ++col) out.push_back(r * gw + col);
  return out;
}

std::vector<ClassSignature> make_signatures(const SynthConfig& c, std::mt19937_64& rng) {
  const std::vector<std::size_t> open = open_regions(c);
  std::uniform_int_distribution<std::size_t> pat(0, c.pattern_vocabulary - 1);
  std::set<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> seen;
  std::vector<ClassSignature> out;
  for (std::size_t cls = 0; cls < c.num_classes; ++cls) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw ConfigError("cannot draw distinct class signatures; enlarge the grid or vocabulary");
      std::vector<std::size_t> pool = open;
      std::shuffle(pool.begin(), pool.end(), rng);
      ClassSignature sig;
      sig.regions.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(c.signal_regions_per_class));
      std::sort(sig.regions.begin(), sig.regions.end());
      for (std::size_t i = 0; i < sig.regions.size(); ++i) sig.patterns.push_back(pat(rng));
      if (seen.insert({sig.regions, sig.patterns}).second) {
        out.push_back(std::move(sig));
        break;
      }
    }
  }
  return out;
}

void zero_blank(Tensor& img, const SynthConfig& c) {
  if (c.blank_margin == 0) return;
  const auto [ch, h, w] = c.input_dims;
  const std::size_t cell_w = w / c.region_grid[1];
  const std::size_t left = c.blank_margin * cell_w, right = w - c.blank_margin * cell_w;
  for (std::size_t k = 0; k < ch; ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (x < left || x >= right) img[(k * h + y) * w + x] = 0.0;
}

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("truncated dataset file");
  return v;
}

void write_doubles(std::ostream& os, std::span<const double> v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

void read_doubles(std::istream& is, std::span<double> v) {
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
  if (!is) throw IoError("truncated dataset payload");
}

}  // namespace

SplitSpec SynthConfig::split() const {
  return SplitSpec{num_old, num_new, train_per_class, test_per_class, mode};
}

void SynthConfig::validate() const {
  if (num_old + num_new != num_classes) throw ConfigError("num_old + num_new must equal num_classes");
  split().validate();
  const auto [ch, h, w] = input_dims;
  const auto [gh, gw] = region_grid;
  if (ch == 0 || gh == 0 || gw == 0 || h % gh != 0 || w % gw != 0) {
    throw ConfigError("input size must be a positive multiple of the region grid");
  }
  if (template_strength <= 0.0 || class_signal_strength < 0.0 || intra_class_noise < 0.0) {
    throw ConfigError("template strength must be positive, signal strength and noise non-negative");
  }
  if (class_signal_strength >= template_strength) {
    throw ConfigError("class signal must be weaker than the shared template");
  }
  if (2 * blank_margin >= gw) throw ConfigError("blank margin leaves no open region");
  if (signal_regions_per_class == 0 || signal_regions_per_class > open_regions(*this).size()) {
    throw ConfigError("signal_regions_per_class must lie in [1, open regions]");
  }
  if (pattern_vocabulary == 0) throw ConfigError("pattern vocabulary must be non-empty");
  if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("flip_prob must lie in [0, 1]");
}

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::kLabeledTrain: return "labeled-train";
    case SplitTag::kUnlabeledTrain: return "unlabeled-train";
    case SplitTag::kTest: return "test";
  }
  return "test";
}

SplitTag split_tag_from_string(std::string_view s) {
  if (s == "labeled-train") return SplitTag::kLabeledTrain;
  if (s == "unlabeled-train") return SplitTag::kUnlabeledTrain;
  if (s == "test") return SplitTag::kTest;
  throw IoError("unknown split tag '" + std::string(s) + "'");
}

std::vector<std::size_t> Dataset::indices(SplitTag tag) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].tag == tag) out.push_back(i);
  return out;
}

Tensor Dataset::stack(std::span<const std::size_t> index) const {
  const auto [ch, h, w] = config.input_dims;
  const std::size_t per = ch * h * w;
  Tensor out({index.size(), ch, h, w});
  for (std::size_t i = 0; i < index.size(); ++i) {
    const Tensor& in = samples.at(index[i]).input;
    std::copy(in.data().begin(), in.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<std::size_t> Dataset::labels(std::span<const std::size_t> index) const {
  std::vector<std::size_t> out;
  out.reserve(index.size());
  for (std::size_t i : index) out.push_back(samples.at(i).class_id);
  return out;
}

std::vector<bool> Dataset::blank_regions() const {
  const auto [gh, gw] = config.region_grid;
  std::vector<bool> blank(gh * gw, false);
  for (std::size_t r = 0; r < gh; ++r)
    for (std::size_t col = 0; col < gw; ++col)
      blank[r * gw + col] = col < config.blank_margin || col + config.blank_margin >= gw;
  return blank;
}

Dataset generate(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(stream_seed(config.seed, Stream::kGenerate));
  Dataset data;
  data.config = config;
  data.split = config.split();
  data.template_image = make_template(config, rng);
  const std::vector<Tensor> patterns = make_patterns(config, rng);
  const std::vector<ClassSignature> signatures = make_signatures(config, rng);

  const auto [ch, h, w] = config.input_dims;
  const std::size_t cell_h = h / config.region_grid[0], cell_w = w / config.region_grid[1];
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t per_class = config.train_per_class + config.test_per_class;
  const std::size_t moved_old = data.split.unlabeled_old_per_class();

  for (std::size_t cls = 0; cls < config.num_classes; ++cls) {
    Tensor clean = data.template_image;
    const ClassSignature& sig = signatures[cls];
    for (std::size_t s = 0; s < sig.regions.size(); ++s) {
      const std::size_t gy = sig.regions[s] / config.region_grid[1], gx = sig.regions[s] % config.region_grid[1];
      const Tensor& pat = patterns[sig.patterns[s]];
      for (std::size_t k = 0; k < ch; ++k)
        for (std::size_t y = 0; y < cell_h; ++y)
          for (std::size_t x = 0; x < cell_w; ++x)
            clean[(k * h + gy * cell_h + y) * w + gx * cell_w + x] +=
                config.class_signal_strength * pat[(k * cell_h + y) * cell_w + x];
    }
    for (std::size_t i = 0; i < per_class; ++i) {
      LabeledSample sample;
      sample.class_id = cls;
      sample.recipe_seed = derive_seed(config.seed, cls, i);
      sample.input = clean;
      for (double& v : sample.input.storage()) v += config.intra_class_noise * noise(rng);
      zero_blank(sample.input, config);
      if (i >= config.train_per_class) {
        sample.tag = SplitTag::kTest;
      } else if (!data.split.is_old(cls)) {
        sample.tag = SplitTag::kUnlabeledTrain;
      } else {
        sample.tag = i < moved_old ? SplitTag::kUnlabeledTrain : SplitTag::kLabeledTrain;
      }
      data.samples.push_back(std::move(sample));
    }
  }
  return data;
}

std::pair<Tensor, Tensor> augment_views(const LabeledSample& sample, const ViewJitter& jitter,
                                        std::uint64_t step_seed) {
  std::mt19937_64 rng(derive_seed(step_seed, sample.recipe_seed));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const Shape& s = sample.input.shape();
  const std::size_t ch = s[0], h = s[1], w = s[2];
  auto view = [&]() {
    Tensor v = sample.input;
    if (coin(rng) < jitter.flip_prob) {
      for (std::size_t k = 0; k < ch; ++k)
        for (std::size_t y = 0; y < h; ++y) {
          double* row = v.data().data() + (k * h + y) * w;
          std::reverse(row, row + w);
        }
    }
    if (jitter.noise > 0.0)
      for (double& x : v.storage()) x += jitter.noise * noise(rng);
    return v;
  };
  Tensor first = view();
  Tensor second = view();
  return {std::move(first), std::move(second)};
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["config"] = data.config;
  manifest["seed"] = data.config.seed;
  manifest["template_shape"] = data.template_image.shape();
  nlohmann::json samples = nlohmann::json::array();
  for (const LabeledSample& s : data.samples) {
    samples.push_back({{"class_id", s.class_id},
                       {"split_tag", std::string(to_string(s.tag))},
                       {"recipe_seed", s.recipe_seed},
                       {"shape", s.input.shape()}});
  }
  manifest["samples"] = std::move(samples);
  const std::string header = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write dataset " + path.string());
  os.write(kDatasetMagic, sizeof kDatasetMagic);
  write_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_doubles(os, data.template_image.data());
  for (const LabeledSample& s : data.samples) write_doubles(os, s.input.data());
  if (!os) throw IoError("failed writing dataset " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset " + path.string());
  char magic[sizeof kDatasetMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kDatasetMagic, sizeof magic) != 0) {
    throw IoError(path.string() + " is not a dataset file");
  }
  std::string header(read_u64(is), '\0');
  is.read(header.data(), static_cast<std::streamsize>(header.size()));
  if (!is) throw IoError("truncated dataset manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad dataset manifest: ") + e.what());
  }
  if (manifest.at("version").get<int>() != 1) throw IoError("unsupported dataset version");

  Dataset data;
  data.config = manifest.at("config").get<SynthConfig>();
  data.split = data.config.split();
  data.template_image = Tensor(manifest.at("template_shape").get<Shape>());
  read_doubles(is, data.template_image.data());
  for (const auto& js : manifest.at("samples")) {
    LabeledSample s;
    s.class_id = js.at("class_id").get<std::size_t>();
    s.tag = split_tag_from_string(js.at("split_tag").get<std::string>());
    s.recipe_seed = js.at("recipe_seed").get<std::uint64_t>();
    s.input = Tensor(js.at("shape").get<Shape>());
    read_doubles(is, s.input.data());
    data.samples.push_back(std::move(s));
  }
  return data;
}

}  // namespace rapl
