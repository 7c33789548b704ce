#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "rapl/cluster.hpp"
#include "rapl/error.hpp"
#include "rapl/gradcheck.hpp"
#include "rapl/proxy.hpp"
#include "test_util.hpp"

using namespace rapl;
using rapl::test::random_tensor;

namespace {

double pc_value(const Tensor& features, const std::vector<std::size_t>& labels, const Tensor& proxies, std::size_t k,
                SimilarityWorkspace* ws = nullptr) {
  Tape tape;
  return pc_loss(tape.constant(features), labels, tape.constant(proxies), k, ws).value().item();
}

double reg_value(const Tensor& proxies) {
  Tape tape;
  return proxy_reg_loss(tape.constant(proxies)).value().item();
}

double pcl_value(const Tensor& views, const ViewPairing& pairing, const std::vector<Tensor>& proxies, double tau) {
  Tape tape;
  std::vector<Var> sets;
  for (const Tensor& p : proxies) sets.push_back(tape.constant(p));
  return pcl_loss(tape.constant(views), pairing, sets, tau).value().item();
}

std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

std::vector<double> row(const Tensor& t, std::size_t i) {
  return {t.data().begin() + i * t.dim(1), t.data().begin() + (i + 1) * t.dim(1)};
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Brute-force top-k: sort non-label columns by (value desc, index asc).
std::vector<std::size_t> topk_oracle(const std::vector<double>& s, std::size_t label, std::size_t k) {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < s.size(); ++j)
    if (j != label) idx.push_back(j);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] != s[b] ? s[a] > s[b] : a < b; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// PC loss written out with plain loops over the paper's pipeline.
double pc_oracle(const Tensor& f, const std::vector<std::size_t>& labels, const Tensor& p, std::size_t k) {
  double total = 0.0;
  for (std::size_t i = 0; i < f.dim(0); ++i) {
    const auto v = unit(row(f, i));
    std::vector<double> s(p.dim(0));
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = dot(v, unit(row(p, j)));
    std::vector<std::size_t> sup = topk_oracle(s, labels[i], k);
    sup.push_back(labels[i]);
    double z = 0.0;
    for (std::size_t j : sup) z += std::exp(s[j]);
    total += -std::log(std::exp(s[labels[i]]) / z);
  }
  return total / static_cast<double>(f.dim(0));
}

double pcl_oracle(const Tensor& views, const ViewPairing& pairing, const std::vector<Tensor>& proxies, double tau) {
  std::vector<std::vector<double>> all;
  for (std::size_t i = 0; i < views.dim(0); ++i) all.push_back(unit(row(views, i)));
  for (const Tensor& p : proxies)
    for (std::size_t i = 0; i < p.dim(0); ++i) all.push_back(unit(row(p, i)));
  double total = 0.0;
  for (std::size_t a = 0; a < all.size(); ++a) {
    const std::size_t pos = a < views.dim(0) ? pairing.partner(a) : a;
    double z = 0.0;
    for (std::size_t j = 0; j < all.size(); ++j)
      if (j != a) z += std::exp(dot(all[a], all[j]) / tau);
    total += std::log(z) - dot(all[a], all[pos]) / tau;
  }
  return total / static_cast<double>(all.size());
}

}  // namespace

TEST_CASE("cosine similarity extremes") {
  const Tensor f = Tensor::matrix({{2, 0}, {-3, 0}, {0, 5}});
  const Tensor p = Tensor::matrix({{1, 0}});
  const Tensor s = similarity(f, p);
  CHECK(s.at(0, 0) == 1.0);
  CHECK(s.at(1, 0) == -1.0);
  CHECK(s.at(2, 0) == 0.0);
  CHECK_THROWS_AS(similarity(f, Tensor({1, 3})), DimensionError);
}

TEST_CASE("top-k negative mask examples") {
  const std::vector<std::size_t> y = {0};
  CHECK(topk_negative_mask(Tensor::matrix({{0.9, 0.5, 0.3, 0.1}}), y, 2) == Tensor::matrix({{0, 1, 1, 0}}));
  CHECK(topk_negative_mask(Tensor::matrix({{0.2, 0.7, 0.7, 0.1}}), y, 1) == Tensor::matrix({{0, 1, 0, 0}}));
  CHECK_THROWS(topk_negative_mask(Tensor::matrix({{0.2, 0.7, 0.7, 0.1}}), y, 0));
  CHECK_THROWS(topk_negative_mask(Tensor::matrix({{0.2, 0.7, 0.7, 0.1}}), y, 4));
  CHECK_THROWS(topk_negative_mask(Tensor::matrix({{0.2, 0.7}}), std::vector<std::size_t>{2}, 1));
}

TEST_CASE("masked selection examples") {
  const Tensor s = Tensor::matrix({{0.9, 0.5, 0.3, 0.1}});
  const std::vector<std::size_t> y = {0};
  CHECK(masked_selection(s, Tensor::matrix({{0, 1, 1, 0}}), y) == Tensor::matrix({{0.9, 0.5, 0.3, 0}}));
  CHECK(masked_selection(s, topk_negative_mask(s, y, 3), y) == s);
  const Tensor z({1, 4}, 0.0);
  CHECK(masked_selection(z, Tensor::matrix({{0, 1, 1, 0}}), y) == z);
}

TEST_CASE("indicator softmax examples") {
  const Tensor p = indicator_softmax(Tensor::matrix({{1.0, 0.5, 0.0}}), Tensor::matrix({{1, 1, 0}}));
  CHECK(p.at(0, 0) == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + std::exp(0.5))).epsilon(1e-15));
  CHECK(p.at(0, 0) == doctest::Approx(0.6225).epsilon(1e-4));
  CHECK(p.at(0, 1) == doctest::Approx(0.3775).epsilon(1e-4));
  CHECK(p.at(0, 2) == 0.0);
  const Tensor u = indicator_softmax(Tensor::matrix({{0.4, 0.4, 0.4, 0.0}}), Tensor::matrix({{1, 1, 1, 0}}));
  for (std::size_t j = 0; j < 3; ++j) CHECK(u.at(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS(indicator_softmax(Tensor::matrix({{0.4, 0.4}}), Tensor::matrix({{0, 0}})));
}

TEST_CASE("mask and softmax contracts over random rows") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 2 + rng() % 9;
    const std::size_t k = 1 + rng() % (c - 1);
    Tensor s = random_tensor({3, c}, 1000 + trial);
    if (trial % 4 == 0) s.at(0, 1) = s.at(0, c - 1);  // force ties
    std::vector<std::size_t> y(3);
    for (auto& v : y) v = rng() % c;
    const Tensor m = topk_negative_mask(s, y, k);
    const Tensor sup = support_of(m, y);
    const Tensor pr = indicator_softmax(masked_selection(s, m, y), sup);
    for (std::size_t i = 0; i < 3; ++i) {
      double ones = 0.0, mass = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        ones += m.at(i, j);
        if (sup.at(i, j) == 0.0) CHECK(pr.at(i, j) == 0.0);
        mass += pr.at(i, j);
      }
      CHECK(ones == static_cast<double>(k));
      CHECK(m.at(i, y[i]) == 0.0);
      CHECK(std::abs(mass - 1.0) <= 1e-12);
      std::vector<std::size_t> picked;
      for (std::size_t j = 0; j < c; ++j)
        if (m.at(i, j) == 1.0) picked.push_back(j);
      CHECK(picked == topk_oracle(row(s, i), y[i], k));
    }
  }
}

TEST_CASE("k from ratio") {
  CHECK(topk_from_ratio(0.05, 10) == 1);
  CHECK(topk_from_ratio(0.3, 10) == 3);
  CHECK(topk_from_ratio(0.05, 99) == 5);
  CHECK(topk_from_ratio(1.0, 10) == 9);
}

TEST_CASE("pc loss closed forms and oracle") {
  const Tensor f = Tensor::matrix({{1, 0}});
  CHECK(pc_value(f, {0}, Tensor::matrix({{1, 0}, {-1, 0}}), 1) ==
        doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)))).epsilon(1e-14));
  CHECK(pc_value(f, {0}, Tensor::matrix({{1, 0}, {-1, 0}}), 1) == doctest::Approx(0.1269).epsilon(1e-3));
  CHECK(pc_value(f, {1}, Tensor::matrix({{1, 0}, {1, 0}, {1, 0}}), 2) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  CHECK_THROWS(pc_value(f, {2}, Tensor::matrix({{1, 0}, {-1, 0}}), 1));

  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Tensor feats = random_tensor({6, 5}, seed), proxies = random_tensor({7, 5}, seed + 50);
    const std::vector<std::size_t> y = {0, 3, 6, 2, 2, 5};
    for (std::size_t k : {1u, 3u, 6u}) CHECK(pc_value(feats, y, proxies, k) == doctest::Approx(pc_oracle(feats, y, proxies, k)).epsilon(1e-13));

    Tensor scaled = feats;
    for (std::size_t j = 0; j < 5; ++j) scaled.at(2, j) *= 7.5;
    CHECK(std::abs(pc_value(scaled, y, proxies, 2) - pc_value(feats, y, proxies, 2)) <= 1e-10);

    const auto r = grad_check(
        "pc", [&](Tape&, std::span<const Var> in) { return pc_loss(in[0], y, in[1], 2); }, {feats, proxies});
    CHECK(r.passed);
  }
}

TEST_CASE("pc workspace exposes the intermediate matrices") {
  const Tensor feats = random_tensor({4, 3}, 8), proxies = random_tensor({5, 3}, 9);
  const std::vector<std::size_t> y = {1, 0, 4, 2};
  SimilarityWorkspace ws;
  pc_value(feats, y, proxies, 2, &ws);
  CHECK(rapl::test::max_abs_diff(ws.similarity, similarity(feats, proxies)) == 0.0);
  CHECK(ws.mask == topk_negative_mask(ws.similarity, y, 2));
  CHECK(ws.selected == masked_selection(ws.similarity, ws.mask, y));
  for (std::size_t i = 0; i < 4; ++i) CHECK(ws.positive[i] == ws.similarity.at(i, y[i]));
  CHECK(rapl::test::max_abs_diff(ws.prediction, indicator_softmax(ws.selected, support_of(ws.mask, y))) <= 1e-15);
}

TEST_CASE("proxy regularization closed forms") {
  const double orth = reg_value(Tensor::matrix({{1, 0}, {0, 1}}));
  const double same = reg_value(Tensor::matrix({{1, 0}, {1, 0}}));
  CHECK(orth == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-14));
  CHECK(orth == doctest::Approx(0.3133).epsilon(1e-3));
  CHECK(same == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(orth < same);
  const double mid = reg_value(Tensor::matrix({{1, 0}, {0.5, std::sqrt(0.75)}}));
  CHECK(orth < mid);
  CHECK(mid < same);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto r = grad_check("reg", [](Tape&, std::span<const Var> in) { return proxy_reg_loss(in[0]); },
                              {random_tensor({5, 4}, seed)});
    CHECK(r.passed);
  }
}

TEST_CASE("pcl loss oracle, limits and errors") {
  const ViewPairing pairing = ViewPairing::halves(3);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Tensor views = random_tensor({6, 4}, seed);
    const std::vector<Tensor> proxies = {random_tensor({2, 4}, seed + 10), random_tensor({3, 4}, seed + 20)};
    CHECK(pcl_value(views, pairing, proxies, 0.1) == doctest::Approx(pcl_oracle(views, pairing, proxies, 0.1)).epsilon(1e-12));
    CHECK(pcl_value(views, pairing, {}, 0.5) == doctest::Approx(pcl_oracle(views, pairing, {}, 0.5)).epsilon(1e-12));
    CHECK(pcl_value(views, pairing, proxies, 1.0) != pcl_value(views, pairing, proxies, 0.1));
    CHECK(pcl_value(views, pairing, proxies, 1e6) == doctest::Approx(std::log(10.0)).epsilon(1e-3));
    const auto r = grad_check(
        "pcl", [&](Tape&, std::span<const Var> in) { return pcl_loss(in[0], pairing, in.subspan(1), 0.1); },
        {views, proxies[0], proxies[1]});
    CHECK(r.passed);
  }

  // |V̄| = 3: two views plus one proxy, closed form with the self-term absent.
  const ViewPairing one = ViewPairing::halves(1);
  const Tensor v = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor p = Tensor::matrix({{-1, 0}});
  const double tau = 0.5;
  const double anchor_view0 = std::log(std::exp(0.0 / tau) + std::exp(-1.0 / tau)) - 0.0 / tau;
  const double anchor_view1 = std::log(std::exp(0.0 / tau) + std::exp(0.0 / tau)) - 0.0 / tau;
  const double anchor_proxy = std::log(std::exp(-1.0 / tau) + std::exp(0.0 / tau)) - 1.0 / tau;
  CHECK(pcl_value(v, one, {p}, tau) == doctest::Approx((anchor_view0 + anchor_view1 + anchor_proxy) / 3.0).epsilon(1e-14));

  const Tensor same_views = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {1, 0, 0}, {0, 1, 0}});
  const Tensor orth_views = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0.6, 0.8}, {0.6, 0, 0.8}});
  const Tensor far = Tensor::matrix({{0, 0, -1}});
  const ViewPairing two = ViewPairing::halves(2);
  CHECK(pcl_value(same_views, two, {far}, 0.1) < pcl_value(orth_views, two, {far}, 0.1));

  CHECK_THROWS_AS(pcl_value(v, one, {p}, 0.0), ConfigError);
  CHECK_THROWS(pcl_value(random_tensor({4, 2}, 1), one, {p}, 0.1));
}

TEST_CASE("new proxy initialization") {
  // Two far-apart clouds.
  Tensor pts({40, 3});
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (std::size_t i = 0; i < 40; ++i) {
    const double base[2][3] = {{5, 0, 0}, {0, 0, 5}};
    for (std::size_t j = 0; j < 3; ++j) pts.at(i, j) = base[i % 2][j] + noise(rng);
  }
  const Tensor init = init_new_proxies(pts, 2, 11);
  const Tensor normed = l2_normalize_rows(pts);
  for (std::size_t cloud = 0; cloud < 2; ++cloud) {
    std::vector<double> mean(3, 0.0);
    for (std::size_t i = cloud; i < 40; i += 2)
      for (std::size_t j = 0; j < 3; ++j) mean[j] += normed.at(i, j) / 20.0;
    mean = unit(mean);
    double best = 1e9;
    for (std::size_t c = 0; c < 2; ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < 3; ++j) d = std::max(d, std::abs(init.at(c, j) - mean[j]));
      best = std::min(best, d);
    }
    CHECK(best <= 1e-6);
  }

  const Tensor few = random_tensor({3, 4}, 2);
  const Tensor own = init_new_proxies(few, 3, 1);
  const Tensor few_n = l2_normalize_rows(few);
  for (std::size_t i = 0; i < 3; ++i) {
    bool found = false;
    for (std::size_t c = 0; c < 3; ++c) found = found || rapl::test::max_abs_diff(Tensor({4}, row(own, c)), Tensor({4}, row(few_n, i))) <= 1e-12;
    CHECK(found);
  }
  CHECK_THROWS_AS(init_new_proxies(few, 4, 1), ConfigError);

  // Independent Lloyd loop from the same k-means++ start.
  const Tensor blobs = random_tensor({60, 4}, 33);
  const Tensor nb = l2_normalize_rows(blobs);
  Tensor cent = kmeans_plus_plus(nb, 4, 19);
  std::vector<std::size_t> assign(60, 99);
  for (int it = 0; it < 300; ++it) {
    std::vector<std::size_t> next(60);
    for (std::size_t i = 0; i < 60; ++i) {
      double bd = 1e300;
      for (std::size_t c = 0; c < 4; ++c) {
        double d = 0.0;
        for (std::size_t j = 0; j < 4; ++j) d += (nb.at(i, j) - cent.at(c, j)) * (nb.at(i, j) - cent.at(c, j));
        if (d < bd) bd = d, next[i] = c;
      }
    }
    if (next == assign) break;
    assign = next;
    Tensor sum({4, 4}, 0.0);
    std::vector<double> count(4, 0.0);
    for (std::size_t i = 0; i < 60; ++i) {
      count[assign[i]] += 1.0;
      for (std::size_t j = 0; j < 4; ++j) sum.at(assign[i], j) += nb.at(i, j);
    }
    for (std::size_t c = 0; c < 4; ++c)
      if (count[c] > 0)
        for (std::size_t j = 0; j < 4; ++j) cent.at(c, j) = sum.at(c, j) / count[c];
  }
  CHECK(rapl::test::max_abs_diff(init_new_proxies(blobs, 4, 19), l2_normalize_rows(cent)) <= 1e-10);
}

TEST_CASE("random proxy bank is unit norm and seeded") {
  const ProxyBank a = ProxyBank::random(5, 8, 3), b = ProxyBank::random(5, 8, 3);
  CHECK(a.old_proxies == b.old_proxies);
  CHECK(a.num_old() == 5);
  CHECK(a.dim() == 8);
  CHECK(a.num_new() == 0);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(dot(row(a.old_proxies, i), row(a.old_proxies, i)) - 1.0) <= 1e-12);
  Tensor t = Tensor::matrix({{3, 4}});
  renormalize(t);
  CHECK(t == Tensor::matrix({{0.6, 0.8}}));
}
