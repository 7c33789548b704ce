#include "rapl/proxy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "rapl/cluster.hpp"
#include "rapl/error.hpp"

namespace rapl {

ProxyBank ProxyBank::random(std::size_t num_old, std::size_t dim, std::uint64_t seed) {
  if (num_old == 0 || dim == 0) throw ConfigError("proxy bank needs positive class count and dimension");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  ProxyBank bank;
  bank.old_proxies = Tensor({num_old, dim});
  for (double& v : bank.old_proxies.storage()) v = dist(rng);
  renormalize(bank.old_proxies);
  return bank;
}

void renormalize(Tensor& proxies) { proxies = l2_normalize_rows(proxies); }

Var similarity(const Var& features, const Var& proxies) {
  require_rank(features.value(), 2, "similarity");
  require_rank(proxies.value(), 2, "similarity");
  if (features.shape()[1] != proxies.shape()[1]) {
    throw DimensionError("similarity: feature dim " + std::to_string(features.shape()[1]) + " vs proxy dim " +
                         std::to_string(proxies.shape()[1]));
  }
  return ops::matmul(ops::l2_normalize_rows(features), ops::transpose(ops::l2_normalize_rows(proxies)));
}

Tensor similarity(const Tensor& features, const Tensor& proxies) {
  Tape tape;
  return similarity(tape.constant(features), tape.constant(proxies)).value();
}

Tensor topk_negative_mask(const Tensor& sim, std::span<const std::size_t> labels, std::size_t k) {
  require_rank(sim, 2, "topk_negative_mask");
  const std::size_t n = sim.dim(0), c = sim.dim(1);
  if (labels.size() != n) throw DimensionError("topk_negative_mask: label count mismatch");
  if (k == 0 || k + 1 > c) {
    throw ConfigError("topk_negative_mask: k=" + std::to_string(k) + " must lie in [1, " + std::to_string(c - 1) + "]");
  }
  Tensor mask({n, c});
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) throw ConfigError("topk_negative_mask: label out of range");
    order.clear();
    for (std::size_t j = 0; j < c; ++j)
      if (j != labels[i]) order.push_back(j);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double sa = sim.at(i, a), sb = sim.at(i, b);
                        return sa > sb || (sa == sb && a < b);
                      });
    for (std::size_t r = 0; r < k; ++r) mask.at(i, order[r]) = 1.0;
  }
  return mask;
}

Tensor support_of(const Tensor& mask, std::span<const std::size_t> labels) {
  Tensor support = mask;
  for (std::size_t i = 0; i < labels.size(); ++i) support.at(i, labels[i]) = 1.0;
  return support;
}

Tensor masked_selection(const Tensor& sim, const Tensor& mask, std::span<const std::size_t> labels) {
  if (sim.shape() != mask.shape()) throw DimensionError("masked_selection: shape mismatch");
  Tensor out({sim.dim(0), sim.dim(1)});
  for (std::size_t i = 0; i < sim.size(); ++i) out[i] = sim[i] * mask[i];
  for (std::size_t i = 0; i < labels.size(); ++i) out.at(i, labels[i]) = sim.at(i, labels[i]);
  return out;
}

Tensor indicator_softmax(const Tensor& selected, const Tensor& support) {
  Tape tape;
  return ops::masked_softmax_rows(tape.constant(selected), support).value();
}

std::size_t topk_from_ratio(double xi, std::size_t num_old) {
  if (!(xi > 0.0 && xi <= 1.0)) throw ConfigError("xi must lie in (0, 1]");
  if (num_old < 2) throw ConfigError("top-k negatives need at least two old classes");
  const auto k = static_cast<std::size_t>(std::llround(xi * static_cast<double>(num_old)));
  return std::clamp<std::size_t>(k, 1, num_old - 1);
}

Var pc_loss(const Var& features, std::span<const std::size_t> labels, const Var& old_proxies, std::size_t k,
            SimilarityWorkspace* workspace) {
  const std::size_t classes = old_proxies.shape().at(0);
  for (std::size_t y : labels)
    if (y >= classes) throw ConfigError("pc_loss: label " + std::to_string(y) + " is not an old class");
  Var sim = similarity(features, old_proxies);
  const Tensor mask = topk_negative_mask(sim.value(), labels, k);
  const Tensor support = support_of(mask, labels);
  // Ȳ = S ⊙ (M + onehot(y)) equals S ⊙ M + S_pos since the mask is zero at the label.
  Var selected = ops::mul_const(sim, support);
  Var prediction = ops::masked_softmax_rows(selected, support);
  if (workspace) {
    workspace->similarity = sim.value();
    workspace->mask = mask;
    workspace->selected = selected.value();
    workspace->prediction = prediction.value();
    workspace->positive.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) workspace->positive[i] = sim.value().at(i, labels[i]);
  }
  return ops::scale(ops::mean(ops::log(ops::pick(prediction, labels))), -1.0);
}

Var proxy_reg_loss(const Var& old_proxies) {
  require_rank(old_proxies.value(), 2, "proxy_reg_loss");
  const std::size_t c = old_proxies.shape()[0];
  if (c < 2) throw ConfigError("proxy regularization needs at least two old proxies");
  Var normed = ops::l2_normalize_rows(old_proxies);
  Var sp = ops::matmul(normed, ops::transpose(normed));
  std::vector<std::size_t> diag(c);
  std::iota(diag.begin(), diag.end(), std::size_t{0});
  return ops::mean(ops::sub(ops::logsumexp_rows(sp), ops::pick(sp, diag)));
}

Var pcl_loss(const Var& views, const ViewPairing& pairing, std::span<const Var> proxy_sets, double tau) {
  if (!(tau > 0.0)) throw ConfigError("pcl_loss: temperature must be positive");
  require_rank(views.value(), 2, "pcl_loss");
  const std::size_t n = views.shape()[0];
  if (pairing.size() != n || n == 0) throw ConfigError("pcl_loss: missing or mismatched view pairing");

  std::vector<Var> parts{views};
  parts.insert(parts.end(), proxy_sets.begin(), proxy_sets.end());
  Var all = ops::l2_normalize_rows(ops::concat_rows(parts));
  const std::size_t total = all.shape()[0];
  Var logits = ops::scale(ops::matmul(all, ops::transpose(all)), 1.0 / tau);

  std::vector<std::size_t> positive(total);
  for (std::size_t i = 0; i < total; ++i) positive[i] = i < n ? pairing.partner(i) : i;
  Tensor others({total, total}, 1.0);
  for (std::size_t i = 0; i < total; ++i) others.at(i, i) = 0.0;
  return ops::mean(ops::sub(ops::logsumexp_rows(logits, &others), ops::pick(logits, positive)));
}

Tensor init_new_proxies(const Tensor& unlabeled_features, std::size_t num_new, std::uint64_t seed) {
  require_rank(unlabeled_features, 2, "init_new_proxies");
  if (num_new == 0 || unlabeled_features.dim(0) < num_new) {
    throw ConfigError("init_new_proxies: " + std::to_string(unlabeled_features.dim(0)) +
                      " unlabeled samples cannot seed " + std::to_string(num_new) + " proxies");
  }
  KMeansOptions opts;
  opts.seed = seed;
  const KMeansResult km = kmeans(l2_normalize_rows(unlabeled_features), num_new, opts);
  return l2_normalize_rows(km.centroids);
}

}  // namespace rapl
