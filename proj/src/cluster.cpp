#include "rapl/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "rapl/autodiff.hpp"
#include "rapl/error.hpp"
#include "rapl/kernels.hpp"
#include "rapl/params.hpp"

namespace rapl {
namespace {

double squared_distance(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

void check_points(const Tensor& points, std::size_t k) {
  require_rank(points, 2, "kmeans");
  if (k == 0) throw ConfigError("kmeans: K must be positive");
  if (points.dim(0) < k) {
    throw ConfigError("kmeans: " + std::to_string(points.dim(0)) + " points cannot form " + std::to_string(k) +
                      " clusters");
  }
  if (!points.all_finite()) throw NumericError("kmeans: non-finite points");
}

}  // namespace

Tensor kmeans_plus_plus(const Tensor& points, std::size_t k, std::uint64_t seed) {
  check_points(points, k);
  const std::size_t n = points.dim(0), d = points.dim(1);
  std::mt19937_64 rng(seed);
  Tensor centroids({k, d});
  const double* p = points.data().data();
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  std::copy_n(p + first * d, d, centroids.data().begin());
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    const double* prev = centroids.data().data() + (c - 1) * d;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(p + i * d, prev, d));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (r < nearest[i]) {
          pick = i;
          break;
        }
        r -= nearest[i];
      }
    } else {
      // All points coincide with chosen centroids; fall back to index order.
      pick = c % n;
    }
    std::copy_n(p + pick * d, d, centroids.data().begin() + static_cast<std::ptrdiff_t>(c * d));
  }
  return centroids;
}

KMeansResult lloyd(const Tensor& points, Tensor centroids, std::size_t max_iters, double tol) {
  const std::size_t k = centroids.dim(0);
  check_points(points, k);
  const std::size_t n = points.dim(0), d = points.dim(1);
  if (centroids.dim(1) != d) throw DimensionError("lloyd: centroid dimension mismatch");

  KMeansResult res;
  res.assignment.assign(n, 0);
  std::vector<double> dist2(n);
  const double* p = points.data().data();
  for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iters, 1); ++iter) {
    kernels::parallel::nearest_centroid(points.data(), centroids.data(), n, k, d, res.assignment, dist2);
    double objective = 0.0;
    for (double v : dist2) objective += v;
    res.objective_history.push_back(objective);
    res.iterations = iter + 1;
    if (iter + 1 == max_iters) break;

    Tensor next({k, d});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = res.assignment[i];
      ++counts[c];
      for (std::size_t j = 0; j < d; ++j) next[c * d + j] += p[i * d + j];
    }
    std::vector<bool> taken(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (std::size_t j = 0; j < d; ++j) next[c * d + j] /= static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: adopt the point currently farthest from its centroid.
      std::size_t far = 0;
      double best = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i] && dist2[i] > best) {
          best = dist2[i];
          far = i;
        }
      }
      taken[far] = true;
      std::copy_n(p + far * d, d, next.data().begin() + static_cast<std::ptrdiff_t>(c * d));
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      shift = std::max(shift, std::sqrt(squared_distance(next.data().data() + c * d, centroids.data().data() + c * d, d)));
    centroids = std::move(next);
    if (shift < tol) {
      kernels::parallel::nearest_centroid(points.data(), centroids.data(), n, k, d, res.assignment, dist2);
      objective = 0.0;
      for (double v : dist2) objective += v;
      res.objective_history.push_back(objective);
      break;
    }
  }
  res.objective = res.objective_history.back();
  res.centroids = std::move(centroids);
  return res;
}

KMeansResult kmeans(const Tensor& points, std::size_t k, const KMeansOptions& options) {
  check_points(points, k);
  KMeansResult best;
  const std::size_t restarts = std::max<std::size_t>(options.restarts, 1);
  for (std::size_t r = 0; r < restarts; ++r) {
    const std::uint64_t seed = r == 0 ? options.seed : derive_seed(options.seed, 0x6b6d, r);
    KMeansResult res = lloyd(points, kmeans_plus_plus(points, k, seed), options.max_iters, options.tol);
    if (r == 0 || res.objective < best.objective) best = std::move(res);
  }
  return best;
}

std::vector<std::size_t> hungarian(const Tensor& cost) {
  require_rank(cost, 2, "hungarian");
  const std::size_t n = cost.dim(0);
  if (cost.dim(1) != n) throw DimensionError("hungarian: cost matrix must be square, got " + shape_str(cost.shape()));
  if (!cost.all_finite()) throw NumericError("hungarian: non-finite cost");
  if (n == 0) return {};

  // 1-based potentials formulation; column 0 is a virtual start.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[col0] = true;
      const std::size_t r = match[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double reduced = cost.at(r - 1, c - 1) - u[r] - v[c];
        if (reduced < minv[c]) {
          minv[c] = reduced;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t c = 1; c <= n; ++c) assignment[match[c] - 1] = c - 1;
  return assignment;
}

AccuracyResult clustering_accuracy(std::span<const std::size_t> y_true, std::span<const std::size_t> y_pred,
                                   std::size_t num_classes) {
  if (y_true.size() != y_pred.size()) throw DimensionError("clustering_accuracy: label length mismatch");
  if (y_true.empty()) throw DimensionError("clustering_accuracy: empty labels");
  std::size_t k = num_classes;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] >= num_classes) throw ConfigError("clustering_accuracy: true label out of range");
    k = std::max(k, y_pred[i] + 1);
  }
  Tensor counts({k, k});
  for (std::size_t i = 0; i < y_true.size(); ++i) counts.at(y_pred[i], y_true[i]) += 1.0;
  const double top = *std::max_element(counts.data().begin(), counts.data().end());
  Tensor cost({k, k});
  for (std::size_t i = 0; i < counts.size(); ++i) cost[i] = top - counts[i];

  AccuracyResult out;
  out.permutation = hungarian(cost);
  for (std::size_t c = 0; c < k; ++c) out.matched += static_cast<std::size_t>(counts.at(c, out.permutation[c]));
  out.accuracy = static_cast<double>(out.matched) / static_cast<double>(y_true.size());
  return out;
}

std::string to_string(Protocol p) { return p == Protocol::kTaskAgnostic ? "task-agnostic" : "task-aware"; }

namespace {

std::vector<std::size_t> task_aware_labels(std::span<const std::size_t> labels, const SplitSpec& split) {
  if (split.mode != SplitMode::kNcd) throw ConfigError("task-aware protocol needs an NCD split");
  std::vector<std::size_t> local(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (split.is_old(labels[i]) || labels[i] >= split.num_classes()) {
      throw ConfigError("task-aware protocol expects only new-class samples");
    }
    local[i] = labels[i] - split.num_old;
  }
  return local;
}

}  // namespace

MetricsReport score_assignment(std::span<const std::size_t> labels, std::span<const std::size_t> assignment,
                               const SplitSpec& split, Protocol protocol, bool per_subset_permutation) {
  if (labels.size() != assignment.size()) throw DimensionError("score_assignment: labels/assignment length mismatch");
  MetricsReport rep;
  rep.protocol = protocol;
  if (protocol == Protocol::kTaskAware) {
    const std::vector<std::size_t> local = task_aware_labels(labels, split);
    const AccuracyResult acc = clustering_accuracy(local, assignment, split.num_new);
    rep.acc_all = acc.accuracy;
    rep.acc_new = acc.accuracy;
    rep.count_new = labels.size();
    rep.matched_new = acc.matched;
    rep.permutation = acc.permutation;
    for (auto& c : rep.permutation) c += split.num_old;
    return rep;
  }

  for (std::size_t y : labels)
    if (y >= split.num_classes()) throw ConfigError("evaluate: label outside the split's classes");
  const AccuracyResult acc = clustering_accuracy(labels, assignment, split.num_classes());
  rep.permutation = acc.permutation;
  rep.acc_all = acc.accuracy;

  std::vector<std::size_t> old_true, old_pred, new_true, new_pred;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool old = split.is_old(labels[i]);
    (old ? old_true : new_true).push_back(labels[i]);
    (old ? old_pred : new_pred).push_back(assignment[i]);
    if (old) {
      ++rep.count_old;
      rep.matched_old += acc.permutation[assignment[i]] == labels[i];
    } else {
      ++rep.count_new;
      rep.matched_new += acc.permutation[assignment[i]] == labels[i];
    }
  }
  if (per_subset_permutation) {
    if (!old_true.empty()) rep.matched_old = clustering_accuracy(old_true, old_pred, split.num_classes()).matched;
    if (!new_true.empty()) rep.matched_new = clustering_accuracy(new_true, new_pred, split.num_classes()).matched;
  }
  if (rep.count_old) rep.acc_old = static_cast<double>(rep.matched_old) / static_cast<double>(rep.count_old);
  if (rep.count_new) rep.acc_new = static_cast<double>(rep.matched_new) / static_cast<double>(rep.count_new);
  return rep;
}

MetricsReport evaluate(const Tensor& embeddings, std::span<const std::size_t> labels, const SplitSpec& split,
                       Protocol protocol, const EvalOptions& options) {
  require_rank(embeddings, 2, "evaluate");
  if (embeddings.dim(0) != labels.size()) throw DimensionError("evaluate: embeddings/labels length mismatch");
  if (protocol == Protocol::kTaskAware) task_aware_labels(labels, split);
  for (std::size_t y : labels)
    if (y >= split.num_classes()) throw ConfigError("evaluate: label outside the split's classes");
  const Tensor points = options.normalize ? l2_normalize_rows(embeddings) : embeddings;
  const std::size_t k = protocol == Protocol::kTaskAware ? split.num_new : split.num_classes();
  const KMeansResult km = kmeans(points, k, options.kmeans);
  return score_assignment(labels, km.assignment, split, protocol, options.per_subset_permutation);
}

}  // namespace rapl
