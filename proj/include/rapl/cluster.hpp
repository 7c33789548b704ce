#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rapl/split.hpp"
#include "rapl/tensor.hpp"

namespace rapl {

struct KMeansOptions {
  std::uint64_t seed = 0;
  std::size_t max_iters = 300;
  double tol = 1e-6;
  /// Independent k-means++ starts; the lowest final objective wins.
  std::size_t restarts = 1;
};

struct KMeansResult {
  Tensor centroids;                     // K × d
  std::vector<std::size_t> assignment;  // length N
  /// Sum of squared distances after each assignment step.
  std::vector<double> objective_history;
  double objective = 0.0;
  std::size_t iterations = 0;
};

/// Lloyd iterations with k-means++ seeding. Empty clusters adopt the point
/// farthest from its current centroid.
KMeansResult kmeans(const Tensor& points, std::size_t k, const KMeansOptions& options = {});

/// Lloyd iterations from the given centroids.
KMeansResult lloyd(const Tensor& points, Tensor centroids, std::size_t max_iters = 300, double tol = 1e-6);

Tensor kmeans_plus_plus(const Tensor& points, std::size_t k, std::uint64_t seed);

/// Minimum-cost perfect matching of a square cost matrix (Kuhn–Munkres with
/// potentials). Returns column assigned to each row.
std::vector<std::size_t> hungarian(const Tensor& cost);

struct AccuracyResult {
  double accuracy = 0.0;
  std::size_t matched = 0;
  /// permutation[cluster] = class id it is mapped to.
  std::vector<std::size_t> permutation;
};

/// Best accuracy over all bijections between predicted clusters and classes.
AccuracyResult clustering_accuracy(std::span<const std::size_t> y_true, std::span<const std::size_t> y_pred,
                                   std::size_t num_classes);

enum class Protocol { kTaskAgnostic, kTaskAware };

std::string to_string(Protocol p);

struct MetricsReport {
  Protocol protocol = Protocol::kTaskAgnostic;
  double acc_all = 0.0;
  std::optional<double> acc_old;  // absent under the task-aware protocol
  std::optional<double> acc_new;
  std::vector<std::size_t> permutation;
  std::size_t count_old = 0;
  std::size_t count_new = 0;
  std::size_t matched_old = 0;
  std::size_t matched_new = 0;
};

struct EvalOptions {
  KMeansOptions kmeans{.seed = 0, .max_iters = 300, .tol = 1e-6, .restarts = 10};
  /// L2-normalize embeddings before clustering.
  bool normalize = true;
  /// Match Old and New subsets with their own permutations instead of the global one.
  bool per_subset_permutation = false;
};

/// Scores a cluster assignment against global class ids under a protocol
/// (task-aware expects new-class samples only and K = C_u cluster ids).
MetricsReport score_assignment(std::span<const std::size_t> labels, std::span<const std::size_t> assignment,
                               const SplitSpec& split, Protocol protocol, bool per_subset_permutation = false);

/// Clusters `embeddings` and scores them against `labels` (global class ids).
/// Task-agnostic: K = C_l + C_u over the given (test) set, All/Old/New under one
/// permutation. Task-aware: K = C_u over new-class samples only.
MetricsReport evaluate(const Tensor& embeddings, std::span<const std::size_t> labels, const SplitSpec& split,
                       Protocol protocol, const EvalOptions& options = {});

}  // namespace rapl
