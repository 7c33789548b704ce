#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rapl/autodiff.hpp"
#include "rapl/encoder.hpp"

namespace rapl {

/// Learnable class proxies. Old proxies stand for the labeled classes
/// [0, C_l), new proxies for the unlabeled classes [C_l, C_l + C_u).
struct ProxyBank {
  Tensor old_proxies;                  // C_l × d
  std::optional<Tensor> new_proxies;   // C_u × d, set at the start of discovery
  bool old_frozen = false;

  std::size_t num_old() const { return old_proxies.rank() == 2 ? old_proxies.dim(0) : 0; }
  std::size_t num_new() const { return new_proxies ? new_proxies->dim(0) : 0; }
  std::size_t dim() const { return old_proxies.dim(1); }

  /// Gaussian proxies, unit-normalized, from `seed`.
  static ProxyBank random(std::size_t num_old, std::size_t dim, std::uint64_t seed);
};

/// Intermediate matrices of the proxy-guided classification, for inspection.
struct SimilarityWorkspace {
  Tensor similarity;        // S, N × C
  Tensor mask;              // M, k ones per row, zero at the label
  Tensor selected;          // Ȳ = S ⊙ M + S_pos
  Tensor prediction;        // Ỹ, softmax over the structural support
  std::vector<double> positive;  // S_pos, one entry per row
};

/// Cosine similarity: both sides row-normalized, then dot products.
Var similarity(const Var& features, const Var& proxies);
Tensor similarity(const Tensor& features, const Tensor& proxies);

/// Per row, ones at the k largest non-label entries (lower class index wins ties).
Tensor topk_negative_mask(const Tensor& sim, std::span<const std::size_t> labels, std::size_t k);

/// Mask plus a one at each row's label: the entries that take part in the softmax.
Tensor support_of(const Tensor& mask, std::span<const std::size_t> labels);

/// Ȳ[i,j] = S[i,j]·M[i,j] off the label, S[i,y_i] at the label.
Tensor masked_selection(const Tensor& sim, const Tensor& mask, std::span<const std::size_t> labels);

/// Softmax restricted to the support; exact zeros elsewhere.
Tensor indicator_softmax(const Tensor& selected, const Tensor& support);

/// k = max(1, round(xi · C_l)), clamped to C_l − 1.
std::size_t topk_from_ratio(double xi, std::size_t num_old);

/// Proxy-guided classification loss, mean over rows of −log Ỹ[i, y_i].
Var pc_loss(const Var& features, std::span<const std::size_t> labels, const Var& old_proxies, std::size_t k,
            SimilarityWorkspace* workspace = nullptr);

/// Proxy regularization: mean over old proxies of −log softmax(S^p)[i,i].
Var proxy_reg_loss(const Var& old_proxies);

/// Contrastive loss over V̄ = [views; proxy sets...], all unit-normalized. A
/// view's positive is its paired view, a proxy's positive is itself; each
/// denominator runs over V̄ without the anchor. Mean over anchors. An empty
/// `proxy_sets` gives the vanilla contrastive variant.
Var pcl_loss(const Var& views, const ViewPairing& pairing, std::span<const Var> proxy_sets, double tau);

/// k-means over normalized unlabeled embeddings; returns normalized centroids.
Tensor init_new_proxies(const Tensor& unlabeled_features, std::size_t num_new, std::uint64_t seed);

/// Row-normalizes proxies in place.
void renormalize(Tensor& proxies);

}  // namespace rapl
