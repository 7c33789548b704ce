#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rapl/autodiff.hpp"
#include "rapl/params.hpp"

namespace rapl {

/// Two 3×3 stride-2 ReLU convolutions, a 1×1 convolution to D channels, then
/// (optionally rectified) global average pooling and a three-layer MLP head
/// whose hidden layers are Linear → BatchNorm → ReLU.
struct EncoderConfig {
  std::array<std::size_t, 3> input_dims{1, 16, 16};    // channels, height, width
  std::array<std::size_t, 3> feature_dims{64, 4, 4};   // D, H, W
  std::array<std::size_t, 2> conv_channels{16, 32};
  std::size_t mlp_hidden = 256;
  std::size_t embed_dim = 64;
  std::uint64_t seed = 0;
  /// Test mode: head weights are identities, biases zero, activations bypassed.
  /// Requires mlp_hidden == embed_dim == D.
  bool identity_head = false;
  /// Apply ReLU to the feature maps before pooling (CRA still sees the raw maps).
  bool rectify_pool = true;
  /// Batch normalization on the two hidden head layers (ignored by the identity head).
  bool head_batch_norm = true;
  double bn_eps = 1e-5;
  /// Weight of the newest batch in the running statistics.
  double bn_momentum = 0.1;

  bool uses_batch_norm() const { return head_batch_norm && !identity_head; }

  std::size_t channels() const { return feature_dims[0]; }
  std::size_t regions() const { return feature_dims[1] * feature_dims[2]; }

  /// Throws ConfigError when the conv stack cannot produce feature_dims.
  void validate() const;
};

/// Pairing of augmented views (row i ↔ partner(i)); an involution without fixed points.
class ViewPairing {
 public:
  ViewPairing() = default;
  explicit ViewPairing(std::vector<std::size_t> partner);
  /// Rows [0, n) paired with rows [n, 2n).
  static ViewPairing halves(std::size_t n);

  std::size_t size() const { return partner_.size(); }
  std::size_t partner(std::size_t i) const { return partner_[i]; }
  const std::vector<std::size_t>& partners() const { return partner_; }

 private:
  std::vector<std::size_t> partner_;
};

/// Projected global feature vectors with optional labels and view pairing.
struct EmbeddingBatch {
  Tensor vectors;                    // N × embed_dim
  std::vector<std::size_t> labels;   // empty when unlabeled
  ViewPairing pairing;               // empty when there is a single view
};

/// Batch statistics collected by a training-mode forward pass of the head.
struct HeadBatchStats {
  std::size_t rows = 0;
  std::vector<Tensor> mean;
  std::vector<Tensor> var;   // biased
};

class Encoder {
 public:
  Encoder() : Encoder(EncoderConfig{}) {}
  explicit Encoder(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }
  ParameterList& parameters() { return params_; }
  const ParameterList& parameters() const { return params_; }

  /// input N×C×h×w → feature maps N×D×H×W. `params` are bound in parameters() order.
  Var encode(const Var& input, std::span<const Var> params) const;
  /// Feature maps → pooled D-vectors (no head).
  Var pool(const Var& feature_maps) const;
  /// Feature maps → pooled → MLP head. Output is not normalized. With `stats`
  /// the head normalizes with batch statistics and reports them (training);
  /// without, it uses the running statistics (inference).
  Var project(const Var& feature_maps, std::span<const Var> params, HeadBatchStats* stats = nullptr) const;

  /// Running mean/variance of the head's batch-norm layers.
  ParameterList& buffers() { return buffers_; }
  const ParameterList& buffers() const { return buffers_; }
  /// Folds one training batch into the running statistics (unbiased variance).
  void update_running_stats(const HeadBatchStats& stats);

  /// Value-level inference helpers (fresh tape, no gradients).
  Tensor feature_maps(const Tensor& input) const;
  Tensor embed(const Tensor& input, bool pooled_only = false) const;

  static constexpr std::size_t kConvParams = 6;

 private:
  EncoderConfig config_;
  ParameterList params_;
  ParameterList buffers_;
};

}  // namespace rapl
