#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "rapl/kernels.hpp"
#include "rapl/tensor.hpp"

namespace rapl {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  /// Accumulated gradient (zeros if nothing flowed into this node).
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records one forward evaluation; `backward` replays it in reverse once.
/// A tape is meant to live for a single loss evaluation and then be dropped.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. The node requires grad iff any input does; otherwise
  /// `fn` is dropped. Throws NumericError on non-finite output.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn, const char* op_name);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn, const char* op_name);

  /// Seeds d(root)/d(root) = 1 and propagates to every recorded node.
  void backward(const Var& root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Mutable gradient accumulator for a node, allocated on first use.
  Tensor& grad_buffer(std::size_t id);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    mutable std::optional<Tensor> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

namespace ops {

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Elementwise product with a constant tensor of the same shape.
Var mul_const(const Var& a, const Tensor& c);
/// x[n×m] + b[m] broadcast over rows.
Var add_row_bias(const Var& x, const Var& b);
Var relu(const Var& x);
/// Batch normalization of x[n×m] over rows with biased batch statistics, then
/// γ·x̂ + β. The batch mean and variance are written to the optional outputs.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps, Tensor* batch_mean = nullptr,
               Tensor* batch_var = nullptr);
/// Same normalization with fixed statistics (inference).
Var batch_norm_fixed(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& var,
                     double eps);
/// x[N×C×H×W] * w[O×C×k×k] + b[O]; square kernels, symmetric zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t pad);
/// x[N×D×H×W] → [N×D], spatial mean.
Var global_avg_pool(const Var& x);
Var reshape(const Var& x, Shape shape);
/// Stacks rank-2 inputs with equal column counts.
Var concat_rows(std::span<const Var> parts);
Var gather_rows(const Var& x, std::span<const std::size_t> rows);
/// Row-wise x / max(‖x‖₂, eps).
Var l2_normalize_rows(const Var& x, double eps = 1e-12);
Var softmax_rows(const Var& x);
/// Softmax over entries where support == 1; exactly 0 elsewhere. Each row needs a non-empty support.
Var masked_softmax_rows(const Var& x, const Tensor& support);
/// Row-wise log Σ exp(x), optionally restricted to support == 1. Output shape [n].
Var logsumexp_rows(const Var& x, const Tensor* support = nullptr);
Var log(const Var& x);
/// out[i] = x[i, index[i]].
Var pick(const Var& x, std::span<const std::size_t> index);
Var sum(const Var& x);
Var mean(const Var& x);

}  // namespace ops

/// Value-level helpers sharing the op kernels (no tape).
Tensor softmax_rows(const Tensor& x);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace rapl
