#include "rapl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rapl/error.hpp"

namespace rapl {

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("non-finite value in tape leaf");
  nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn, const char* op_name) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn), op_name);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn, const char* op_name) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite output from ") + op_name);
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw DimensionError(std::string(op_name) + ": inputs from a different tape");
    needs = needs || in.requires_grad();
  }
  nodes_.push_back(Node{std::move(value), std::nullopt, needs, needs ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& node = nodes_[id];
  if (!node.grad) node.grad = Tensor(node.value.shape(), 0.0);
  return *node.grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.grad) node.grad = Tensor(node.value.shape(), 0.0);
  return *node.grad;
}

void Tape::backward(const Var& root) {
  if (consumed_) throw ConfigError("tape already consumed by a backward pass");
  if (root.value().size() != 1) throw DimensionError("backward root must be a scalar, got " + shape_str(root.shape()));
  consumed_ = true;
  grad_buffer(root.id())[0] = 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.backward && node.grad) node.backward(*this, id);
  }
}

namespace {

// Accumulate into an input's grad buffer only when it participates in differentiation.
inline Tensor* grad_of(Tape& t, const Var& v) { return v.requires_grad() ? &t.grad_buffer(v.id()) : nullptr; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void softmax_into(std::span<const double> x, std::span<const double> support, std::span<double> y,
                  std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t off = i * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j)
      if (support.empty() || support[off + j] != 0.0) mx = std::max(mx, x[off + j]);
    if (!std::isfinite(mx)) throw NumericError("softmax over empty support in row " + std::to_string(i));
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const bool on = support.empty() || support[off + j] != 0.0;
      y[off + j] = on ? std::exp(x[off + j] - mx) : 0.0;
      z += y[off + j];
    }
    for (std::size_t j = 0; j < cols; ++j) y[off + j] /= z;
  }
}

Var softmax_impl(const Var& x, const Tensor* support, const char* name) {
  require_rank(x.value(), 2, name);
  if (support) require_same_shape(x.value(), *support, name);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Tensor y(x.shape());
  softmax_into(x.value().data(), support ? support->data() : std::span<const double>{}, y.data(), rows, cols);
  return x.tape().record(std::move(y), {x}, [x, rows, cols](Tape& t, std::size_t self) {
    const Tensor& yv = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * yv[i * cols + j];
      for (std::size_t j = 0; j < cols; ++j) gx[i * cols + j] += yv[i * cols + j] * (g[i * cols + j] - dot);
    }
  }, name);
}

}  // namespace

namespace ops {

Var matmul(const Var& a, const Var& b) {
  require_rank(a.value(), 2, "matmul");
  require_rank(b.value(), 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor c({m, n});
  kernels::parallel::matmul({m, k, n, false, false}, a.value().data(), b.value().data(), c.data(), false);
  return a.tape().record(std::move(c), {a, b}, [a, b, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = grad_of(t, a))
      kernels::parallel::matmul({m, n, k, false, true}, g.data(), b.value().data(), ga->data(), true);
    if (Tensor* gb = grad_of(t, b))
      kernels::parallel::matmul({k, m, n, true, false}, a.value().data(), g.data(), gb->data(), true);
  }, "matmul");
}

Var transpose(const Var& a) {
  require_rank(a.value(), 2, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.value()[i * c + j];
  return a.tape().record(std::move(out), {a}, [a, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  }, "transpose");
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (const Var* v : {&a, &b})
      if (Tensor* gv = grad_of(t, *v))
        for (std::size_t i = 0; i < g.size(); ++i) (*gv)[i] += g[i];
  }, "add");
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = grad_of(t, a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = grad_of(t, b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  }, "sub");
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.storage()) v *= s;
  return a.tape().record(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  }, "scale");
}

Var mul_const(const Var& a, const Tensor& c) {
  require_same_shape(a.value(), c, "mul_const");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  return a.tape().record(std::move(out), {a}, [a, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c[i] * g[i];
  }, "mul_const");
}

Var add_row_bias(const Var& x, const Var& b) {
  require_rank(x.value(), 2, "add_row_bias");
  require_rank(b.value(), 1, "add_row_bias");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (b.shape()[0] != m) throw DimensionError("add_row_bias: bias length mismatch");
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += b.value()[j];
  return x.tape().record(std::move(out), {x, b}, [x, b, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (Tensor* gx = grad_of(t, x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    if (Tensor* gb = grad_of(t, b))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) (*gb)[j] += g[i * m + j];
  }, "add_row_bias");
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return x.tape().record(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x.value()[i] > 0.0) gx[i] += g[i];
  }, "relu");
}

namespace {

void require_bn_shapes(const Var& x, const Var& gamma, const Var& beta, const char* what) {
  require_rank(x.value(), 2, what);
  require_rank(gamma.value(), 1, what);
  require_rank(beta.value(), 1, what);
  const std::size_t m = x.shape()[1];
  if (gamma.shape()[0] != m || beta.shape()[0] != m) throw DimensionError(std::string(what) + ": affine length mismatch");
}

}  // namespace

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps, Tensor* batch_mean, Tensor* batch_var) {
  require_bn_shapes(x, gamma, beta, "batch_norm");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (n < 2) throw DimensionError("batch_norm needs at least two rows");
  Tensor mu({m}), var({m}), xhat({n, m});
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) mu[j] += x.value()[i * m + j];
  for (std::size_t j = 0; j < m; ++j) mu[j] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double d = x.value()[i * m + j] - mu[j];
      var[j] += d * d;
    }
  for (std::size_t j = 0; j < m; ++j) {
    var[j] /= static_cast<double>(n);
    inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  }
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      xhat[i * m + j] = (x.value()[i * m + j] - mu[j]) * inv_std[j];
      out[i * m + j] = gamma.value()[j] * xhat[i * m + j] + beta.value()[j];
    }
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;
  return x.tape().record(std::move(out), {x, gamma, beta},
                         [x, gamma, beta, n, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                                                     std::size_t self) {
    const Tensor& g = t.grad(self);
    std::vector<double> sum_g(m, 0.0), sum_gx(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        sum_g[j] += g[i * m + j];
        sum_gx[j] += g[i * m + j] * xhat[i * m + j];
      }
    if (Tensor* gg = grad_of(t, gamma))
      for (std::size_t j = 0; j < m; ++j) (*gg)[j] += sum_gx[j];
    if (Tensor* gb = grad_of(t, beta))
      for (std::size_t j = 0; j < m; ++j) (*gb)[j] += sum_g[j];
    if (Tensor* gx = grad_of(t, x)) {
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double k = gamma.value()[j] * inv_std[j];
          (*gx)[i * m + j] += k * (g[i * m + j] - sum_g[j] * inv_n - xhat[i * m + j] * sum_gx[j] * inv_n);
        }
    }
  }, "batch_norm");
}

Var batch_norm_fixed(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& var,
                     double eps) {
  require_bn_shapes(x, gamma, beta, "batch_norm_fixed");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (mean.size() != m || var.size() != m) throw DimensionError("batch_norm_fixed: statistics length mismatch");
  std::vector<double> inv_std(m);
  for (std::size_t j = 0; j < m; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      out[i * m + j] = gamma.value()[j] * (x.value()[i * m + j] - mean[j]) * inv_std[j] + beta.value()[j];
  return x.tape().record(std::move(out), {x, gamma, beta},
                         [x, gamma, beta, n, m, mean, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor* gx = grad_of(t, x);
    Tensor* gg = grad_of(t, gamma);
    Tensor* gb = grad_of(t, beta);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double xhat = (x.value()[i * m + j] - mean[j]) * inv_std[j];
        if (gx) (*gx)[i * m + j] += g[i * m + j] * gamma.value()[j] * inv_std[j];
        if (gg) (*gg)[j] += g[i * m + j] * xhat;
        if (gb) (*gb)[j] += g[i * m + j];
      }
  }, "batch_norm_fixed");
}

Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t pad) {
  require_rank(x.value(), 4, "conv2d input");
  require_rank(w.value(), 4, "conv2d weight");
  require_rank(b.value(), 1, "conv2d bias");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3] || b.shape()[0] != ws[0] || stride == 0) {
    throw DimensionError("conv2d: incompatible input " + shape_str(xs) + " / weight " + shape_str(ws));
  }
  kernels::Conv2dGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad};
  if (xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[2]) throw DimensionError("conv2d: kernel larger than input");
  Tensor out({g.batch, g.out_channels, g.out_h(), g.out_w()});
  kernels::parallel::conv2d_forward(g, x.value().data(), w.value().data(), b.value().data(), out.data());
  return x.tape().record(std::move(out), {x, w, b}, [x, w, b, g](Tape& t, std::size_t self) {
    const Tensor& go = t.grad(self);
    if (Tensor* gx = grad_of(t, x)) kernels::parallel::conv2d_backward_input(g, go.data(), w.value().data(), gx->data());
    if (w.requires_grad() || b.requires_grad()) {
      // Both buffers are filled together; whichever is constant receives a throwaway copy.
      Tensor scratch_w, scratch_b;
      Tensor* gw = grad_of(t, w);
      Tensor* gb = grad_of(t, b);
      if (!gw) gw = &(scratch_w = Tensor(w.shape()));
      if (!gb) gb = &(scratch_b = Tensor(b.shape()));
      kernels::parallel::conv2d_backward_weight(g, go.data(), x.value().data(), gw->data(), gb->data());
    }
  }, "conv2d");
}

Var global_avg_pool(const Var& x) {
  require_rank(x.value(), 4, "global_avg_pool");
  const std::size_t n = x.shape()[0], d = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  Tensor out({n, d});
  for (std::size_t i = 0; i < n * d; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += x.value()[i * hw + p];
    out[i] = s / static_cast<double>(hw);
  }
  return x.tape().record(std::move(out), {x}, [x, n, d, hw](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < n * d; ++i)
      for (std::size_t p = 0; p < hw; ++p) gx[i * hw + p] += g[i] * inv;
  }, "global_avg_pool");
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  }, "reshape");
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts[0].value().rank() == 2 ? parts[0].shape()[1] : 0;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    require_rank(p.value(), 2, "concat_rows");
    if (p.shape()[1] != cols) throw DimensionError("concat_rows: column mismatch");
    rows += p.shape()[0];
  }
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.value().size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [inputs](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& p : inputs) {
      if (Tensor* gp = grad_of(t, p))
        for (std::size_t i = 0; i < gp->size(); ++i) (*gp)[i] += g[off + i];
      off += p.value().size();
    }
  }, "concat_rows");
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
  require_rank(x.value(), 2, "gather_rows");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out({idx.size(), m});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw DimensionError("gather_rows: row index out of range");
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = x.value()[idx[r] * m + j];
  }
  return x.tape().record(std::move(out), {x}, [x, idx, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < m; ++j) gx[idx[r] * m + j] += g[r * m + j];
  }, "gather_rows");
}

Var l2_normalize_rows(const Var& x, double eps) {
  require_rank(x.value(), 2, "l2_normalize_rows");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  Tensor out(x.shape());
  std::vector<double> denom(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x.value()[i * d + j] * x.value()[i * d + j];
    denom[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.value()[i * d + j] / denom[i];
  }
  return x.tape().record(std::move(out), {x}, [x, n, d, eps, denom](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < n; ++i) {
      if (denom[i] <= eps) {
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[i * d + j] / eps;
        continue;
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += y[i * d + j] * g[i * d + j];
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += (g[i * d + j] - y[i * d + j] * dot) / denom[i];
    }
  }, "l2_normalize_rows");
}

Var softmax_rows(const Var& x) { return softmax_impl(x, nullptr, "softmax_rows"); }

Var masked_softmax_rows(const Var& x, const Tensor& support) {
  return softmax_impl(x, &support, "masked_softmax_rows");
}

Var logsumexp_rows(const Var& x, const Tensor* support) {
  require_rank(x.value(), 2, "logsumexp_rows");
  if (support) require_same_shape(x.value(), *support, "logsumexp_rows");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  Tensor probs(x.shape());
  softmax_into(x.value().data(), support ? support->data() : std::span<const double>{}, probs.data(), rows, cols);
  Tensor out({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j)
      if (!support || (*support)[i * cols + j] != 0.0) mx = std::max(mx, x.value()[i * cols + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j)
      if (!support || (*support)[i * cols + j] != 0.0) z += std::exp(x.value()[i * cols + j] - mx);
    out[i] = mx + std::log(z);
  }
  return x.tape().record(std::move(out), {x}, [x, probs, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) gx[i * cols + j] += g[i] * probs[i * cols + j];
  }, "logsumexp_rows");
}

Var log(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.storage()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
    v = std::log(v);
  }
  return x.tape().record(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x.value()[i];
  }, "log");
}

Var pick(const Var& x, std::span<const std::size_t> index) {
  require_rank(x.value(), 2, "pick");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (index.size() != rows) throw DimensionError("pick: index length mismatch");
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    if (idx[i] >= cols) throw DimensionError("pick: column index out of range");
    out[i] = x.value()[i * cols + idx[i]];
  }
  return x.tape().record(std::move(out), {x}, [x, idx, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < idx.size(); ++i) gx[i * cols + idx[i]] += g[i];
  }, "pick");
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record(Tensor::scalar(s), {x}, [x](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Tensor& gx = t.grad_buffer(x.id());
    for (double& v : gx.storage()) v += g;
  }, "sum");
}

Var mean(const Var& x) {
  if (x.value().empty()) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

}  // namespace ops

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  if (!x.all_finite()) throw NumericError("softmax_rows: non-finite input");
  Tensor y(x.shape());
  softmax_into(x.data(), {}, y.data(), x.dim(0), x.dim(1));
  return y;
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  Tape tape;
  return ops::l2_normalize_rows(tape.constant(x), eps).value();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape tape;
  return ops::matmul(tape.constant(a), tape.constant(b)).value();
}

}  // namespace rapl
