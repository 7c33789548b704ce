#pragma once

// Hot loops of the project. Each kernel exists twice: `serial` is the plain
// reference kept for testing, `parallel` splits the outermost independent
// loop with OpenMP. Both accumulate every output element in the same order,
// so their results are bit-identical.

#include <cstddef>
#include <span>

namespace rapl::kernels {

/// c (m×n) = op(a) · op(b), where op(a) is m×k and op(b) is k×n.
/// With trans_a, `a` is stored k×m; with trans_b, `b` is stored n×k.
struct MatmulDims {
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t n = 0;
  bool trans_a = false;
  bool trans_b = false;
};

struct Conv2dGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
};

#define RAPL_DECLARE_KERNELS                                                                                  \
  void matmul(const MatmulDims& dims, std::span<const double> a, std::span<const double> b, std::span<double> c, \
              bool accumulate);                                                                                \
  void conv2d_forward(const Conv2dGeometry& g, std::span<const double> x, std::span<const double> w,           \
                      std::span<const double> bias, std::span<double> out);                                   \
  /* grad_x += conv2d^T(grad_out, w) */                                                                        \
  void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_out,                        \
                             std::span<const double> w, std::span<double> grad_x);                             \
  /* grad_w += grad_out ⋆ x, grad_bias += Σ grad_out */                                                        \
  void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const double> grad_out,                       \
                              std::span<const double> x, std::span<double> grad_w, std::span<double> grad_bias); \
  /* Nearest centroid (lowest index on ties) and its squared distance for each of n points. */                  \
  void nearest_centroid(std::span<const double> points, std::span<const double> centroids, std::size_t n,      \
                        std::size_t k, std::size_t d, std::span<std::size_t> assignment,                        \
                        std::span<double> dist2);

namespace serial {
RAPL_DECLARE_KERNELS
}  // namespace serial

namespace parallel {
RAPL_DECLARE_KERNELS
}  // namespace parallel

#undef RAPL_DECLARE_KERNELS

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

}  // namespace rapl::kernels
