#include <limits>

#include "rapl/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rapl::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {
namespace {

inline bool in_bounds(std::ptrdiff_t v, std::size_t extent) {
  return v >= 0 && v < static_cast<std::ptrdiff_t>(extent);
}

inline std::ptrdiff_t tap(std::size_t out, std::size_t k, const Conv2dGeometry& g) {
  return static_cast<std::ptrdiff_t>(out * g.stride + k) - static_cast<std::ptrdiff_t>(g.pad);
}

}  // namespace

void matmul(const MatmulDims& dims, std::span<const double> a, std::span<const double> b, std::span<double> c,
            bool accumulate) {
  const auto [m, k, n, ta, tb] = dims;
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta ? a[p * m + i] : a[i * k + p];
        const double bv = tb ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), ks = g.kernel;
  const auto planes = static_cast<std::ptrdiff_t>(g.batch * g.out_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t plane = 0; plane < planes; ++plane) {
    const std::size_t n = static_cast<std::size_t>(plane) / g.out_channels;
    const std::size_t o = static_cast<std::size_t>(plane) % g.out_channels;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = bias[o];
        for (std::size_t c = 0; c < g.in_channels; ++c) {
          const double* xc = x.data() + (n * g.in_channels + c) * g.in_h * g.in_w;
          const double* wc = w.data() + (o * g.in_channels + c) * ks * ks;
          for (std::size_t ky = 0; ky < ks; ++ky) {
            const auto iy = tap(oy, ky, g);
            if (!in_bounds(iy, g.in_h)) continue;
            for (std::size_t kx = 0; kx < ks; ++kx) {
              const auto ix = tap(ox, kx, g);
              if (!in_bounds(ix, g.in_w)) continue;
              acc += wc[ky * ks + kx] * xc[static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)];
            }
          }
        }
        out[(static_cast<std::size_t>(plane) * oh + oy) * ow + ox] = acc;
      }
    }
  }
}

void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_out, std::span<const double> w,
                           std::span<double> grad_x) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), ks = g.kernel;
  const auto batch = static_cast<std::ptrdiff_t>(g.batch);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t nn = 0; nn < batch; ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double go = grad_out[((n * g.out_channels + o) * oh + oy) * ow + ox];
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            double* gx = grad_x.data() + (n * g.in_channels + c) * g.in_h * g.in_w;
            const double* wc = w.data() + (o * g.in_channels + c) * ks * ks;
            for (std::size_t ky = 0; ky < ks; ++ky) {
              const auto iy = tap(oy, ky, g);
              if (!in_bounds(iy, g.in_h)) continue;
              for (std::size_t kx = 0; kx < ks; ++kx) {
                const auto ix = tap(ox, kx, g);
                if (!in_bounds(ix, g.in_w)) continue;
                gx[static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)] += go * wc[ky * ks + kx];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const double> grad_out, std::span<const double> x,
                            std::span<double> grad_w, std::span<double> grad_bias) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), ks = g.kernel;
  const auto channels = static_cast<std::ptrdiff_t>(g.out_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t oo = 0; oo < channels; ++oo) {
    const auto o = static_cast<std::size_t>(oo);
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double go = grad_out[((n * g.out_channels + o) * oh + oy) * ow + ox];
          grad_bias[o] += go;
          for (std::size_t c = 0; c < g.in_channels; ++c) {
            const double* xc = x.data() + (n * g.in_channels + c) * g.in_h * g.in_w;
            double* gw = grad_w.data() + (o * g.in_channels + c) * ks * ks;
            for (std::size_t ky = 0; ky < ks; ++ky) {
              const auto iy = tap(oy, ky, g);
              if (!in_bounds(iy, g.in_h)) continue;
              for (std::size_t kx = 0; kx < ks; ++kx) {
                const auto ix = tap(ox, kx, g);
                if (!in_bounds(ix, g.in_w)) continue;
                gw[ky * ks + kx] += go * xc[static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)];
              }
            }
          }
        }
      }
    }
  }
}

void nearest_centroid(std::span<const double> points, std::span<const double> centroids, std::size_t n,
                      std::size_t k, std::size_t d, std::span<std::size_t> assignment, std::span<double> dist2) {
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < count; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* p = points.data() + i * d;
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double* q = centroids.data() + c * d;
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = p[j] - q[j];
        s += diff * diff;
      }
      if (s < best) {
        best = s;
        arg = c;
      }
    }
    assignment[i] = arg;
    dist2[i] = best;
  }
}

}  // namespace parallel
}  // namespace rapl::kernels
