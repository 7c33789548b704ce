#include <random>

#include "doctest.h"
#include "rapl/kernels.hpp"
#include "test_util.hpp"

using namespace rapl;
using namespace rapl::kernels;

namespace {

std::vector<double> values(std::size_t n, std::uint64_t seed) {
  const Tensor t = rapl::test::random_tensor({n}, seed);
  return {t.data().begin(), t.data().end()};
}

}  // namespace

TEST_CASE("matmul serial agrees with a naive loop and parallel is bit-identical") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const MatmulDims d{1 + rng() % 9, 1 + rng() % 9, 1 + rng() % 9, (rng() & 1) != 0, (rng() & 1) != 0};
    const auto a = values(d.m * d.k, 2 * trial), b = values(d.k * d.n, 2 * trial + 1);
    std::vector<double> cs(d.m * d.n, 0.5), cp(d.m * d.n, 0.5);
    const bool acc = trial % 3 == 0;
    serial::matmul(d, a, b, cs, acc);
    parallel::matmul(d, a, b, cp, acc);
    CHECK(cs == cp);
    for (std::size_t i = 0; i < d.m; ++i)
      for (std::size_t j = 0; j < d.n; ++j) {
        double ref = acc ? 0.5 : 0.0;
        for (std::size_t p = 0; p < d.k; ++p) {
          const double av = d.trans_a ? a[p * d.m + i] : a[i * d.k + p];
          const double bv = d.trans_b ? b[j * d.k + p] : b[p * d.n + j];
          ref += av * bv;
        }
        CHECK(cs[i * d.n + j] == doctest::Approx(ref).epsilon(1e-13));
      }
  }
}

TEST_CASE("conv kernels: parallel bit-identical, backward input is the adjoint of forward") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Conv2dGeometry g{1 + rng() % 3, 1 + rng() % 3, 3 + rng() % 5, 3 + rng() % 5, 1 + rng() % 4, 1 + 2 * (rng() % 2),
                     1 + rng() % 2, 0};
    g.pad = g.kernel / 2;
    const std::size_t xs = g.batch * g.in_channels * g.in_h * g.in_w;
    const std::size_t ws = g.out_channels * g.in_channels * g.kernel * g.kernel;
    const std::size_t os = g.batch * g.out_channels * g.out_h() * g.out_w();
    const auto x = values(xs, 100 + trial), w = values(ws, 200 + trial), bias = values(g.out_channels, 300 + trial);
    const auto gy = values(os, 400 + trial);

    std::vector<double> ys(os), yp(os);
    serial::conv2d_forward(g, x, w, bias, ys);
    parallel::conv2d_forward(g, x, w, bias, yp);
    CHECK(ys == yp);

    std::vector<double> gxs(xs, 0.0), gxp(xs, 0.0);
    serial::conv2d_backward_input(g, gy, w, gxs);
    parallel::conv2d_backward_input(g, gy, w, gxp);
    CHECK(gxs == gxp);

    std::vector<double> gws(ws, 0.0), gwp(ws, 0.0), gbs(g.out_channels, 0.0), gbp(g.out_channels, 0.0);
    serial::conv2d_backward_weight(g, gy, x, gws, gbs);
    parallel::conv2d_backward_weight(g, gy, x, gwp, gbp);
    CHECK(gws == gwp);
    CHECK(gbs == gbp);

    // <conv(x) - bias, gy> = <x, conv^T(gy)> = <w, gy ⋆ x>
    const std::vector<double> zero_bias(g.out_channels, 0.0);
    std::vector<double> y0(os);
    serial::conv2d_forward(g, x, w, zero_bias, y0);
    double lhs = 0.0, via_x = 0.0, via_w = 0.0, bias_sum = 0.0;
    for (std::size_t i = 0; i < os; ++i) lhs += y0[i] * gy[i];
    for (std::size_t i = 0; i < xs; ++i) via_x += x[i] * gxs[i];
    for (std::size_t i = 0; i < ws; ++i) via_w += w[i] * gws[i];
    CHECK(via_x == doctest::Approx(lhs).epsilon(1e-12));
    CHECK(via_w == doctest::Approx(lhs).epsilon(1e-12));
    const std::size_t plane = g.out_h() * g.out_w();
    for (std::size_t i = 0; i < os; ++i) bias_sum += (i / plane % g.out_channels == 0) ? gy[i] : 0.0;
    CHECK(gbs[0] == doctest::Approx(bias_sum).epsilon(1e-12));
  }
}

TEST_CASE("nearest centroid: serial matches brute force, parallel bit-identical, ties to lower index") {
  const std::size_t n = 50, k = 6, d = 3;
  const auto pts = values(n * d, 9), cents = values(k * d, 10);
  std::vector<std::size_t> as(n), ap(n);
  std::vector<double> ds(n), dp(n);
  serial::nearest_centroid(pts, cents, n, k, d, as, ds);
  parallel::nearest_centroid(pts, cents, n, k, d, ap, dp);
  CHECK(as == ap);
  CHECK(ds == dp);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += (pts[i * d + j] - cents[c * d + j]) * (pts[i * d + j] - cents[c * d + j]);
      if (s < bd) bd = s, best = c;
    }
    CHECK(as[i] == best);
  }

  const std::vector<double> point = {0.0, 0.0};
  const std::vector<double> twins = {1.0, 0.0, -1.0, 0.0};
  std::vector<std::size_t> a(1);
  std::vector<double> dd(1);
  serial::nearest_centroid(point, twins, 1, 2, 2, a, dd);
  CHECK(a[0] == 0);
  CHECK(max_threads() >= 1);
}
