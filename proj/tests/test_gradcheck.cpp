#include "doctest.h"
#include "rapl/experiment.hpp"
#include "rapl/gradcheck.hpp"
#include "test_util.hpp"

using namespace rapl;

TEST_CASE("sum of squares: closed-form gradient passes, a wrong backward is caught") {
  const auto r = grad_check(
      "sum_sq",
      [&](Tape&, std::span<const Var> in) {
        Var sq = ops::sum(ops::mul_const(in[0], in[0].value()));
        return sq;
      },
      {Tensor::vector({1, 2, 3})}, GradCheckOptions{.tolerance = 1e-6});
  // mul_const treats the second factor as constant, so the analytic gradient is x, not 2x;
  // the numerical derivative sees 2x, and the check must flag the mismatch.
  CHECK_FALSE(r.passed);

  const auto ok = grad_check(
      "sum_sq_tape",
      [](Tape& t, std::span<const Var> in) {
        const Var& v = in[0];
        Tensor value(v.shape());
        for (std::size_t i = 0; i < value.size(); ++i) value[i] = v.value()[i] * v.value()[i];
        Var sq = t.record(std::move(value), {v},
                          [id = v.id()](Tape& tp, std::size_t self) {
                            const Tensor& g = tp.grad(self);
                            Tensor& gx = tp.grad_buffer(id);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * tp.value(id)[i] * g[i];
                          },
                          "square");
        return ops::sum(sq);
      },
      {Tensor::vector({1, 2, 3})}, GradCheckOptions{.tolerance = 1e-6});
  CHECK(ok.passed);
  CHECK(ok.coordinates == 3);
  CHECK(ok.tolerance == 1e-6);
  CHECK(ok.max_rel_err <= 1e-6);

  Tape probe;
  Var p = probe.leaf(Tensor::vector({1, 2, 3}));
  Tensor value({3});
  for (std::size_t i = 0; i < 3; ++i) value[i] = p.value()[i] * p.value()[i];
  Var sq = probe.record(std::move(value), {p},
                        [id = p.id()](Tape& tp, std::size_t self) {
                          for (std::size_t i = 0; i < 3; ++i) tp.grad_buffer(id)[i] += 2.0 * tp.value(id)[i] * tp.grad(self)[i];
                        },
                        "square");
  probe.backward(ops::sum(sq));
  CHECK(p.grad() == Tensor::vector({2, 4, 6}));
}

TEST_CASE("non-finite analytic gradient fails with a diagnostic") {
  const auto r = grad_check(
      "poisoned",
      [](Tape& t, std::span<const Var> in) {
        const Var& v = in[0];
        Var out = t.record(v.value(), {v},
                           [id = v.id()](Tape& tp, std::size_t) { tp.grad_buffer(id)[0] = std::nan(""); }, "poison");
        return ops::sum(out);
      },
      {Tensor::vector({1.0, 2.0})});
  CHECK_FALSE(r.passed);
  CHECK_FALSE(r.diagnostic.empty());
}

TEST_CASE("non-scalar outputs are reduced by a fixed cotangent") {
  const auto a = grad_check("matmul", [](Tape&, std::span<const Var> in) { return ops::matmul(in[0], in[1]); },
                            {rapl::test::random_tensor({3, 4}, 1), rapl::test::random_tensor({4, 2}, 2)},
                            GradCheckOptions{.tolerance = 1e-6});
  CHECK(a.passed);
  CHECK(a.coordinates == 20);
}

TEST_CASE("loss suite passes at 1e-4 on three seeds") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const GradCheckReport& r : gradcheck_suite(seed)) {
      INFO(r.op_name << " seed " << seed << " rel " << r.max_rel_err);
      CHECK(r.passed);
      CHECK(r.tolerance == 1e-4);
    }
  }
}
