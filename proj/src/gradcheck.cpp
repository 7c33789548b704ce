#include "rapl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "rapl/error.hpp"

namespace rapl {
namespace {

Var reduce_to_scalar(const Var& out, std::uint64_t seed) {
  if (out.value().size() == 1) return ops::reshape(out, Shape{});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor cot(out.shape());
  for (double& v : cot.storage()) v = dist(rng);
  return ops::sum(ops::mul_const(out, cot));
}

double evaluate(const DifferentiableFn& fn, const std::vector<Tensor>& inputs, std::uint64_t seed) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.constant(t));
  return reduce_to_scalar(fn(tape, leaves), seed).value().item();
}

}  // namespace

GradCheckReport grad_check(std::string op_name, const DifferentiableFn& fn, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.op_name = std::move(op_name);
  report.tolerance = options.tolerance;

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, true));
    Var loss = reduce_to_scalar(fn(tape, leaves), options.cotangent_seed);
    tape.backward(loss);
    for (const Var& v : leaves) analytic.push_back(v.grad());
  }

  bool all_ok = true;
  std::ostringstream diag;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (!analytic[t].all_finite()) {
      report.passed = false;
      report.diagnostic = "non-finite analytic gradient for input " + std::to_string(t);
      return report;
    }
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double saved = inputs[t][i];
      inputs[t][i] = saved + options.step;
      const double up = evaluate(fn, inputs, options.cotangent_seed);
      inputs[t][i] = saved - options.step;
      const double down = evaluate(fn, inputs, options.cotangent_seed);
      inputs[t][i] = saved;

      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[t][i];
      const double abs_err = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      report.max_rel_err = std::max(report.max_rel_err, rel_err);
      ++report.coordinates;
      const bool ok = rel_err <= options.tolerance || abs_err <= options.tolerance * 0.01;
      if (!ok && all_ok) {
        diag << "input " << t << " coord " << i << ": analytic " << a << " numeric " << numeric;
      }
      all_ok = all_ok && ok;
    }
  }
  report.passed = all_ok;
  report.diagnostic = diag.str();
  return report;
}

}  // namespace rapl
