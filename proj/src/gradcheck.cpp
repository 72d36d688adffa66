#include "udet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "udet/ops.hpp"
#include "udet/rng.hpp"

namespace udet {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

class ScalarObjective {
 public:
  ScalarObjective(const OpClosure& op, std::span<const Tensor<double>> inputs, std::uint64_t seed)
      : op_(op), inputs_(inputs), seed_(seed) {}

  Tensor<double> build(Tape<double>& tape) {
    Tensor<double> out = op_(tape, inputs_);
    if (out.numel() == 1 && out.shape() == Shape{}) return out;
    if (!projection_.defined() || !(projection_.shape() == out.shape())) {
      Rng rng(derive_seed(seed_, {0x70726f6aULL}));
      projection_ = Tensor<double>(out.shape());
      for (double& v : projection_.data()) v = uniform(rng, -1.0, 1.0);
    }
    return ops::sum(tape, ops::mul(tape, out, projection_));
  }

  double value() {
    Tape<double> tape;
    tape.set_enabled(false);
    return build(tape).item();
  }

 private:
  const OpClosure& op_;
  std::span<const Tensor<double>> inputs_;
  std::uint64_t seed_;
  Tensor<double> projection_;
};

std::vector<std::size_t> pick_indices(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= n) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n - i));
    std::swap(idx[i], idx[std::min(j, n - 1)]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const OpClosure& op, std::vector<Tensor<double>> inputs,
                           double tolerance, const GradCheckOptions& options) {
  std::size_t total = 0;
  for (const auto& t : inputs) total += t.numel();
  if (options.max_elements_per_input == 0 && total > 10000)
    throw std::invalid_argument("grad_check: " + std::to_string(total) +
                                " elements exceeds 1e4; set max_elements_per_input");

  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.drop_grad();
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  ScalarObjective objective(op, inputs, options.seed);

  {
    Tape<double> tape;
    Tensor<double> loss = objective.build(tape);
    if (!std::isfinite(loss.item())) {
      report.failure = "non-finite loss at the unperturbed point";
      return report;
    }
    tape.backward(loss);
  }

  Rng sampler(derive_seed(options.seed, {0x73616d70ULL}));
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double>& x = inputs[k];
    InputReport ir;
    auto values = x.data();
    const bool has = x.has_grad();
    for (std::size_t i : pick_indices(x.numel(), options.max_elements_per_input, sampler)) {
      const double analytic = has ? x.grad()[i] : 0.0;
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = objective.value();
      values[i] = saved - options.step;
      const double down = objective.value();
      values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(analytic)) {
        report.failure = "non-finite value at input " + std::to_string(k) + " element " +
                         std::to_string(i);
        report.inputs.push_back(ir);
        return report;
      }
      const double numeric = (up - down) / (2.0 * options.step);
      const double err = relative_error(analytic, numeric, options.floor);
      if (err > ir.max_rel_error) {
        ir.max_rel_error = err;
        ir.worst_index = i;
      }
      ++ir.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, ir.max_rel_error);
    report.inputs.push_back(ir);
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace udet
