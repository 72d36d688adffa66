#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "udet/tensor.hpp"

namespace udet {

using OpClosure =
    std::function<Tensor<double>(Tape<double>& tape, std::span<const Tensor<double>> inputs)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error.
  double floor = 1e-6;
  /// 0 checks every element; otherwise a seeded sample of this many per input.
  std::size_t max_elements_per_input = 0;
  std::uint64_t seed = 0;
};

struct InputReport {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<InputReport> inputs;
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed = false;
  std::string failure;  // non-empty when a non-finite value was hit
};

/// Compares reverse-mode gradients against central differences.
///
/// Non-scalar outputs are contracted with a fixed random projection so every
/// output element contributes. Inputs are perturbed in place and restored, so
/// closures may capture them (model parameters, for instance).
GradCheckReport grad_check(const OpClosure& op, std::vector<Tensor<double>> inputs,
                           double tolerance, const GradCheckOptions& options = {});

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

}  // namespace udet
