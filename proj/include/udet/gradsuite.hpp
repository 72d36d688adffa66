#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace udet {

struct SuiteCase {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  std::size_t checked = 0;
  bool passed = false;
  std::string detail;  // failure text, empty on success
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  bool end_to_end = true;
  /// Sampled elements per parameter tensor in the end-to-end case.
  std::size_t end_to_end_samples = 16;
  double op_tolerance = 1e-4;
  double end_to_end_tolerance = 1e-3;
};

/// Finite-difference checks in double precision: every primitive op, the
/// fusion node, weighted BCE, Bi-FPN miniatures and (optionally) a
/// 1/8-width 32x32 model in train mode. `on_case` sees each result as it lands.
std::vector<SuiteCase> run_gradient_suite(const SuiteOptions& options = {},
                                          const std::function<void(const SuiteCase&)>& on_case = {});

}  // namespace udet
