#pragma once

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "udet/rng.hpp"
#include "udet/tensor.hpp"

namespace test {

template <typename T>
udet::Tensor<T> random_tensor(udet::Shape s, udet::Rng& rng, double lo = -1.0, double hi = 1.0) {
  udet::Tensor<T> t(s);
  for (T& v : t.data()) v = static_cast<T>(udet::uniform(rng, lo, hi));
  return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("udet_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace test
