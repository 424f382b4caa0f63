#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "bissm/tensor.hpp"

namespace testing_util {

inline bissm::Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  bissm::Tensor t(rows, cols);
  for (double& v : t.data()) v = d(rng);
  return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bissm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_util
