#pragma once

#include <filesystem>
#include <string>

#include "dae/tensor.hpp"
#include "oracles.hpp"

namespace testutil {

template <typename T>
oracle::Vec to_vec(const dae::BasicTensor<T>& t) {
  return oracle::Vec(t.data(), t.data() + t.size());
}

template <typename T = double>
dae::BasicTensor<T> from_vec(const dae::Shape& shape, const oracle::Vec& v) {
  dae::BasicTensor<T> t(shape);
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<T>(v[i]);
  return t;
}

/// Fresh scratch directory under the build tree's temp area.
inline std::string scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dae_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace testutil
