#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mcalab/datagen.hpp"
#include "mcalab/tensor.hpp"

namespace testutil {

// A unit 3-vector with a prescribed cosine against e1 = (1,0,0).
inline std::vector<double> with_cos(double c, bool flip_plane = false) {
  double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  if (flip_plane) return {c, 0.0, s};
  return {c, s, 0.0};
}

inline mcalab::Tensor unit_row(const std::vector<double>& v, bool requires_grad = false) {
  return mcalab::Tensor::from({1, v.size()}, v, requires_grad);
}

// Small generator config so module tests stay fast.
inline mcalab::GeneratorConfig small_gen(std::uint64_t seed = 1) {
  mcalab::GeneratorConfig g;
  g.n_train = 1024;
  g.n_ind_test = 128;
  g.n_ood_test = 128;
  g.pool_size = 16;
  g.n_hard_distractors = 4;
  g.seed = seed;
  return g;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::filesystem::path tmp_dir(const std::string& name) {
  std::filesystem::path p = std::filesystem::temp_directory_path() / ("mcalab_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
