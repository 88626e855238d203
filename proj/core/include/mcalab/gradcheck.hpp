#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mcalab/tensor.hpp"

namespace mcalab {

struct NamedTensor {
  std::string name;
  Tensor t;
};

// A gradient-check problem: make_params builds seeded leaf parameters,
// build_loss turns them into a scalar loss on a fresh tape. build_loss must
// be a pure function of the parameter values so that central differences
// are meaningful.
struct GradCheckProblem {
  std::function<std::vector<NamedTensor>(std::uint64_t seed)> make_params;
  std::function<Tensor(Tape&, std::vector<NamedTensor>&)> build_loss;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error;
  double mean_rel_error;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool ok(double tol = 1e-4) const { return max_rel_error < tol; }
};

// Central finite differences with step h in 64-bit floats; relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// h = 1e-6 balances truncation error (quadratic in h) against roundoff; in
// 64-bit floats roundoff stays ~1e-10 while curvature-heavy paths (power
// normalization, sharp softmaxes) need the small step.
GradCheckReport grad_check(const GradCheckProblem& problem, std::uint64_t seed, double h = 1e-6);

}  // namespace mcalab
