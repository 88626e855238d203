#include "mcalab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mcalab/errors.hpp"

namespace mcalab {

GradCheckReport grad_check(const GradCheckProblem& problem, std::uint64_t seed, double h) {
  std::vector<NamedTensor> params = problem.make_params(seed);

  {
    Tape tape;
    Tensor loss = problem.build_loss(tape, params);
    if (!std::isfinite(loss.scalar())) throw DegenerateInputError("grad_check: non-finite loss");
    for (auto& p : params) {
      p.t.ensure_grad();
      p.t.zero_grad();
    }
    tape.backward(loss);
  }

  GradCheckReport report;
  for (auto& p : params) {
    double max_rel = 0.0, sum_rel = 0.0;
    for (std::size_t i = 0; i < p.t.size(); ++i) {
      double saved = p.t.value()[i];
      p.t.value()[i] = saved + h;
      Tape tp;
      double up = problem.build_loss(tp, params).scalar();
      p.t.value()[i] = saved - h;
      Tape tm;
      double down = problem.build_loss(tm, params).scalar();
      p.t.value()[i] = saved;
      double numeric = (up - down) / (2.0 * h);
      double analytic = p.t.grad()[i];
      double rel = std::abs(analytic - numeric) /
                   std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
      sum_rel += rel;
    }
    report.entries.push_back(
        {p.name, max_rel, p.t.size() ? sum_rel / static_cast<double>(p.t.size()) : 0.0});
    report.max_rel_error = std::max(report.max_rel_error, max_rel);
  }
  return report;
}

}  // namespace mcalab
