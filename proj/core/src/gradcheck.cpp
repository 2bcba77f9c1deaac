#include "condensa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "condensa/error.hpp"

namespace condensa {
namespace {

double evaluate(const LossBuilder& build) {
  Graph g;
  return build(g).item();
}

}  // namespace

GradCheckReport finite_difference_check(const LossBuilder& build, Tensor leaf, double h, double tol) {
  if (!(h > 0.0)) throw DomainError("finite_difference_check: step h must be positive");
  if (!leaf.requires_grad()) throw ContractError("finite_difference_check: leaf does not require grad");

  std::vector<double> analytic;
  {
    Graph g;
    Tensor root = build(g);
    g.backward(root);
    if (leaf.has_grad()) {
      analytic.assign(leaf.grad().begin(), leaf.grad().end());
    } else {
      analytic.assign(leaf.numel(), 0.0);
    }
    const double again = evaluate(build);
    if (again != root.item()) {
      throw ContractError("finite_difference_check: loss builder is not deterministic");
    }
  }

  GradCheckReport report;
  auto x = leaf.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = evaluate(build);
    x[i] = saved - h;
    const double fm = evaluate(build);
    x[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (i == 0 || rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric;
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace condensa
