#pragma once

#include <functional>
#include <string>

#include "vqclone/graph.hpp"

namespace vqclone::ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
  std::size_t components_checked = 0;
  bool ok(double tol) const { return max_rel_err < tol; }
};

// Central finite differences against backward() on every component of every
// trainable parameter registered in the graph the builder constructs.
//
// The builder runs once. Perturbed losses come from Graph::refresh, which
// keeps stop_gradient outputs pinned and re-evaluates straight_through as a
// gradient-copy surrogate, i.e. the differences measure exactly the function
// whose derivative backward() reports.
GradCheckReport check_gradients(const std::function<Value(Graph&)>& build,
                                double step = 1e-5);

// Relative error with a small absolute floor so exact-zero pairs compare
// as zero error.
double relative_error(double a, double b);

}  // namespace vqclone::ad
