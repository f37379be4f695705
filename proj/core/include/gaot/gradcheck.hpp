#pragma once

#include <functional>

#include "gaot/tensor.hpp"

namespace gaot::ad {

// Compares reverse-mode gradients of a scalar-valued computation against
// central finite differences, one coordinate of p at a time.  Returns
// max_i |analytic_i - fd_i| / (|fd_i| + 1e-12).  The callable must rebuild
// the computation from the current contents of p on every invocation.
// Finite-value checks are enabled for the analytic pass, so a NaN anywhere in
// the graph fails loudly with the primitive's name.
double check_gradient(const std::function<Tensor()>& f, Tensor& p, double h = 1e-6);

}  // namespace gaot::ad
