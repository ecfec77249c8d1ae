#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cdnet/tensor.hpp"

namespace cdnet {

struct GradCheckReport {
  double max_rel_err = 0.0;   // worst element across all checked inputs
  double max_abs_err = 0.0;
  std::string worst_input;    // label of the tensor holding the worst element
  int64_t worst_index = -1;
  int64_t checked = 0;        // number of elements compared
  bool ok(double tol) const { return checked > 0 && max_rel_err <= tol; }
};

// Compares analytic gradients against central finite differences
//   (f(x+h) - f(x-h)) / (2h)
// with relative error |a-n| / max(|a|, |n|, floor). `loss` must rebuild the
// computation from scratch on every call (it is invoked 2*numel+1 times).
// If `sample` > 0, only that many randomly-ish strided elements per input
// are probed (deterministic stride, no RNG), which keeps large-layer checks
// affordable.
GradCheckReport gradcheck(
    const std::function<Tensor()>& loss,
    const std::vector<std::pair<std::string, Tensor>>& inputs,
    double h = 1e-3, double rel_floor = 1e-8, int64_t sample = 0);

}  // namespace cdnet
