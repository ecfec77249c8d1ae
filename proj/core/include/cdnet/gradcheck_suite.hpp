#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cdnet {

// Aggregate finite-difference verdict for one component (a primitive op, a
// composite block, or a loss) over several random instances.
struct SuiteResult {
  std::string component;
  double max_rel_err = 0.0;
  double abs_at_worst = 0.0;  // absolute error of the worst element's instance
  double tol = 0.0;
  int instances = 0;
  int64_t checked = 0;        // total elements compared
  std::string worst_input;    // tensor holding the worst element
  bool pass = false;
};

struct SuiteOptions {
  double tol = 1e-4;
  double h = 1e-3;
  int instances = 5;      // random instances per component
  uint64_t seed = 99;
  bool end_to_end = false;  // adds the whole-network spot check (slower)
  double e2e_h = 1e-4;
  double e2e_tol = 1e-3;
};

// Checks every differentiable primitive, the regular+shifted transformer
// block pair, the attention module, and the three loss terms against central
// finite differences. With end_to_end set, also spot-checks gradients through
// the full network + hybrid objective on a tiny configuration.
std::vector<SuiteResult> run_gradcheck_suite(const SuiteOptions& opt = {});

bool suite_passes(const std::vector<SuiteResult>& results);

// "PASS component max_rel_err 1.2e-06 (n=5, 1234 elems, tol 0.0001)" style line.
std::string format_suite_result(const SuiteResult& r);

}  // namespace cdnet
