#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace csdpaint {

struct GradcheckResult {
  std::string suite;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;  // gradient elements compared
  bool pass = false;
};

struct GradcheckOptions {
  std::uint64_t seed = 7;
  // Test hook: negates the analytic gradient of the named suite.
  std::string flip_suite;
};

// Finite-difference checks of every hand-written backward pass, in f64:
// MLP (ReLU colour head, tanh probability head), renderer, compositor and
// gutter folding.
std::vector<GradcheckResult> run_gradchecks(const GradcheckOptions& options = {});

// |a − n| / max(|a|, |n|), or |a − n| when both are below 1e-8.
double gradcheck_error(double analytic, double numeric);

}  // namespace csdpaint
