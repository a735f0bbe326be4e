#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace couda {

struct GradcheckOptions {
  std::size_t instances = 100;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  /// Negative control: adds a spurious term to the analytic gradient of the
  /// named component without changing its value.
  std::string corrupt_component;
};

struct GradcheckComponent {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t instances = 0;
  /// Draws rejected because a gradient coordinate was too small to resolve.
  std::size_t redrawn = 0;
  bool passed = false;
};

/// Central-difference checks over randomized small instances of every
/// differentiable op, each loss term, the noise-layer path and the composed
/// objective.
std::vector<GradcheckComponent> run_gradcheck_suite(const GradcheckOptions& options);

/// Prints one line per component; returns 0 iff every component passed.
int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out);

}  // namespace couda
