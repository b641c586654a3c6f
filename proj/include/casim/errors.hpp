#pragma once

#include <stdexcept>
#include <string>

namespace casim {

// Invalid configuration or malformed input files.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Quadrature non-convergence, failed fits, ill-conditioned inversions.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Simulated surfaces reached contact mid-scan.
struct SnapInError : std::runtime_error {
  explicit SnapInError(double t, double d)
      : std::runtime_error("snap-in at t = " + std::to_string(t) +
                           " s, separation " + std::to_string(d * 1e9) + " nm"),
        time(t),
        separation(d) {}
  double time;
  double separation;
};

}  // namespace casim
