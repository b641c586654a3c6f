#pragma once

#include <functional>

namespace casim {

// Adaptive Gauss-Kronrod (G7/K15) integration of f on [a, b].
// Subdivides until the local K15-G7 error estimate is below
// rel_tol * |integral| (plus a small absolute floor). Throws
// NumericalError when the subdivision budget is exhausted.
double integrate_adaptive(const std::function<double(double)>& f, double a,
                          double b, double rel_tol, int max_depth = 48);

// Integral of f over [lo, hi] (0 < lo < hi) evaluated on a log-mapped
// axis with composite Gauss-Legendre panels, refined until two
// successive resolutions agree to rel_tol.
double integrate_log_axis(const std::function<double(double)>& f, double lo,
                          double hi, double rel_tol);

}  // namespace casim
