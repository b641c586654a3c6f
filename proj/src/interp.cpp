#include "casim/interp.hpp"

#include <algorithm>
#include <cmath>

#include "casim/errors.hpp"

namespace casim {

MonotoneCubic::MonotoneCubic(std::span<const double> x,
                             std::span<const double> y)
    : x_(x.begin(), x.end()), y_(y.begin(), y.end()) {
  const size_t n = x_.size();
  if (n < 2 || y_.size() != n) {
    throw NumericalError("MonotoneCubic: need at least two matching points");
  }
  for (size_t i = 1; i < n; ++i) {
    if (!(x_[i] > x_[i - 1])) {
      throw NumericalError("MonotoneCubic: abscissae must be increasing");
    }
  }
  std::vector<double> h(n - 1), delta(n - 1);
  for (size_t i = 0; i + 1 < n; ++i) {
    h[i] = x_[i + 1] - x_[i];
    delta[i] = (y_[i + 1] - y_[i]) / h[i];
  }
  slope_.assign(n, 0.0);
  slope_[0] = delta[0];
  slope_[n - 1] = delta[n - 2];
  for (size_t i = 1; i + 1 < n; ++i) {
    if (delta[i - 1] * delta[i] <= 0.0) {
      slope_[i] = 0.0;
    } else {
      // Weighted harmonic mean keeps the interpolant monotone.
      const double w1 = 2.0 * h[i] + h[i - 1];
      const double w2 = h[i] + 2.0 * h[i - 1];
      slope_[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
    }
  }
  // Endpoint limiter (Fritsch-Carlson).
  for (size_t i = 0; i + 1 < n; ++i) {
    if (delta[i] == 0.0) {
      slope_[i] = slope_[i + 1] = 0.0;
    } else {
      const double a = slope_[i] / delta[i];
      const double b = slope_[i + 1] / delta[i];
      const double s = a * a + b * b;
      if (s > 9.0) {
        const double tau = 3.0 / std::sqrt(s);
        slope_[i] = tau * a * delta[i];
        slope_[i + 1] = tau * b * delta[i];
      }
    }
  }
}

double MonotoneCubic::operator()(double x) const {
  const size_t n = x_.size();
  size_t i =
      std::upper_bound(x_.begin(), x_.end(), x) - x_.begin();
  if (i == 0) {
    i = 1;
  }
  if (i >= n) {
    i = n - 1;
  }
  const size_t k = i - 1;
  const double h = x_[k + 1] - x_[k];
  const double t = (x - x_[k]) / h;
  const double t2 = t * t;
  const double t3 = t2 * t;
  const double h00 = 2 * t3 - 3 * t2 + 1;
  const double h10 = t3 - 2 * t2 + t;
  const double h01 = -2 * t3 + 3 * t2;
  const double h11 = t3 - t2;
  return h00 * y_[k] + h10 * h * slope_[k] + h01 * y_[k + 1] +
         h11 * h * slope_[k + 1];
}

}  // namespace casim
