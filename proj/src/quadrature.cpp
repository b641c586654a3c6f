#include "casim/quadrature.hpp"

#include <array>
#include <cmath>
#include <vector>

#include "casim/errors.hpp"

namespace casim {

namespace {

// Kronrod 15-point nodes on [-1, 1] (positive half) and weights,
// with the embedded Gauss 7-point weights on the shared nodes.
constexpr std::array<double, 8> kKronrodNodes = {
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898, 0.0};
constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728};
constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469};

struct PanelResult {
  double integral;
  double error;
};

PanelResult gauss_kronrod(const std::function<double(double)>& f, double a,
                          double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  double kronrod = 0.0;
  double gauss = 0.0;
  for (int i = 0; i < 8; ++i) {
    const double x = kKronrodNodes[i];
    double v;
    if (i == 7) {
      v = f(center);
    } else {
      v = f(center - half * x) + f(center + half * x);
    }
    kronrod += kKronrodWeights[i] * v;
    if (i % 2 == 1) {
      gauss += kGaussWeights[i / 2] * v;
    }
  }
  kronrod *= half;
  gauss *= half;
  return {kronrod, std::abs(kronrod - gauss)};
}

double sum_recursive(const std::function<double(double)>& f, double a,
                     double b, double tol_abs, int depth) {
  const PanelResult r = gauss_kronrod(f, a, b);
  if (r.error <= tol_abs || depth <= 0) {
    if (depth <= 0 && r.error > 64.0 * tol_abs) {
      throw NumericalError("adaptive quadrature failed to converge");
    }
    return r.integral;
  }
  const double mid = 0.5 * (a + b);
  return sum_recursive(f, a, mid, 0.5 * tol_abs, depth - 1) +
         sum_recursive(f, mid, b, 0.5 * tol_abs, depth - 1);
}

}  // namespace

double integrate_adaptive(const std::function<double(double)>& f, double a,
                          double b, double rel_tol, int max_depth) {
  if (!(b > a)) {
    return 0.0;
  }
  const PanelResult whole = gauss_kronrod(f, a, b);
  const double scale = std::max(std::abs(whole.integral), 1e-300);
  const double tol_abs = rel_tol * scale;
  if (whole.error <= tol_abs) {
    return whole.integral;
  }
  return sum_recursive(f, a, b, tol_abs, max_depth);
}

double integrate_log_axis(const std::function<double(double)>& f, double lo,
                          double hi, double rel_tol) {
  if (!(lo > 0.0) || !(hi > lo)) {
    throw NumericalError("integrate_log_axis: invalid range");
  }
  const auto g = [&f](double s) {
    const double x = std::exp(s);
    return x * f(x);
  };
  const double slo = std::log(lo);
  const double shi = std::log(hi);
  double prev = 0.0;
  int panels = std::max(8, static_cast<int>(std::ceil(shi - slo)));
  for (int pass = 0; pass < 8; ++pass) {
    double total = 0.0;
    const double h = (shi - slo) / panels;
    for (int p = 0; p < panels; ++p) {
      total += gauss_kronrod(g, slo + p * h, slo + (p + 1) * h).integral;
    }
    if (pass > 0 &&
        std::abs(total - prev) <= rel_tol * std::max(std::abs(total), 1e-300)) {
      return total;
    }
    prev = total;
    panels *= 2;
  }
  throw NumericalError("integrate_log_axis failed to converge");
}

}  // namespace casim
