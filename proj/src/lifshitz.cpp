#include "casim/lifshitz.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "casim/constants.hpp"
#include "casim/errors.hpp"
#include "casim/interp.hpp"
#include "casim/quadrature.hpp"

namespace casim {

namespace {

using constants::boltzmann;
using constants::hbar;
using constants::pi;
using constants::speed_of_light;

struct ReflectionPair {
  double te;
  double tm;
};

// Reflection coefficients of half-space eps_i against medium eps_m at
// imaginary frequency, parametrized by q = sqrt(k_perp^2 + eps_m xi^2/c^2).
ReflectionPair reflection(double eps_i, double eps_m, double q, double xi) {
  if (std::isinf(eps_i)) {
    return {-1.0, 1.0};
  }
  const double xc = xi / speed_of_light;
  const double k = std::sqrt(q * q + (eps_i - eps_m) * xc * xc);
  return {(q - k) / (q + k), (eps_i * q - eps_m * k) / (eps_i * q + eps_m * k)};
}

// Zero-frequency limits. TE vanishes for any finite permittivity; the
// Drude prescription keeps it zero for metals. TM goes to 1 when eps
// diverges, to the electrostatic contrast otherwise.
ReflectionPair reflection_at_zero(const DielectricModel& mat, double eps_m0) {
  if (mat.is_perfect_conductor()) {
    return {-1.0, 1.0};
  }
  if (mat.diverges_at_zero()) {
    return {0.0, 1.0};
  }
  const double e = mat.static_permittivity();
  return {0.0, (e - eps_m0) / (e + eps_m0)};
}

struct FrequencyTerm {
  ReflectionPair a;
  ReflectionPair b;
  bool k_independent;  // true at xi = 0 where r does not depend on k_perp
  double eps_a = 1.0, eps_b = 1.0, eps_m = 1.0;
  double xi = 0.0;
};

double pair_sum_pressure(double re, double rm, double y) {
  const double em = std::exp(-y);
  double s = 0.0;
  const double ue = re * em;
  const double um = rm * em;
  if (ue != 0.0) s += ue / (1.0 - ue);
  if (um != 0.0) s += um / (1.0 - um);
  return s;
}

double pair_sum_energy(double re, double rm, double y) {
  const double em = std::exp(-y);
  return std::log1p(-re * em) + std::log1p(-rm * em);
}

// Dimensionless inner integral over y = 2 q d. `energy` selects the
// y ln(1 - r^2 e^-y) kernel instead of the pressure kernel.
double inner_integral(const FrequencyTerm& term, double d, bool energy,
                      double rel_tol) {
  const double xc = term.xi / speed_of_light;
  const double y_min = 2.0 * d * std::sqrt(term.eps_m) * xc;
  const double y_max = std::max(y_min + 45.0, 50.0);
  const auto f = [&](double y) {
    double re, rm;
    if (term.k_independent) {
      re = term.a.te * term.b.te;
      rm = term.a.tm * term.b.tm;
    } else {
      const double q = y / (2.0 * d);
      const ReflectionPair ra = std::isinf(term.eps_a)
                                    ? ReflectionPair{-1.0, 1.0}
                                    : reflection(term.eps_a, term.eps_m, q,
                                                 term.xi);
      const ReflectionPair rb = std::isinf(term.eps_b)
                                    ? ReflectionPair{-1.0, 1.0}
                                    : reflection(term.eps_b, term.eps_m, q,
                                                 term.xi);
      re = ra.te * rb.te;
      rm = ra.tm * rb.tm;
    }
    if (energy) {
      return y * pair_sum_energy(re, rm, y);
    }
    return y * y * pair_sum_pressure(re, rm, y);
  };
  return integrate_adaptive(f, y_min, y_max, rel_tol);
}

FrequencyTerm make_term(const LifshitzConfig& cfg, double xi) {
  FrequencyTerm term;
  term.xi = xi;
  if (xi == 0.0) {
    const double eps_m0 =
        cfg.medium.is_vacuum() ? 1.0 : cfg.medium.static_permittivity();
    term.a = reflection_at_zero(cfg.material_a, eps_m0);
    term.b = reflection_at_zero(cfg.material_b, eps_m0);
    term.k_independent = true;
    term.eps_m = eps_m0;
  } else {
    term.eps_a = cfg.material_a.at_imaginary_frequency(xi);
    term.eps_b = cfg.material_b.at_imaginary_frequency(xi);
    term.eps_m = cfg.medium.at_imaginary_frequency(xi);
    term.k_independent = false;
  }
  return term;
}

// Weighted spectral sum over imaginary frequencies: for T > 0 the
// Matsubara sum kB T [I(0)/2 + sum_n I(xi_n)], for T = 0 the integral
// (hbar / 2 pi) Int I(xi) dxi it converges to.
double weighted_spectrum_sum(const LifshitzConfig& cfg, double d,
                             bool energy) {
  const double inner_tol = 0.1 * cfg.quadrature_rel_tol;
  if (cfg.temperature > 0.0) {
    const double xi_step = 2.0 * pi * boltzmann * cfg.temperature / hbar;
    double sum =
        0.5 * inner_integral(make_term(cfg, 0.0), d, energy, inner_tol);
    int below = 0;
    double prev = 0.0;
    constexpr int kMaxTerms = 200000;
    for (int n = 1; n <= kMaxTerms; ++n) {
      const double term =
          inner_integral(make_term(cfg, n * xi_step), d, energy, inner_tol);
      sum += term;
      // Truncation criterion on the estimated geometric tail, not on
      // the bare term; the high-n decay is exponential in 2 d xi / c.
      const double mag = std::abs(term);
      bool tail_small = false;
      if (n > 2 && mag < std::abs(prev)) {
        const double rho = mag / std::abs(prev);
        tail_small = mag * rho / (1.0 - rho) <
                     cfg.matsubara_rel_cutoff * std::abs(sum);
      }
      if (tail_small) {
        if (++below >= 2) {
          return boltzmann * cfg.temperature * sum;
        }
      } else {
        below = 0;
      }
      prev = term;
    }
    throw NumericalError("Matsubara sum did not converge");
  }
  const double xi_scale = speed_of_light / (2.0 * d);
  const double integral = integrate_log_axis(
      [&](double xi) {
        return inner_integral(make_term(cfg, xi), d, energy, inner_tol);
      },
      1e-9 * xi_scale, 100.0 * xi_scale, cfg.quadrature_rel_tol);
  return integral * hbar / (2.0 * pi);
}

}  // namespace

void LifshitzConfig::validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("lifshitz temperature must be >= 0");
  }
  if (!(matsubara_rel_cutoff > 0.0) || matsubara_rel_cutoff > 1e-2) {
    throw ConfigError("matsubara_rel_cutoff must be in (0, 1e-2]");
  }
  if (!(quadrature_rel_tol > 0.0) || quadrature_rel_tol > 1e-2) {
    throw ConfigError("quadrature_rel_tol must be in (0, 1e-2]");
  }
  if (medium.is_perfect_conductor() || medium.diverges_at_zero()) {
    throw ConfigError("medium must have a finite zero-frequency permittivity");
  }
}

std::pair<double, double> fresnel_imaginary(double eps, double xi,
                                            double k_perp) {
  if (!(k_perp > 0.0) || !std::isfinite(k_perp)) {
    throw ConfigError("fresnel_imaginary requires k_perp > 0");
  }
  if (!(xi >= 0.0) || !std::isfinite(xi)) {
    throw ConfigError("fresnel_imaginary requires xi >= 0");
  }
  if (std::isinf(eps)) {
    return {-1.0, 1.0};
  }
  if (!(eps >= 1.0)) {
    throw ConfigError("fresnel_imaginary requires eps >= 1");
  }
  const double xc = xi / speed_of_light;
  const double q = std::sqrt(k_perp * k_perp + xc * xc);
  const ReflectionPair r = reflection(eps, 1.0, q, xi);
  return {r.te, r.tm};
}

double plate_plate_pressure(const LifshitzConfig& config, double separation) {
  config.validate();
  if (!(separation > 0.0)) {
    throw ConfigError("plate_plate_pressure requires separation > 0");
  }
  const double sum = weighted_spectrum_sum(config, separation,
                                           /*energy=*/false);
  return -sum / (8.0 * pi * separation * separation * separation);
}

double plate_plate_energy(const LifshitzConfig& config, double separation) {
  config.validate();
  if (!(separation > 0.0)) {
    throw ConfigError("plate_plate_energy requires separation > 0");
  }
  const double sum = weighted_spectrum_sum(config, separation,
                                           /*energy=*/true);
  return sum / (8.0 * pi * separation * separation);
}

double sphere_plate_gradient(const LifshitzConfig& config, double separation) {
  return 2.0 * pi * std::abs(plate_plate_pressure(config, separation));
}

TheoryCurve theory_curve(const LifshitzConfig& config, double d_min,
                         double d_max, int n_points) {
  if (!(d_min > 0.0) || !(d_max > d_min)) {
    throw ConfigError("theory_curve requires 0 < d_min < d_max");
  }
  if (n_points < 2) {
    throw ConfigError("theory_curve requires n_points >= 2");
  }
  TheoryCurve curve;
  curve.config = config;
  curve.separations.resize(n_points);
  curve.gradient_over_radius.resize(n_points);
  const double log_lo = std::log(d_min);
  const double step = (std::log(d_max) - log_lo) / (n_points - 1);
  for (int i = 0; i < n_points; ++i) {
    const double d =
        (i == n_points - 1) ? d_max : std::exp(log_lo + i * step);
    curve.separations[i] = d;
    curve.gradient_over_radius[i] = sphere_plate_gradient(config, d);
  }
  curve.validate();
  return curve;
}

void TheoryCurve::validate() const {
  if (separations.size() < 2 ||
      separations.size() != gradient_over_radius.size()) {
    throw NumericalError("theory curve needs >= 2 matching points");
  }
  for (size_t i = 0; i < separations.size(); ++i) {
    if (!(separations[i] > 0.0) || !(gradient_over_radius[i] > 0.0)) {
      throw NumericalError("theory curve entries must be positive");
    }
    if (i > 0) {
      if (!(separations[i] > separations[i - 1])) {
        throw NumericalError("theory curve separations must ascend");
      }
      if (!(gradient_over_radius[i] < gradient_over_radius[i - 1])) {
        throw NumericalError("theory curve gradient must strictly decrease");
      }
    }
  }
}

double TheoryCurve::interpolate(double separation) const {
  if (separations.empty()) {
    throw NumericalError("empty theory curve");
  }
  if (separation < separations.front() || separation > separations.back()) {
    throw NumericalError("theory curve interpolation outside grid");
  }
  std::vector<double> lx(separations.size()), ly(separations.size());
  for (size_t i = 0; i < separations.size(); ++i) {
    lx[i] = std::log(separations[i]);
    ly[i] = std::log(gradient_over_radius[i]);
  }
  return std::exp(MonotoneCubic(lx, ly)(std::log(separation)));
}

void TheoryCurve::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) {
    throw ConfigError("cannot write theory curve: " + path.string());
  }
  out << "d_m,grad_over_R_N_per_m2\n";
  char buf[80];
  for (size_t i = 0; i < separations.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", separations[i],
                  gradient_over_radius[i]);
    out << buf;
  }
}

TheoryCurve TheoryCurve::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open theory curve: " + path.string());
  }
  std::string line;
  if (!std::getline(in, line) || line.rfind("d_m,", 0) != 0) {
    throw ConfigError("theory curve " + path.string() + ": bad header");
  }
  TheoryCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    double d, g;
    if (std::sscanf(line.c_str(), "%lg,%lg", &d, &g) != 2) {
      throw ConfigError("theory curve " + path.string() + ": bad row");
    }
    curve.separations.push_back(d);
    curve.gradient_over_radius.push_back(g);
  }
  curve.validate();
  return curve;
}

}  // namespace casim
