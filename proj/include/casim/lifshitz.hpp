#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "casim/materials.hpp"

namespace casim {

struct LifshitzConfig {
  double temperature = 300.0;  // K; 0 switches the Matsubara sum to an integral
  DielectricModel material_a = DielectricModel::drude(1.37e16, 5.32e13);
  DielectricModel material_b = DielectricModel::drude(1.37e16, 5.32e13);
  DielectricModel medium = DielectricModel::vacuum();
  double matsubara_rel_cutoff = 1e-9;
  double quadrature_rel_tol = 1e-8;

  void validate() const;
};

// Sphere-plate force gradient over sphere radius, tabulated on a
// log-spaced separation grid. Values are positive (attraction plotted
// positive) and strictly decreasing.
struct TheoryCurve {
  std::vector<double> separations;          // m, ascending
  std::vector<double> gradient_over_radius; // N/m^2
  LifshitzConfig config;                    // snapshot of the producing config

  void validate() const;
  // Log-log monotone cubic interpolation (exact on power laws).
  double interpolate(double separation) const;

  void write_csv(const std::filesystem::path& path) const;
  static TheoryCurve load_csv(const std::filesystem::path& path);
};

// Reflection coefficients (r_TE, r_TM) at imaginary frequency xi for a
// half-space of permittivity eps against vacuum. eps may be the
// perfect-conductor sentinel (+inf), mapped to (-1, +1).
std::pair<double, double> fresnel_imaginary(double eps, double xi,
                                            double k_perp);

// Plate-plate pressure, negative = attractive. Converged to
// quadrature_rel_tol; Matsubara sum truncated by matsubara_rel_cutoff.
double plate_plate_pressure(const LifshitzConfig& config, double separation);

// Plate-plate interaction energy per unit area, negative = attractive.
double plate_plate_energy(const LifshitzConfig& config, double separation);

// PFA sphere-plate gradient: 2 pi |plate_plate_pressure|.
double sphere_plate_gradient(const LifshitzConfig& config, double separation);

TheoryCurve theory_curve(const LifshitzConfig& config, double d_min,
                         double d_max, int n_points);

}  // namespace casim
