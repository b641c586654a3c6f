#pragma once

#include <filesystem>
#include <memory>
#include <vector>

namespace casim {

// Tabulated imaginary part of the permittivity on the real frequency
// axis, the input to the dispersion integral. Frequencies in rad/s,
// strictly increasing; eps_imag dimensionless and non-negative.
struct OpticalTable {
  std::vector<double> omega;
  std::vector<double> eps_imag;

  void validate() const;
  static OpticalTable load(const std::filesystem::path& path);
};

// Permittivity model evaluated on the imaginary frequency axis.
// The perfect conductor is represented by an infinite permittivity
// sentinel that the reflection coefficients map to r_TM = 1, r_TE = -1.
class DielectricModel {
 public:
  DielectricModel() : DielectricModel(vacuum()) {}

  static DielectricModel vacuum();
  static DielectricModel perfect_conductor();
  static DielectricModel drude(double plasma_frequency,
                               double relaxation_rate);
  static DielectricModel tabulated(OpticalTable table);

  // eps(i xi), real and >= 1; +infinity for the perfect conductor.
  // Requires xi > 0; the zero-frequency Matsubara term is handled
  // separately via diverges_at_zero / static_permittivity.
  double at_imaginary_frequency(double xi) const;

  bool is_perfect_conductor() const;
  bool is_vacuum() const;

  // True when eps(i xi) grows without bound as xi -> 0 (metallic
  // response). Governs the zero-frequency TM reflection coefficient.
  bool diverges_at_zero() const;

  // eps(i xi -> 0) for models with a finite static limit.
  double static_permittivity() const;

 private:
  struct Impl;
  explicit DielectricModel(std::shared_ptr<const Impl> impl)
      : impl_(std::move(impl)) {}
  std::shared_ptr<const Impl> impl_;
};

double permittivity_at_imaginary_frequency(const DielectricModel& model,
                                           double xi);

// Dispersion relation eps(i xi) = 1 + (2/pi) Int_0^inf w eps''(w) /
// (w^2 + xi^2) dw, evaluated with linear interpolation of eps'' between
// rows (closed-form panel integrals), a Drude tail fitted to the lowest
// two rows below the table, and truncation above it. xi = 0 is allowed
// only when the fitted tail vanishes.
double kramers_kronig_to_imaginary_axis(const OpticalTable& table, double xi);

}  // namespace casim
