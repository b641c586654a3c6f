#pragma once

namespace casim::constants {

// CODATA 2018 values, SI units.
inline constexpr double hbar = 1.054571817e-34;      // J s
inline constexpr double speed_of_light = 2.99792458e8;  // m/s
inline constexpr double boltzmann = 1.380649e-23;    // J/K
inline constexpr double epsilon0 = 8.8541878128e-12; // F/m
inline constexpr double pi = 3.14159265358979323846;

}  // namespace casim::constants
