#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "casim/dsp.hpp"
#include "casim/interp.hpp"
#include "casim/lifshitz.hpp"

namespace casim {

struct CantileverParams {
  double spring_constant = 2.0;        // N/m
  double resonance_frequency = 2700.0; // Hz
  double quality_factor = 42.0;

  double mass() const;  // k / (2 pi f0)^2
  void validate() const;
};

struct InterferometerParams {
  double midpoint = 1.0;        // V
  double visibility = 0.6;      // in (0, 1]
  double wavelength = 1.5531e-6;
  double phase_offset = 0.0;    // rad
  // The 1.7 nm tuning span covers only ~0.9 rad of fringe phase at a
  // 100 um gap, so the default gap is pre-set (as the coarse thermal
  // adjustment would) to put a quadrature point mid-span.
  double rest_gap = 99.6053e-6;  // m

  // W0 [1 + V cos(4 pi gap / lambda + phi0)]
  double signal(double gap) const;
  // |dW/d gap| at quadrature, 4 pi W0 V / lambda.
  double quadrature_slope() const;
  void validate() const;
};

struct LaserRange {
  double wavelength_min = 1552.48e-9;
  double wavelength_max = 1554.18e-9;

  void validate() const;
};

struct ScanProtocol {
  double half_period = 20.0;          // s, tau_s
  double stroke = 1e-6;               // m
  double omega1 = 72.0;               // Hz, electrostatic excitation
  double omega2 = 119.0;              // Hz, stage modulation
  double stage_mod_amplitude = 7.2e-9;
  double force_rms_target = 230e-12;  // N at 2 omega1
  double sampling_rate = 30000.0;     // Hz, stream rate
  int n_scans = 10;
  int ode_substeps = 4;               // integrator rate = sampling * substeps
  double record_rate = 20.0;          // Hz, processed-record grid
  double settle_skip = 3.0;           // s dropped from the first scan
  double contact_duration = 5.0;      // s of contact stream

  void validate() const;
};

// Residual contact potential profile V0(d) = a ln(d / 1 m) + b.
struct ResidualPotential {
  double log_coeff = 0.02;  // V per e-fold of separation
  double offset = 0.5;      // V

  double at(double separation) const;
};

struct SqueezeFilmParams {
  bool enabled = false;
  double viscosity = 1.8e-5;            // Pa s, air
  double geometry_coefficient = 18.849555921538759;  // 6 pi, sphere-plate lubrication
};

struct NoiseParams {
  double photodiode_density = 3.5e-6;  // V / sqrt(Hz), white, per photodiode
  std::uint64_t seed = 1;
};

enum class CasimirModel { kOff, kIdealMirror, kLifshitz };

struct ForceStack {
  CasimirModel casimir_model = CasimirModel::kLifshitz;
  LifshitzConfig lifshitz;
  double sphere_radius = 100e-6;   // m
  double contact_offset = 50e-9;   // m, separation at full piezo extension
  bool electrostatic_enabled = true;
  ResidualPotential residual_potential;
  SqueezeFilmParams squeeze_film;
  NoiseParams noise;
  double constant_force = 0.0;     // N, diagnostic bias

  void validate() const;
};

// Loop time constants. Both loops see the 4-stage lock-in filters, so
// the time constants must stay well above the filter rc times for
// phase margin. The nulling loop error is normalized as
// X_w1 V_AC / S_2w1, which makes its gain independent of separation
// and drive amplitude, so v0_loop_tau holds across the whole scan.
struct ServoTuning {
  double v0_loop_tau = 0.2;    // s
  double vac_loop_tau = 3.0;   // s
  double v_ac_min = 1e-3;      // V
  double v_ac_max = 10.0;      // V
  double v_dc_limit = 10.0;    // V

  void validate() const;
};

struct AnalysisOptions {
  bool transfer_correction = true;   // divide by H(omega2)
  bool softening_correction = true;  // account for gradient stiffness shift
};

struct OutputOptions {
  bool emit_truth_channels = true;
  std::string directory = "out";
};

struct ExperimentConfig {
  CantileverParams cantilever;
  InterferometerParams ferrule;
  InterferometerParams barefiber{1.0, 0.4, 1.5531e-6, 0.0, 30e-6};
  LaserRange laser;
  ScanProtocol protocol;
  ForceStack forces;
  // rc/stages per lock-in; reference frequency and phase are wired from
  // the protocol where the lock-ins are instantiated.
  LockInConfig lockin_omega1{72.0, 0.0, 0.02, 4};
  LockInConfig lockin_2omega1{144.0, 0.0, 0.2, 4};
  LockInConfig lockin_omega2{119.0, 0.0, 0.1, 4};
  ServoTuning servos;
  AnalysisOptions analysis;
  OutputOptions output;

  void validate() const;
};

// Raw photodiode / voltage record at the stream rate. Truth channels
// are filled only when the config enables them.
struct SampleStream {
  std::vector<double> t;
  std::vector<double> pd_ferrule;
  std::vector<double> pd_barefiber;
  std::vector<double> v_applied;
  std::vector<double> d_true;
  std::vector<double> x_true;
  bool has_truth = false;
  double sample_rate = 0.0;

  std::size_t size() const { return t.size(); }
  void write_csv(const std::filesystem::path& path) const;
  static SampleStream load_csv(const std::filesystem::path& path);
};

// Servo outputs on the record grid.
struct ServoTrace {
  std::vector<double> t;
  std::vector<double> v_dc;
  std::vector<double> v_ac;

  void write_csv(const std::filesystem::path& path) const;
  static ServoTrace load_csv(const std::filesystem::path& path);
};

struct ScanResult {
  SampleStream stream;
  ServoTrace servo;
  int index = 0;
  bool snapped_in = false;
  double snap_time = 0.0;
};

// ---- elementary physics operations ----

// Attractive sphere-plate electrostatic force magnitude
// eps0 pi R V^2 / d.
double electrostatic_force(double voltage, double separation, double radius);

double interferometer_signal(const InterferometerParams& params, double gap);

// Wavelength inside `range` putting the interferometer at quadrature
// with positive signal slope versus deflection toward the plate
// (|cos| < 1e-6). Returns the current wavelength when it already
// qualifies. Throws NumericalError when no quadrature point lies in the
// tuning span.
double tune_to_quadrature(const InterferometerParams& params,
                          const LaserRange& range, double gap);

// Stage displacement: stroke (1 - |t_local/tau - 1|^3) per back-and-forth
// scan plus the omega2 modulation a cos(2 pi omega2 t) on the global
// time base.
double piezo_trajectory(double t, const ScanProtocol& protocol);
double piezo_velocity(double t, const ScanProtocol& protocol);

// Lubrication-form damping -c mu R^2 v / d opposing the closing
// velocity v of the gap.
double squeeze_film_force(double separation, double closing_velocity,
                          const SqueezeFilmParams& params, double radius);

// ---- building blocks ----

// Casimir force provider for the force stack: attractive force
// magnitude and the gradient-over-radius reference it implies.
class CasimirForce {
 public:
  static CasimirForce off();
  static CasimirForce ideal_mirror(double radius);
  // Tabulates Lifshitz force and gradient over [d_lo, d_hi] once.
  static CasimirForce lifshitz(const LifshitzConfig& config, double radius,
                               double d_lo, double d_hi);
  static CasimirForce for_stack(const ForceStack& stack, double d_lo,
                                double d_hi);

  double force(double separation) const;               // N, >= 0
  double gradient_over_radius(double separation) const;  // N/m^2
  bool enabled() const { return enabled_; }

 private:
  bool enabled_ = false;
  bool analytic_ = false;
  double radius_ = 0.0;
  MonotoneCubic log_force_;
  MonotoneCubic log_gradient_;
  double d_lo_ = 0.0, d_hi_ = 0.0;
};

// Gradient-over-radius curve actually injected by the force stack, for
// closure comparisons.
TheoryCurve injected_theory_curve(const ForceStack& stack, double d_min,
                                  double d_max, int n_points);

// Single-mode cantilever integrated with fixed-step RK4.
class DampedOscillator {
 public:
  explicit DampedOscillator(const CantileverParams& params);

  // force(t, x, v) -> N toward the plate.
  using ForceFn = std::function<double(double, double, double)>;
  void step(double t, double dt, const ForceFn& force);

  double position() const { return x_; }
  double velocity() const { return v_; }
  void set_state(double x, double v) {
    x_ = x;
    v_ = v;
  }
  double energy() const;  // kinetic + elastic

 private:
  double mass_, damping_, stiffness_;
  double x_ = 0.0, v_ = 0.0;
};

// Seeded standard-normal generator (Box-Muller over mt19937_64).
// std::normal_distribution is not sequence-stable across standard
// library implementations, which would break the byte-identical
// reproducibility contract.
class GaussianNoise {
 public:
  explicit GaussianNoise(std::uint64_t seed) : rng_(seed) {}
  double next();

 private:
  std::mt19937_64 rng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// ---- full measurement run ----

// One virtual measurement run: wavelength tuning, the contact-phase
// stream, then consecutive back-and-forth scans with the nulling and
// amplitude servos in closed loop. Scans share servo and noise state,
// as in a continuous physical run.
class ExperimentRun {
 public:
  explicit ExperimentRun(const ExperimentConfig& config);
  ~ExperimentRun();

  double tuned_wavelength() const;
  const SampleStream& contact_stream() const;
  // Advances to the next scan. ScanResult.snapped_in marks a scan
  // terminated by surface contact; the stream is truncated there.
  ScanResult run_next_scan();
  int scans_completed() const;
  const ExperimentConfig& config() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace casim
