#include "casim/instrument.hpp"

#include <cmath>
#include <cstdio>

#include "casim/constants.hpp"
#include "casim/errors.hpp"

namespace casim {

namespace {

using constants::epsilon0;
using constants::hbar;
using constants::pi;
using constants::speed_of_light;

// Separation treated as mechanical contact by the simulator.
constexpr double kSnapFloor = 1e-9;
// Residual gap while riding on the plate in contact mode.
constexpr double kContactGap = 1e-9;

double ideal_mirror_force(double d, double radius) {
  // 2 pi R E_pp with E_pp = -pi^2 hbar c / (720 d^3).
  return pi * pi * pi * hbar * speed_of_light * radius / (360.0 * d * d * d);
}

double ideal_mirror_gradient_over_radius(double d) {
  return pi * pi * pi * hbar * speed_of_light / (120.0 * d * d * d * d);
}

}  // namespace

double CantileverParams::mass() const {
  const double w0 = 2.0 * pi * resonance_frequency;
  return spring_constant / (w0 * w0);
}

void CantileverParams::validate() const {
  if (!(spring_constant > 0.0) || !(resonance_frequency > 0.0) ||
      !(quality_factor > 0.0)) {
    throw ConfigError("cantilever needs k > 0, f0 > 0, Q > 0");
  }
}

double InterferometerParams::signal(double gap) const {
  return midpoint *
         (1.0 + visibility *
                    std::cos(4.0 * pi * gap / wavelength + phase_offset));
}

double InterferometerParams::quadrature_slope() const {
  return 4.0 * pi * midpoint * visibility / wavelength;
}

void InterferometerParams::validate() const {
  if (!(midpoint > 0.0)) {
    throw ConfigError("interferometer midpoint must be > 0");
  }
  if (!(visibility > 0.0) || visibility > 1.0) {
    throw ConfigError("interferometer visibility must be in (0, 1]");
  }
  if (!(wavelength > 0.0) || !(rest_gap > 0.0)) {
    throw ConfigError("interferometer wavelength and rest_gap must be > 0");
  }
}

void LaserRange::validate() const {
  if (!(wavelength_min > 0.0) || !(wavelength_max > wavelength_min)) {
    throw ConfigError("laser range needs 0 < min < max");
  }
}

void ScanProtocol::validate() const {
  if (!(half_period > 0.0) || !(stroke > 0.0)) {
    throw ConfigError("protocol needs half_period > 0 and stroke > 0");
  }
  if (!(omega1 > 0.0) || !(omega1 < omega2) || !(omega2 < 2.0 * omega1)) {
    throw ConfigError("protocol requires omega1 < omega2 < 2 omega1");
  }
  if (!(stage_mod_amplitude >= 0.0)) {
    throw ConfigError("stage_mod_amplitude must be >= 0");
  }
  if (!(force_rms_target > 0.0)) {
    throw ConfigError("force_rms_target must be > 0");
  }
  if (!(sampling_rate > 0.0) || n_scans < 1 || ode_substeps < 1) {
    throw ConfigError("protocol sampling/scan counts invalid");
  }
  if (!(record_rate > 0.0) ||
      std::abs(std::remainder(sampling_rate, record_rate)) > 1e-9) {
    throw ConfigError("sampling_rate must be an integer multiple of "
                      "record_rate");
  }
  const double spp = sampling_rate * 2.0 * half_period;
  if (std::abs(spp - std::round(spp)) > 1e-6) {
    throw ConfigError("a scan must contain an integer number of samples");
  }
  if (!(settle_skip >= 0.0) || !(contact_duration > 0.0)) {
    throw ConfigError("settle_skip/contact_duration invalid");
  }
}

double ResidualPotential::at(double separation) const {
  return log_coeff * std::log(separation) + offset;
}

void ForceStack::validate() const {
  if (!(sphere_radius > 0.0)) {
    throw ConfigError("sphere_radius must be > 0");
  }
  if (!(contact_offset > 0.0)) {
    throw ConfigError("contact_offset must be > 0");
  }
  if (casimir_model == CasimirModel::kLifshitz) {
    lifshitz.validate();
  }
  if (squeeze_film.enabled &&
      (!(squeeze_film.viscosity > 0.0) ||
       !(squeeze_film.geometry_coefficient > 0.0))) {
    throw ConfigError("squeeze film parameters must be > 0");
  }
  if (!(noise.photodiode_density >= 0.0)) {
    throw ConfigError("photodiode noise density must be >= 0");
  }
}

void ServoTuning::validate() const {
  if (!(v0_loop_tau > 0.0) || !(vac_loop_tau > 0.0)) {
    throw ConfigError("servo loop time constants must be > 0");
  }
  if (!(v_ac_min > 0.0) || !(v_ac_max > v_ac_min) || !(v_dc_limit > 0.0)) {
    throw ConfigError("servo voltage limits invalid");
  }
}

void ExperimentConfig::validate() const {
  cantilever.validate();
  ferrule.validate();
  barefiber.validate();
  laser.validate();
  protocol.validate();
  forces.validate();
  servos.validate();
  if (!(protocol.sampling_rate > 10.0 * cantilever.resonance_frequency)) {
    throw ConfigError("sampling_rate must exceed 10x the cantilever "
                      "resonance frequency");
  }
  for (const LockInConfig* li :
       {&lockin_omega1, &lockin_2omega1, &lockin_omega2}) {
    if (!(li->rc_time > 0.0) || li->filter_stages < 1) {
      throw ConfigError("lock-in rc_time/filter_stages invalid");
    }
  }
  if (!(forces.contact_offset < protocol.stroke)) {
    throw ConfigError("contact_offset should be below the scan stroke");
  }
}

double electrostatic_force(double voltage, double separation, double radius) {
  if (!(separation > 0.0)) {
    throw ConfigError("electrostatic_force requires separation > 0");
  }
  if (!(radius > 0.0)) {
    throw ConfigError("electrostatic_force requires radius > 0");
  }
  return epsilon0 * pi * radius * voltage * voltage / separation;
}

double interferometer_signal(const InterferometerParams& params, double gap) {
  params.validate();
  if (!(gap > 0.0)) {
    throw ConfigError("interferometer gap must be > 0");
  }
  return params.signal(gap);
}

double tune_to_quadrature(const InterferometerParams& params,
                          const LaserRange& range, double gap) {
  params.validate();
  range.validate();
  if (!(gap > 0.0)) {
    throw ConfigError("tune_to_quadrature requires gap > 0");
  }
  const double full = 4.0 * pi * gap;
  const auto in_range = [&](double lambda) {
    return lambda >= range.wavelength_min && lambda <= range.wavelength_max;
  };
  const auto at_quadrature = [&](double lambda) {
    const double theta = full / lambda + params.phase_offset;
    // Positive-slope branch: sin(theta) = +1 so that deflection toward
    // the plate raises the signal; keeps the nulling servo sign fixed.
    return std::abs(std::cos(theta)) < 1e-6 && std::sin(theta) > 0.0;
  };
  if (in_range(params.wavelength) && at_quadrature(params.wavelength)) {
    return params.wavelength;
  }
  // Solve 4 pi gap / lambda + phi0 = pi/2 + 2 pi n for integer n.
  const double base = pi / 2.0 - params.phase_offset;
  const double n_lo =
      std::ceil((full / range.wavelength_max - base) / (2.0 * pi));
  const double n_hi =
      std::floor((full / range.wavelength_min - base) / (2.0 * pi));
  for (double n = n_lo; n <= n_hi; n += 1.0) {
    const double lambda = full / (base + 2.0 * pi * n);
    if (lambda > 0.0 && in_range(lambda) && at_quadrature(lambda)) {
      return lambda;
    }
  }
  throw NumericalError(
      "no quadrature point within the laser tuning range; coarse gap "
      "pre-adjustment required");
}

double piezo_trajectory(double t, const ScanProtocol& protocol) {
  const double period = 2.0 * protocol.half_period;
  if (t < -1e-9 || t > period * protocol.n_scans + 1e-9) {
    throw ConfigError("piezo_trajectory time outside the run");
  }
  const double t_local = std::fmod(t, period);
  const double u = t_local / protocol.half_period - 1.0;
  const double au = std::abs(u);
  const double slow = protocol.stroke * (1.0 - au * au * au);
  return slow + protocol.stage_mod_amplitude *
                    std::cos(2.0 * pi * protocol.omega2 * t);
}

double piezo_velocity(double t, const ScanProtocol& protocol) {
  const double period = 2.0 * protocol.half_period;
  const double t_local = std::fmod(t, period);
  const double u = t_local / protocol.half_period - 1.0;
  const double slow = -protocol.stroke * 3.0 * u * u *
                      ((u > 0.0) - (u < 0.0)) / protocol.half_period;
  const double w2 = 2.0 * pi * protocol.omega2;
  return slow -
         protocol.stage_mod_amplitude * w2 * std::sin(w2 * t);
}

double squeeze_film_force(double separation, double closing_velocity,
                          const SqueezeFilmParams& params, double radius) {
  if (!(separation > 0.0)) {
    throw ConfigError("squeeze_film_force requires separation > 0");
  }
  if (!params.enabled) {
    return 0.0;
  }
  return -params.geometry_coefficient * params.viscosity * radius * radius *
         closing_velocity / separation;
}

// ---- CasimirForce ----

CasimirForce CasimirForce::off() { return CasimirForce{}; }

CasimirForce CasimirForce::ideal_mirror(double radius) {
  CasimirForce f;
  f.enabled_ = true;
  f.analytic_ = true;
  f.radius_ = radius;
  return f;
}

CasimirForce CasimirForce::lifshitz(const LifshitzConfig& config,
                                    double radius, double d_lo, double d_hi) {
  config.validate();
  CasimirForce f;
  f.enabled_ = true;
  f.radius_ = radius;
  f.d_lo_ = d_lo;
  f.d_hi_ = d_hi;
  constexpr int kPoints = 160;
  std::vector<double> ld(kPoints), lf(kPoints), lg(kPoints);
  const double lo = std::log(d_lo);
  const double step = (std::log(d_hi) - lo) / (kPoints - 1);
  for (int i = 0; i < kPoints; ++i) {
    const double d = std::exp(lo + i * step);
    ld[i] = std::log(d);
    lf[i] = std::log(2.0 * pi * radius *
                     std::abs(plate_plate_energy(config, d)));
    lg[i] = std::log(sphere_plate_gradient(config, d));
  }
  f.log_force_ = MonotoneCubic(ld, lf);
  f.log_gradient_ = MonotoneCubic(ld, lg);
  return f;
}

CasimirForce CasimirForce::for_stack(const ForceStack& stack, double d_lo,
                                     double d_hi) {
  switch (stack.casimir_model) {
    case CasimirModel::kOff:
      return off();
    case CasimirModel::kIdealMirror:
      return ideal_mirror(stack.sphere_radius);
    case CasimirModel::kLifshitz:
      return lifshitz(stack.lifshitz, stack.sphere_radius, d_lo, d_hi);
  }
  return off();
}

double CasimirForce::force(double separation) const {
  if (!enabled_) {
    return 0.0;
  }
  if (analytic_) {
    return ideal_mirror_force(separation, radius_);
  }
  return std::exp(log_force_(std::log(separation)));
}

double CasimirForce::gradient_over_radius(double separation) const {
  if (!enabled_) {
    return 0.0;
  }
  if (analytic_) {
    return ideal_mirror_gradient_over_radius(separation);
  }
  return std::exp(log_gradient_(std::log(separation)));
}

TheoryCurve injected_theory_curve(const ForceStack& stack, double d_min,
                                  double d_max, int n_points) {
  if (stack.casimir_model == CasimirModel::kLifshitz) {
    return theory_curve(stack.lifshitz, d_min, d_max, n_points);
  }
  if (stack.casimir_model == CasimirModel::kOff) {
    throw ConfigError("no theory curve: casimir model is off");
  }
  TheoryCurve curve;
  curve.separations.resize(n_points);
  curve.gradient_over_radius.resize(n_points);
  const double lo = std::log(d_min);
  const double step = (std::log(d_max) - lo) / (n_points - 1);
  for (int i = 0; i < n_points; ++i) {
    const double d = (i == n_points - 1) ? d_max : std::exp(lo + i * step);
    curve.separations[i] = d;
    curve.gradient_over_radius[i] = ideal_mirror_gradient_over_radius(d);
  }
  curve.validate();
  return curve;
}

// ---- DampedOscillator ----

DampedOscillator::DampedOscillator(const CantileverParams& params) {
  params.validate();
  mass_ = params.mass();
  stiffness_ = params.spring_constant;
  damping_ = mass_ * 2.0 * pi * params.resonance_frequency /
             params.quality_factor;
}

void DampedOscillator::step(double t, double dt, const ForceFn& force) {
  const auto accel = [&](double tt, double x, double v) {
    return (force(tt, x, v) - stiffness_ * x - damping_ * v) / mass_;
  };
  const double x0 = x_, v0 = v_;
  const double k1x = v0;
  const double k1v = accel(t, x0, v0);
  const double k2x = v0 + 0.5 * dt * k1v;
  const double k2v = accel(t + 0.5 * dt, x0 + 0.5 * dt * k1x,
                           v0 + 0.5 * dt * k1v);
  const double k3x = v0 + 0.5 * dt * k2v;
  const double k3v = accel(t + 0.5 * dt, x0 + 0.5 * dt * k2x,
                           v0 + 0.5 * dt * k2v);
  const double k4x = v0 + dt * k3v;
  const double k4v = accel(t + dt, x0 + dt * k3x, v0 + dt * k3v);
  x_ = x0 + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
  v_ = v0 + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
}

double DampedOscillator::energy() const {
  return 0.5 * mass_ * v_ * v_ + 0.5 * stiffness_ * x_ * x_;
}

double GaussianNoise::next() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1p-53;
  const double u2 = static_cast<double>(rng_() >> 11) * 0x1p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * pi * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

// ---- ExperimentRun ----

struct ExperimentRun::State {
  ExperimentConfig cfg;
  InterferometerParams ferrule;    // with tuned wavelength
  InterferometerParams barefiber;  // with tuned wavelength
  CasimirForce casimir{CasimirForce::off()};
  GaussianNoise noise{1};
  double noise_sigma = 0.0;

  LockIn lockin_w1;
  LockIn lockin_2w1;
  ServoState servo_v0;
  AmplitudeServoState servo_vac;

  DampedOscillator oscillator;
  std::uint64_t sample_index = 0;  // global; t = index / sampling_rate
  int scan_index = 0;
  SampleStream contact;
  double v_dc = 0.0;
  double v_ac = 0.0;
  // Loops engage once the lock-in filters have settled; holding the
  // initial voltages before that avoids a cold-start runaway of the
  // amplitude loop.
  double servo_engage_time = 0.0;

  explicit State(const ExperimentConfig& c)
      : cfg(c), noise(c.forces.noise.seed), oscillator(c.cantilever) {}
};

ExperimentRun::ExperimentRun(const ExperimentConfig& config)
    : state_(std::make_unique<State>(config)) {
  config.validate();
  State& s = *state_;
  const ScanProtocol& p = config.protocol;
  const ForceStack& fs = config.forces;

  // Shared laser: tune at the ferrule rest gap, both interferometers
  // follow the tuned wavelength.
  const double lambda =
      tune_to_quadrature(config.ferrule, config.laser, config.ferrule.rest_gap);
  s.ferrule = config.ferrule;
  s.ferrule.wavelength = lambda;
  s.barefiber = config.barefiber;
  s.barefiber.wavelength = lambda;

  const double d_max = fs.contact_offset + p.stroke;
  s.casimir = CasimirForce::for_stack(
      fs, std::min(0.4 * fs.contact_offset, 10e-9), 1.5 * d_max + 1e-7);

  const double dt_sample = 1.0 / p.sampling_rate;
  s.noise_sigma =
      fs.noise.photodiode_density * std::sqrt(0.5 * p.sampling_rate);

  LockInConfig c1 = config.lockin_omega1;
  c1.reference_frequency = p.omega1;
  c1.reference_phase = 0.0;
  LockInConfig c2 = config.lockin_2omega1;
  c2.reference_frequency = 2.0 * p.omega1;
  c2.reference_phase = 0.0;
  s.lockin_w1 = LockIn(c1, dt_sample);
  s.lockin_2w1 = LockIn(c2, dt_sample);

  // Loop gains from the requested time constants. The nulling loop
  // uses the normalized error X_w1 V_AC / S_2w1, whose plant gain is
  // 4 H(w1)/H(2 w1) volts per volt of residual potential regardless of
  // separation or drive amplitude.
  const CantileverParams& cant = config.cantilever;
  const double k = cant.spring_constant;
  const double slope = s.ferrule.quadrature_slope();
  const double h1 =
      oscillator_response(p.omega1, cant.resonance_frequency,
                          cant.quality_factor);
  const double h2 =
      oscillator_response(2.0 * p.omega1, cant.resonance_frequency,
                          cant.quality_factor);
  s.servo_v0.gain = h2 / (4.0 * h1 * config.servos.v0_loop_tau);
  s.servo_v0.out_min = -config.servos.v_dc_limit;
  s.servo_v0.out_max = config.servos.v_dc_limit;
  s.servo_v0.integrator = 0.0;

  s.servo_vac.loop_gain = 1.0 / config.servos.vac_loop_tau;
  s.servo_vac.signal_to_force_rms = k / (slope * h2 * std::sqrt(2.0));
  s.servo_vac.v_min = config.servos.v_ac_min;
  s.servo_vac.v_max = config.servos.v_ac_max;
  const double d_start = fs.contact_offset + p.stroke - p.stage_mod_amplitude;
  s.servo_vac.v_ac = std::sqrt(2.0 * std::sqrt(2.0) * d_start *
                               p.force_rms_target /
                               (epsilon0 * pi * fs.sphere_radius));
  s.v_dc = 0.0;
  s.v_ac = s.servo_vac.v_ac;
  s.servo_engage_time =
      10.0 * std::max(config.lockin_omega1.rc_time,
                      config.lockin_2omega1.rc_time);

  // Contact-phase stream: slow component held at full extension, only
  // the omega2 modulation active, cantilever slaved to the stage.
  const std::size_t n_contact =
      static_cast<std::size_t>(std::llround(p.contact_duration *
                                            p.sampling_rate));
  SampleStream& cs = s.contact;
  cs.sample_rate = p.sampling_rate;
  cs.has_truth = false;
  cs.t.reserve(n_contact);
  cs.pd_ferrule.reserve(n_contact);
  cs.pd_barefiber.reserve(n_contact);
  cs.v_applied.reserve(n_contact);
  const double w2 = 2.0 * pi * p.omega2;
  for (std::size_t i = 0; i < n_contact; ++i) {
    const double tc = static_cast<double>(i) * dt_sample;
    const double traj =
        p.stroke + p.stage_mod_amplitude * std::cos(w2 * tc);
    const double x = fs.contact_offset + p.stroke - traj - kContactGap;
    cs.t.push_back(tc);
    cs.pd_ferrule.push_back(s.ferrule.signal(s.ferrule.rest_gap - x) +
                            s.noise_sigma * s.noise.next());
    cs.pd_barefiber.push_back(
        s.barefiber.signal(s.barefiber.rest_gap - traj) +
        s.noise_sigma * s.noise.next());
    cs.v_applied.push_back(0.0);
  }
}

ExperimentRun::~ExperimentRun() = default;

double ExperimentRun::tuned_wavelength() const {
  return state_->ferrule.wavelength;
}

const SampleStream& ExperimentRun::contact_stream() const {
  return state_->contact;
}

int ExperimentRun::scans_completed() const { return state_->scan_index; }

const ExperimentConfig& ExperimentRun::config() const { return state_->cfg; }

ScanResult ExperimentRun::run_next_scan() {
  State& s = *state_;
  const ExperimentConfig& cfg = s.cfg;
  const ScanProtocol& p = cfg.protocol;
  const ForceStack& fs = cfg.forces;
  if (s.scan_index >= p.n_scans) {
    throw ConfigError("all configured scans already run");
  }

  const double dt_sample = 1.0 / p.sampling_rate;
  const double dt_ode = dt_sample / p.ode_substeps;
  const std::size_t n_samples = static_cast<std::size_t>(
      std::llround(2.0 * p.half_period * p.sampling_rate));
  const std::size_t record_stride =
      static_cast<std::size_t>(std::llround(p.sampling_rate / p.record_rate));
  const double radius = fs.sphere_radius;
  const bool es_on = fs.electrostatic_enabled;
  const double w1 = 2.0 * pi * p.omega1;

  ScanResult result;
  result.index = s.scan_index;
  SampleStream& stream = result.stream;
  stream.sample_rate = p.sampling_rate;
  stream.has_truth = cfg.output.emit_truth_channels;
  stream.t.reserve(n_samples);
  stream.pd_ferrule.reserve(n_samples);
  stream.pd_barefiber.reserve(n_samples);
  stream.v_applied.reserve(n_samples);
  if (stream.has_truth) {
    stream.d_true.reserve(n_samples);
    stream.x_true.reserve(n_samples);
  }

  // Force on the cantilever, positive toward the plate. Voltages are
  // zero-order-held between stream samples.
  const auto force = [&](double t, double x, double v) {
    double d = fs.contact_offset + p.stroke - piezo_trajectory(t, p) - x;
    if (d < 0.2 * kSnapFloor) {
      d = 0.2 * kSnapFloor;  // keep the integrand finite; snap check below
    }
    double f = fs.constant_force + s.casimir.force(d);
    if (es_on) {
      const double v_total = s.v_ac * std::cos(w1 * t) + s.v_dc +
                             fs.residual_potential.at(d);
      f += electrostatic_force(v_total, d, radius);
    }
    if (fs.squeeze_film.enabled) {
      const double closing = piezo_velocity(t, p) + v;
      f += squeeze_film_force(d, closing, fs.squeeze_film, radius);
    }
    return f;
  };

  for (std::size_t i = 0; i < n_samples; ++i) {
    const double t = static_cast<double>(s.sample_index) * dt_sample;
    const double x = s.oscillator.position();
    const double traj = piezo_trajectory(t, p);
    const double d = fs.contact_offset + p.stroke - traj - x;
    if (d <= kSnapFloor) {
      result.snapped_in = true;
      result.snap_time = t;
      break;
    }

    const double pd_f = s.ferrule.signal(s.ferrule.rest_gap - x) +
                        s.noise_sigma * s.noise.next();
    const double pd_b = s.barefiber.signal(s.barefiber.rest_gap - traj) +
                        s.noise_sigma * s.noise.next();

    if (es_on) {
      const auto xy1 = s.lockin_w1.process(t, pd_f);
      const auto xy2 = s.lockin_2w1.process(t, pd_f);
      if (t >= s.servo_engage_time && xy2.x > 1e-12) {
        const double nulling_error = xy1.x * s.v_ac / xy2.x;
        s.v_dc = v0_servo_update(nulling_error, s.servo_v0, dt_sample);
        s.v_ac = amplitude_servo_update(xy2.x, p.force_rms_target,
                                        s.servo_vac, dt_sample);
      }
    }
    const double v_applied =
        es_on ? s.v_ac * std::cos(w1 * t) + s.v_dc : 0.0;

    stream.t.push_back(t);
    stream.pd_ferrule.push_back(pd_f);
    stream.pd_barefiber.push_back(pd_b);
    stream.v_applied.push_back(v_applied);
    if (stream.has_truth) {
      stream.d_true.push_back(d);
      stream.x_true.push_back(x);
    }
    if (i % record_stride == 0) {
      result.servo.t.push_back(t);
      result.servo.v_dc.push_back(s.v_dc);
      result.servo.v_ac.push_back(s.v_ac);
    }

    for (int k = 0; k < p.ode_substeps; ++k) {
      s.oscillator.step(t + k * dt_ode, dt_ode, force);
    }
    ++s.sample_index;
  }

  ++s.scan_index;
  return result;
}

}  // namespace casim
