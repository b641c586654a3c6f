#include "casim/dsp.hpp"

#include <algorithm>
#include <cmath>

#include "casim/constants.hpp"
#include "casim/errors.hpp"

namespace casim {

using constants::pi;

void LockInConfig::validate() const {
  if (!(reference_frequency > 0.0)) {
    throw ConfigError("lock-in reference_frequency must be > 0");
  }
  if (!(rc_time > 0.0)) {
    throw ConfigError("lock-in rc_time must be > 0");
  }
  if (filter_stages < 1 || filter_stages > 16) {
    throw ConfigError("lock-in filter_stages must be in [1, 16]");
  }
}

CascadedLowPass::CascadedLowPass(int stages, double rc_time, double dt) {
  if (stages < 1 || !(rc_time > 0.0) || !(dt > 0.0)) {
    throw ConfigError("low-pass filter needs stages >= 1, rc > 0, dt > 0");
  }
  stages_.assign(stages, 0.0);
  alpha_ = -std::expm1(-dt / rc_time);
}

double CascadedLowPass::process(double input) {
  double u = input;
  for (double& s : stages_) {
    s += alpha_ * (u - s);
    u = s;
  }
  return u;
}

void CascadedLowPass::reset(double v) {
  std::fill(stages_.begin(), stages_.end(), v);
}

LockIn::LockIn(const LockInConfig& config, double sample_interval)
    : config_(config),
      x_(config.filter_stages, config.rc_time, sample_interval),
      y_(config.filter_stages, config.rc_time, sample_interval),
      delay_(config.filter_stages * config.rc_time) {
  config.validate();
  // Input AC coupling. The photodiode's large mid-fringe level would
  // otherwise mix into a residual ripple at the reference frequency.
  // The pole sits low enough that its phase lead at the reference,
  // 1/(1000 pi), stays below the milliradian alignment budget.
  const double tau_hp = 500.0 / config.reference_frequency;
  hp_alpha_ = -std::expm1(-sample_interval / tau_hp);
}

LockIn::XY LockIn::process(double t, double input) {
  if (!hp_primed_) {
    hp_primed_ = true;
    hp_track_ = input;
  }
  hp_track_ += hp_alpha_ * (input - hp_track_);
  const double u = input - hp_track_;
  const double phase =
      2.0 * pi * config_.reference_frequency * t + config_.reference_phase;
  const double x = x_.process(u * 2.0 * std::cos(phase));
  const double y = y_.process(u * -2.0 * std::sin(phase));
  return {x, y};
}

void LockIn::reset() {
  x_.reset();
  y_.reset();
  hp_primed_ = false;
  hp_track_ = 0.0;
}

DemodResult lockin_process(std::span<const double> t,
                           std::span<const double> input,
                           const LockInConfig& config) {
  config.validate();
  if (t.size() != input.size() || t.size() < 2) {
    throw ConfigError("lockin_process needs matching t/input series");
  }
  const double dt = t[1] - t[0];
  if (!(dt > 0.0)) {
    throw ConfigError("lockin_process needs an increasing time base");
  }
  for (size_t i = 2; i < t.size(); ++i) {
    // Tolerance covers representation jitter of t = i * dt at large i.
    if (std::abs((t[i] - t[i - 1]) - dt) > 1e-7 * dt) {
      throw ConfigError("lockin_process requires a uniform time base");
    }
  }
  LockIn li(config, dt);
  DemodResult out;
  out.x.reserve(t.size());
  out.y.reserve(t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    const auto xy = li.process(t[i], input[i]);
    out.x.push_back(xy.x);
    out.y.push_back(xy.y);
  }
  return out;
}

double v0_servo_update(double x_omega1, ServoState& state, double dt) {
  if (!state.enabled) {
    return state.integrator;
  }
  state.integrator -= state.gain * x_omega1 * dt;
  if (state.integrator < state.out_min) {
    state.integrator = state.out_min;
    state.saturated = true;
  } else if (state.integrator > state.out_max) {
    state.integrator = state.out_max;
    state.saturated = true;
  }
  return state.integrator;
}

double amplitude_servo_update(double s_2w1, double target_force_rms,
                              AmplitudeServoState& state, double dt) {
  if (!state.enabled) {
    return state.v_ac;
  }
  if (!(target_force_rms > 0.0)) {
    throw ConfigError("amplitude servo target must be > 0");
  }
  const double implied = state.signal_to_force_rms * s_2w1;
  double rel_err = (implied - target_force_rms) / target_force_rms;
  rel_err = std::clamp(rel_err, -3.0, 3.0);  // transient protection
  state.v_ac *= std::exp(-state.loop_gain * rel_err * dt);
  if (state.v_ac < state.v_min) {
    state.v_ac = state.v_min;
    state.saturated = true;
  } else if (state.v_ac > state.v_max) {
    state.v_ac = state.v_max;
    state.saturated = true;
  }
  return state.v_ac;
}

double align_phase_at_contact(std::span<const double> t,
                              std::span<const double> pd, double omega2,
                              double rc_time, int filter_stages) {
  if (t.size() != pd.size() || t.size() < 16) {
    throw ConfigError("align_phase_at_contact needs a sampled stream");
  }
  LockInConfig cfg;
  cfg.reference_frequency = omega2;
  cfg.reference_phase = 0.0;
  cfg.rc_time = rc_time;
  cfg.filter_stages = filter_stages;
  const DemodResult demod = lockin_process(t, pd, cfg);

  // Average the settled second half of the demodulated output.
  const size_t lo = demod.x.size() / 2;
  double mx = 0.0, my = 0.0;
  for (size_t i = lo; i < demod.x.size(); ++i) {
    mx += demod.x[i];
    my += demod.y[i];
  }
  mx /= static_cast<double>(demod.x.size() - lo);
  my /= static_cast<double>(demod.x.size() - lo);

  double mean = 0.0;
  double full_rms = 0.0;
  for (double v : pd) {
    mean += v;
    full_rms += v * v;
  }
  mean /= static_cast<double>(pd.size());
  full_rms = std::sqrt(full_rms / static_cast<double>(pd.size()));
  double ac_rms = 0.0;
  for (double v : pd) ac_rms += (v - mean) * (v - mean);
  ac_rms = std::sqrt(ac_rms / static_cast<double>(pd.size()));

  // Floor scales with the stream so decaying filter-onset transients
  // of a powerless stream stay below it.
  const double magnitude = std::hypot(mx, my);
  if (magnitude <= 1e-5 * full_rms + 1e-4 * ac_rms) {
    throw NumericalError("no omega2 power in contact stream");
  }
  return std::atan2(my, mx);
}

double oscillator_response(double f, double f0, double q, double g) {
  const double r2 = (f / f0) * (f / f0);
  const double re = 1.0 - g - r2;
  const double im = f / (f0 * q);
  return 1.0 / std::sqrt(re * re + im * im);
}

}  // namespace casim
