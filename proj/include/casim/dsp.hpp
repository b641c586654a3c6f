#pragma once

#include <limits>
#include <span>
#include <vector>

namespace casim {

struct LockInConfig {
  double reference_frequency = 0.0;  // Hz
  double reference_phase = 0.0;      // rad
  double rc_time = 0.1;              // s, per stage
  int filter_stages = 4;             // 4 stages = 24 dB/octave

  void validate() const;
};

// Cascade of identical first-order low-pass stages with exact
// exponential update per sample, stable for any timestep.
class CascadedLowPass {
 public:
  CascadedLowPass() = default;
  CascadedLowPass(int stages, double rc_time, double dt);

  double process(double input);
  double value() const { return stages_.empty() ? 0.0 : stages_.back(); }
  void reset(double v = 0.0);

 private:
  std::vector<double> stages_;
  double alpha_ = 1.0;
};

// Dual-phase demodulator. Mixes with 2 cos / -2 sin references so that
// an input A cos(2 pi f t + phi) settles to X = A cos(phi - phase),
// Y = A sin(phi - phase).
class LockIn {
 public:
  LockIn() = default;
  LockIn(const LockInConfig& config, double sample_interval);

  struct XY {
    double x = 0.0;
    double y = 0.0;
  };

  XY process(double t, double input);
  XY output() const { return {x_.value(), y_.value()}; }
  // DC group delay of the filter cascade, stages * rc.
  double group_delay() const { return delay_; }
  void reset();

 private:
  LockInConfig config_;
  CascadedLowPass x_, y_;
  double delay_ = 0.0;
  double hp_alpha_ = 1.0;  // input AC-coupling pole
  double hp_track_ = 0.0;
  bool hp_primed_ = false;
};

struct DemodResult {
  std::vector<double> x, y;
};

// Batch demodulation of a uniformly sampled stream. Throws on
// non-uniform time base.
DemodResult lockin_process(std::span<const double> t,
                           std::span<const double> input,
                           const LockInConfig& config);

// Integral controller state shared by the nulling and amplitude loops.
// The integrator value is the controller output.
struct ServoState {
  double integrator = 0.0;
  double gain = 0.0;  // output units per input unit per second
  bool enabled = true;
  double out_min = -std::numeric_limits<double>::infinity();
  double out_max = std::numeric_limits<double>::infinity();
  bool saturated = false;
};

// Contact-potential nulling: V_dc <- V_dc - gain * X_w1 * dt. In closed
// loop on the instrument the applied DC converges to -V0.
double v0_servo_update(double x_omega1, ServoState& state, double dt);

// AC amplitude regulation holding the implied 2 w1 force rms at target.
// Relative-error integrator in log V_AC so the loop time constant does
// not depend on the operating point.
struct AmplitudeServoState {
  double v_ac = 0.0;                 // current output, volts
  double loop_gain = 0.0;            // 1/s per unit relative force error
  double signal_to_force_rms = 0.0;  // N of 2w1 force rms per volt of S_2w1
  bool enabled = true;
  double v_min = 1e-3;
  double v_max = 10.0;
  bool saturated = false;
};

double amplitude_servo_update(double s_2w1, double target_force_rms,
                              AmplitudeServoState& state, double dt);

// Reference phase that zeroes Y and makes X positive on a stream
// recorded with the surfaces in contact. Throws NumericalError when the
// stream carries no power at omega2.
double align_phase_at_contact(std::span<const double> t,
                              std::span<const double> pd, double omega2,
                              double rc_time = 0.1, int filter_stages = 4);

// Magnitude of the harmonic-oscillator transfer function x k / F at
// frequency f for resonance f0, quality factor q and a relative
// stiffness reduction g (gradient softening). H(f, f0, q, 0) is the
// textbook response.
double oscillator_response(double f, double f0, double q, double g = 0.0);

}  // namespace casim
