#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "casim/instrument.hpp"
#include "casim/lifshitz.hpp"

namespace casim {

struct FringeEnvelope {
  double midpoint = 0.0;   // W0, volts
  double amplitude = 0.0;  // W0 * V, volts
};

// Displacement reconstructed from a two-beam interference signal by
// phase extraction and unwrapping: exactly lambda/2 per full fringe.
// Starts at zero; the acos branch makes the overall sign arbitrary,
// callers orient it against a known motion. Without an explicit
// envelope the fringe extrema are estimated from robust quantiles of
// the series. Throws on phase jumps above pi between samples.
std::vector<double> count_fringes(
    std::span<const double> pd, double wavelength,
    std::optional<FringeEnvelope> envelope = std::nullopt);

struct CalibrationResult {
  double beta = 0.0;          // V m / V^2 in S = beta V^2 / d
  double d_offset = 0.0;      // m, separation at displacement zero
  double fit_residual_rms = 0.0;  // relative to rms(S)
  int n_points = 0;
  int iterations = 0;
};

struct CalibrationOptions {
  // Stage modulation amplitude: the 2 w1 signal averages 1/d over the
  // modulation, so the model uses 1/sqrt(d^2 - a^2). Zero recovers the
  // plain 1/d model.
  double mod_amplitude = 0.0;
  // Optional per-point multiplicative response factor (gradient
  // softening of the resonance), normalized to 1 far away.
  std::span<const double> gain = {};
};

// Joint least-squares fit of (beta, d_offset) in
// S = gain * beta * V^2 / sqrt((d_offset - z)^2 - a^2), Levenberg-
// Marquardt damping, stopping at relative step < 1e-10 or 200
// iterations.
CalibrationResult calibrate_beta(std::span<const double> s_2w1,
                                 std::span<const double> v_ac,
                                 std::span<const double> displacement,
                                 const CalibrationOptions& options = {});

// d = sqrt((gain beta V^2 / S)^2 + a^2); defaults reduce to
// beta V^2 / S.
double separation_from_calibration(double s_2w1, double v_ac,
                                   const CalibrationResult& cal,
                                   double gain = 1.0,
                                   double mod_amplitude = 0.0);

// Gradient of the mean-square AC electrostatic force,
// eps0 pi V_AC^2 / (2 d^2).
double electrostatic_gradient_correction(double v_ac, double separation,
                                         double radius);

// F'/R from the in-phase omega2 amplitude. With the reference phase
// aligned at contact, an attractive gradient moves the cantilever in
// antiphase with the stage, so X enters with a sign flip and the result
// is positive for attraction. transfer_correction is the oscillator
// response magnitude to divide out (1 to skip).
double gradient_from_omega2(double x_w2, double sensitivity,
                            double mod_amplitude, double spring_constant,
                            double radius, double transfer_correction);

struct V0Fit {
  double a = 0.0;       // V per e-fold
  double b = 0.0;       // V
  double sigma_a = 0.0;
  double sigma_b = 0.0;
  double residual_rms = 0.0;
  int n_points = 0;
};

// Least squares of V0 = a ln(d / 1 m) + b with parameter standard
// errors from the fit covariance.
V0Fit fit_v0_log(std::span<const double> separation,
                 std::span<const double> v0);

struct ResidualStats {
  double sigma = 0.0;
  double mean = 0.0;
  int count = 0;
  std::vector<double> bin_edges;   // Freedman-Diaconis binning
  std::vector<int> bin_counts;
};

// Residuals measured - theory(d) for d inside [d_lo, d_hi]. Requires at
// least 30 points in the window.
ResidualStats residual_stats(std::span<const double> separation,
                             std::span<const double> grad_casimir,
                             const TheoryCurve& theory, double d_lo,
                             double d_hi);

// Processed per-record products of one scan.
struct ScanRecord {
  std::vector<double> t;  // record grid, not serialized
  std::vector<double> d;
  std::vector<double> v0;
  std::vector<double> s_2w1;
  std::vector<double> x_w2;
  std::vector<double> y_w2;
  std::vector<double> grad_total;
  std::vector<double> grad_es;
  std::vector<double> grad_casimir;
  // Matched-filtered truth separation on the record grid, when the
  // stream carried truth channels. Not serialized.
  std::vector<double> d_true;
  CalibrationResult calibration;

  std::size_t size() const { return d.size(); }
  void validate() const;
  void write_csv(const std::filesystem::path& path) const;
  static ScanRecord load_csv(const std::filesystem::path& path);
};

// Everything the analysis chain needs to know about the instrument.
struct AnalysisContext {
  double wavelength = 1.5531e-6;
  double sensitivity = 0.0;  // ferrule quadrature slope, V/m
  FringeEnvelope barefiber_envelope;
  double spring_constant = 2.0;
  double resonance_frequency = 2700.0;
  double quality_factor = 42.0;
  double mod_amplitude = 7.2e-9;
  double sphere_radius = 100e-6;
  double omega1 = 72.0;
  double omega2 = 119.0;
  LockInConfig lockin_2w1;
  LockInConfig lockin_w2;  // reference_phase from contact alignment
  double record_rate = 20.0;
  double settle_skip = 3.0;
  double v0_sample_delay = 0.0;  // nulling-loop lag compensation
  double half_period = 20.0;
  double displacement_rc = 0.02;  // s, dither-decoder filter stage
  bool transfer_correction = true;
  bool softening_correction = true;

  static AnalysisContext make(const ExperimentConfig& config,
                              double tuned_wavelength, double omega2_phase);
};

// Streaming scan analyzer. Consecutive scans of one run are a
// continuous recording, so lock-in filters and the fringe tracker
// persist across analyze() calls made in order.
class ScanAnalyzer {
 public:
  explicit ScanAnalyzer(const AnalysisContext& context);
  ~ScanAnalyzer();

  ScanRecord analyze(const SampleStream& stream, const ServoTrace& servo);
  const AnalysisContext& context() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

struct RunSummary {
  std::vector<CalibrationResult> calibrations;
  V0Fit v0_fit;
  double residual_sigma = 0.0;
  double residual_mean = 0.0;
  int residual_count = 0;
  double window_lo = 160e-9;
  double window_hi = 200e-9;
  bool has_residuals = false;
  int n_scans = 0;

  void write_json(const std::filesystem::path& path) const;
};

// Pools records of a run: one V0 fit over all scans and, when a theory
// curve is given, residual statistics in the window.
RunSummary summarize_run(std::span<const ScanRecord> records,
                         const TheoryCurve* theory, double window_lo,
                         double window_hi);

}  // namespace casim
