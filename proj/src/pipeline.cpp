#include "casim/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "casim/constants.hpp"
#include "casim/errors.hpp"
#include "csv_util.hpp"

namespace casim {

namespace {

using constants::epsilon0;
using constants::pi;

double quantile(std::vector<double> sorted, double q) {
  const double pos = q * (sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - lo;
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

// Phase tracker for the acos-extracted interferometer phase. The folded
// phase loses its direction at fringe extrema, so candidates
// +-theta + 2 pi k are matched against a velocity extrapolation of the
// previous phase; smooth motion then tracks straight through the folds.
class FringeTracker {
 public:
  double step(double theta) {
    if (!started_) {
      started_ = true;
      phi_ = theta;
      return phi_;
    }
    const double predicted = phi_ + velocity_;
    double best = 0.0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (const double s : {1.0, -1.0}) {
      const double k =
          std::round((predicted - s * theta) / (2.0 * pi));
      const double cand = s * theta + 2.0 * pi * k;
      const double dist = std::abs(cand - predicted);
      if (dist < best_dist) {
        best_dist = dist;
        best = cand;
      }
    }
    if (best_dist > 0.5 * pi) {
      throw NumericalError(
          "fringe unwrap ambiguity: phase jump too large between samples");
    }
    velocity_ = best - phi_;
    phi_ = best;
    return phi_;
  }

 private:
  bool started_ = false;
  double phi_ = 0.0;
  double velocity_ = 0.0;
};

double servo_value(const std::vector<double>& t, const std::vector<double>& v,
                   double tq) {
  if (t.empty()) {
    throw ConfigError("empty servo trace");
  }
  if (tq <= t.front()) {
    return v.front();
  }
  if (tq >= t.back()) {
    return v.back();
  }
  const auto it = std::upper_bound(t.begin(), t.end(), tq);
  const std::size_t i = static_cast<std::size_t>(it - t.begin());
  const double f = (tq - t[i - 1]) / (t[i] - t[i - 1]);
  return v[i - 1] * (1.0 - f) + v[i] * f;
}

}  // namespace

std::vector<double> count_fringes(std::span<const double> pd,
                                  double wavelength,
                                  std::optional<FringeEnvelope> envelope) {
  if (pd.size() < 2) {
    throw ConfigError("count_fringes needs at least two samples");
  }
  if (!(wavelength > 0.0)) {
    throw ConfigError("count_fringes needs wavelength > 0");
  }
  FringeEnvelope env;
  if (envelope) {
    env = *envelope;
    if (!(env.amplitude > 0.0)) {
      throw ConfigError("fringe envelope amplitude must be > 0");
    }
  } else {
    std::vector<double> sorted(pd.begin(), pd.end());
    std::sort(sorted.begin(), sorted.end());
    const double lo = quantile(sorted, 0.001);
    const double hi = quantile(sorted, 0.999);
    env.midpoint = 0.5 * (hi + lo);
    env.amplitude = 0.5 * (hi - lo);
    if (!(env.amplitude > 0.0)) {
      // Constant signal: no motion.
      return std::vector<double>(pd.size(), 0.0);
    }
  }
  FringeTracker tracker;
  std::vector<double> displacement(pd.size());
  double phi0 = 0.0;
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const double u =
        std::clamp((pd[i] - env.midpoint) / env.amplitude, -1.0, 1.0);
    const double phi = tracker.step(std::acos(u));
    if (i == 0) {
      phi0 = phi;
    }
    displacement[i] = (phi - phi0) * wavelength / (4.0 * pi);
  }
  return displacement;
}

CalibrationResult calibrate_beta(std::span<const double> s_2w1,
                                 std::span<const double> v_ac,
                                 std::span<const double> displacement,
                                 const CalibrationOptions& options) {
  const std::size_t n = s_2w1.size();
  if (v_ac.size() != n || displacement.size() != n) {
    throw ConfigError("calibrate_beta needs matching series");
  }
  if (n < 20) {
    throw ConfigError("calibrate_beta needs at least 20 points");
  }
  if (!options.gain.empty() && options.gain.size() != n) {
    throw ConfigError("calibrate_beta gain span size mismatch");
  }
  const double a = options.mod_amplitude;
  const auto gain = [&](std::size_t i) {
    return options.gain.empty() ? 1.0 : options.gain[i];
  };
  const double zmin = *std::min_element(displacement.begin(),
                                        displacement.end());
  const double zmax = *std::max_element(displacement.begin(),
                                        displacement.end());
  if (!(zmax > zmin)) {
    throw NumericalError("calibrate_beta: degenerate displacement span");
  }

  // Profiled beta and sum of squared residuals at fixed d_offset.
  const auto profile = [&](double d_off, double* beta_out) {
    double suu = 0.0, ssu = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double delta = d_off - displacement[i];
      const double d2 = delta * delta - a * a;
      if (!(delta > 0.0) || !(d2 > 0.0)) {
        return std::numeric_limits<double>::infinity();
      }
      const double u = gain(i) * v_ac[i] * v_ac[i] / std::sqrt(d2);
      suu += u * u;
      ssu += s_2w1[i] * u;
    }
    if (!(suu > 0.0)) {
      return std::numeric_limits<double>::infinity();
    }
    const double beta = ssu / suu;
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double delta = d_off - displacement[i];
      const double m = gain(i) * beta * v_ac[i] * v_ac[i] /
                       std::sqrt(delta * delta - a * a);
      const double r = s_2w1[i] - m;
      sse += r * r;
    }
    *beta_out = beta;
    return sse;
  };

  // Coarse initialization over candidate closest-approach separations.
  double best_doff = 0.0, best_beta = 0.0;
  double best_sse = std::numeric_limits<double>::infinity();
  const double span = zmax - zmin;
  const double delta_lo = std::max(a + 1e-9, 1e-9);
  const double delta_hi = 10.0 * span;
  for (int j = 0; j < 80; ++j) {
    const double delta =
        delta_lo * std::pow(delta_hi / delta_lo, j / 79.0);
    double beta = 0.0;
    const double sse = profile(zmax + delta, &beta);
    if (sse < best_sse) {
      best_sse = sse;
      best_doff = zmax + delta;
      best_beta = beta;
    }
  }
  if (!std::isfinite(best_sse)) {
    throw NumericalError("calibrate_beta: initialization failed");
  }

  // Levenberg-Marquardt refinement of (beta, d_offset).
  double beta = best_beta, doff = best_doff;
  double lambda = 1e-3;
  double sse = best_sse;
  int iterations = 0;
  const auto model_sse = [&](double b, double d0) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double delta = d0 - displacement[i];
      const double d2 = delta * delta - a * a;
      if (!(delta > 0.0) || !(d2 > 0.0)) {
        return std::numeric_limits<double>::infinity();
      }
      const double m = gain(i) * b * v_ac[i] * v_ac[i] / std::sqrt(d2);
      const double r = s_2w1[i] - m;
      s += r * r;
    }
    return s;
  };
  for (; iterations < 200; ++iterations) {
    double a11 = 0.0, a12 = 0.0, a22 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double delta = doff - displacement[i];
      const double d2 = delta * delta - a * a;
      const double m = gain(i) * beta * v_ac[i] * v_ac[i] / std::sqrt(d2);
      const double r = s_2w1[i] - m;
      const double jb = m / beta;
      const double jd = -m * delta / d2;
      a11 += jb * jb;
      a12 += jb * jd;
      a22 += jd * jd;
      g1 += jb * r;
      g2 += jd * r;
    }
    bool accepted = false;
    for (int tries = 0; tries < 24; ++tries) {
      const double m11 = a11 * (1.0 + lambda);
      const double m22 = a22 * (1.0 + lambda);
      const double det = m11 * m22 - a12 * a12;
      if (det == 0.0) {
        break;
      }
      const double db = (g1 * m22 - g2 * a12) / det;
      const double dd = (g2 * m11 - g1 * a12) / det;
      const double trial_sse = model_sse(beta + db, doff + dd);
      if (trial_sse < sse) {
        beta += db;
        doff += dd;
        const bool converged = std::abs(db) < 1e-10 * std::abs(beta) &&
                               std::abs(dd) < 1e-10 * std::abs(doff);
        sse = trial_sse;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        if (converged) {
          iterations = 201;  // done
        }
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      break;
    }
  }

  if (!(beta > 0.0)) {
    throw NumericalError("calibrate_beta: non-positive fitted beta");
  }
  if (!(doff > zmax)) {
    throw NumericalError("calibrate_beta: non-physical fitted d_offset");
  }
  if (!((doff - zmin) / (doff - zmax) >= 2.0)) {
    throw NumericalError("calibrate_beta: separation span below factor 2");
  }
  double srms = 0.0;
  for (double v : s_2w1) {
    srms += v * v;
  }
  srms = std::sqrt(srms / n);
  CalibrationResult result;
  result.beta = beta;
  result.d_offset = doff;
  result.fit_residual_rms = std::sqrt(sse / n) / srms;
  result.n_points = static_cast<int>(n);
  result.iterations = std::min(iterations, 200);
  return result;
}

double separation_from_calibration(double s_2w1, double v_ac,
                                   const CalibrationResult& cal,
                                   double gain, double mod_amplitude) {
  if (!(s_2w1 > 0.0)) {
    throw NumericalError("separation_from_calibration requires S_2w1 > 0");
  }
  const double base = gain * cal.beta * v_ac * v_ac / s_2w1;
  return std::sqrt(base * base + mod_amplitude * mod_amplitude);
}

double electrostatic_gradient_correction(double v_ac, double separation,
                                         double radius) {
  if (!(separation > 0.0)) {
    throw ConfigError("electrostatic_gradient_correction requires d > 0");
  }
  if (!(radius > 0.0)) {
    throw ConfigError("electrostatic_gradient_correction requires R > 0");
  }
  return epsilon0 * pi * v_ac * v_ac / (2.0 * separation * separation);
}

double gradient_from_omega2(double x_w2, double sensitivity,
                            double mod_amplitude, double spring_constant,
                            double radius, double transfer_correction) {
  if (!(sensitivity > 0.0)) {
    throw ConfigError("gradient_from_omega2 requires sensitivity > 0");
  }
  if (!(mod_amplitude > 0.0) || !(spring_constant > 0.0) ||
      !(radius > 0.0) || !(transfer_correction > 0.0)) {
    throw ConfigError("gradient_from_omega2 parameters must be positive");
  }
  return -spring_constant * x_w2 /
         (sensitivity * mod_amplitude * radius * transfer_correction);
}

V0Fit fit_v0_log(std::span<const double> separation,
                 std::span<const double> v0) {
  const std::size_t n = separation.size();
  if (v0.size() != n || n < 10) {
    throw ConfigError("fit_v0_log needs >= 10 matching points");
  }
  double dmin = separation[0], dmax = separation[0];
  for (double d : separation) {
    if (!(d > 0.0)) {
      throw ConfigError("fit_v0_log requires separations > 0");
    }
    dmin = std::min(dmin, d);
    dmax = std::max(dmax, d);
  }
  if (!(dmax >= 2.0 * dmin)) {
    throw NumericalError("fit_v0_log: separation span below factor 2");
  }
  double sx = 0.0, sxx = 0.0, sy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::log(separation[i]);
    sx += x;
    sxx += x * x;
    sy += v0[i];
    sxy += x * v0[i];
  }
  const double det = n * sxx - sx * sx;
  if (!(det > 0.0)) {
    throw NumericalError("fit_v0_log: degenerate design matrix");
  }
  V0Fit fit;
  fit.a = (n * sxy - sx * sy) / det;
  fit.b = (sxx * sy - sx * sxy) / det;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = v0[i] - (fit.a * std::log(separation[i]) + fit.b);
    sse += r * r;
  }
  const double variance = n > 2 ? sse / (n - 2) : 0.0;
  fit.sigma_a = std::sqrt(variance * n / det);
  fit.sigma_b = std::sqrt(variance * sxx / det);
  fit.residual_rms = std::sqrt(sse / n);
  fit.n_points = static_cast<int>(n);
  return fit;
}

ResidualStats residual_stats(std::span<const double> separation,
                             std::span<const double> grad_casimir,
                             const TheoryCurve& theory, double d_lo,
                             double d_hi) {
  if (separation.size() != grad_casimir.size()) {
    throw ConfigError("residual_stats needs matching series");
  }
  if (!(d_lo < d_hi)) {
    throw ConfigError("residual_stats needs d_lo < d_hi");
  }
  std::vector<double> residuals;
  for (std::size_t i = 0; i < separation.size(); ++i) {
    const double d = separation[i];
    if (d >= d_lo && d <= d_hi) {
      residuals.push_back(grad_casimir[i] - theory.interpolate(d));
    }
  }
  if (residuals.empty()) {
    throw NumericalError("residual_stats: empty separation window");
  }
  if (residuals.size() < 30) {
    throw NumericalError("residual_stats: fewer than 30 residuals in window");
  }
  ResidualStats stats;
  stats.count = static_cast<int>(residuals.size());
  const double n = static_cast<double>(residuals.size());
  stats.mean = std::accumulate(residuals.begin(), residuals.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : residuals) {
    ss += (r - stats.mean) * (r - stats.mean);
  }
  stats.sigma = std::sqrt(ss / (n - 1.0));

  std::vector<double> sorted = residuals;
  std::sort(sorted.begin(), sorted.end());
  const double iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
  const double lo = sorted.front();
  const double hi = sorted.back();
  double width = 2.0 * iqr / std::cbrt(n);
  int bins;
  if (!(width > 0.0) || !(hi > lo)) {
    bins = 1;
    width = std::max(hi - lo, 1.0);
  } else {
    bins = std::max(1, static_cast<int>(std::ceil((hi - lo) / width)));
  }
  stats.bin_edges.resize(bins + 1);
  stats.bin_counts.assign(bins, 0);
  for (int b = 0; b <= bins; ++b) {
    stats.bin_edges[b] = lo + (hi - lo) * b / bins;
  }
  for (double r : residuals) {
    int b = (hi > lo) ? static_cast<int>((r - lo) / (hi - lo) * bins) : 0;
    b = std::clamp(b, 0, bins - 1);
    ++stats.bin_counts[b];
  }
  return stats;
}

void ScanRecord::validate() const {
  const std::size_t n = d.size();
  for (const auto* v : {&v0, &s_2w1, &x_w2, &y_w2, &grad_total, &grad_es,
                        &grad_casimir}) {
    if (v->size() != n) {
      throw NumericalError("scan record column lengths differ");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(d[i] > 0.0)) {
      throw NumericalError("scan record separation must be > 0");
    }
    const double expect = grad_total[i] - grad_es[i];
    const double scale = std::max({std::abs(grad_total[i]),
                                   std::abs(grad_es[i]), 1e-12});
    if (std::abs(grad_casimir[i] - expect) > 1e-9 * scale) {
      throw NumericalError("scan record gradient decomposition inconsistent");
    }
  }
}

void ScanRecord::write_csv(const std::filesystem::path& path) const {
  validate();
  csvutil::AtomicWriter writer(path);
  auto& out = writer.stream();
  out << "d_m,V0_V,S_2w1_V,X_w2_V,Y_w2_V,grad_total,grad_es,grad_casimir\n";
  std::string row;
  for (std::size_t i = 0; i < size(); ++i) {
    row.clear();
    const double* cols[] = {&d[i],          &v0[i],      &s_2w1[i],
                            &x_w2[i],       &y_w2[i],    &grad_total[i],
                            &grad_es[i],    &grad_casimir[i]};
    for (std::size_t c = 0; c < 8; ++c) {
      if (c) {
        row.push_back(',');
      }
      csvutil::append_double(row, *cols[c]);
    }
    row.push_back('\n');
    out << row;
  }
  writer.commit();
}

ScanRecord ScanRecord::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open scan record: " + path.string());
  }
  std::string line;
  if (!std::getline(in, line) ||
      line != "d_m,V0_V,S_2w1_V,X_w2_V,Y_w2_V,grad_total,grad_es,"
              "grad_casimir") {
    throw ConfigError("scan record " + path.string() + ": bad header");
  }
  ScanRecord rec;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto v = csvutil::parse_row(line, 8, path.string());
    rec.d.push_back(v[0]);
    rec.v0.push_back(v[1]);
    rec.s_2w1.push_back(v[2]);
    rec.x_w2.push_back(v[3]);
    rec.y_w2.push_back(v[4]);
    rec.grad_total.push_back(v[5]);
    rec.grad_es.push_back(v[6]);
    rec.grad_casimir.push_back(v[7]);
  }
  rec.validate();
  return rec;
}

AnalysisContext AnalysisContext::make(const ExperimentConfig& config,
                                      double tuned_wavelength,
                                      double omega2_phase) {
  AnalysisContext ctx;
  ctx.wavelength = tuned_wavelength;
  InterferometerParams ferrule = config.ferrule;
  ferrule.wavelength = tuned_wavelength;
  ctx.sensitivity = ferrule.quadrature_slope();
  ctx.barefiber_envelope = {config.barefiber.midpoint,
                            config.barefiber.midpoint *
                                config.barefiber.visibility};
  ctx.spring_constant = config.cantilever.spring_constant;
  ctx.resonance_frequency = config.cantilever.resonance_frequency;
  ctx.quality_factor = config.cantilever.quality_factor;
  ctx.mod_amplitude = config.protocol.stage_mod_amplitude;
  ctx.sphere_radius = config.forces.sphere_radius;
  ctx.omega1 = config.protocol.omega1;
  ctx.omega2 = config.protocol.omega2;
  ctx.lockin_2w1 = config.lockin_2omega1;
  ctx.lockin_2w1.reference_frequency = 2.0 * config.protocol.omega1;
  ctx.lockin_2w1.reference_phase = 0.0;
  ctx.lockin_w2 = config.lockin_omega2;
  ctx.lockin_w2.reference_frequency = config.protocol.omega2;
  ctx.lockin_w2.reference_phase = omega2_phase;
  ctx.record_rate = config.protocol.record_rate;
  ctx.settle_skip = config.protocol.settle_skip;
  ctx.v0_sample_delay = config.servos.v0_loop_tau +
                        config.lockin_omega1.filter_stages *
                            config.lockin_omega1.rc_time;
  ctx.half_period = config.protocol.half_period;
  ctx.transfer_correction = config.analysis.transfer_correction;
  ctx.softening_correction = config.analysis.softening_correction;
  return ctx;
}

struct ScanAnalyzer::State {
  AnalysisContext ctx;
  bool first = true;
  double dt = 0.0;
  LockIn li_2w1;
  LockIn li_w2;
  // Stage displacement decoder: the omega2 stage dither acts as a phase
  // carrier on the bare-fiber signal. The dither lock-in recovers
  // sin(theta), the low-pass recovers cos(theta); atan2 gives the slow
  // fringe phase with no fold ambiguity.
  LockIn li_dither;
  CascadedLowPass w_dc;
  // Slow cantilever deflection from the ferrule DC level: the
  // separation tracks stage motion plus deflection back-action, and at
  // quadrature the DC level reads the deflection directly.
  CascadedLowPass deflection_dc;
  CascadedLowPass d_true_filter;  // truth matched to the S channel window
  bool have_theta = false;
  double theta_acc = 0.0;   // unwrapped slow phase
  double theta_prev = 0.0;  // principal value at the previous sample

  explicit State(const AnalysisContext& c) : ctx(c) {}
};

ScanAnalyzer::ScanAnalyzer(const AnalysisContext& context)
    : state_(std::make_unique<State>(context)) {}

ScanAnalyzer::~ScanAnalyzer() = default;

const AnalysisContext& ScanAnalyzer::context() const { return state_->ctx; }

// Least squares of the full-rate S stream against the separation model
// passed through a replica of the S output filter. Sharing the filter
// between measurement and model cancels the smearing and delay of the
// channel exactly, which a record-level fit cannot do on a moving scan.
static CalibrationResult fit_beta_filtered(
    const std::vector<double>& s_meas, const std::vector<double>& z,
    const std::vector<double>& v_ac, const std::vector<double>& gain,
    std::size_t i_begin, std::size_t i_end, int stages, double rc, double dt,
    double mod_amplitude, double beta0, double doff0) {
  const std::size_t n = s_meas.size();
  i_end = std::min(i_end, n);
  if (i_begin + 16 > i_end) {
    throw NumericalError("filtered calibration window too short");
  }
  const double a2 = mod_amplitude * mod_amplitude;
  double zmax = z[i_begin];
  for (std::size_t i = i_begin; i < i_end; ++i) {
    zmax = std::max(zmax, z[i]);
  }

  // Filtered residuals and analytic Jacobian columns. The filter is
  // linear, so the derivative of the filtered model is the filtered
  // derivative of the model input.
  const auto pass = [&](double beta, double doff, double* sse, double* a11,
                        double* a12, double* a22, double* g1, double* g2) {
    if (!(doff > zmax + mod_amplitude)) {
      *sse = std::numeric_limits<double>::infinity();
      return;
    }
    CascadedLowPass f_m(stages, rc, dt), f_jd(stages, rc, dt);
    bool primed = false;
    double acc = 0.0, b11 = 0.0, b12 = 0.0, b22 = 0.0, c1 = 0.0, c2 = 0.0;
    for (std::size_t i = i_begin; i < i_end; ++i) {
      const double delta = doff - z[i];
      const double d2 = delta * delta - a2;
      const double input = gain[i] * beta * v_ac[i] * v_ac[i] /
                           std::sqrt(d2);
      const double jd_input = -input * delta / d2;
      if (!primed) {
        primed = true;
        f_m.reset(input);
        f_jd.reset(jd_input);
      }
      const double model = f_m.process(input);
      const double jd = f_jd.process(jd_input);
      const double jb = model / beta;
      const double r = s_meas[i] - model;
      acc += r * r;
      b11 += jb * jb;
      b12 += jb * jd;
      b22 += jd * jd;
      c1 += jb * r;
      c2 += jd * r;
    }
    *sse = acc;
    if (a11 != nullptr) {
      *a11 = b11;
      *a12 = b12;
      *a22 = b22;
      *g1 = c1;
      *g2 = c2;
    }
  };

  double beta = beta0, doff = doff0;
  double sse = 0.0, a11 = 0.0, a12 = 0.0, a22 = 0.0, g1 = 0.0, g2 = 0.0;
  pass(beta, doff, &sse, &a11, &a12, &a22, &g1, &g2);
  if (!std::isfinite(sse)) {
    throw NumericalError("filtered calibration: invalid starting point");
  }
  double lambda = 1e-3;
  int iterations = 0;
  for (; iterations < 200; ++iterations) {
    bool accepted = false;
    for (int tries = 0; tries < 24; ++tries) {
      const double m11 = a11 * (1.0 + lambda);
      const double m22 = a22 * (1.0 + lambda);
      const double det = m11 * m22 - a12 * a12;
      if (det == 0.0) {
        break;
      }
      const double db = (g1 * m22 - g2 * a12) / det;
      const double dd = (g2 * m11 - g1 * a12) / det;
      double trial_sse;
      pass(beta + db, doff + dd, &trial_sse, nullptr, nullptr, nullptr,
           nullptr, nullptr);
      if (trial_sse < sse) {
        beta += db;
        doff += dd;
        const bool converged = std::abs(db) < 1e-10 * std::abs(beta) &&
                               std::abs(dd) < 1e-10 * std::abs(doff);
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        pass(beta, doff, &sse, &a11, &a12, &a22, &g1, &g2);
        if (converged) {
          iterations = 200;
        }
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      break;
    }
  }
  if (!(beta > 0.0) || !(doff > zmax)) {
    throw NumericalError("filtered calibration: non-physical fit");
  }
  double srms = 0.0;
  for (std::size_t i = i_begin; i < i_end; ++i) {
    srms += s_meas[i] * s_meas[i];
  }
  const double count = static_cast<double>(i_end - i_begin);
  srms = std::sqrt(srms / count);
  CalibrationResult result;
  result.beta = beta;
  result.d_offset = doff;
  result.fit_residual_rms = std::sqrt(sse / count) / srms;
  result.n_points = static_cast<int>(count);
  result.iterations = std::min(iterations, 200);
  return result;
}

// Converts the in-phase omega2 amplitude ratio u = x_w2 / a into the
// gradient-to-stiffness ratio g, inverting the oscillator response with
// the resonance softened by the gradient itself when enabled.
static double solve_gradient_ratio(double u, const AnalysisContext& ctx) {
  if (!ctx.transfer_correction) {
    return u;
  }
  if (!ctx.softening_correction) {
    return u / oscillator_response(ctx.omega2, ctx.resonance_frequency,
                                   ctx.quality_factor);
  }
  double g = u;
  for (int i = 0; i < 24; ++i) {
    g = u / oscillator_response(ctx.omega2, ctx.resonance_frequency,
                                ctx.quality_factor, g);
  }
  return g;
}

ScanRecord ScanAnalyzer::analyze(const SampleStream& stream,
                                 const ServoTrace& servo) {
  State& s = *state_;
  const AnalysisContext& ctx = s.ctx;
  const std::size_t n = stream.size();
  if (n < 16) {
    throw ConfigError("analyze: stream too short");
  }
  const double dt = stream.t[1] - stream.t[0];
  const double carrier_mod = 4.0 * pi * ctx.mod_amplitude / ctx.wavelength;
  if (carrier_mod < 1e-4) {
    throw ConfigError("analyze: displacement decoding needs a stage "
                      "modulation amplitude > 0");
  }
  if (s.first) {
    s.dt = dt;
    s.li_2w1 = LockIn(ctx.lockin_2w1, dt);
    s.li_w2 = LockIn(ctx.lockin_w2, dt);
    LockInConfig dither_cfg;
    dither_cfg.reference_frequency = ctx.omega2;
    dither_cfg.reference_phase = 0.0;
    dither_cfg.rc_time = ctx.displacement_rc;
    dither_cfg.filter_stages = 4;
    s.li_dither = LockIn(dither_cfg, dt);
    s.w_dc = CascadedLowPass(4, ctx.displacement_rc, dt);
    s.w_dc.reset(stream.pd_barefiber.front());
    s.deflection_dc = CascadedLowPass(4, ctx.displacement_rc, dt);
    s.deflection_dc.reset(stream.pd_ferrule.front());
    if (stream.has_truth) {
      s.d_true_filter = CascadedLowPass(ctx.lockin_2w1.filter_stages,
                                        ctx.lockin_2w1.rc_time, dt);
      s.d_true_filter.reset(stream.d_true.front());
    }
  } else if (std::abs(dt - s.dt) > 1e-7 * s.dt) {
    throw ConfigError("analyze: sample rate changed between scans");
  }

  // Stage trajectory has traj = slow + a cos(w2 t); the fringe phase is
  // theta = theta_s - m cos(w2 t) with m = 4 pi a / lambda, so
  // X_dither = W0 V 2 J1(m) sin(theta_s) and the filtered level gives
  // W0 (1 + V J0(m) cos(theta_s)).
  const double j0 = std::cyl_bessel_j(0, carrier_mod);
  const double j1 = std::cyl_bessel_j(1, carrier_mod);
  const double w0 = ctx.barefiber_envelope.midpoint;
  const double w0v = ctx.barefiber_envelope.amplitude;
  const double lam_scale = ctx.wavelength / (4.0 * pi);
  std::vector<double> x2(n), xw(n), yw(n), z_dec(n), x_slow(n);
  std::vector<double> dtf(stream.has_truth ? n : 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double xd = s.li_dither.process(stream.t[i],
                                          stream.pd_barefiber[i]).x;
    const double wbar = s.w_dc.process(stream.pd_barefiber[i]);
    const double sin_est = xd / (w0v * 2.0 * j1);
    const double cos_est = (wbar - w0) / (w0v * j0);
    const double theta = std::atan2(sin_est, cos_est);
    if (!s.have_theta) {
      s.have_theta = true;
      s.theta_prev = theta;
    }
    double delta = theta - s.theta_prev;
    delta -= 2.0 * pi * std::round(delta / (2.0 * pi));
    s.theta_acc += delta;
    s.theta_prev = theta;
    // Slow phase decreases as the stage advances.
    z_dec[i] = -s.theta_acc * lam_scale;
    x_slow[i] = s.deflection_dc.process(stream.pd_ferrule[i]) /
                ctx.sensitivity;
    const auto a2 = s.li_2w1.process(stream.t[i], stream.pd_ferrule[i]);
    const auto aw = s.li_w2.process(stream.t[i], stream.pd_ferrule[i]);
    x2[i] = a2.x;
    xw[i] = aw.x;
    yw[i] = aw.y;
    if (stream.has_truth) {
      dtf[i] = s.d_true_filter.process(stream.d_true[i]);
    }
  }

  ScanRecord rec;
  const double t0 = stream.t.front();
  const double t_end = stream.t.back();
  const double delay_s = ctx.lockin_2w1.filter_stages * ctx.lockin_2w1.rc_time;
  const double delayw = ctx.lockin_w2.filter_stages * ctx.lockin_w2.rc_time;
  const double delay_dec = 4.0 * ctx.displacement_rc;
  const double h2_base =
      oscillator_response(2.0 * ctx.omega1, ctx.resonance_frequency,
                          ctx.quality_factor);

  // Full-rate model inputs aligned to the S mixer input: sample i
  // carries the content of time t_i before the S output filter.
  const long shift_dec = std::lround(delay_dec / dt);
  const long shift_w = std::lround(delayw / dt);
  const auto at = [&](const std::vector<double>& v, long i) {
    return v[static_cast<std::size_t>(
        std::clamp<long>(i, 0, static_cast<long>(n) - 1))];
  };
  std::vector<double> v_full(n), gain_full(n), z_full(n);
  for (std::size_t i = 0; i < n; ++i) {
    const long li = static_cast<long>(i);
    v_full[i] = servo_value(servo.t, servo.v_ac, stream.t[i]);
    // Separation shrinks with stage advance and with deflection toward
    // the plate; the constant offsets are absorbed by d_offset.
    z_full[i] = at(z_dec, li + shift_dec) + at(x_slow, li + shift_dec);
    if (ctx.softening_correction) {
      const double u = -at(xw, li + shift_w) /
                       (ctx.sensitivity * ctx.mod_amplitude);
      const double g = solve_gradient_ratio(u, ctx);
      gain_full[i] = oscillator_response(2.0 * ctx.omega1,
                                         ctx.resonance_frequency,
                                         ctx.quality_factor, g) /
                     h2_base;
    } else {
      gain_full[i] = 1.0;
    }
  }

  // Calibration over the approach half, fitting the S stream against
  // the model passed through a replica of the S output filter so both
  // sides share the same smearing and delay.
  const double fit_t_lo =
      t0 + std::max(s.first ? ctx.settle_skip : 0.0,
                    12.0 * ctx.lockin_2w1.rc_time);
  const std::size_t fit_begin = static_cast<std::size_t>(
      std::min<double>(n - 1.0, std::max(0.0, (fit_t_lo - t0) / dt)));
  const std::size_t fit_end = static_cast<std::size_t>(std::min<double>(
      n, std::max<double>(fit_begin + 2.0, (ctx.half_period) / dt)));
  {
    // Decimated plain fit for the starting point.
    std::vector<double> cs, cv, cz, cg;
    const std::size_t stride = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(1.0 / (ctx.record_rate *
                                                        dt))));
    for (std::size_t i = fit_begin; i < fit_end; i += stride) {
      cs.push_back(x2[std::min(n - 1, i + static_cast<std::size_t>(
                                              std::lround(delay_s / dt)))]);
      cv.push_back(v_full[i]);
      cz.push_back(z_full[i]);
      cg.push_back(gain_full[i]);
    }
    CalibrationOptions copt;
    copt.mod_amplitude = ctx.mod_amplitude;
    copt.gain = cg;
    const CalibrationResult coarse = calibrate_beta(cs, cv, cz, copt);
    rec.calibration = fit_beta_filtered(
        x2, z_full, v_full, gain_full, fit_begin, fit_end,
        ctx.lockin_2w1.filter_stages, ctx.lockin_2w1.rc_time, dt,
        ctx.mod_amplitude, coarse.beta, coarse.d_offset);
  }

  // Record grid with per-channel group-delay compensation, so every
  // column of a record reflects the same physical instant.
  const double max_delay = std::max({delay_s, delayw, ctx.v0_sample_delay});
  const double rr = ctx.record_rate;
  const double first_t = t0 + (s.first ? ctx.settle_skip : 0.0);
  long k = static_cast<long>(std::ceil(first_t * rr - 1e-9));

  std::vector<double> v_ac_rec, gains, g_ratio;
  for (;; ++k) {
    const double tk = static_cast<double>(k) / rr;
    if (tk + max_delay > t_end) {
      break;
    }
    const auto index_at = [&](double t_target) {
      return static_cast<std::size_t>(std::llround((t_target - t0) / dt));
    };
    const std::size_t is = index_at(tk + delay_s);
    const std::size_t iw = index_at(tk + delayw);
    if (is >= n || iw >= n) {
      break;
    }
    const double u = -xw[iw] / (ctx.sensitivity * ctx.mod_amplitude);
    const double g = solve_gradient_ratio(u, ctx);
    rec.t.push_back(tk);
    rec.s_2w1.push_back(x2[is]);
    rec.x_w2.push_back(xw[iw]);
    rec.y_w2.push_back(yw[iw]);
    rec.v0.push_back(
        -servo_value(servo.t, servo.v_dc, tk + ctx.v0_sample_delay));
    v_ac_rec.push_back(servo_value(servo.t, servo.v_ac, tk));
    gains.push_back(ctx.softening_correction
                        ? oscillator_response(2.0 * ctx.omega1,
                                              ctx.resonance_frequency,
                                              ctx.quality_factor, g) /
                              h2_base
                        : 1.0);
    g_ratio.push_back(g);
    if (stream.has_truth) {
      rec.d_true.push_back(dtf[is]);
    }
  }
  const std::size_t m = rec.t.size();
  if (m < 20) {
    throw NumericalError("analyze: too few settled records in scan");
  }

  rec.d.resize(m);
  rec.grad_total.resize(m);
  rec.grad_es.resize(m);
  rec.grad_casimir.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double d = separation_from_calibration(
        rec.s_2w1[i], v_ac_rec[i], rec.calibration, gains[i],
        ctx.mod_amplitude);
    const double transfer =
        ctx.transfer_correction
            ? oscillator_response(ctx.omega2, ctx.resonance_frequency,
                                  ctx.quality_factor,
                                  ctx.softening_correction ? g_ratio[i] : 0.0)
            : 1.0;
    const double grad_total = gradient_from_omega2(
        rec.x_w2[i], ctx.sensitivity, ctx.mod_amplitude, ctx.spring_constant,
        ctx.sphere_radius, transfer);
    const double grad_es = electrostatic_gradient_correction(
        v_ac_rec[i], d, ctx.sphere_radius);
    rec.d[i] = d;
    rec.grad_total[i] = grad_total;
    rec.grad_es[i] = grad_es;
    rec.grad_casimir[i] = grad_total - grad_es;
  }
  rec.validate();
  s.first = false;
  return rec;
}

RunSummary summarize_run(std::span<const ScanRecord> records,
                         const TheoryCurve* theory, double window_lo,
                         double window_hi) {
  if (records.empty()) {
    throw ConfigError("summarize_run: no records");
  }
  RunSummary summary;
  summary.n_scans = static_cast<int>(records.size());
  summary.window_lo = window_lo;
  summary.window_hi = window_hi;
  std::vector<double> d_all, v0_all, grad_all;
  for (const ScanRecord& rec : records) {
    summary.calibrations.push_back(rec.calibration);
    d_all.insert(d_all.end(), rec.d.begin(), rec.d.end());
    v0_all.insert(v0_all.end(), rec.v0.begin(), rec.v0.end());
    grad_all.insert(grad_all.end(), rec.grad_casimir.begin(),
                    rec.grad_casimir.end());
  }
  summary.v0_fit = fit_v0_log(d_all, v0_all);
  if (theory != nullptr) {
    const ResidualStats stats =
        residual_stats(d_all, grad_all, *theory, window_lo, window_hi);
    summary.residual_sigma = stats.sigma;
    summary.residual_mean = stats.mean;
    summary.residual_count = stats.count;
    summary.has_residuals = true;
  }
  return summary;
}

void RunSummary::write_json(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["n_scans"] = n_scans;
  nlohmann::ordered_json cals = nlohmann::ordered_json::array();
  for (const CalibrationResult& c : calibrations) {
    cals.push_back({{"beta_Vm_per_V2", c.beta},
                    {"d_offset_m", c.d_offset},
                    {"fit_residual_rms", c.fit_residual_rms},
                    {"n_points", c.n_points}});
  }
  j["calibration"] = cals;
  j["v0_fit"] = {{"a_V", v0_fit.a},
                 {"b_V", v0_fit.b},
                 {"sigma_a_V", v0_fit.sigma_a},
                 {"sigma_b_V", v0_fit.sigma_b},
                 {"residual_rms_V", v0_fit.residual_rms},
                 {"n_points", v0_fit.n_points}};
  if (has_residuals) {
    j["residuals"] = {{"sigma_N_per_m2", residual_sigma},
                      {"mean_N_per_m2", residual_mean},
                      {"count", residual_count},
                      {"window_lo_m", window_lo},
                      {"window_hi_m", window_hi}};
  }
  csvutil::AtomicWriter writer(path);
  writer.stream() << j.dump(2) << '\n';
  writer.commit();
}

}  // namespace casim
