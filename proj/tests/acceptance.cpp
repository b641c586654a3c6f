// Acceptance suite: runs every acceptance criterion at its stated
// tolerance and prints one PASS/FAIL line per criterion. Exits nonzero
// if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "casim/config.hpp"
#include "casim/constants.hpp"
#include "casim/dsp.hpp"
#include "casim/errors.hpp"
#include "casim/instrument.hpp"
#include "casim/lifshitz.hpp"
#include "casim/pipeline.hpp"

namespace fs = std::filesystem;
using namespace casim;
using constants::epsilon0;
using constants::hbar;
using constants::pi;
using constants::speed_of_light;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool pass,
            const std::string& detail) {
  std::printf("%-4s criterion %2d: %-28s %s\n", pass ? "PASS" : "FAIL",
              index, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) {
    ++g_failures;
  }
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point start = clock::now();
  return std::chrono::duration<double>(clock::now() - start).count();
}

double ideal_gradient(double d) {
  return pi * pi * pi * hbar * speed_of_light / (120.0 * d * d * d * d);
}

struct RunProducts {
  double tuned_lambda = 0.0;
  double contact_phase = 0.0;
  std::vector<ScanRecord> records;
};

RunProducts run_and_analyze(const ExperimentConfig& cfg) {
  ExperimentRun run(cfg);
  RunProducts out;
  out.tuned_lambda = run.tuned_wavelength();
  const SampleStream& contact = run.contact_stream();
  out.contact_phase = align_phase_at_contact(
      contact.t, contact.pd_ferrule, cfg.protocol.omega2,
      cfg.lockin_omega2.rc_time, cfg.lockin_omega2.filter_stages);
  const AnalysisContext ctx =
      AnalysisContext::make(cfg, out.tuned_lambda, out.contact_phase);
  ScanAnalyzer analyzer(ctx);
  for (int i = 0; i < cfg.protocol.n_scans; ++i) {
    ScanResult scan = run.run_next_scan();
    if (scan.snapped_in) {
      throw NumericalError("unexpected snap-in during acceptance run");
    }
    out.records.push_back(analyzer.analyze(scan.stream, scan.servo));
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

char fmtbuf[512];
template <typename... Args>
std::string fmt(const char* f, Args... args) {
  std::snprintf(fmtbuf, sizeof(fmtbuf), f, args...);
  return fmtbuf;
}

}  // namespace

// 1. Ideal-mirror closure of the Lifshitz solver at T = 0.
static void criterion_1() {
  const double t0 = now_seconds();
  LifshitzConfig cfg;
  cfg.temperature = 0.0;
  cfg.material_a = DielectricModel::perfect_conductor();
  cfg.material_b = DielectricModel::perfect_conductor();
  double worst = 0.0;
  for (const double d : {50e-9, 100e-9, 200e-9, 1000e-9}) {
    const double got = sphere_plate_gradient(cfg, d);
    worst = std::max(worst, std::abs(got - ideal_gradient(d)) /
                                ideal_gradient(d));
  }
  const double g100 = sphere_plate_gradient(cfg, 100e-9);
  const double elapsed = now_seconds() - t0;
  const bool pass = worst < 1e-3 && elapsed < 10.0;
  report(1, "ideal-mirror closure", pass,
         fmt("worst rel err %.2e, F'/R(100nm) = %.2f N/m^2, %.1f s",
             worst, g100, elapsed));
}

// 2. Electrostatic correction magnitudes at the published operating
// point.
static void criterion_2() {
  const double radius = 100e-6;
  const double target = 230e-12;
  const auto v_ac = [&](double d) {
    return std::sqrt(2.0 * std::sqrt(2.0) * d * target /
                     (epsilon0 * pi * radius));
  };
  const double g200 =
      electrostatic_gradient_correction(v_ac(200e-9), 200e-9, radius);
  const double g45 =
      electrostatic_gradient_correction(v_ac(45e-9), 45e-9, radius);
  const bool pass = std::abs(g200 - 15.0) / 15.0 < 0.15 &&
                    std::abs(g45 - 70.0) / 70.0 < 0.15;
  report(2, "electrostatic correction", pass,
         fmt("%.1f N/m^2 at 200 nm (vs 15), %.1f at 45 nm (vs 70)", g200,
             g45));
}

// 3/4/5 share the noiseless closure run.
static void criteria_3_4_5(const fs::path& config_dir) {
  const double t0 = now_seconds();
  const ExperimentConfig cfg =
      load_experiment_config(config_dir / "closure.json");
  RunProducts run = run_and_analyze(cfg);
  const double elapsed = now_seconds() - t0;
  const ScanRecord& rec = run.records.front();

  // 3. Recovered gradient against the injected ideal-mirror law.
  double worst = 0.0;
  int checked = 0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const double d = rec.d[i];
    if (d < 50e-9 || d > 200e-9) {
      continue;
    }
    worst = std::max(worst, std::abs(rec.grad_casimir[i] -
                                     ideal_gradient(d)) /
                                ideal_gradient(d));
    ++checked;
  }
  report(3, "end-to-end noiseless closure",
         worst < 0.01 && checked >= 100 && elapsed < 300.0,
         fmt("worst rel err %.3f%% over %d records in [50,200] nm, %.0f s",
             100.0 * worst, checked, elapsed));

  // 4. Nulling-servo V0 recovery (trace RMS on this controlled run; the
  // statistical fit check runs on the noisy reference run later).
  double v0_rms = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const double want = cfg.forces.residual_potential.at(rec.d_true[i]);
    v0_rms += (rec.v0[i] - want) * (rec.v0[i] - want);
  }
  v0_rms = std::sqrt(v0_rms / rec.size());
  report(4, "V0 servo trace recovery", v0_rms < 1e-3,
         fmt("servo trace vs injected profile: %.3f mV rms (limit 1 mV)",
             1e3 * v0_rms));

  // 5. Distance reconstruction and V_AC rescaling invariance.
  double d_rms = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    d_rms += (rec.d[i] - rec.d_true[i]) * (rec.d[i] - rec.d_true[i]);
  }
  d_rms = std::sqrt(d_rms / rec.size());
  double worst_rescale = 0.0;
  for (std::size_t i = 0; i < rec.size(); i += 7) {
    const double gamma = 1.0 + 0.1 * (i % 11);
    const double d1 = separation_from_calibration(rec.s_2w1[i], 0.1,
                                                  rec.calibration);
    const double d2 = separation_from_calibration(
        gamma * gamma * rec.s_2w1[i], gamma * 0.1, rec.calibration);
    worst_rescale = std::max(worst_rescale, std::abs(d2 - d1) / d1);
  }
  report(5, "distance reconstruction",
         d_rms < 1e-9 && worst_rescale < 1e-12,
         fmt("|d - d_true| = %.3f nm rms; V_AC rescale invariance %.1e",
             1e9 * d_rms, worst_rescale));
}

// 6. Fringe metrology on noiseless synthetic data.
static void criterion_6() {
  const double lambda = 1553.1e-9;
  const std::size_t n = 6000;
  std::vector<double> pd(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double gap =
        25e-6 + 0.5 * lambda * static_cast<double>(i) / (n - 1);
    pd[i] = 1.0 * (1.0 + 0.5 * std::cos(4.0 * pi * gap / lambda));
  }
  const auto z = count_fringes(pd, lambda, FringeEnvelope{1.0, 0.5});
  const double err = std::abs(std::abs(z.back() - z.front()) - 776.55e-9);
  report(6, "fringe metrology", err < 1e-12,
         fmt("one fringe -> %.6f nm (err %.2e nm)",
             1e9 * std::abs(z.back() - z.front()), 1e9 * err));
}

// 7. Lock-in filter law and crosstalk at the published settings.
static void criterion_7() {
  const double fs = 30000.0;
  const double f_ref = 144.0;
  LockInConfig cfg{f_ref, 0.0, 0.2, 4};
  const auto magnitude_at = [&](double f_tone) {
    const std::size_t n = static_cast<std::size_t>(10.0 * fs);
    LockIn li(cfg, 1.0 / fs);
    double m = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / fs;
      const auto xy = li.process(t, std::cos(2.0 * pi * f_tone * t));
      if (i >= 3 * n / 4) {
        m += std::hypot(xy.x, xy.y);
        ++cnt;
      }
    }
    return m / static_cast<double>(cnt);
  };
  const double df = 10.0 / (2.0 * pi * cfg.rc_time);
  const double ratio = magnitude_at(f_ref + df) / magnitude_at(f_ref + 2.0 * df);
  const double crosstalk = magnitude_at(72.0);
  const bool pass =
      std::abs(ratio - 16.0) / 16.0 < 0.05 && crosstalk < 1e-3;
  report(7, "lock-in filter law", pass,
         fmt("octave ratio %.2f (16 +- 5%%), w1->2w1 crosstalk %.2e",
             ratio, crosstalk));
}

// 8. Noise-band plausibility on the shipped reference configuration,
// plus validation of the sigma estimator on i.i.d. draws.
static void criterion_8(const fs::path& config_dir) {
  const double t0 = now_seconds();
  const ExperimentConfig cfg =
      load_experiment_config(config_dir / "reference.json");
  RunProducts run = run_and_analyze(cfg);
  const TheoryCurve theory =
      injected_theory_curve(cfg.forces, 0.85 * 160e-9, 1.15 * 200e-9, 24);
  const RunSummary summary =
      summarize_run(run.records, &theory, 160e-9, 200e-9);
  const double elapsed = now_seconds() - t0;

  // Estimator validation: i.i.d. Gaussian residuals with sigma 2.5.
  std::mt19937_64 rng(99);
  std::normal_distribution<double> gauss(0.0, 2.5);
  std::vector<double> d_syn, g_syn;
  const int n_syn = 400;
  for (int i = 0; i < n_syn; ++i) {
    d_syn.push_back(160e-9 + 40e-9 * i / (n_syn - 1.0));
    g_syn.push_back(theory.interpolate(d_syn.back()) + gauss(rng));
  }
  const ResidualStats syn =
      residual_stats(d_syn, g_syn, theory, 150e-9, 210e-9);
  const double se = 2.5 / std::sqrt(2.0 * (n_syn - 1.0));
  const bool estimator_ok = std::abs(syn.sigma - 2.5) < 3.0 * se;

  const bool pass = summary.residual_sigma >= 1.5 &&
                    summary.residual_sigma <= 3.5 &&
                    summary.residual_count >= 30 && estimator_ok &&
                    elapsed < 900.0;
  report(8, "noise-band plausibility", pass,
         fmt("sigma = %.2f N/m^2 over %d records in [160,200] nm "
             "(band [1.5,3.5]); estimator %.2f vs 2.5 +- %.2f; %.0f s",
             summary.residual_sigma, summary.residual_count, syn.sigma,
             3.0 * se, elapsed));

  // Second half of criterion 4: statistical recovery of the injected
  // log profile on the noisy run. Records are correlated over the
  // filter and servo time constants, so the independent-sample fit
  // sigma is inflated by the effective correlation length.
  const V0Fit& fit = summary.v0_fit;
  const double tau_corr = cfg.lockin_2omega1.filter_stages *
                              cfg.lockin_2omega1.rc_time +
                          cfg.servos.v0_loop_tau;
  const double corr_records =
      std::max(1.0, tau_corr * cfg.protocol.record_rate);
  const double sig_a = fit.sigma_a * std::sqrt(corr_records);
  const double sig_b = fit.sigma_b * std::sqrt(corr_records);
  const bool fit_ok =
      std::abs(fit.a - cfg.forces.residual_potential.log_coeff) <
          3.0 * sig_a &&
      std::abs(fit.b - cfg.forces.residual_potential.offset) < 3.0 * sig_b;
  report(4, "V0 log-fit recovery", fit_ok,
         fmt("a = %.5f +- %.5f (inj %.5f), b = %.4f +- %.4f (inj %.4f)",
             fit.a, sig_a, cfg.forces.residual_potential.log_coeff, fit.b,
             sig_b, cfg.forces.residual_potential.offset));
}

// 9. Simulator physics sanity: static deflection, resonant
// amplification, integrator convergence.
static void criterion_9() {
  CantileverParams cant;
  // Static deflection.
  DampedOscillator osc(cant);
  const double force = 1e-9;
  const double dt = 1.0 / 120000.0;
  const double t_static =
      10.0 * cant.quality_factor / cant.resonance_frequency;
  for (double t = 0.0; t < t_static; t += dt) {
    osc.step(t, dt, [&](double, double, double) { return force; });
  }
  const double static_err =
      std::abs(osc.position() - force / cant.spring_constant) /
      (force / cant.spring_constant);

  // Resonant amplification.
  DampedOscillator res(cant);
  const double f0 = cant.resonance_frequency;
  const double drive = 1e-12;
  const auto sine = [&](double t, double, double) {
    return drive * std::cos(2.0 * pi * f0 * t);
  };
  const double dt_res = 1.0 / 240000.0;
  double t = 0.0;
  const double t_settle = 60.0 * cant.quality_factor / (pi * f0);
  while (t < t_settle) {
    res.step(t, dt_res, sine);
    t += dt_res;
  }
  double sum2 = 0.0;
  std::size_t cnt = 0;
  while (t < t_settle + 10.0 / f0) {
    res.step(t, dt_res, sine);
    sum2 += res.position() * res.position();
    ++cnt;
    t += dt_res;
  }
  const double amp = std::sqrt(2.0 * sum2 / cnt);
  const double amp_want =
      cant.quality_factor * drive / cant.spring_constant;
  const double res_err = std::abs(amp - amp_want) / amp_want;

  // Integrator convergence under step halving on a full mini scan.
  ExperimentConfig cfg;
  cfg.protocol.half_period = 1.0;
  cfg.protocol.n_scans = 1;
  cfg.protocol.contact_duration = 1.0;
  cfg.forces.casimir_model = CasimirModel::kIdealMirror;
  cfg.forces.noise.photodiode_density = 0.0;
  cfg.protocol.ode_substeps = 4;
  ExperimentRun run_a(cfg);
  const ScanResult a = run_a.run_next_scan();
  cfg.protocol.ode_substeps = 8;
  ExperimentRun run_b(cfg);
  const ScanResult b = run_b.run_next_scan();
  double diff2 = 0.0, ref2 = 0.0;
  for (std::size_t i = 0; i < a.stream.size(); ++i) {
    const double e = a.stream.x_true[i] - b.stream.x_true[i];
    diff2 += e * e;
    ref2 += b.stream.x_true[i] * b.stream.x_true[i];
  }
  const double conv = std::sqrt(diff2 / ref2);

  const bool pass = static_err < 1e-3 && res_err < 0.02 && conv < 1e-4;
  report(9, "simulator physics", pass,
         fmt("static %.2e (<1e-3), resonance %.3f%% (<2%%), "
             "step-halving %.2e (<1e-4)",
             static_err, 100.0 * res_err, conv));
}

// 10. Byte determinism of the command line interface.
static void criterion_10(const fs::path& config_dir) {
  const std::string cli = CASIM_CLI_PATH;
  const fs::path tmp =
      fs::temp_directory_path() /
      ("casim_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(tmp);
  const std::string cfg = (config_dir / "demo.json").string();
  const auto shell = [&](const std::string& args) {
    const std::string cmd = cli + " " + args + " >/dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  bool pass = true;
  std::string detail = "simulate/theory/analyze re-runs byte-identical";
  for (const char* sub : {"a", "b"}) {
    if (shell("simulate --config " + cfg + " --seed 31415 --out " +
              (tmp / sub).string()) != 0) {
      pass = false;
      detail = "simulate failed";
    }
  }
  if (pass) {
    for (const char* f :
         {"scan_00.csv", "scan_00_servo.csv", "contact.csv",
          "run_meta.json"}) {
      if (slurp(tmp / "a" / f) != slurp(tmp / "b" / f)) {
        pass = false;
        detail = std::string("mismatch in ") + f;
      }
    }
  }
  if (pass) {
    for (const char* sub : {"ta", "tb"}) {
      if (shell("theory --config " + cfg +
                " --dmin 50e-9 --dmax 200e-9 --n 8 --out " +
                (tmp / sub).string()) != 0) {
        pass = false;
        detail = "theory failed";
      }
    }
    if (pass &&
        slurp(tmp / "ta/theory.csv") != slurp(tmp / "tb/theory.csv")) {
      pass = false;
      detail = "theory.csv mismatch";
    }
  }
  if (pass) {
    for (const char* sub : {"ra", "rb"}) {
      if (shell("analyze " + (tmp / "a/scan_00.csv").string() +
                " --config " + cfg + " --out " + (tmp / sub).string()) !=
          0) {
        pass = false;
        detail = "analyze failed";
      }
    }
    if (pass && slurp(tmp / "ra/scan_00_record.csv") !=
                    slurp(tmp / "rb/scan_00_record.csv")) {
      pass = false;
      detail = "record csv mismatch";
    }
    if (pass && slurp(tmp / "ra/summary.json") !=
                    slurp(tmp / "rb/summary.json")) {
      pass = false;
      detail = "summary mismatch";
    }
  }
  fs::remove_all(tmp);
  report(10, "determinism", pass, detail);
}

int main() {
  const fs::path config_dir = fs::path(CASIM_SOURCE_DIR) / "configs";
  try {
    criterion_1();
    criterion_2();
    criteria_3_4_5(config_dir);
    criterion_6();
    criterion_7();
    criterion_8(config_dir);
    criterion_9();
    criterion_10(config_dir);
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance suite aborted: %s\n", e.what());
    return 1;
  }
  if (g_failures == 0) {
    std::printf("all acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d criterion(s) failed\n", g_failures);
  return 1;
}
