#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "casim/constants.hpp"
#include "casim/dsp.hpp"
#include "casim/errors.hpp"
#include "casim/instrument.hpp"

using namespace casim;
using constants::pi;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.protocol.half_period = 2.0;
  cfg.protocol.n_scans = 1;
  cfg.protocol.contact_duration = 3.0;
  cfg.protocol.settle_skip = 2.0;
  cfg.forces.casimir_model = CasimirModel::kIdealMirror;
  cfg.forces.noise.photodiode_density = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("electrostatic force closed form") {
  CHECK(electrostatic_force(0.0, 100e-9, 100e-6) == 0.0);
  CHECK(electrostatic_force(1.0, 100e-9, 100e-6) ==
        doctest::Approx(2.7816e-8).epsilon(1e-4));
  const double f1 = electrostatic_force(0.5, 80e-9, 100e-6);
  const double f2 = electrostatic_force(1.0, 80e-9, 100e-6);
  CHECK(f2 == doctest::Approx(4.0 * f1));
  CHECK_THROWS_AS(electrostatic_force(1.0, 0.0, 100e-6), ConfigError);
}

TEST_CASE("interferometer signal") {
  InterferometerParams p;
  p.midpoint = 1.2;
  p.visibility = 0.7;
  p.wavelength = 1.5531e-6;
  p.phase_offset = 0.3;
  p.rest_gap = 100e-6;

  const double gap = 33.3e-6;
  CHECK(interferometer_signal(p, gap) ==
        doctest::Approx(interferometer_signal(p, gap + p.wavelength / 2.0))
            .epsilon(1e-12));
  for (double g = 10e-6; g < 11e-6; g += 37e-9) {
    const double w = interferometer_signal(p, g);
    CHECK(w >= p.midpoint * (1.0 - p.visibility) - 1e-12);
    CHECK(w <= p.midpoint * (1.0 + p.visibility) + 1e-12);
  }
  // Zero visibility pins the raw two-beam expression at the midpoint.
  InterferometerParams flat = p;
  flat.visibility = 0.0;
  CHECK(flat.signal(12e-6) == doctest::Approx(p.midpoint));
  CHECK(flat.signal(55e-6) == doctest::Approx(p.midpoint));
}

TEST_CASE("wavelength tuning to quadrature") {
  InterferometerParams p;
  LaserRange range;
  const double gap = p.rest_gap;
  const double lambda = tune_to_quadrature(p, range, gap);
  CHECK(lambda >= range.wavelength_min);
  CHECK(lambda <= range.wavelength_max);
  const double theta = 4.0 * pi * gap / lambda + p.phase_offset;
  CHECK(std::abs(std::cos(theta)) < 1e-6);

  // Positive slope versus deflection toward the plate.
  InterferometerParams tuned = p;
  tuned.wavelength = lambda;
  const double w0 = tuned.signal(gap);
  const double w1 = tuned.signal(gap - 1e-10);  // x grows, gap shrinks
  CHECK(w1 > w0);

  // Idempotence at a point already in quadrature.
  CHECK(tune_to_quadrature(tuned, range, gap) == lambda);

  // The quadrature slope matches a finite difference.
  const double slope_fd = (tuned.signal(gap - 1e-12) - tuned.signal(gap)) /
                          1e-12;
  CHECK(slope_fd == doctest::Approx(tuned.quadrature_slope()).epsilon(1e-4));

  // A 1 um gap leaves less than a fringe of phase in the tuning span.
  CHECK_THROWS_AS(tune_to_quadrature(p, range, 1e-6), NumericalError);
}

TEST_CASE("piezo trajectory shape") {
  ScanProtocol p;
  p.half_period = 20.0;
  const double a = p.stage_mod_amplitude;
  CHECK(piezo_trajectory(0.0, p) == doctest::Approx(a));
  CHECK(piezo_trajectory(p.half_period, p) ==
        doctest::Approx(p.stroke +
                        a * std::cos(2.0 * pi * p.omega2 * p.half_period)));
  // Slow component is even around the turning point.
  for (const double t : {3.0, 7.5, 14.2}) {
    const double left = piezo_trajectory(t, p) -
                        a * std::cos(2.0 * pi * p.omega2 * t);
    const double tr = 2.0 * p.half_period - t;
    const double right = piezo_trajectory(tr, p) -
                         a * std::cos(2.0 * pi * p.omega2 * tr);
    CHECK(left == doctest::Approx(right).epsilon(1e-9));
  }
  CHECK_THROWS_AS(piezo_trajectory(-1.0, p), ConfigError);
  CHECK_THROWS_AS(piezo_trajectory(2.0 * p.half_period * p.n_scans + 1.0, p),
                  ConfigError);
}

TEST_CASE("squeeze film force") {
  SqueezeFilmParams sq;
  sq.enabled = true;
  const double R = 100e-6;
  CHECK(squeeze_film_force(100e-9, 0.0, sq, R) == 0.0);
  const double v = 2.0 * pi * 119.0 * 7.2e-9;
  const double f = squeeze_film_force(100e-9, v, sq, R);
  CHECK(f == doctest::Approx(-1.83e-10).epsilon(2e-2));
  CHECK(std::abs(squeeze_film_force(50e-9, v, sq, R)) ==
        doctest::Approx(2.0 * std::abs(f)));
  // Opposes the closing velocity in both directions.
  CHECK(squeeze_film_force(100e-9, -v, sq, R) > 0.0);
  CHECK_THROWS_AS(squeeze_film_force(0.0, v, sq, R), ConfigError);
  SqueezeFilmParams off;
  CHECK(squeeze_film_force(100e-9, v, off, R) == 0.0);
}

TEST_CASE("oscillator static deflection") {
  CantileverParams cant;
  DampedOscillator osc(cant);
  const double F = 1e-9;
  const double dt = 1.0 / 120000.0;
  const double t_end = 10.0 * cant.quality_factor / cant.resonance_frequency;
  for (double t = 0.0; t < t_end; t += dt) {
    osc.step(t, dt, [&](double, double, double) { return F; });
  }
  CHECK(osc.position() ==
        doctest::Approx(F / cant.spring_constant).epsilon(1e-3));
}

TEST_CASE("oscillator resonant amplification") {
  CantileverParams cant;
  DampedOscillator osc(cant);
  const double F = 1e-12;
  const double f0 = cant.resonance_frequency;
  const double dt = 1.0 / 240000.0;
  const auto force = [&](double t, double, double) {
    return F * std::cos(2.0 * pi * f0 * t);
  };
  const double t_settle = 60.0 * cant.quality_factor / (pi * f0);
  double t = 0.0;
  while (t < t_settle) {
    osc.step(t, dt, force);
    t += dt;
  }
  // Amplitude from the mean square over ten full periods.
  double sum2 = 0.0;
  std::size_t count = 0;
  const double t_meas = 10.0 / f0;
  while (t < t_settle + t_meas) {
    osc.step(t, dt, force);
    sum2 += osc.position() * osc.position();
    ++count;
    t += dt;
  }
  const double amplitude = std::sqrt(2.0 * sum2 / count);
  const double expected = cant.quality_factor * F / cant.spring_constant;
  CHECK(amplitude == doctest::Approx(expected).epsilon(0.02));
}

TEST_CASE("free ring-down loses energy monotonically") {
  CantileverParams cant;
  DampedOscillator osc(cant);
  osc.set_state(1e-9, 0.0);
  const double dt = 1.0 / 120000.0;
  double prev = osc.energy();
  for (int i = 0; i < 20000; ++i) {
    osc.step(i * dt, dt, [](double, double, double) { return 0.0; });
    const double e = osc.energy();
    CHECK(e <= prev * (1.0 + 1e-9));
    prev = e;
  }
  CHECK(prev < 1e-3 * 0.5 * cant.spring_constant * 1e-18);
}

TEST_CASE("scan with all forces off stays at rest") {
  ExperimentConfig cfg = small_config();
  cfg.forces.casimir_model = CasimirModel::kOff;
  cfg.forces.electrostatic_enabled = false;
  ExperimentRun run(cfg);
  const ScanResult result = run.run_next_scan();
  REQUIRE_FALSE(result.snapped_in);
  REQUIRE(result.stream.has_truth);
  double max_x = 0.0, min_pd = 1e300, max_pd = -1e300;
  for (std::size_t i = 0; i < result.stream.size(); ++i) {
    max_x = std::max(max_x, std::abs(result.stream.x_true[i]));
    min_pd = std::min(min_pd, result.stream.pd_ferrule[i]);
    max_pd = std::max(max_pd, result.stream.pd_ferrule[i]);
  }
  CHECK(max_x == 0.0);
  CHECK(max_pd - min_pd == 0.0);
}

TEST_CASE("noiseless photodiode equals the two-beam formula on the truth") {
  ExperimentConfig cfg = small_config();
  ExperimentRun run(cfg);
  InterferometerParams ferrule = cfg.ferrule;
  ferrule.wavelength = run.tuned_wavelength();
  const ScanResult result = run.run_next_scan();
  REQUIRE(result.stream.has_truth);
  for (std::size_t i = 0; i < result.stream.size(); i += 1701) {
    const double expected =
        ferrule.signal(ferrule.rest_gap - result.stream.x_true[i]);
    CHECK(result.stream.pd_ferrule[i] == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("streams are bit-identical for a fixed seed") {
  ExperimentConfig cfg = small_config();
  cfg.forces.noise.photodiode_density = 3.5e-6;
  cfg.forces.noise.seed = 99;
  ExperimentRun run_a(cfg);
  ExperimentRun run_b(cfg);
  const ScanResult a = run_a.run_next_scan();
  const ScanResult b = run_b.run_next_scan();
  REQUIRE(a.stream.size() == b.stream.size());
  CHECK(a.stream.pd_ferrule == b.stream.pd_ferrule);
  CHECK(a.stream.pd_barefiber == b.stream.pd_barefiber);
  CHECK(a.stream.v_applied == b.stream.v_applied);
  CHECK(run_a.contact_stream().pd_ferrule ==
        run_b.contact_stream().pd_ferrule);
}

TEST_CASE("photodiode stays inside the fringe envelope") {
  ExperimentConfig cfg = small_config();
  ExperimentRun run(cfg);
  const ScanResult r = run.run_next_scan();
  const double lo = cfg.barefiber.midpoint * (1.0 - cfg.barefiber.visibility);
  const double hi = cfg.barefiber.midpoint * (1.0 + cfg.barefiber.visibility);
  for (double v : r.stream.pd_barefiber) {
    CHECK(v >= lo - 1e-12);
    CHECK(v <= hi + 1e-12);
  }
}

TEST_CASE("integrator converges under step halving") {
  ExperimentConfig cfg = small_config();
  cfg.protocol.half_period = 1.0;
  cfg.protocol.ode_substeps = 4;
  ExperimentRun run_a(cfg);
  const ScanResult a = run_a.run_next_scan();
  cfg.protocol.ode_substeps = 8;
  ExperimentRun run_b(cfg);
  const ScanResult b = run_b.run_next_scan();
  REQUIRE(a.stream.size() == b.stream.size());
  double diff2 = 0.0, ref2 = 0.0;
  for (std::size_t i = 0; i < a.stream.size(); ++i) {
    const double d = a.stream.x_true[i] - b.stream.x_true[i];
    diff2 += d * d;
    ref2 += b.stream.x_true[i] * b.stream.x_true[i];
  }
  CHECK(std::sqrt(diff2 / ref2) < 1e-4);
}

TEST_CASE("snap-in terminates the scan with a marker") {
  ExperimentConfig cfg = small_config();
  cfg.forces.contact_offset = 20e-9;  // gradient exceeds the spring constant
  ExperimentRun run(cfg);
  const ScanResult r = run.run_next_scan();
  CHECK(r.snapped_in);
  CHECK(r.snap_time > 0.0);
  CHECK(r.stream.size() <
        static_cast<std::size_t>(2.0 * cfg.protocol.half_period *
                                 cfg.protocol.sampling_rate));
}

TEST_CASE("contact stream motion is antiphase with the stage drive") {
  ExperimentConfig cfg = small_config();
  ExperimentRun run(cfg);
  const SampleStream& contact = run.contact_stream();
  const double phase = align_phase_at_contact(
      contact.t, contact.pd_ferrule, cfg.protocol.omega2,
      cfg.lockin_omega2.rc_time, cfg.lockin_omega2.filter_stages);
  // The stage pushing the cantilever back flips the sign of the
  // photodiode response relative to the stage modulation.
  CHECK(std::abs(std::abs(phase) - pi) < 0.05);
}

TEST_CASE("config validation rejects inconsistent setups") {
  ExperimentConfig cfg = small_config();
  cfg.protocol.sampling_rate = 20000.0;  // below 10 x f0
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.protocol.omega2 = 150.0;  // above 2 omega1
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.cantilever.quality_factor = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
