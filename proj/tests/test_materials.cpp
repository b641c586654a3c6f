#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <vector>

#include "casim/errors.hpp"
#include "casim/materials.hpp"

using namespace casim;

namespace {

constexpr double kGoldPlasma = 1.37e16;
constexpr double kGoldRelax = 5.32e13;

OpticalTable log_sampled(double w_lo, double w_hi, int n,
                         double (*eps2)(double)) {
  OpticalTable t;
  const double l0 = std::log(w_lo);
  const double step = (std::log(w_hi) - l0) / (n - 1);
  for (int i = 0; i < n; ++i) {
    const double w = std::exp(l0 + i * step);
    t.omega.push_back(w);
    t.eps_imag.push_back(eps2(w));
  }
  return t;
}

// Single Lorentz oscillator: absorption and its exact dispersion
// transform.
constexpr double kLorentzW0 = 5e15;
constexpr double kLorentzGamma = 5e14;
constexpr double kLorentzWp = 1e16;

double lorentz_eps2(double w) {
  const double num = kLorentzWp * kLorentzWp * kLorentzGamma * w;
  const double d1 = kLorentzW0 * kLorentzW0 - w * w;
  return num / (d1 * d1 + kLorentzGamma * kLorentzGamma * w * w);
}

double lorentz_eps_imag_axis(double xi) {
  return 1.0 + kLorentzWp * kLorentzWp /
                   (kLorentzW0 * kLorentzW0 + xi * xi + kLorentzGamma * xi);
}

double drude_eps2(double w) {
  return kGoldPlasma * kGoldPlasma * kGoldRelax /
         (w * (w * w + kGoldRelax * kGoldRelax));
}

}  // namespace

TEST_CASE("drude permittivity closed form") {
  const auto gold = DielectricModel::drude(kGoldPlasma, kGoldRelax);
  const double xi = 1.0e15;
  const double expected =
      1.0 + kGoldPlasma * kGoldPlasma / (xi * (xi + kGoldRelax));
  CHECK(gold.at_imaginary_frequency(xi) == doctest::Approx(expected));
  CHECK(gold.at_imaginary_frequency(xi) == doctest::Approx(179.2).epsilon(1e-3));
  // High-frequency transparency.
  CHECK(gold.at_imaginary_frequency(1e22) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(gold.diverges_at_zero());
}

TEST_CASE("vacuum and perfect conductor") {
  const auto vac = DielectricModel::vacuum();
  CHECK(vac.at_imaginary_frequency(1e10) == 1.0);
  CHECK(vac.at_imaginary_frequency(1e18) == 1.0);
  const auto pec = DielectricModel::perfect_conductor();
  CHECK(std::isinf(pec.at_imaginary_frequency(1e15)));
  CHECK(pec.diverges_at_zero());
}

TEST_CASE("invalid inputs") {
  const auto gold = DielectricModel::drude(kGoldPlasma, kGoldRelax);
  CHECK_THROWS_AS(gold.at_imaginary_frequency(0.0), ConfigError);
  CHECK_THROWS_AS(gold.at_imaginary_frequency(-1.0), ConfigError);
  CHECK_THROWS_AS(DielectricModel::drude(-1.0, 1.0), ConfigError);
  OpticalTable empty;
  CHECK_THROWS_AS(empty.validate(), ConfigError);
  OpticalTable bad;
  bad.omega = {2e15, 1e15};
  bad.eps_imag = {1.0, 1.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  OpticalTable neg;
  neg.omega = {1e15, 2e15};
  neg.eps_imag = {1.0, -1.0};
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("kramers-kronig: zero absorption gives vacuum response") {
  OpticalTable t;
  t.omega = {1e14, 1e15, 1e16};
  t.eps_imag = {0.0, 0.0, 0.0};
  CHECK(kramers_kronig_to_imaginary_axis(t, 1e15) == doctest::Approx(1.0));
  CHECK_THROWS_AS(kramers_kronig_to_imaginary_axis(t, 0.0), ConfigError);
}

TEST_CASE("kramers-kronig matches the analytic lorentz oscillator") {
  const auto table =
      log_sampled(kLorentzW0 / 100.0, kLorentzW0 * 100.0, 8000, lorentz_eps2);
  for (const double xi : {kLorentzW0 / 10.0, kLorentzW0 / 3.0, kLorentzW0,
                          3.0 * kLorentzW0, 10.0 * kLorentzW0}) {
    const double got = kramers_kronig_to_imaginary_axis(table, xi);
    const double want = lorentz_eps_imag_axis(xi);
    CHECK(std::abs(got - want) / want < 0.01);
  }
}

TEST_CASE("kramers-kronig consistent with the drude code path") {
  const auto gold = DielectricModel::drude(kGoldPlasma, kGoldRelax);
  const double w_max = 1000.0 * kGoldRelax;
  const auto table =
      log_sampled(kGoldRelax / 100.0, w_max, 12000, drude_eps2);
  const auto tabulated = DielectricModel::tabulated(table);
  CHECK(tabulated.diverges_at_zero());
  for (const double xi :
       {10.0 * kGoldRelax, 30.0 * kGoldRelax, 0.1 * w_max}) {
    const double got = tabulated.at_imaginary_frequency(xi);
    const double want = gold.at_imaginary_frequency(xi);
    CHECK(std::abs(got - want) / want < 0.02);
  }
}

TEST_CASE("permittivity is >= 1 and non-increasing in xi") {
  const auto gold = DielectricModel::drude(kGoldPlasma, kGoldRelax);
  const auto lorentz = DielectricModel::tabulated(
      log_sampled(kLorentzW0 / 100.0, kLorentzW0 * 100.0, 2000, lorentz_eps2));
  for (const auto& model : {gold, lorentz}) {
    double prev = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 120; ++i) {
      const double xi = 1e12 * std::pow(10.0, 6.0 * i / 119.0);
      const double eps = model.at_imaginary_frequency(xi);
      CHECK(eps >= 1.0);
      CHECK(eps <= prev * (1.0 + 1e-12));
      prev = eps;
    }
  }
}

TEST_CASE("kramers-kronig invariant under table density doubling") {
  const auto coarse =
      log_sampled(kLorentzW0 / 100.0, kLorentzW0 * 100.0, 10000, lorentz_eps2);
  const auto fine =
      log_sampled(kLorentzW0 / 100.0, kLorentzW0 * 100.0, 20000, lorentz_eps2);
  for (const double xi : {kLorentzW0 / 10.0, kLorentzW0, 10.0 * kLorentzW0}) {
    const double a = kramers_kronig_to_imaginary_axis(coarse, xi);
    const double b = kramers_kronig_to_imaginary_axis(fine, xi);
    CHECK(std::abs(a - b) / std::abs(a) < 1e-6);
  }
}

TEST_CASE("optical table file loader") {
  const auto path = std::filesystem::temp_directory_path() /
                    "casim_test_table.dat";
  {
    std::ofstream out(path);
    out << "# sample optical data\n";
    out << "1.0e15  0.5\n";
    out << "2.0e15  0.4   # trailing comment\n";
    out << "\n";
    out << "3.0e15  0.1\n";
  }
  const OpticalTable t = OpticalTable::load(path);
  REQUIRE(t.omega.size() == 3);
  CHECK(t.omega[1] == doctest::Approx(2.0e15));
  CHECK(t.eps_imag[2] == doctest::Approx(0.1));

  {
    std::ofstream out(path);
    out << "2.0e15 0.4\n1.0e15 0.5\n";
  }
  CHECK_THROWS_AS(OpticalTable::load(path), ConfigError);
  std::filesystem::remove(path);
}
