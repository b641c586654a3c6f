#include "casim/materials.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "casim/constants.hpp"
#include "casim/errors.hpp"
#include "casim/quadrature.hpp"

namespace casim {

namespace {

// Low-frequency extension of eps'' below the first table row.
// Metallic data gets a Drude tail K / (w (w^2 + gamma^2)) fitted through
// the two lowest rows; data falling toward zero (or where the Drude fit
// is degenerate) gets a linear ramp through the first row.
struct LowFreqTail {
  enum class Kind { kNone, kDrude, kLinear };
  Kind kind = Kind::kNone;
  double strength = 0.0;  // K for Drude, slope for linear
  double gamma = 0.0;
};

LowFreqTail fit_tail(const OpticalTable& t) {
  const double w1 = t.omega[0], e1 = t.eps_imag[0];
  const double w2 = t.omega[1], e2 = t.eps_imag[1];
  LowFreqTail tail;
  if (e1 <= 0.0) {
    return tail;  // no absorption at the low edge
  }
  const double p1 = e1 * w1;
  const double p2 = e2 * w2;
  if (p1 > p2) {  // eps'' steeper than 1/w: metallic-like edge
    const double g2 = (p2 * w2 * w2 - p1 * w1 * w1) / (p1 - p2);
    if (std::isfinite(g2) && g2 > 0.0) {
      tail.kind = LowFreqTail::Kind::kDrude;
      tail.gamma = std::sqrt(g2);
      tail.strength = p1 * (w1 * w1 + g2);
      return tail;
    }
  }
  tail.kind = LowFreqTail::Kind::kLinear;
  tail.strength = e1 / w1;
  return tail;
}

// Exact integral of w (a + b w) / (w^2 + xi^2) over [w1, w2].
double panel_integral(double w1, double w2, double a, double b, double xi) {
  if (xi == 0.0) {
    return a * std::log(w2 / w1) + b * (w2 - w1);
  }
  const double xi2 = xi * xi;
  const double log_term =
      0.5 * a * std::log((w2 * w2 + xi2) / (w1 * w1 + xi2));
  const double atan_term =
      b * ((w2 - w1) - xi * (std::atan(w2 / xi) - std::atan(w1 / xi)));
  return log_term + atan_term;
}

double table_integral(const OpticalTable& t, double xi) {
  double sum = 0.0;
  for (size_t i = 0; i + 1 < t.omega.size(); ++i) {
    const double w1 = t.omega[i], w2 = t.omega[i + 1];
    const double b = (t.eps_imag[i + 1] - t.eps_imag[i]) / (w2 - w1);
    const double a = t.eps_imag[i] - b * w1;
    sum += panel_integral(w1, w2, a, b, xi);
  }
  return sum;
}

// Integral of w eps''_tail(w) / (w^2 + xi^2) over [0, w_edge].
double tail_integral(const LowFreqTail& tail, double w_edge, double xi) {
  switch (tail.kind) {
    case LowFreqTail::Kind::kNone:
      return 0.0;
    case LowFreqTail::Kind::kLinear:
      if (xi == 0.0) {
        return tail.strength * w_edge;
      }
      return tail.strength * (w_edge - xi * std::atan(w_edge / xi));
    case LowFreqTail::Kind::kDrude: {
      // K / ((w^2 + gamma^2)(w^2 + xi^2)), finite at w = 0.
      const double g2 = tail.gamma * tail.gamma;
      const double xi2 = xi * xi;
      return tail.strength *
             integrate_adaptive(
                 [&](double w) {
                   return 1.0 / ((w * w + g2) * (w * w + xi2));
                 },
                 0.0, w_edge, 1e-10);
    }
  }
  return 0.0;
}

}  // namespace

void OpticalTable::validate() const {
  if (omega.size() < 2 || omega.size() != eps_imag.size()) {
    throw ConfigError("optical table needs at least 2 rows");
  }
  for (size_t i = 0; i < omega.size(); ++i) {
    if (!(omega[i] > 0.0) || !std::isfinite(omega[i])) {
      throw ConfigError("optical table frequencies must be positive");
    }
    if (i > 0 && !(omega[i] > omega[i - 1])) {
      throw ConfigError(
          "optical table frequencies must be strictly increasing");
    }
    if (!(eps_imag[i] >= 0.0) || !std::isfinite(eps_imag[i])) {
      throw ConfigError("optical table eps'' must be non-negative");
    }
  }
}

OpticalTable OpticalTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open optical table: " + path.string());
  }
  OpticalTable t;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line.erase(hash);
    }
    std::istringstream row(line);
    double w, e;
    if (!(row >> w)) {
      continue;  // blank or comment-only line
    }
    if (!(row >> e)) {
      throw ConfigError("optical table " + path.string() + " line " +
                        std::to_string(lineno) + ": expected two columns");
    }
    t.omega.push_back(w);
    t.eps_imag.push_back(e);
  }
  t.validate();
  return t;
}

struct DielectricModel::Impl {
  enum class Kind { kVacuum, kPerfectConductor, kDrude, kTabulated };
  Kind kind = Kind::kVacuum;
  double plasma_frequency = 0.0;
  double relaxation_rate = 0.0;
  OpticalTable table;
  LowFreqTail tail;
};

DielectricModel DielectricModel::vacuum() {
  auto impl = std::make_shared<Impl>();
  impl->kind = Impl::Kind::kVacuum;
  return DielectricModel(std::move(impl));
}

DielectricModel DielectricModel::perfect_conductor() {
  auto impl = std::make_shared<Impl>();
  impl->kind = Impl::Kind::kPerfectConductor;
  return DielectricModel(std::move(impl));
}

DielectricModel DielectricModel::drude(double plasma_frequency,
                                       double relaxation_rate) {
  if (!(plasma_frequency > 0.0) || !(relaxation_rate >= 0.0)) {
    throw ConfigError(
        "drude model needs plasma_frequency > 0 and relaxation_rate >= 0");
  }
  auto impl = std::make_shared<Impl>();
  impl->kind = Impl::Kind::kDrude;
  impl->plasma_frequency = plasma_frequency;
  impl->relaxation_rate = relaxation_rate;
  return DielectricModel(std::move(impl));
}

DielectricModel DielectricModel::tabulated(OpticalTable table) {
  table.validate();
  auto impl = std::make_shared<Impl>();
  impl->kind = Impl::Kind::kTabulated;
  impl->table = std::move(table);
  impl->tail = fit_tail(impl->table);
  return DielectricModel(std::move(impl));
}

double DielectricModel::at_imaginary_frequency(double xi) const {
  if (!(xi > 0.0) || !std::isfinite(xi)) {
    throw ConfigError("permittivity requires xi > 0");
  }
  switch (impl_->kind) {
    case Impl::Kind::kVacuum:
      return 1.0;
    case Impl::Kind::kPerfectConductor:
      return std::numeric_limits<double>::infinity();
    case Impl::Kind::kDrude: {
      const double wp = impl_->plasma_frequency;
      const double g = impl_->relaxation_rate;
      return 1.0 + wp * wp / (xi * (xi + g));
    }
    case Impl::Kind::kTabulated:
      return 1.0 + (2.0 / constants::pi) *
                       (table_integral(impl_->table, xi) +
                        tail_integral(impl_->tail, impl_->table.omega[0], xi));
  }
  return 1.0;
}

bool DielectricModel::is_perfect_conductor() const {
  return impl_->kind == Impl::Kind::kPerfectConductor;
}

bool DielectricModel::is_vacuum() const {
  return impl_->kind == Impl::Kind::kVacuum;
}

bool DielectricModel::diverges_at_zero() const {
  switch (impl_->kind) {
    case Impl::Kind::kVacuum:
      return false;
    case Impl::Kind::kPerfectConductor:
      return true;
    case Impl::Kind::kDrude:
      return true;
    case Impl::Kind::kTabulated:
      return impl_->tail.kind == LowFreqTail::Kind::kDrude;
  }
  return false;
}

double DielectricModel::static_permittivity() const {
  if (diverges_at_zero()) {
    throw NumericalError("static permittivity requested for a metallic model");
  }
  if (impl_->kind == Impl::Kind::kVacuum) {
    return 1.0;
  }
  return 1.0 + (2.0 / constants::pi) *
                   (table_integral(impl_->table, 0.0) +
                    tail_integral(impl_->tail, impl_->table.omega[0], 0.0));
}

double permittivity_at_imaginary_frequency(const DielectricModel& model,
                                           double xi) {
  return model.at_imaginary_frequency(xi);
}

double kramers_kronig_to_imaginary_axis(const OpticalTable& table, double xi) {
  table.validate();
  if (!(xi > 0.0)) {
    throw ConfigError("kramers_kronig_to_imaginary_axis requires xi > 0");
  }
  return DielectricModel::tabulated(table).at_imaginary_frequency(xi);
}

}  // namespace casim
