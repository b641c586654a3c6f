#include "casim/config.hpp"

#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "casim/errors.hpp"
#include "csv_util.hpp"

namespace casim {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Tracks which keys a section consumed, so leftovers can be reported by
// name. Owns its json so callers may pass temporaries.
class Section {
 public:
  Section(json j, std::string path)
      : j_(std::move(j)), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigError("config: " + path_ + " must be an object");
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      throw ConfigError("config: missing key \"" + path_ + "." + key + "\"");
    }
    return j_.at(key);
  }

  double number(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number()) {
      throw ConfigError("config: \"" + path_ + "." + key +
                        "\" must be a number");
    }
    return v.get<double>();
  }

  double number_or(const std::string& key, double fallback) {
    return has(key) ? number(key) : fallback;
  }

  long integer(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_integer()) {
      throw ConfigError("config: \"" + path_ + "." + key +
                        "\" must be an integer");
    }
    return v.get<long>();
  }

  long integer_or(const std::string& key, long fallback) {
    return has(key) ? integer(key) : fallback;
  }

  bool boolean_or(const std::string& key, bool fallback) {
    if (!has(key)) {
      return fallback;
    }
    const json& v = at(key);
    if (!v.is_boolean()) {
      throw ConfigError("config: \"" + path_ + "." + key +
                        "\" must be a boolean");
    }
    return v.get<bool>();
  }

  std::string text(const std::string& key) {
    const json& v = at(key);
    if (!v.is_string()) {
      throw ConfigError("config: \"" + path_ + "." + key +
                        "\" must be a string");
    }
    return v.get<std::string>();
  }

  std::string text_or(const std::string& key, const std::string& fallback) {
    return has(key) ? text(key) : fallback;
  }

  json object_or_empty(const std::string& key) {
    return has(key) ? at(key) : json::object();
  }

  const std::string& path() const { return path_; }

  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError("config: unknown key \"" + path_ + "." + it.key() +
                          "\"");
      }
    }
  }

 private:
  json j_;
  std::string path_;
  std::set<std::string> seen_;
};

DielectricModel parse_material(const json& j, const std::string& path,
                               const std::filesystem::path& base_dir) {
  Section sec(j, path);
  const std::string model = sec.text("model");
  DielectricModel out = DielectricModel::vacuum();
  if (model == "vacuum") {
    // no extra keys
  } else if (model == "perfect_conductor") {
    out = DielectricModel::perfect_conductor();
  } else if (model == "drude") {
    out = DielectricModel::drude(sec.number("plasma_frequency_rad_per_s"),
                                 sec.number("relaxation_rate_rad_per_s"));
  } else if (model == "tabulated") {
    std::filesystem::path table(sec.text("table_path"));
    if (table.is_relative()) {
      table = base_dir / table;
    }
    out = DielectricModel::tabulated(OpticalTable::load(table));
  } else {
    throw ConfigError("config: \"" + path + ".model\" must be one of "
                      "vacuum|perfect_conductor|drude|tabulated");
  }
  sec.finish();
  return out;
}

LifshitzConfig parse_lifshitz(const json& j, const std::string& path,
                              const std::filesystem::path& base_dir) {
  Section sec(j, path);
  LifshitzConfig cfg;
  cfg.temperature = sec.number_or("temperature_K", cfg.temperature);
  if (sec.has("material_a")) {
    cfg.material_a = parse_material(sec.at("material_a"), path + ".material_a",
                                    base_dir);
  }
  if (sec.has("material_b")) {
    cfg.material_b = parse_material(sec.at("material_b"), path + ".material_b",
                                    base_dir);
  }
  if (sec.has("medium")) {
    cfg.medium = parse_material(sec.at("medium"), path + ".medium", base_dir);
  }
  cfg.matsubara_rel_cutoff =
      sec.number_or("matsubara_rel_cutoff", cfg.matsubara_rel_cutoff);
  cfg.quadrature_rel_tol =
      sec.number_or("quadrature_rel_tol", cfg.quadrature_rel_tol);
  sec.finish();
  return cfg;
}

InterferometerParams parse_interferometer(const json& j,
                                          const std::string& path,
                                          InterferometerParams defaults) {
  Section sec(j, path);
  defaults.midpoint = sec.number_or("midpoint_V", defaults.midpoint);
  defaults.visibility = sec.number_or("visibility", defaults.visibility);
  defaults.wavelength = sec.number_or("wavelength_m", defaults.wavelength);
  defaults.phase_offset =
      sec.number_or("phase_offset_rad", defaults.phase_offset);
  defaults.rest_gap = sec.number_or("rest_gap_m", defaults.rest_gap);
  sec.finish();
  return defaults;
}

LockInConfig parse_lockin(const json& j, const std::string& path,
                          LockInConfig defaults) {
  Section sec(j, path);
  defaults.rc_time = sec.number_or("rc_time_s", defaults.rc_time);
  defaults.filter_stages = static_cast<int>(
      sec.integer_or("filter_stages", defaults.filter_stages));
  sec.finish();
  return defaults;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config: " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  const std::filesystem::path base_dir = path.parent_path();

  ExperimentConfig cfg;
  Section root(j, "");

  {
    Section sec(root.object_or_empty("cantilever"), "cantilever");
    cfg.cantilever.spring_constant =
        sec.number_or("spring_constant_N_per_m", cfg.cantilever.spring_constant);
    cfg.cantilever.resonance_frequency = sec.number_or(
        "resonance_frequency_Hz", cfg.cantilever.resonance_frequency);
    cfg.cantilever.quality_factor =
        sec.number_or("quality_factor", cfg.cantilever.quality_factor);
    sec.finish();
  }
  if (root.has("ferrule_interferometer")) {
    cfg.ferrule = parse_interferometer(root.at("ferrule_interferometer"),
                                       "ferrule_interferometer", cfg.ferrule);
  }
  if (root.has("barefiber_interferometer")) {
    cfg.barefiber =
        parse_interferometer(root.at("barefiber_interferometer"),
                             "barefiber_interferometer", cfg.barefiber);
  }
  {
    Section sec(root.object_or_empty("laser"), "laser");
    cfg.laser.wavelength_min =
        sec.number_or("wavelength_min_m", cfg.laser.wavelength_min);
    cfg.laser.wavelength_max =
        sec.number_or("wavelength_max_m", cfg.laser.wavelength_max);
    sec.finish();
  }
  {
    Section sec(root.object_or_empty("protocol"), "protocol");
    ScanProtocol& p = cfg.protocol;
    p.half_period = sec.number_or("half_period_s", p.half_period);
    p.stroke = sec.number_or("stroke_m", p.stroke);
    p.omega1 = sec.number_or("omega1_Hz", p.omega1);
    p.omega2 = sec.number_or("omega2_Hz", p.omega2);
    p.stage_mod_amplitude =
        sec.number_or("stage_mod_amplitude_m", p.stage_mod_amplitude);
    p.force_rms_target =
        sec.number_or("force_rms_target_N", p.force_rms_target);
    p.sampling_rate = sec.number_or("sampling_rate_Hz", p.sampling_rate);
    p.n_scans = static_cast<int>(sec.integer_or("n_scans", p.n_scans));
    p.ode_substeps =
        static_cast<int>(sec.integer_or("ode_substeps", p.ode_substeps));
    p.record_rate = sec.number_or("record_rate_Hz", p.record_rate);
    p.settle_skip = sec.number_or("settle_skip_s", p.settle_skip);
    p.contact_duration =
        sec.number_or("contact_duration_s", p.contact_duration);
    sec.finish();
  }
  {
    Section sec(root.object_or_empty("forces"), "forces");
    ForceStack& f = cfg.forces;
    if (sec.has("casimir")) {
      Section cas(sec.at("casimir"), "forces.casimir");
      const std::string model = cas.text("model");
      if (model == "off") {
        f.casimir_model = CasimirModel::kOff;
      } else if (model == "ideal_mirror") {
        f.casimir_model = CasimirModel::kIdealMirror;
      } else if (model == "lifshitz") {
        f.casimir_model = CasimirModel::kLifshitz;
        if (cas.has("lifshitz")) {
          f.lifshitz = parse_lifshitz(cas.at("lifshitz"),
                                      "forces.casimir.lifshitz", base_dir);
        }
      } else {
        throw ConfigError("config: \"forces.casimir.model\" must be "
                          "off|ideal_mirror|lifshitz");
      }
      if (model != "lifshitz" && cas.has("lifshitz")) {
        throw ConfigError("config: \"forces.casimir.lifshitz\" given for a "
                          "non-lifshitz model");
      }
      cas.finish();
    }
    f.sphere_radius = sec.number_or("sphere_radius_m", f.sphere_radius);
    f.contact_offset = sec.number_or("contact_offset_m", f.contact_offset);
    f.electrostatic_enabled =
        sec.boolean_or("electrostatic_enabled", f.electrostatic_enabled);
    if (sec.has("residual_potential")) {
      Section rp(sec.at("residual_potential"), "forces.residual_potential");
      f.residual_potential.log_coeff =
          rp.number_or("log_coeff_V", f.residual_potential.log_coeff);
      f.residual_potential.offset =
          rp.number_or("offset_V", f.residual_potential.offset);
      rp.finish();
    }
    if (sec.has("squeeze_film")) {
      Section sq(sec.at("squeeze_film"), "forces.squeeze_film");
      f.squeeze_film.enabled =
          sq.boolean_or("enabled", f.squeeze_film.enabled);
      f.squeeze_film.viscosity =
          sq.number_or("viscosity_Pa_s", f.squeeze_film.viscosity);
      f.squeeze_film.geometry_coefficient = sq.number_or(
          "geometry_coefficient", f.squeeze_film.geometry_coefficient);
      sq.finish();
    }
    if (sec.has("noise")) {
      Section no(sec.at("noise"), "forces.noise");
      f.noise.photodiode_density = no.number_or(
          "photodiode_noise_V_per_sqrtHz", f.noise.photodiode_density);
      f.noise.seed = static_cast<std::uint64_t>(
          no.integer_or("seed", static_cast<long>(f.noise.seed)));
      no.finish();
    }
    f.constant_force = sec.number_or("constant_force_N", f.constant_force);
    sec.finish();
  }
  if (root.has("lockins")) {
    Section sec(root.at("lockins"), "lockins");
    if (sec.has("omega1")) {
      cfg.lockin_omega1 =
          parse_lockin(sec.at("omega1"), "lockins.omega1", cfg.lockin_omega1);
    }
    if (sec.has("two_omega1")) {
      cfg.lockin_2omega1 = parse_lockin(sec.at("two_omega1"),
                                        "lockins.two_omega1",
                                        cfg.lockin_2omega1);
    }
    if (sec.has("omega2")) {
      cfg.lockin_omega2 =
          parse_lockin(sec.at("omega2"), "lockins.omega2", cfg.lockin_omega2);
    }
    sec.finish();
  }
  {
    Section sec(root.object_or_empty("servos"), "servos");
    ServoTuning& s = cfg.servos;
    s.v0_loop_tau = sec.number_or("v0_loop_tau_s", s.v0_loop_tau);
    s.vac_loop_tau = sec.number_or("vac_loop_tau_s", s.vac_loop_tau);
    s.v_ac_min = sec.number_or("v_ac_min_V", s.v_ac_min);
    s.v_ac_max = sec.number_or("v_ac_max_V", s.v_ac_max);
    s.v_dc_limit = sec.number_or("v_dc_limit_V", s.v_dc_limit);
    sec.finish();
  }
  {
    Section sec(root.object_or_empty("analysis"), "analysis");
    cfg.analysis.transfer_correction = sec.boolean_or(
        "transfer_correction", cfg.analysis.transfer_correction);
    cfg.analysis.softening_correction = sec.boolean_or(
        "softening_correction", cfg.analysis.softening_correction);
    sec.finish();
  }
  {
    Section sec(root.object_or_empty("output"), "output");
    cfg.output.emit_truth_channels = sec.boolean_or(
        "emit_truth_channels", cfg.output.emit_truth_channels);
    cfg.output.directory = sec.text_or("directory", cfg.output.directory);
    sec.finish();
  }
  root.finish();

  cfg.validate();
  return cfg;
}

void write_experiment_config(const ExperimentConfig& config,
                             const std::filesystem::path& path) {
  ordered_json j;
  j["cantilever"] = {
      {"spring_constant_N_per_m", config.cantilever.spring_constant},
      {"resonance_frequency_Hz", config.cantilever.resonance_frequency},
      {"quality_factor", config.cantilever.quality_factor}};
  const auto interferometer_json = [](const InterferometerParams& p) {
    return ordered_json{{"midpoint_V", p.midpoint},
                        {"visibility", p.visibility},
                        {"wavelength_m", p.wavelength},
                        {"phase_offset_rad", p.phase_offset},
                        {"rest_gap_m", p.rest_gap}};
  };
  j["ferrule_interferometer"] = interferometer_json(config.ferrule);
  j["barefiber_interferometer"] = interferometer_json(config.barefiber);
  j["laser"] = {{"wavelength_min_m", config.laser.wavelength_min},
                {"wavelength_max_m", config.laser.wavelength_max}};
  const ScanProtocol& p = config.protocol;
  j["protocol"] = {{"half_period_s", p.half_period},
                   {"stroke_m", p.stroke},
                   {"omega1_Hz", p.omega1},
                   {"omega2_Hz", p.omega2},
                   {"stage_mod_amplitude_m", p.stage_mod_amplitude},
                   {"force_rms_target_N", p.force_rms_target},
                   {"sampling_rate_Hz", p.sampling_rate},
                   {"n_scans", p.n_scans},
                   {"ode_substeps", p.ode_substeps},
                   {"record_rate_Hz", p.record_rate},
                   {"settle_skip_s", p.settle_skip},
                   {"contact_duration_s", p.contact_duration}};
  ordered_json forces;
  const char* model = "lifshitz";
  if (config.forces.casimir_model == CasimirModel::kOff) {
    model = "off";
  } else if (config.forces.casimir_model == CasimirModel::kIdealMirror) {
    model = "ideal_mirror";
  }
  forces["casimir"] = {{"model", model}};
  // A lifshitz materials block is not round-tripped here; configs using
  // tabulated data keep their table paths in the source file.
  forces["sphere_radius_m"] = config.forces.sphere_radius;
  forces["contact_offset_m"] = config.forces.contact_offset;
  forces["electrostatic_enabled"] = config.forces.electrostatic_enabled;
  forces["residual_potential"] = {
      {"log_coeff_V", config.forces.residual_potential.log_coeff},
      {"offset_V", config.forces.residual_potential.offset}};
  forces["squeeze_film"] = {
      {"enabled", config.forces.squeeze_film.enabled},
      {"viscosity_Pa_s", config.forces.squeeze_film.viscosity},
      {"geometry_coefficient",
       config.forces.squeeze_film.geometry_coefficient}};
  forces["noise"] = {
      {"photodiode_noise_V_per_sqrtHz", config.forces.noise.photodiode_density},
      {"seed", config.forces.noise.seed}};
  forces["constant_force_N"] = config.forces.constant_force;
  j["forces"] = forces;
  const auto lockin_json = [](const LockInConfig& c) {
    return ordered_json{{"rc_time_s", c.rc_time},
                        {"filter_stages", c.filter_stages}};
  };
  j["lockins"] = {{"omega1", lockin_json(config.lockin_omega1)},
                  {"two_omega1", lockin_json(config.lockin_2omega1)},
                  {"omega2", lockin_json(config.lockin_omega2)}};
  j["servos"] = {{"v0_loop_tau_s", config.servos.v0_loop_tau},
                 {"vac_loop_tau_s", config.servos.vac_loop_tau},
                 {"v_ac_min_V", config.servos.v_ac_min},
                 {"v_ac_max_V", config.servos.v_ac_max},
                 {"v_dc_limit_V", config.servos.v_dc_limit}};
  j["analysis"] = {{"transfer_correction", config.analysis.transfer_correction},
                   {"softening_correction",
                    config.analysis.softening_correction}};
  j["output"] = {{"emit_truth_channels", config.output.emit_truth_channels},
                 {"directory", config.output.directory}};
  csvutil::AtomicWriter writer(path);
  writer.stream() << j.dump(2) << '\n';
  writer.commit();
}

}  // namespace casim
