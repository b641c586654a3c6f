#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "casim/config.hpp"
#include "casim/errors.hpp"
#include "casim/instrument.hpp"
#include "casim/lifshitz.hpp"
#include "casim/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitSnapIn = 4;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::optional<long> seed;
  std::optional<int> scans;
  bool noiseless = false;
};

casim::ExperimentConfig load_config(const CommonOpts& opts) {
  casim::ExperimentConfig cfg = casim::load_experiment_config(opts.config_path);
  if (opts.seed) {
    cfg.forces.noise.seed = static_cast<std::uint64_t>(*opts.seed);
  }
  if (opts.scans) {
    cfg.protocol.n_scans = *opts.scans;
  }
  if (opts.noiseless) {
    cfg.forces.noise.photodiode_density = 0.0;
  }
  if (!opts.out_dir.empty()) {
    cfg.output.directory = opts.out_dir;
  }
  cfg.validate();
  return cfg;
}

fs::path ensure_out_dir(const casim::ExperimentConfig& cfg) {
  fs::path dir(cfg.output.directory);
  fs::create_directories(dir);
  return dir;
}

std::string scan_stem(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "scan_%02d", index);
  return buf;
}

int cmd_theory(const CommonOpts& opts, double d_min, double d_max, int n) {
  const casim::ExperimentConfig cfg = load_config(opts);
  const fs::path dir = ensure_out_dir(cfg);
  const casim::TheoryCurve curve =
      casim::injected_theory_curve(cfg.forces, d_min, d_max, n);
  const fs::path out = dir / "theory.csv";
  curve.write_csv(out);
  std::cout << "wrote " << out.string() << " (" << n << " points)\n";
  return kExitOk;
}

int cmd_simulate(const CommonOpts& opts) {
  const casim::ExperimentConfig cfg = load_config(opts);
  const fs::path dir = ensure_out_dir(cfg);

  casim::ExperimentRun run(cfg);
  ordered_json meta;
  meta["tuned_wavelength_m"] = run.tuned_wavelength();
  meta["n_scans"] = cfg.protocol.n_scans;
  meta["seed"] = cfg.forces.noise.seed;
  {
    std::ofstream metaf(dir / "run_meta.json");
    metaf << meta.dump(2) << '\n';
  }
  run.contact_stream().write_csv(dir / "contact.csv");

  for (int i = 0; i < cfg.protocol.n_scans; ++i) {
    const casim::ScanResult result = run.run_next_scan();
    const std::string stem = scan_stem(result.index);
    result.stream.write_csv(dir / (stem + ".csv"));
    result.servo.write_csv(dir / (stem + "_servo.csv"));
    if (result.snapped_in) {
      std::ofstream marker(dir / (stem + ".snapin"));
      marker << "snap-in at t = " << result.snap_time << " s\n";
      std::cerr << "snap-in during " << stem << " at t = "
                << result.snap_time << " s; run aborted\n";
      return kExitSnapIn;
    }
    std::cout << "wrote " << (dir / (stem + ".csv")).string() << "\n";
  }
  return kExitOk;
}

int cmd_analyze(const CommonOpts& opts,
                const std::vector<std::string>& stream_files,
                double window_lo, double window_hi) {
  const casim::ExperimentConfig cfg = load_config(opts);
  const fs::path dir = ensure_out_dir(cfg);
  if (stream_files.empty()) {
    throw casim::ConfigError("analyze: no stream files given");
  }
  const fs::path run_dir = fs::path(stream_files.front()).parent_path();

  double tuned_lambda = cfg.ferrule.wavelength;
  {
    std::ifstream metaf(run_dir / "run_meta.json");
    if (!metaf) {
      throw casim::ConfigError("analyze: missing run_meta.json next to the "
                               "stream files");
    }
    const auto meta = nlohmann::json::parse(metaf);
    tuned_lambda = meta.at("tuned_wavelength_m").get<double>();
  }
  const casim::SampleStream contact =
      casim::SampleStream::load_csv(run_dir / "contact.csv");
  const double phase = casim::align_phase_at_contact(
      contact.t, contact.pd_ferrule, cfg.protocol.omega2,
      cfg.lockin_omega2.rc_time, cfg.lockin_omega2.filter_stages);

  const casim::AnalysisContext ctx =
      casim::AnalysisContext::make(cfg, tuned_lambda, phase);
  casim::ScanAnalyzer analyzer(ctx);
  std::vector<casim::ScanRecord> records;
  for (const std::string& file : stream_files) {
    fs::path stream_path(file);
    fs::path servo_path = stream_path;
    servo_path.replace_filename(stream_path.stem().string() + "_servo.csv");
    const casim::SampleStream stream =
        casim::SampleStream::load_csv(stream_path);
    const casim::ServoTrace servo = casim::ServoTrace::load_csv(servo_path);
    casim::ScanRecord rec = analyzer.analyze(stream, servo);
    const fs::path out =
        dir / (stream_path.stem().string() + "_record.csv");
    rec.write_csv(out);
    std::cout << "wrote " << out.string() << " (" << rec.size()
              << " records, beta = " << rec.calibration.beta
              << ", d_offset = " << rec.calibration.d_offset * 1e9
              << " nm)\n";
    records.push_back(std::move(rec));
  }

  std::optional<casim::TheoryCurve> theory;
  if (cfg.forces.casimir_model != casim::CasimirModel::kOff) {
    theory = casim::injected_theory_curve(cfg.forces, 0.85 * window_lo,
                                          1.15 * window_hi, 24);
  }
  casim::RunSummary summary;
  try {
    summary = casim::summarize_run(records, theory ? &*theory : nullptr,
                                   window_lo, window_hi);
  } catch (const casim::NumericalError& e) {
    // Short runs may not populate the residual window; keep the rest.
    std::cerr << "note: skipping residual statistics (" << e.what()
              << ")\n";
    summary = casim::summarize_run(records, nullptr, window_lo, window_hi);
  }
  summary.write_json(dir / "summary.json");
  std::cout << "wrote " << (dir / "summary.json").string();
  if (summary.has_residuals) {
    std::cout << " (residual sigma = " << summary.residual_sigma
              << " N/m^2 over " << summary.residual_count << " records)";
  }
  std::cout << "\n";
  return kExitOk;
}

int cmd_compare(const std::vector<std::string>& record_files,
                const std::string& theory_file, const std::string& out_dir,
                double window_lo, double window_hi) {
  if (record_files.empty()) {
    throw casim::ConfigError("compare: no record files given");
  }
  const casim::TheoryCurve theory = casim::TheoryCurve::load_csv(theory_file);
  std::vector<double> d_all, grad_all;
  for (const std::string& file : record_files) {
    const casim::ScanRecord rec = casim::ScanRecord::load_csv(file);
    d_all.insert(d_all.end(), rec.d.begin(), rec.d.end());
    grad_all.insert(grad_all.end(), rec.grad_casimir.begin(),
                    rec.grad_casimir.end());
  }
  const double lo = std::max(window_lo, theory.separations.front());
  const double hi = std::min(window_hi, theory.separations.back());
  if (!(lo < hi)) {
    throw casim::NumericalError("compare: no overlap between records and "
                                "theory");
  }
  const casim::ResidualStats stats =
      casim::residual_stats(d_all, grad_all, theory, lo, hi);

  fs::path dir(out_dir);
  fs::create_directories(dir);
  {
    std::ofstream hist(dir / "residual_histogram.csv");
    hist << "bin_center_N_per_m2,count\n";
    for (std::size_t b = 0; b < stats.bin_counts.size(); ++b) {
      char buf[80];
      std::snprintf(buf, sizeof(buf), "%.17g,%d\n",
                    0.5 * (stats.bin_edges[b] + stats.bin_edges[b + 1]),
                    stats.bin_counts[b]);
      hist << buf;
    }
  }
  ordered_json j;
  j["sigma_N_per_m2"] = stats.sigma;
  j["mean_N_per_m2"] = stats.mean;
  j["count"] = stats.count;
  j["window_lo_m"] = lo;
  j["window_hi_m"] = hi;
  {
    std::ofstream out(dir / "compare.json");
    out << j.dump(2) << '\n';
  }
  std::cout << "residuals in [" << lo * 1e9 << ", " << hi * 1e9
            << "] nm: count = " << stats.count << ", mean = " << stats.mean
            << " N/m^2, sigma = " << stats.sigma << " N/m^2\n";
  std::cout << "wrote " << (dir / "compare.json").string() << " and "
            << (dir / "residual_histogram.csv").string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"digital twin of a fiber-interferometric sphere-plate "
               "Casimir gradient measurement"};
  app.require_subcommand(1);

  CommonOpts opts;
  double d_min = 50e-9, d_max = 200e-9;
  int n_points = 50;
  double window_lo = 160e-9, window_hi = 200e-9;
  std::vector<std::string> stream_files;
  std::vector<std::string> record_files;
  std::string theory_file;
  std::string compare_out = "out";

  CLI::App* theory = app.add_subcommand("theory",
                                        "tabulate the configured force "
                                        "gradient curve");
  theory->add_option("--config", opts.config_path, "config JSON")->required();
  theory->add_option("--out", opts.out_dir, "output directory");
  theory->add_option("--dmin", d_min, "smallest separation, m");
  theory->add_option("--dmax", d_max, "largest separation, m");
  theory->add_option("--n", n_points, "grid points");

  CLI::App* simulate = app.add_subcommand("simulate",
                                          "run the virtual experiment");
  simulate->add_option("--config", opts.config_path, "config JSON")
      ->required();
  simulate->add_option("--out", opts.out_dir, "output directory");
  simulate->add_option("--seed", opts.seed, "noise seed override");
  simulate->add_option("--scans", opts.scans, "scan count override");
  simulate->add_flag("--noiseless", opts.noiseless,
                     "disable photodiode noise");

  CLI::App* analyze = app.add_subcommand("analyze",
                                         "turn raw streams into scan "
                                         "records");
  analyze->add_option("streams", stream_files, "scan stream CSVs, in order")
      ->required();
  analyze->add_option("--config", opts.config_path, "config JSON")
      ->required();
  analyze->add_option("--out", opts.out_dir, "output directory");
  analyze->add_option("--window-lo", window_lo,
                      "residual window lower edge, m");
  analyze->add_option("--window-hi", window_hi,
                      "residual window upper edge, m");

  CLI::App* compare = app.add_subcommand("compare",
                                         "residuals of scan records "
                                         "against a theory curve");
  compare->add_option("records", record_files, "scan record CSVs")
      ->required();
  compare->add_option("--theory", theory_file, "theory curve CSV")
      ->required();
  compare->add_option("--out", compare_out, "output directory");
  compare->add_option("--window-lo", window_lo,
                      "residual window lower edge, m");
  compare->add_option("--window-hi", window_hi,
                      "residual window upper edge, m");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (theory->parsed()) {
      return cmd_theory(opts, d_min, d_max, n_points);
    }
    if (simulate->parsed()) {
      return cmd_simulate(opts);
    }
    if (analyze->parsed()) {
      return cmd_analyze(opts, stream_files, window_lo, window_hi);
    }
    if (compare->parsed()) {
      return cmd_compare(record_files, theory_file, compare_out, window_lo,
                         window_hi);
    }
  } catch (const casim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const casim::SnapInError& e) {
    std::cerr << "snap-in: " << e.what() << "\n";
    return kExitSnapIn;
  } catch (const casim::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
