#include <string>

#include "casim/instrument.hpp"
#include "csv_util.hpp"

namespace casim {

namespace {
constexpr const char* kStreamHeader =
    "t_s,pd_ferrule_V,pd_barefiber_V,V_applied_V";
constexpr const char* kStreamHeaderTruth =
    "t_s,pd_ferrule_V,pd_barefiber_V,V_applied_V,d_true_m,x_true_m";
}  // namespace

void SampleStream::write_csv(const std::filesystem::path& path) const {
  csvutil::AtomicWriter writer(path);
  auto& out = writer.stream();
  out << (has_truth ? kStreamHeaderTruth : kStreamHeader) << '\n';
  std::string row;
  row.reserve(160);
  for (std::size_t i = 0; i < size(); ++i) {
    row.clear();
    csvutil::append_double(row, t[i]);
    row.push_back(',');
    csvutil::append_double(row, pd_ferrule[i]);
    row.push_back(',');
    csvutil::append_double(row, pd_barefiber[i]);
    row.push_back(',');
    csvutil::append_double(row, v_applied[i]);
    if (has_truth) {
      row.push_back(',');
      csvutil::append_double(row, d_true[i]);
      row.push_back(',');
      csvutil::append_double(row, x_true[i]);
    }
    row.push_back('\n');
    out << row;
  }
  writer.commit();
}

SampleStream SampleStream::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open stream: " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw ConfigError("empty stream file: " + path.string());
  }
  SampleStream s;
  if (line == kStreamHeaderTruth) {
    s.has_truth = true;
  } else if (line != kStreamHeader) {
    throw ConfigError("stream " + path.string() + ": unrecognized header");
  }
  const std::size_t cols = s.has_truth ? 6 : 4;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto v = csvutil::parse_row(line, cols, path.string());
    s.t.push_back(v[0]);
    s.pd_ferrule.push_back(v[1]);
    s.pd_barefiber.push_back(v[2]);
    s.v_applied.push_back(v[3]);
    if (s.has_truth) {
      s.d_true.push_back(v[4]);
      s.x_true.push_back(v[5]);
    }
  }
  if (s.size() >= 2) {
    s.sample_rate = 1.0 / (s.t[1] - s.t[0]);
  }
  return s;
}

void ServoTrace::write_csv(const std::filesystem::path& path) const {
  csvutil::AtomicWriter writer(path);
  auto& out = writer.stream();
  out << "t_s,V_dc_V,V_AC_V\n";
  std::string row;
  for (std::size_t i = 0; i < t.size(); ++i) {
    row.clear();
    csvutil::append_double(row, t[i]);
    row.push_back(',');
    csvutil::append_double(row, v_dc[i]);
    row.push_back(',');
    csvutil::append_double(row, v_ac[i]);
    row.push_back('\n');
    out << row;
  }
  writer.commit();
}

ServoTrace ServoTrace::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open servo trace: " + path.string());
  }
  std::string line;
  if (!std::getline(in, line) || line != "t_s,V_dc_V,V_AC_V") {
    throw ConfigError("servo trace " + path.string() + ": bad header");
  }
  ServoTrace s;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto v = csvutil::parse_row(line, 3, path.string());
    s.t.push_back(v[0]);
    s.v_dc.push_back(v[1]);
    s.v_ac.push_back(v[2]);
  }
  return s;
}

}  // namespace casim
