#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "casim/errors.hpp"

namespace casim::csvutil {

// Full-precision formatting so that written doubles round-trip exactly.
inline void append_double(std::string& out, double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof(buf), "%.17g", v);
  out.append(buf, n);
}

inline std::vector<double> parse_row(const std::string& line,
                                     std::size_t expected_min,
                                     const std::string& context) {
  std::vector<double> values;
  const char* p = line.data();
  const char* end = p + line.size();
  while (p < end) {
    double v;
    const auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc()) {
      throw ConfigError(context + ": bad number in row '" + line + "'");
    }
    values.push_back(v);
    p = next;
    if (p < end) {
      if (*p != ',') {
        throw ConfigError(context + ": expected ',' in row");
      }
      ++p;
    }
  }
  if (values.size() < expected_min) {
    throw ConfigError(context + ": too few columns");
  }
  return values;
}

// Writes via a temporary and renames, so partially written files never
// appear under the target name.
class AtomicWriter {
 public:
  explicit AtomicWriter(const std::filesystem::path& path)
      : path_(path), tmp_(path.string() + ".tmp"), out_(tmp_) {
    if (!out_) {
      throw ConfigError("cannot write " + path.string());
    }
  }
  std::ofstream& stream() { return out_; }
  void commit() {
    out_.flush();
    if (!out_) {
      throw ConfigError("write failed: " + path_.string());
    }
    out_.close();
    std::filesystem::rename(tmp_, path_);
  }

 private:
  std::filesystem::path path_, tmp_;
  std::ofstream out_;
};

}  // namespace casim::csvutil
