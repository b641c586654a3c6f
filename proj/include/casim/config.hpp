#pragma once

#include <filesystem>

#include "casim/instrument.hpp"

namespace casim {

// Loads and schema-checks an experiment configuration. Unknown keys,
// missing required keys, and type mismatches raise ConfigError naming
// the offending key.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Serializes a config back to JSON (round-trips through
// load_experiment_config).
void write_experiment_config(const ExperimentConfig& config,
                             const std::filesystem::path& path);

}  // namespace casim
