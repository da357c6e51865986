#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace tesim::cli {

// Flags shared by every subcommand. seed_given marks an explicit --seed,
// which then outranks a "seed" key in the config document.
struct CommonOptions {
    std::uint64_t seed = 1;
    bool seed_given = false;
    std::string out_dir = ".";
    int threads = 1;
};

// Each command resolves its config document against defaults (unknown keys
// rejected with ConfigError), runs, and writes its output files under
// out_dir. Every output carries the hash of the fully resolved parameter
// document, so two runs with the same effective parameters are identical
// byte for byte.

void cmd_materials(const nlohmann::json& config, const CommonOptions& opts);
void cmd_pulse(const nlohmann::json& config, const CommonOptions& opts);
void cmd_sweep(const nlohmann::json& config, const CommonOptions& opts);
void cmd_calibrate(const nlohmann::json& config, const std::string& measurements_path,
                   const CommonOptions& opts);
void cmd_loss(const nlohmann::json& config, const std::string& scan_path,
              const CommonOptions& opts);
void cmd_montecarlo(const nlohmann::json& config, const CommonOptions& opts);

} // namespace tesim::cli
