#pragma once
#include <cstdint>
#include <string>

#include "evr/episodes.hpp"
#include "evr/harness.hpp"
#include "evr/world.hpp"

namespace evr {

struct EvalConfig {
    int workers = 1;
    int random_runs = 5;
};

struct RunConfig {
    std::uint64_t seed = 1; // training / evaluation seed
    std::string out_dir = "runs/default";
    DataConfig data;
    TrainOptions train;
    EvalConfig eval;
};

RunConfig default_config();
RunConfig load_config(const std::string& path); // throws ConfigError / IoError
RunConfig config_from_text(const std::string& json_text, const std::string& origin);
std::string config_to_text(const RunConfig& c); // canonical pretty JSON

// FNV-1a 64-bit over the canonical serialization with out_dir and
// eval.workers removed, as a 16-hex-digit string. Identifies a run's
// semantics independent of where artifacts land and how many threads
// computed them.
std::string config_hash(const RunConfig& c);

void write_config(const RunConfig& c, const std::string& path);

} // namespace evr
