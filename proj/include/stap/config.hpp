#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "stap/experiments.hpp"
#include "stap/model.hpp"
#include "stap/synthdata.hpp"

namespace stap {

/// Rejected key, unparsable value, or unreadable file; message carries the
/// offending key/path.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    SynthConfig synth;
    ModelConfig model;
    TrainSettings train;
    std::vector<std::size_t> bench_sizes_seq = {256, 512, 1024, 2048};
    std::vector<std::size_t> bench_sizes_corpus = {1000, 4000, 10000, 40000, 100000};
    std::size_t bench_trials = 5;
    std::vector<double> harness_proportions = {0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<std::size_t> grid_p = {3, 6, 9};
    std::vector<std::size_t> grid_c = {2, 4, 8};
    std::uint64_t seed = 1;

    /// Keeps the coupled dimensions (d_v/d_t/d_u, synth seed) consistent.
    void finalize();
};

RunConfig default_config();

/// Applies one schema entry; ConfigError names any unknown key.
void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value);

/// Flat key=value file with '#' comments. ConfigError carries the path when
/// the file cannot be read.
RunConfig load_config(const std::string& path);

/// Every schema key with its effective value, lexicographic order.
std::map<std::string, std::string> config_echo(const RunConfig& cfg);

}  // namespace stap
