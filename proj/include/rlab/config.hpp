// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration. The format is documented, with an annotated
// example, in docs/config.md. Unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "rlab/rollout.hpp"
#include "rlab/sim.hpp"
#include "rlab/tasks.hpp"
#include "rlab/train.hpp"

namespace rlab {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct TaskConfig {
    SyntheticTask task;
    std::size_t num_prompts = 16;
    /// Optional JSON-lines probe pass rates, joined on prompt id.
    std::optional<std::filesystem::path> probe_stats;
};

struct SimRunConfig {
    sim::SimConfig base;
    std::optional<std::filesystem::path> workload_path;
    sim::WorkloadSpec workload;
    std::vector<sim::Feature> features;
    sim::FeatureSettings settings;
};

struct ReplayDemoConfig {
    std::vector<double> deltas = {0.0, 1e-3, 3e-3, 1e-2, 3e-2};
    std::size_t min_tokens = 1000;
    std::size_t max_len = 8;
    double residual_noise = 0.0;
    std::uint64_t noise_seed = 1;
    /// Seed of the toy model's parameters and prompts.
    std::uint64_t model_seed = 0;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t iterations = 200;
    TrainConfig train;
    TaskConfig task;
    SimRunConfig sim;
    ReplayDemoConfig replay;
    /// The parsed document with defaults filled in.
    nlohmann::json resolved;
};

/// Parses and validates. Relative paths resolve against `base_dir`.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Overrides the master seed and propagates it to dependent seeds.
void override_seed(RunConfig& config, std::uint64_t seed);

/// Prompts for the task section, with probe pass rates attached.
std::vector<Prompt> build_prompts(const RunConfig& config);

/// FNV-1a 64 of the resolved config's compact dump, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace rlab
