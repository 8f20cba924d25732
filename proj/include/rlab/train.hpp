// SPDX-License-Identifier: Apache-2.0
//
// Rollout -> reward -> advantage -> objective -> update loop.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "json.hpp"

#include "rlab/objective.hpp"
#include "rlab/reward.hpp"
#include "rlab/tasks.hpp"
#include "rlab/zvp.hpp"

namespace rlab {

struct TrainConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    ObjectiveConfig objective;
    SamplingOptions sampling{8, 1, 1.0, false};
    AdvantageConfig advantages;
    bool reshape_rewards = false;
    ReshapeConfig reshape;
    double learning_rate = 0.5;
    std::size_t prompts_per_iter = 4;
    /// Passes over each iteration's batch; theta_old stays fixed across them.
    std::size_t inner_epochs = 1;
    /// Applied to prompts carrying a pass-rate estimate.
    std::optional<PassRateBand> prompt_filter;
};

struct IterationMetrics {
    std::size_t iter = 0;
    double objective = 0.0;
    double grad_norm = 0.0;
    double mean_reward = 0.0;
    double zv_fraction = 0.0;
    double clip_frac_low_bucket = 0.0;
    double clip_frac_high_bucket = 0.0;
    std::vector<double> mean_ratio_per_bucket;

    nlohmann::json to_json() const;
};

/// Thrown when an update produces non-finite parameters.
class NonFiniteUpdate : public std::runtime_error {
public:
    NonFiniteUpdate(std::size_t iter, PolicyParams last_good)
        : std::runtime_error("non-finite parameters after iteration " + std::to_string(iter)),
          iter_(iter),
          last_good_(std::move(last_good)) {}

    std::size_t iter() const { return iter_; }
    const PolicyParams& last_good() const { return last_good_; }

private:
    std::size_t iter_;
    PolicyParams last_good_;
};

struct TrainResult {
    PolicyParams params;
    std::vector<IterationMetrics> metrics;
    std::vector<std::string> kept_prompts;
};

using MetricsSink = std::function<void(const IterationMetrics&)>;

/// Deterministic given config.seed. `initial` defaults to a fresh
/// initialization from config.model.
TrainResult train_loop(const TrainConfig& config, std::span<const Prompt> tasks, std::size_t num_iters,
                       const MetricsSink& sink = {}, std::optional<PolicyParams> initial = std::nullopt);

}  // namespace rlab
