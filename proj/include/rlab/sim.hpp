// SPDX-License-Identifier: Apache-2.0
//
// Discrete-event model of one synchronous rollout + reward iteration.
//
// Workers decode their assigned jobs back to back. Each finished job needs a
// reward computation; with overlap on it is released the moment its decode
// ends, otherwise every reward runs one after another once the last worker
// has finished. An optional update stage follows the last reward.

#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <vector>

#include "json.hpp"

namespace rlab::sim {

struct SimJob {
    std::size_t id = 0;
    double true_len = 1.0;
    double predicted_len = 1.0;
    double reward_cost = 0.0;
};

enum class AssignmentPolicy { random, length_balanced };

const char* to_string(AssignmentPolicy p);
AssignmentPolicy assignment_policy_from_string(const std::string& s);

struct SimConfig {
    std::size_t num_workers = 16;
    double decode_rate = 1.0;  // tokens per time unit per worker
    double fp8_speedup = 1.0;
    double detok_parallelism = 1.0;
    bool overlap_reward = false;
    /// Concurrent reward lanes when overlapped; 0 means unbounded.
    std::size_t reward_lanes = 0;
    AssignmentPolicy assignment = AssignmentPolicy::random;
    double prediction_sigma = 0.0;
    double update_time = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

using Assignment = std::vector<std::vector<std::size_t>>;  // job indices per worker

struct Interval {
    double start = 0.0;
    double end = 0.0;
    std::size_t job = 0;
};

struct StageTotals {
    double rollout = 0.0;
    double reward = 0.0;
    double other = 0.0;
};

struct SimTimeline {
    std::vector<std::vector<Interval>> worker_busy;
    std::vector<Interval> reward_intervals;
    double rollout_end = 0.0;
    double reward_end = 0.0;
    double makespan = 0.0;
    double idle_ratio = 0.0;
    StageTotals stage_totals;  // critical-path time per stage
};

/// predicted = true * exp(sigma * z), z ~ N(0, 1) per job.
std::vector<SimJob> predict_lengths(std::vector<SimJob> jobs, double sigma, std::uint64_t seed);

/// length_balanced: LPT on predicted_len, ties to the lowest worker index.
/// random: seeded shuffle, then round-robin.
Assignment assign(const std::vector<SimJob>& jobs, std::size_t num_workers, AssignmentPolicy policy,
                  std::uint64_t seed);

SimTimeline simulate(const std::vector<SimJob>& jobs, const Assignment& assignment, const SimConfig& config);

/// Prediction, assignment and simulation under one config.
SimTimeline run(const std::vector<SimJob>& jobs, const SimConfig& config);

enum class Feature { detok_parallelism, overlap, fp8, length_balanced };

const char* to_string(Feature f);
Feature feature_from_string(const std::string& s);

struct FeatureSettings {
    double fp8_speedup = 1.43;
    double detok_parallelism = 3.0;
};

struct SpeedupRow {
    std::string label;
    double makespan = 0.0;
    double cumulative_speedup = 1.0;
};

/// Baseline row followed by one row per feature, each enabling that feature
/// on top of the previous ones.
std::vector<SpeedupRow> speedup_report(const std::vector<SimJob>& jobs, const SimConfig& base,
                                       const std::vector<Feature>& stack, const FeatureSettings& settings = {});

SimConfig apply_features(SimConfig base, const std::vector<Feature>& enabled, const FeatureSettings& settings);

struct StageBreakdown {
    double rollout_pct = 0.0;
    double reward_pct = 0.0;
    double other_pct = 0.0;
};

StageBreakdown stage_breakdown(const SimTimeline& timeline);

struct WorkloadSpec {
    std::size_t num_jobs = 512;
    double log_mean = 8.987196820661973;  // log 8000
    double log_sigma = 0.8;
    double reward_cost = 200.0;
    std::uint64_t seed = 0;
};

/// Lognormal decode lengths; predicted_len starts equal to true_len.
std::vector<SimJob> lognormal_workload(const WorkloadSpec& spec);

/// Line-delimited {"job_id", "true_len", "reward_cost"}.
std::vector<SimJob> load_workload(std::istream& is);

std::string speedup_csv(const std::vector<SpeedupRow>& rows);
nlohmann::json speedup_json(const std::vector<SpeedupRow>& rows);
nlohmann::json breakdown_json(const StageBreakdown& b, const SimTimeline& t);

}  // namespace rlab::sim
