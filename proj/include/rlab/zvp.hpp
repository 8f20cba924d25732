// SPDX-License-Identifier: Apache-2.0
//
// Zero-variance prompt handling: detection, the Bernoulli zero-variance law,
// probe pass-rate filtering, group-normalized advantages, and entropy-guided
// advantages for groups whose rewards are all equal.

#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlab/rollout.hpp"

namespace rlab {

inline constexpr double kDefaultVarianceEps = 1e-12;
inline constexpr double kDefaultAdvantageEps = 1e-6;

struct GroupRewardStats {
    std::vector<double> rewards;
    double mean = 0.0;
    double variance = 0.0;  // population
    bool is_zero_variance = false;
};

GroupRewardStats group_stats(std::span<const double> rewards, double var_eps = kDefaultVarianceEps);

struct ZeroVarianceLaw {
    double zero_variance_rate = 0.0;  // p^N + (1-p)^N
    double pass_at_n = 0.0;           // 1 - (1-p)^N
};

ZeroVarianceLaw zv_rate_bernoulli(double p, std::size_t n);

struct PromptStats {
    std::string prompt_id;
    std::optional<double> probe_pass_rate;
    std::size_t probe_count = 0;
};

struct PassRateBand {
    double p_lo = 0.0;
    double p_hi = 0.9;

    /// Second-phase "medium-to-high difficulty" band.
    static PassRateBand medium_to_high() { return {0.1, 0.7}; }
};

/// Keeps prompts with p_lo <= pass rate <= p_hi, and prompts with no estimate.
std::vector<std::string> filter_prompts(std::span<const PromptStats> stats, const PassRateBand& band = {});

/// Line-delimited {"prompt_id", "pass_rate", "n"}.
std::vector<PromptStats> load_probe_stats(std::istream& is);

/// (r_i - mean) / (std + adv_eps) per rollout. Throws on a zero-variance group.
std::vector<double> group_advantages(const GroupRewardStats& stats, double adv_eps = kDefaultAdvantageEps);

struct ZeroVarianceReshape {
    double beta = 0.05;
    double success_threshold = 0.5;
};

/// a_{i,t} = beta * s * (e_{i,t} - mean_t e_{i,t}) / log|V|, with s = +1 when
/// the shared reward is below the success threshold and -1 otherwise.
/// Returns one advantage vector per rollout.
std::vector<std::vector<double>> reshape_zero_variance(const RolloutGroup& group, double log_vocab,
                                                       const ZeroVarianceReshape& cfg = {},
                                                       double var_eps = kDefaultVarianceEps);

struct AdvantageConfig {
    bool reshape_zero_variance = true;
    ZeroVarianceReshape reshape;
    double var_eps = kDefaultVarianceEps;
    double adv_eps = kDefaultAdvantageEps;
};

struct AdvantageReport {
    std::size_t groups = 0;
    std::size_t zero_variance_groups = 0;
    double zero_variance_fraction() const {
        return groups ? static_cast<double>(zero_variance_groups) / static_cast<double>(groups) : 0.0;
    }
};

/// Fills Rollout::advantages for every rollout. Zero-variance groups get
/// reshaped advantages, or zeros when reshaping is disabled.
AdvantageReport pipeline_advantages(std::span<RolloutGroup> groups, double log_vocab, const AdvantageConfig& cfg = {});

}  // namespace rlab
