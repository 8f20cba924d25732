// SPDX-License-Identifier: Apache-2.0
//
// Clipped policy-gradient surrogates (GRPO, GSPO-token, ESPO) with analytic
// gradients.
//
// All three share one evaluator. A sequence is split into token groups; for a
// token t in group g the importance ratio is
//
//   s_t = sg[s_g] * pi(y_t) / sg[pi_old(y_t)],
//   s_g = exp(mean_{u in g} (log pi(y_u) - log pi_old(y_u)))
//
// and it contributes w_t * min(s_t A_t, clip(s_t, 1 - eps_g, 1 + eps_g) A_t).
// Because s_g is detached, d s_t / d theta = s_t * d log pi(y_t) / d theta.
//
//   GRPO        one group per sequence, s_g forced to 1, fixed eps
//   GSPO-token  one group per sequence, fixed eps
//   ESPO        entropy buckets, eps_g = max(eps_min, alpha * mean(e) / log|V|)

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "rlab/policy.hpp"
#include "rlab/rollout.hpp"

namespace rlab {

enum class Algorithm { grpo, gspo_token, espo };

const char* to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

/// How sequence-level terms are weighted inside one rollout.
enum class GroupWeighting {
    /// (1 / number of groups) * (1 / tokens in group) per token.
    per_group,
    /// 1 / sequence length per token.
    token_weighted,
};

struct ObjectiveConfig {
    Algorithm algorithm = Algorithm::espo;
    double alpha = 0.4;
    double eps_fixed = 0.2;
    double eps_min = 0.01;
    std::size_t num_buckets = 2;
    /// K - 1 increasing quantiles in (0, 1); empty means j / K.
    std::vector<double> split_quantiles = {0.8};
    GroupWeighting weighting = GroupWeighting::per_group;
    /// Recompute new log-probs with the rollout's recorded routing.
    bool router_replay = true;
    /// Forces sg[s_g] = 1 in the ESPO/GSPO path; used to relate them to GRPO.
    bool unit_group_ratio = false;

    void validate() const;
};

struct TokenGroup {
    std::size_t bucket = 0;
    std::vector<std::size_t> tokens;
    double eps = 0.0;
};

/// Disjoint, exhaustive split of a sequence's token indices; empty buckets
/// are omitted and groups are ordered by bucket.
struct EntropyPartition {
    std::vector<TokenGroup> groups;
    std::size_t length = 0;
};

/// Buckets tokens by old-policy entropy at per-sequence quantiles. A token
/// goes to the lowest bucket whose threshold it does not exceed, so equal
/// entropies always share a bucket.
EntropyPartition partition_by_entropy(std::span<const TokenStep> steps, std::size_t num_buckets,
                                      std::span<const double> split_quantiles = {});

/// max(eps_min, alpha * mean(entropies) / log|V|).
double entropy_adaptive_clip(std::span<const double> entropies, double alpha, std::size_t vocab_size,
                             double eps_min = 0.01);

/// exp(mean over `group` of (new - old)), computed in log space.
double group_sequence_ratio(std::span<const double> new_logprobs, std::span<const double> old_logprobs,
                            std::span<const std::size_t> group);

struct TokenRatio {
    double value = 0.0;
    /// d value / d log pi_new(y_t); the group ratio is held constant.
    double grad_factor = 0.0;
};

TokenRatio espo_token_ratio(double new_logprob, double old_logprob, double detached_group_ratio);

/// Partition a rollout according to the algorithm (one whole-sequence group
/// for the baselines) and fill in each group's eps.
EntropyPartition make_partition(const Rollout& rollout, std::size_t vocab_size, const ObjectiveConfig& cfg);

/// Group ratios indexed [prompt][rollout][group].
using GroupRatios = std::vector<std::vector<std::vector<double>>>;

struct SequenceSurrogate {
    double value = 0.0;
    std::vector<double> dvalue_dlogprob;  // per token, through the numerator only
    std::vector<double> group_ratios;
    std::vector<double> token_ratios;
};

/// One rollout's surrogate. `pinned_group_ratios` replaces the computed s_g.
SequenceSurrogate sequence_surrogate(std::span<const double> new_logprobs, std::span<const double> old_logprobs,
                                     std::span<const double> advantages, const EntropyPartition& partition,
                                     const ObjectiveConfig& cfg,
                                     std::optional<std::span<const double>> pinned_group_ratios = {});

struct UpdateReport {
    double objective = 0.0;
    double grad_norm = 0.0;
    std::vector<double> clip_fraction;  // per bucket
    std::vector<double> mean_ratio;     // per bucket
    std::vector<std::size_t> bucket_tokens;
};

struct ObjectiveResult {
    double value = 0.0;
    std::vector<double> gradient;
    GroupRatios group_ratios;
    UpdateReport report;
};

/// Batch objective: mean over prompts of (1/G) sum_i surrogate_i.
/// `partitions` is indexed [prompt][rollout]; pass an empty vector to build
/// them with make_partition.
ObjectiveResult evaluate_objective(const PolicyParams& params, std::span<const RolloutGroup> groups,
                                   const ObjectiveConfig& cfg,
                                   const std::vector<std::vector<EntropyPartition>>& partitions = {},
                                   const GroupRatios* pinned_group_ratios = nullptr);

ObjectiveResult espo_objective(const PolicyParams& params, std::span<const RolloutGroup> groups,
                               ObjectiveConfig cfg, const GroupRatios* pinned = nullptr);
ObjectiveResult gspo_token_objective(const PolicyParams& params, std::span<const RolloutGroup> groups,
                                     double eps_fixed, ObjectiveConfig cfg = {}, const GroupRatios* pinned = nullptr);
ObjectiveResult grpo_objective(const PolicyParams& params, std::span<const RolloutGroup> groups, double eps_fixed,
                               ObjectiveConfig cfg = {});

/// One plain-SGD ascent step: theta += lr * grad J.
PolicyParams train_step(const PolicyParams& params, std::span<const RolloutGroup> batch, const ObjectiveConfig& cfg,
                        double lr, UpdateReport* report = nullptr);

}  // namespace rlab
