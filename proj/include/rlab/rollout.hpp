// SPDX-License-Identifier: Apache-2.0
//
// Group sampling under the old policy, and emulation of the numerical
// mismatch between the sampling engine and the training recompute.

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "rlab/policy.hpp"

namespace rlab {

enum class TaskKind { verifiable, tool_use, judged, multiple_choice, schema };

const char* to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

struct Prompt {
    std::string id;
    std::vector<Token> tokens;
    TaskKind task_kind = TaskKind::verifiable;
    /// Task-specific ground truth (e.g. {"answer": 5} for parity).
    nlohmann::json gold;
    std::optional<double> pass_rate_estimate;
};

/// Per response token, the decisions of every MoE invocation (one here).
using RouterTrace = std::vector<RouterDecision>;

struct Rollout {
    std::vector<Token> tokens;
    std::vector<TokenStep> steps;  // old-policy values, recorded at sampling time
    RouterTrace router_trace;
    double reward = 0.0;
    std::vector<double> advantages;  // per token, filled by the advantage pipeline
};

struct RolloutGroup {
    Prompt prompt;
    std::vector<Rollout> rollouts;
};

struct SamplingOptions {
    std::size_t group_size = 8;
    std::size_t max_len = 4;
    double temperature = 1.0;
    /// Argmax decoding (the temperature -> 0 limit).
    bool greedy = false;
};

/// Samples `group_size` responses. Rollout i draws from a stream derived from
/// (rng_seed, i) only, so it does not depend on the group size. Recorded
/// log-probs and entropies are those of the temperature-1 policy.
RolloutGroup generate_group(const PolicyParams& params, const Prompt& prompt, const SamplingOptions& options,
                            std::uint64_t rng_seed);

struct MismatchConfig {
    /// Std-dev of the Gaussian noise added to router gate logits.
    double gate_noise_scale = 0.0;
    /// Std-dev of Gaussian noise added to the output logits; models
    /// discrepancy sources after the router. Zero by default.
    double residual_noise_scale = 0.0;
    std::uint64_t noise_seed = 0;
};

/// Recomputes the rollout's log-probs under gate-logit noise. With replay the
/// traced experts are used (gates renormalized from the noisy logits);
/// without it, selection follows the noisy logits.
std::vector<TokenStep> perturbed_logprobs(const PolicyParams& params, const Prompt& prompt, const Rollout& rollout,
                                          const MismatchConfig& mismatch, bool use_replay,
                                          std::uint64_t stream = 0);

/// Same as perturbed_logprobs, also returning the decisions actually used.
std::vector<TokenStep> perturbed_logprobs(const PolicyParams& params, const Prompt& prompt, const Rollout& rollout,
                                          const MismatchConfig& mismatch, bool use_replay, std::uint64_t stream,
                                          RouterTrace* used_decisions);

struct MismatchStats {
    double mean_abs_diff = 0.0;
    double max_abs_diff = 0.0;
    std::size_t tokens = 0;
};

MismatchStats measure_mismatch(const PolicyParams& params, const std::vector<RolloutGroup>& groups,
                               const MismatchConfig& mismatch, bool use_replay);

/// Random prompts (length `prompt_len`, tokens 1..V-1) with G = 8 rollouts
/// each, generated until at least `min_tokens` response tokens exist.
std::vector<RolloutGroup> sample_mismatch_workload(const PolicyParams& params, std::size_t min_tokens,
                                                   std::size_t max_len, std::uint64_t seed,
                                                   std::size_t prompt_len = 4);

nlohmann::json rollout_to_json(const RolloutGroup& group, std::size_t index);

/// One rollout per line. Field names are documented in docs/formats.md.
void write_rollouts_jsonl(std::ostream& os, const RolloutGroup& group);

}  // namespace rlab
