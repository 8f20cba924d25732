// SPDX-License-Identifier: Apache-2.0
//
// Toy autoregressive policy with a single top-k mixture-of-experts block.
//
//   h0     = E[c_last] + mean_j E[c_j]                  (context summary)
//   z      = R h0 + r                                   (router gate logits)
//   S      = top_k experts by z, ties to lower index
//   g      = softmax(z_S)                               (renormalized gates)
//   h1     = h0 + sum_{k in S} g_k tanh(W_k h0 + b_k)
//   logits = U h1 + c
//
// Log-probabilities are in nats at temperature 1. Gradients of log pi(y | ctx)
// are derived by hand and checked against finite differences in the tests.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace rlab {

using Token = std::int32_t;

/// End-of-sequence is vocabulary index 0.
inline constexpr Token kEndOfSequence = 0;

struct ModelConfig {
    std::size_t vocab_size = 8;
    std::size_t context_window = 32;
    std::size_t embed_dim = 8;
    std::size_t num_experts = 4;
    std::size_t top_k = 2;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument when a dimension is out of range.
    void validate() const;

    double log_vocab() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Offsets of each parameter block inside the flat parameter vector.
struct ParamLayout {
    std::size_t embedding = 0;  // V x D
    std::size_t expert_w = 0;   // E x D x D
    std::size_t expert_b = 0;   // E x D
    std::size_t router_w = 0;   // E x D
    std::size_t router_b = 0;   // E
    std::size_t output_w = 0;   // V x D
    std::size_t output_b = 0;   // V
    std::size_t size = 0;

    static ParamLayout of(const ModelConfig& config);
};

struct PolicyParams {
    ModelConfig config;
    std::vector<double> values;

    /// Uniform in [-0.1, 0.1] from the config seed.
    static PolicyParams initialize(const ModelConfig& config);

    ParamLayout layout() const { return ParamLayout::of(config); }
    bool all_finite() const;
};

struct RouterDecision {
    std::size_t token_position = 0;
    std::vector<std::size_t> experts;  // ordered by gate logit, descending
    std::vector<double> gates;         // renormalized over `experts`

    friend bool operator==(const RouterDecision&, const RouterDecision&) = default;
};

struct TokenStep {
    Token token = 0;
    double logprob = 0.0;
    double entropy = 0.0;
};

struct ForwardResult {
    std::vector<double> logits;
    std::vector<RouterDecision> decisions;  // one per MoE invocation
};

/// Optional knobs for a forward pass.
struct ForwardOptions {
    /// Routing to force; must cover every MoE invocation of the pass.
    std::optional<std::span<const RouterDecision>> router_override;
    /// Added to the gate logits before selection and renormalization.
    std::span<const double> gate_noise;
};

ForwardResult forward_logits(const PolicyParams& params, std::span<const Token> context,
                             const ForwardOptions& options = {});

/// softmax(logits / temperature).
std::vector<double> token_distribution(std::span<const double> logits, double temperature = 1.0);

/// -sum p log p with 0 log 0 = 0.
double token_entropy(std::span<const double> probabilities);

/// Teacher-forced per-token log-probabilities and entropies of `response`
/// given `prompt`. `router_trace`, when given, holds one decision per
/// response token and is replayed.
std::vector<TokenStep> sequence_logprobs(const PolicyParams& params, std::span<const Token> prompt,
                                         std::span<const Token> response,
                                         std::optional<std::span<const RouterDecision>> router_trace = {});

/// Accumulates sum_t weights[t] * d log pi(response[t] | ...) / d theta into
/// `grad` (same length as params.values).
void accumulate_logprob_gradient(const PolicyParams& params, std::span<const Token> prompt,
                                 std::span<const Token> response, std::span<const double> weights,
                                 std::optional<std::span<const RouterDecision>> router_trace,
                                 std::span<double> grad);

/// Single-position log-probability gradient; convenience for tests.
std::vector<double> logprob_gradient(const PolicyParams& params, std::span<const Token> context, Token target,
                                     std::optional<std::span<const RouterDecision>> router_override = {});

// `.params` snapshots: six little-endian uint64 config fields
// (vocab_size, context_window, embed_dim, num_experts, top_k, seed) followed
// by the parameter vector as little-endian IEEE-754 doubles.
void save_params(const PolicyParams& params, const std::filesystem::path& path);
PolicyParams load_params(const std::filesystem::path& path);

}  // namespace rlab
