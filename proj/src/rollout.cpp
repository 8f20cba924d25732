// SPDX-License-Identifier: Apache-2.0

#include "rlab/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rlab/rng.hpp"

namespace rlab {

const char* to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::verifiable: return "verifiable";
        case TaskKind::tool_use: return "tool_use";
        case TaskKind::judged: return "judged";
        case TaskKind::multiple_choice: return "multiple_choice";
        case TaskKind::schema: return "schema";
    }
    return "unknown";
}

TaskKind task_kind_from_string(const std::string& s) {
    for (auto k : {TaskKind::verifiable, TaskKind::tool_use, TaskKind::judged, TaskKind::multiple_choice,
                   TaskKind::schema}) {
        if (s == to_string(k)) return k;
    }
    throw std::invalid_argument("unknown task kind: " + s);
}

namespace {

Token sample_token(std::span<const double> probs, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t v = 0; v < probs.size(); ++v) {
        acc += probs[v];
        if (u < acc) return static_cast<Token>(v);
    }
    // u landed in the rounding gap above the accumulated sum.
    for (std::size_t v = probs.size(); v-- > 0;) {
        if (probs[v] > 0.0) return static_cast<Token>(v);
    }
    return 0;
}

Token argmax_token(std::span<const double> logits) {
    return static_cast<Token>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double log_softmax_at(std::span<const double> logits, Token t) {
    double m = -INFINITY;
    for (double l : logits) m = std::max(m, l);
    double s = 0.0;
    for (double l : logits) s += std::exp(l - m);
    return logits[static_cast<std::size_t>(t)] - m - std::log(s);
}

}  // namespace

RolloutGroup generate_group(const PolicyParams& params, const Prompt& prompt, const SamplingOptions& options,
                            std::uint64_t rng_seed) {
    if (options.group_size < 1) throw std::invalid_argument("group size must be >= 1");
    if (options.max_len < 1) throw std::invalid_argument("max_len must be >= 1");
    if (!options.greedy && !(options.temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (prompt.tokens.empty()) throw std::invalid_argument("prompt tokens must be nonempty");
    if (prompt.tokens.size() + options.max_len > params.config.context_window) {
        throw std::invalid_argument("prompt + max_len exceed the context window");
    }

    RolloutGroup group{prompt, {}};
    group.rollouts.reserve(options.group_size);
    for (std::size_t i = 0; i < options.group_size; ++i) {
        Rng rng(derive_seed(rng_seed, i));
        Rollout r;
        std::vector<Token> context = prompt.tokens;
        while (r.tokens.size() < options.max_len) {
            auto fwd = forward_logits(params, context);
            const auto base = token_distribution(fwd.logits, 1.0);
            Token tok;
            if (options.greedy) {
                tok = argmax_token(fwd.logits);
            } else if (options.temperature == 1.0) {
                tok = sample_token(base, rng);
            } else {
                tok = sample_token(token_distribution(fwd.logits, options.temperature), rng);
            }
            r.steps.push_back(TokenStep{tok, log_softmax_at(fwd.logits, tok), token_entropy(base)});
            r.router_trace.push_back(std::move(fwd.decisions.front()));
            r.tokens.push_back(tok);
            context.push_back(tok);
            if (tok == kEndOfSequence) break;
        }
        group.rollouts.push_back(std::move(r));
    }
    return group;
}

std::vector<TokenStep> perturbed_logprobs(const PolicyParams& params, const Prompt& prompt, const Rollout& rollout,
                                          const MismatchConfig& mismatch, bool use_replay, std::uint64_t stream,
                                          RouterTrace* used_decisions) {
    if (mismatch.gate_noise_scale < 0.0 || mismatch.residual_noise_scale < 0.0) {
        throw std::invalid_argument("noise scales must be nonnegative");
    }
    if (rollout.router_trace.size() != rollout.tokens.size()) {
        throw std::invalid_argument("rollout is missing its router trace");
    }
    Rng rng(derive_seed(mismatch.noise_seed, stream));
    const std::size_t E = params.config.num_experts;
    std::vector<double> noise(E);
    std::vector<Token> context = prompt.tokens;
    std::vector<TokenStep> steps;
    steps.reserve(rollout.tokens.size());
    if (used_decisions) used_decisions->clear();
    for (std::size_t t = 0; t < rollout.tokens.size(); ++t) {
        // Draw noise unconditionally so replay on/off see identical noise.
        for (auto& n : noise) n = mismatch.gate_noise_scale * rng.normal();
        ForwardOptions opt;
        if (mismatch.gate_noise_scale > 0.0) opt.gate_noise = noise;
        if (use_replay) opt.router_override = std::span<const RouterDecision>(rollout.router_trace).subspan(t, 1);
        auto fwd = forward_logits(params, context, opt);
        if (mismatch.residual_noise_scale > 0.0) {
            for (auto& l : fwd.logits) l += mismatch.residual_noise_scale * rng.normal();
        }
        const Token tok = rollout.tokens[t];
        const auto probs = token_distribution(fwd.logits, 1.0);
        steps.push_back(TokenStep{tok, log_softmax_at(fwd.logits, tok), token_entropy(probs)});
        if (used_decisions) used_decisions->push_back(std::move(fwd.decisions.front()));
        context.push_back(tok);
    }
    return steps;
}

std::vector<TokenStep> perturbed_logprobs(const PolicyParams& params, const Prompt& prompt, const Rollout& rollout,
                                          const MismatchConfig& mismatch, bool use_replay, std::uint64_t stream) {
    return perturbed_logprobs(params, prompt, rollout, mismatch, use_replay, stream, nullptr);
}

MismatchStats measure_mismatch(const PolicyParams& params, const std::vector<RolloutGroup>& groups,
                               const MismatchConfig& mismatch, bool use_replay) {
    if (groups.empty()) throw std::invalid_argument("measure_mismatch needs at least one group");
    MismatchStats s;
    double total = 0.0;
    std::uint64_t stream = 0;
    for (const auto& g : groups) {
        for (const auto& r : g.rollouts) {
            const auto steps = perturbed_logprobs(params, g.prompt, r, mismatch, use_replay, stream++);
            for (std::size_t t = 0; t < steps.size(); ++t) {
                const double d = std::abs(r.steps[t].logprob - steps[t].logprob);
                total += d;
                s.max_abs_diff = std::max(s.max_abs_diff, d);
                ++s.tokens;
            }
        }
    }
    s.mean_abs_diff = s.tokens ? total / static_cast<double>(s.tokens) : 0.0;
    return s;
}

std::vector<RolloutGroup> sample_mismatch_workload(const PolicyParams& params, std::size_t min_tokens,
                                                   std::size_t max_len, std::uint64_t seed,
                                                   std::size_t prompt_len) {
    Rng rng(seed);
    std::vector<RolloutGroup> groups;
    std::size_t tokens = 0;
    SamplingOptions opts{8, max_len, 1.0, false};
    while (tokens < min_tokens) {
        Prompt p;
        p.id = "mismatch-" + std::to_string(groups.size());
        for (std::size_t i = 0; i < prompt_len; ++i) {
            p.tokens.push_back(static_cast<Token>(1 + rng.below(params.config.vocab_size - 1)));
        }
        auto g = generate_group(params, p, opts, derive_seed(seed, groups.size()));
        for (const auto& r : g.rollouts) tokens += r.tokens.size();
        groups.push_back(std::move(g));
    }
    return groups;
}

nlohmann::json rollout_to_json(const RolloutGroup& group, std::size_t index) {
    const auto& r = group.rollouts.at(index);
    nlohmann::json j;
    j["prompt_id"] = group.prompt.id;
    j["rollout_index"] = index;
    j["tokens"] = r.tokens;
    auto& lp = j["logprobs"] = nlohmann::json::array();
    auto& ent = j["entropies"] = nlohmann::json::array();
    for (const auto& s : r.steps) {
        lp.push_back(s.logprob);
        ent.push_back(s.entropy);
    }
    auto& trace = j["router_trace"] = nlohmann::json::array();
    for (const auto& d : r.router_trace) trace.push_back({{"experts", d.experts}, {"gates", d.gates}});
    j["reward"] = r.reward;
    j["advantages"] = r.advantages;
    return j;
}

void write_rollouts_jsonl(std::ostream& os, const RolloutGroup& group) {
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) os << rollout_to_json(group, i).dump() << '\n';
}

}  // namespace rlab
