// SPDX-License-Identifier: Apache-2.0
//
// Small toy-model instances shared by the unit and acceptance tests.

#pragma once

#include <cstdint>
#include <vector>

#include "rlab/objective.hpp"
#include "rlab/policy.hpp"
#include "rlab/rng.hpp"
#include "rlab/rollout.hpp"

namespace fixtures {

struct ObjectiveInstance {
    rlab::PolicyParams old_params;
    rlab::PolicyParams params;  // old_params moved by Gaussian noise
    std::vector<rlab::RolloutGroup> groups;
};

inline rlab::ModelConfig toy_model(std::uint64_t seed, std::size_t experts = 4, std::size_t top_k = 2) {
    rlab::ModelConfig c;
    c.vocab_size = 8;
    c.context_window = 16;
    c.embed_dim = 6;
    c.num_experts = experts;
    c.top_k = top_k;
    c.seed = seed;
    return c;
}

// Rollouts sampled from old_params, random per-token advantages, and a
// current policy displaced by `displacement` so some ratios leave the clip band.
inline ObjectiveInstance objective_instance(std::uint64_t seed, double displacement = 0.1, std::size_t prompts = 4,
                                            std::size_t group_size = 4, std::size_t max_len = 4,
                                            std::size_t experts = 4, std::size_t top_k = 2) {
    ObjectiveInstance inst;
    inst.old_params = rlab::PolicyParams::initialize(toy_model(seed, experts, top_k));
    rlab::Rng rng(rlab::derive_seed(seed, 99));
    for (std::size_t p = 0; p < prompts; ++p) {
        rlab::Prompt prompt;
        prompt.id = "p" + std::to_string(p);
        for (int i = 0; i < 3; ++i) prompt.tokens.push_back(static_cast<rlab::Token>(1 + rng.below(7)));
        auto g = rlab::generate_group(inst.old_params, prompt, {group_size, max_len, 1.0, false},
                                      rlab::derive_seed(seed, p));
        for (auto& r : g.rollouts) {
            const double a = rng.uniform(-1.5, 1.5);
            for (std::size_t t = 0; t < r.tokens.size(); ++t) r.advantages.push_back(a + 0.1 * rng.normal());
        }
        inst.groups.push_back(std::move(g));
    }
    inst.params = inst.old_params;
    for (auto& v : inst.params.values) v += displacement * rng.normal();
    return inst;
}

inline rlab::PolicyParams with_values(const rlab::PolicyParams& p, const std::vector<double>& values) {
    rlab::PolicyParams q = p;
    q.values = values;
    return q;
}

}  // namespace fixtures
