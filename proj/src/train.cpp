// SPDX-License-Identifier: Apache-2.0

#include "rlab/train.hpp"

#include <algorithm>
#include <unordered_set>

#include "rlab/rng.hpp"

namespace rlab {

nlohmann::json IterationMetrics::to_json() const {
    return {
        {"iter", iter},
        {"J", objective},
        {"grad_norm", grad_norm},
        {"mean_reward", mean_reward},
        {"zv_fraction", zv_fraction},
        {"clip_frac_low_bucket", clip_frac_low_bucket},
        {"clip_frac_high_bucket", clip_frac_high_bucket},
        {"mean_ratio_per_bucket", mean_ratio_per_bucket},
    };
}

TrainResult train_loop(const TrainConfig& config, std::span<const Prompt> tasks, std::size_t num_iters,
                       const MetricsSink& sink, std::optional<PolicyParams> initial) {
    config.model.validate();
    config.objective.validate();
    if (tasks.empty()) throw std::invalid_argument("training needs at least one prompt");
    if (config.prompts_per_iter < 1) throw std::invalid_argument("prompts_per_iter must be >= 1");
    if (config.inner_epochs < 1) throw std::invalid_argument("inner_epochs must be >= 1");

    std::vector<const Prompt*> pool;
    TrainResult result;
    if (config.prompt_filter) {
        std::vector<PromptStats> stats;
        for (const auto& p : tasks) stats.push_back({p.id, p.pass_rate_estimate, p.pass_rate_estimate ? 1u : 0u});
        result.kept_prompts = filter_prompts(stats, *config.prompt_filter);
        const std::unordered_set<std::string> kept(result.kept_prompts.begin(), result.kept_prompts.end());
        for (const auto& p : tasks) {
            if (kept.count(p.id)) pool.push_back(&p);
        }
        if (pool.empty()) throw std::invalid_argument("prompt filter removed every prompt");
    } else {
        for (const auto& p : tasks) {
            pool.push_back(&p);
            result.kept_prompts.push_back(p.id);
        }
    }

    result.params = initial ? std::move(*initial) : PolicyParams::initialize(config.model);
    if (result.params.config != config.model) throw std::invalid_argument("initial params do not match the model");
    const double log_vocab = config.model.log_vocab();

    // Parameters before the latest update; finite but overflowing weights only
    // show up as non-finite logits one iteration later.
    PolicyParams previous = result.params;
    for (std::size_t iter = 0; iter < num_iters; ++iter) {
        try {
            Rng pick(derive_seed(config.seed, 0xba7c4, iter));
            std::vector<RolloutGroup> batch;
            double reward_sum = 0.0;
            std::size_t reward_count = 0;
            for (std::size_t b = 0; b < config.prompts_per_iter; ++b) {
                const Prompt& prompt = *pool[pick.below(pool.size())];
                auto group = generate_group(result.params, prompt, config.sampling, derive_seed(config.seed, iter, b));
                for (auto& r : group.rollouts) {
                    const double base = score_rollout(prompt, r);
                    reward_sum += base;
                    ++reward_count;
                    r.reward = config.reshape_rewards
                                   ? reshape_reward(base, r.tokens, config.sampling.max_len, config.reshape).final_reward
                                   : base;
                }
                batch.push_back(std::move(group));
            }
            const auto adv = pipeline_advantages(batch, log_vocab, config.advantages);

            IterationMetrics m;
            m.iter = iter;
            m.mean_reward = reward_sum / static_cast<double>(reward_count);
            m.zv_fraction = adv.zero_variance_fraction();

            PolicyParams next = result.params;
            for (std::size_t epoch = 0; epoch < config.inner_epochs; ++epoch) {
                UpdateReport report;
                next = train_step(next, batch, config.objective, config.learning_rate, &report);
                if (epoch == 0) {
                    m.objective = report.objective;
                    m.grad_norm = report.grad_norm;
                    m.clip_frac_low_bucket = report.clip_fraction.front();
                    m.clip_frac_high_bucket = report.clip_fraction.back();
                    m.mean_ratio_per_bucket = report.mean_ratio;
                }
            }
            if (!next.all_finite() || !std::isfinite(m.objective) || !std::isfinite(m.grad_norm)) {
                throw NonFiniteUpdate(iter, std::move(result.params));
            }
            previous = std::move(result.params);
            result.params = std::move(next);
            if (sink) sink(m);
            result.metrics.push_back(std::move(m));
        } catch (const std::domain_error&) {
            throw NonFiniteUpdate(iter, previous);
        }
    }
    return result;
}

}  // namespace rlab
