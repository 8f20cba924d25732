// SPDX-License-Identifier: Apache-2.0

#include "rlab/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace rlab {

const char* to_string(Algorithm a) {
    switch (a) {
        case Algorithm::grpo: return "grpo";
        case Algorithm::gspo_token: return "gspo_token";
        case Algorithm::espo: return "espo";
    }
    return "unknown";
}

Algorithm algorithm_from_string(const std::string& s) {
    for (auto a : {Algorithm::grpo, Algorithm::gspo_token, Algorithm::espo}) {
        if (s == to_string(a)) return a;
    }
    throw std::invalid_argument("unknown algorithm: " + s);
}

void ObjectiveConfig::validate() const {
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
    if (!(eps_min >= 0.0)) throw std::invalid_argument("eps_min must be nonnegative");
    if (num_buckets < 1) throw std::invalid_argument("num_buckets must be >= 1");
    if (algorithm != Algorithm::espo && !(eps_fixed > 0.0 && eps_fixed < 1.0)) {
        throw std::invalid_argument("eps_fixed must lie in (0, 1)");
    }
    if (!split_quantiles.empty()) {
        if (split_quantiles.size() != num_buckets - 1) {
            throw std::invalid_argument("need num_buckets - 1 split quantiles");
        }
        double prev = 0.0;
        for (double q : split_quantiles) {
            if (!(q > prev && q < 1.0)) throw std::invalid_argument("split quantiles must increase within (0, 1)");
            prev = q;
        }
    }
}

EntropyPartition partition_by_entropy(std::span<const TokenStep> steps, std::size_t num_buckets,
                                      std::span<const double> split_quantiles) {
    if (steps.empty()) throw std::invalid_argument("cannot partition an empty sequence");
    if (num_buckets < 1) throw std::invalid_argument("num_buckets must be >= 1");
    std::vector<double> q(split_quantiles.begin(), split_quantiles.end());
    if (q.empty()) {
        for (std::size_t j = 1; j < num_buckets; ++j) q.push_back(static_cast<double>(j) / num_buckets);
    }
    if (q.size() != num_buckets - 1) throw std::invalid_argument("need num_buckets - 1 split quantiles");

    const std::size_t n = steps.size();
    std::vector<double> sorted;
    sorted.reserve(n);
    for (const auto& s : steps) sorted.push_back(s.entropy);
    std::sort(sorted.begin(), sorted.end());

    // Threshold j is the entropy of the last token inside quantile q_j.
    std::vector<double> thresholds;
    for (double qj : q) {
        const auto count = static_cast<std::size_t>(std::ceil(qj * static_cast<double>(n) - 1e-12));
        thresholds.push_back(count == 0 ? -INFINITY : sorted[count - 1]);
    }

    std::vector<std::vector<std::size_t>> buckets(num_buckets);
    for (std::size_t t = 0; t < n; ++t) {
        std::size_t b = 0;
        while (b < thresholds.size() && steps[t].entropy > thresholds[b]) ++b;
        buckets[b].push_back(t);
    }
    EntropyPartition p;
    p.length = n;
    for (std::size_t b = 0; b < num_buckets; ++b) {
        if (!buckets[b].empty()) p.groups.push_back(TokenGroup{b, std::move(buckets[b]), 0.0});
    }
    return p;
}

double entropy_adaptive_clip(std::span<const double> entropies, double alpha, std::size_t vocab_size,
                             double eps_min) {
    if (entropies.empty()) throw std::invalid_argument("entropy group must be nonempty");
    if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
    double sum = 0.0;
    for (double e : entropies) sum += e;
    const double mean = sum / static_cast<double>(entropies.size());
    return std::max(eps_min, alpha * mean / std::log(static_cast<double>(vocab_size)));
}

double group_sequence_ratio(std::span<const double> new_logprobs, std::span<const double> old_logprobs,
                            std::span<const std::size_t> group) {
    if (group.empty()) throw std::invalid_argument("token group must be nonempty");
    if (new_logprobs.size() != old_logprobs.size()) throw std::invalid_argument("log-prob lists are not aligned");
    double sum = 0.0;
    for (auto t : group) {
        const double d = new_logprobs[t] - old_logprobs[t];
        if (!std::isfinite(d)) throw std::domain_error("non-finite log-prob");
        sum += d;
    }
    return std::exp(sum / static_cast<double>(group.size()));
}

TokenRatio espo_token_ratio(double new_logprob, double old_logprob, double detached_group_ratio) {
    const double v = detached_group_ratio * std::exp(new_logprob - old_logprob);
    return {v, v};
}

EntropyPartition make_partition(const Rollout& rollout, std::size_t vocab_size, const ObjectiveConfig& cfg) {
    EntropyPartition p;
    if (cfg.algorithm == Algorithm::espo) {
        p = partition_by_entropy(rollout.steps, cfg.num_buckets, cfg.split_quantiles);
        for (auto& g : p.groups) {
            std::vector<double> e;
            for (auto t : g.tokens) e.push_back(rollout.steps[t].entropy);
            g.eps = entropy_adaptive_clip(e, cfg.alpha, vocab_size, cfg.eps_min);
        }
    } else {
        if (rollout.steps.empty()) throw std::invalid_argument("cannot partition an empty sequence");
        TokenGroup g{0, std::vector<std::size_t>(rollout.steps.size()), cfg.eps_fixed};
        std::iota(g.tokens.begin(), g.tokens.end(), std::size_t{0});
        p.length = rollout.steps.size();
        p.groups.push_back(std::move(g));
    }
    return p;
}

namespace {

bool unit_ratio(const ObjectiveConfig& cfg) { return cfg.unit_group_ratio || cfg.algorithm == Algorithm::grpo; }

void check_partition(const EntropyPartition& p, std::size_t length) {
    if (p.length != length) throw std::invalid_argument("partition does not match the sequence length");
    std::vector<char> seen(length, 0);
    for (const auto& g : p.groups) {
        if (g.tokens.empty()) throw std::invalid_argument("partition has an empty group");
        for (auto t : g.tokens) {
            if (t >= length || seen[t]) throw std::invalid_argument("partition groups overlap or exceed the sequence");
            seen[t] = 1;
        }
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
        throw std::invalid_argument("partition does not cover the sequence");
    }
}

}  // namespace

SequenceSurrogate sequence_surrogate(std::span<const double> new_logprobs, std::span<const double> old_logprobs,
                                     std::span<const double> advantages, const EntropyPartition& partition,
                                     const ObjectiveConfig& cfg,
                                     std::optional<std::span<const double>> pinned_group_ratios) {
    const std::size_t n = new_logprobs.size();
    if (old_logprobs.size() != n || advantages.size() != n) {
        throw std::invalid_argument("log-probs and advantages must be aligned");
    }
    check_partition(partition, n);
    if (pinned_group_ratios && pinned_group_ratios->size() != partition.groups.size()) {
        throw std::invalid_argument("one pinned ratio per group required");
    }

    SequenceSurrogate out;
    out.dvalue_dlogprob.assign(n, 0.0);
    out.token_ratios.assign(n, 0.0);
    const double num_groups = static_cast<double>(partition.groups.size());
    for (std::size_t gi = 0; gi < partition.groups.size(); ++gi) {
        const auto& g = partition.groups[gi];
        double s_group = 1.0;
        if (pinned_group_ratios) {
            s_group = (*pinned_group_ratios)[gi];
        } else if (!unit_ratio(cfg)) {
            s_group = group_sequence_ratio(new_logprobs, old_logprobs, g.tokens);
        }
        out.group_ratios.push_back(s_group);

        const double w = cfg.weighting == GroupWeighting::per_group
                             ? 1.0 / (num_groups * static_cast<double>(g.tokens.size()))
                             : 1.0 / static_cast<double>(n);
        for (auto t : g.tokens) {
            const auto r = espo_token_ratio(new_logprobs[t], old_logprobs[t], s_group);
            const double a = advantages[t];
            const double clipped = std::clamp(r.value, 1.0 - g.eps, 1.0 + g.eps);
            const double unclipped_term = r.value * a;
            const double clipped_term = clipped * a;
            out.token_ratios[t] = r.value;
            out.value += w * std::min(unclipped_term, clipped_term);
            // The clipped branch is constant in theta; it wins the min only
            // when the ratio has left the band on the side favoured by A.
            const bool clip_active = (a > 0.0 && r.value > 1.0 + g.eps) || (a < 0.0 && r.value < 1.0 - g.eps);
            if (!clip_active) out.dvalue_dlogprob[t] = w * a * r.grad_factor;
        }
    }
    return out;
}

ObjectiveResult evaluate_objective(const PolicyParams& params, std::span<const RolloutGroup> groups,
                                   const ObjectiveConfig& cfg,
                                   const std::vector<std::vector<EntropyPartition>>& partitions,
                                   const GroupRatios* pinned_group_ratios) {
    cfg.validate();
    if (groups.empty()) throw std::invalid_argument("objective needs at least one group");
    if (!partitions.empty() && partitions.size() != groups.size()) {
        throw std::invalid_argument("one partition list per prompt group required");
    }
    const std::size_t buckets = cfg.algorithm == Algorithm::espo ? cfg.num_buckets : 1;

    ObjectiveResult res;
    res.gradient.assign(params.values.size(), 0.0);
    res.report.clip_fraction.assign(buckets, 0.0);
    res.report.mean_ratio.assign(buckets, 0.0);
    res.report.bucket_tokens.assign(buckets, 0);
    res.group_ratios.resize(groups.size());

    const double prompt_weight = 1.0 / static_cast<double>(groups.size());
    for (std::size_t pi = 0; pi < groups.size(); ++pi) {
        const auto& group = groups[pi];
        if (group.rollouts.empty()) throw std::invalid_argument("rollout group is empty");
        const double rollout_weight = prompt_weight / static_cast<double>(group.rollouts.size());
        res.group_ratios[pi].resize(group.rollouts.size());
        for (std::size_t ri = 0; ri < group.rollouts.size(); ++ri) {
            const auto& r = group.rollouts[ri];
            if (r.advantages.size() != r.tokens.size()) {
                throw std::invalid_argument("rollout advantages are missing or misaligned");
            }
            const EntropyPartition part =
                partitions.empty() ? make_partition(r, params.config.vocab_size, cfg) : partitions[pi].at(ri);

            std::optional<std::span<const RouterDecision>> trace;
            if (cfg.router_replay) trace = std::span<const RouterDecision>(r.router_trace);
            const auto steps = sequence_logprobs(params, group.prompt.tokens, r.tokens, trace);
            std::vector<double> new_lp, old_lp;
            for (std::size_t t = 0; t < steps.size(); ++t) {
                new_lp.push_back(steps[t].logprob);
                old_lp.push_back(r.steps[t].logprob);
            }

            std::optional<std::span<const double>> pinned;
            if (pinned_group_ratios) pinned = std::span<const double>((*pinned_group_ratios).at(pi).at(ri));
            auto seq = sequence_surrogate(new_lp, old_lp, r.advantages, part, cfg, pinned);

            res.value += rollout_weight * seq.value;
            for (auto& d : seq.dvalue_dlogprob) d *= rollout_weight;
            accumulate_logprob_gradient(params, group.prompt.tokens, r.tokens, seq.dvalue_dlogprob, trace,
                                        res.gradient);

            for (const auto& g : part.groups) {
                for (auto t : g.tokens) {
                    const double s = seq.token_ratios[t];
                    res.report.bucket_tokens[g.bucket] += 1;
                    res.report.mean_ratio[g.bucket] += s;
                    if (s < 1.0 - g.eps || s > 1.0 + g.eps) res.report.clip_fraction[g.bucket] += 1.0;
                }
            }
            res.group_ratios[pi][ri] = std::move(seq.group_ratios);
        }
    }
    for (std::size_t b = 0; b < buckets; ++b) {
        if (res.report.bucket_tokens[b] == 0) continue;
        const double n = static_cast<double>(res.report.bucket_tokens[b]);
        res.report.clip_fraction[b] /= n;
        res.report.mean_ratio[b] /= n;
    }
    res.report.objective = res.value;
    double sq = 0.0;
    for (double g : res.gradient) sq += g * g;
    res.report.grad_norm = std::sqrt(sq);
    return res;
}

ObjectiveResult espo_objective(const PolicyParams& params, std::span<const RolloutGroup> groups, ObjectiveConfig cfg,
                               const GroupRatios* pinned) {
    cfg.algorithm = Algorithm::espo;
    return evaluate_objective(params, groups, cfg, {}, pinned);
}

ObjectiveResult gspo_token_objective(const PolicyParams& params, std::span<const RolloutGroup> groups,
                                     double eps_fixed, ObjectiveConfig cfg, const GroupRatios* pinned) {
    cfg.algorithm = Algorithm::gspo_token;
    cfg.eps_fixed = eps_fixed;
    return evaluate_objective(params, groups, cfg, {}, pinned);
}

ObjectiveResult grpo_objective(const PolicyParams& params, std::span<const RolloutGroup> groups, double eps_fixed,
                               ObjectiveConfig cfg) {
    cfg.algorithm = Algorithm::grpo;
    cfg.eps_fixed = eps_fixed;
    return evaluate_objective(params, groups, cfg);
}

PolicyParams train_step(const PolicyParams& params, std::span<const RolloutGroup> batch, const ObjectiveConfig& cfg,
                        double lr, UpdateReport* report) {
    auto res = evaluate_objective(params, batch, cfg);
    PolicyParams next = params;
    if (lr != 0.0) {
        for (std::size_t i = 0; i < next.values.size(); ++i) next.values[i] += lr * res.gradient[i];
    }
    if (report) *report = std::move(res.report);
    return next;
}

}  // namespace rlab
