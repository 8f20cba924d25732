// SPDX-License-Identifier: Apache-2.0

#include "rlab/zvp.hpp"

#include <cmath>
#include <stdexcept>

namespace rlab {

GroupRewardStats group_stats(std::span<const double> rewards, double var_eps) {
    if (rewards.empty()) throw std::invalid_argument("group needs at least one reward");
    GroupRewardStats s;
    s.rewards.assign(rewards.begin(), rewards.end());
    const double n = static_cast<double>(rewards.size());
    for (double r : rewards) s.mean += r;
    s.mean /= n;
    for (double r : rewards) s.variance += (r - s.mean) * (r - s.mean);
    s.variance /= n;
    s.is_zero_variance = s.variance <= var_eps;
    return s;
}

ZeroVarianceLaw zv_rate_bernoulli(double p, std::size_t n) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p must lie in [0, 1]");
    if (n < 1) throw std::invalid_argument("N must be >= 1");
    const double k = static_cast<double>(n);
    const double fail_all = std::pow(1.0 - p, k);
    return {std::pow(p, k) + fail_all, 1.0 - fail_all};
}

std::vector<std::string> filter_prompts(std::span<const PromptStats> stats, const PassRateBand& band) {
    if (!(band.p_lo >= 0.0 && band.p_lo < band.p_hi && band.p_hi <= 1.0)) {
        throw std::invalid_argument("pass-rate band needs 0 <= p_lo < p_hi <= 1");
    }
    std::vector<std::string> kept;
    for (const auto& s : stats) {
        if (!s.probe_pass_rate || (*s.probe_pass_rate >= band.p_lo && *s.probe_pass_rate <= band.p_hi)) {
            kept.push_back(s.prompt_id);
        }
    }
    return kept;
}

std::vector<PromptStats> load_probe_stats(std::istream& is) {
    std::vector<PromptStats> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw std::invalid_argument("probe stats line " + std::to_string(lineno) + ": not a JSON object");
        }
        PromptStats s;
        try {
            s.prompt_id = j.at("prompt_id").get<std::string>();
            if (j.contains("pass_rate") && !j["pass_rate"].is_null()) {
                s.probe_pass_rate = j["pass_rate"].get<double>();
                s.probe_count = j.at("n").get<std::size_t>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("probe stats line " + std::to_string(lineno) + ": " + e.what());
        }
        if (s.probe_pass_rate && (*s.probe_pass_rate < 0.0 || *s.probe_pass_rate > 1.0 || s.probe_count < 1)) {
            throw std::invalid_argument("probe stats line " + std::to_string(lineno) + ": out of range");
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<double> group_advantages(const GroupRewardStats& stats, double adv_eps) {
    if (stats.is_zero_variance) {
        throw std::logic_error("group_advantages called on a zero-variance group");
    }
    const double denom = std::sqrt(stats.variance) + adv_eps;
    std::vector<double> adv;
    adv.reserve(stats.rewards.size());
    for (double r : stats.rewards) adv.push_back((r - stats.mean) / denom);
    return adv;
}

std::vector<std::vector<double>> reshape_zero_variance(const RolloutGroup& group, double log_vocab,
                                                       const ZeroVarianceReshape& cfg, double var_eps) {
    std::vector<double> rewards;
    for (const auto& r : group.rollouts) rewards.push_back(r.reward);
    const auto stats = group_stats(rewards, var_eps);
    if (!stats.is_zero_variance) throw std::logic_error("reshape_zero_variance needs a zero-variance group");
    if (!(log_vocab > 0.0)) throw std::invalid_argument("log|V| must be positive");

    const double sign = stats.mean < cfg.success_threshold ? 1.0 : -1.0;
    std::vector<std::vector<double>> out;
    out.reserve(group.rollouts.size());
    for (const auto& r : group.rollouts) {
        std::vector<double> a(r.steps.size(), 0.0);
        if (!r.steps.empty()) {
            double mean = 0.0;
            for (const auto& s : r.steps) mean += s.entropy;
            mean /= static_cast<double>(r.steps.size());
            for (std::size_t t = 0; t < r.steps.size(); ++t) {
                a[t] = cfg.beta * sign * (r.steps[t].entropy - mean) / log_vocab;
            }
        }
        out.push_back(std::move(a));
    }
    return out;
}

AdvantageReport pipeline_advantages(std::span<RolloutGroup> groups, double log_vocab, const AdvantageConfig& cfg) {
    AdvantageReport report;
    for (auto& g : groups) {
        ++report.groups;
        std::vector<double> rewards;
        for (const auto& r : g.rollouts) rewards.push_back(r.reward);
        const auto stats = group_stats(rewards, cfg.var_eps);
        if (!stats.is_zero_variance) {
            const auto adv = group_advantages(stats, cfg.adv_eps);
            for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
                g.rollouts[i].advantages.assign(g.rollouts[i].tokens.size(), adv[i]);
            }
            continue;
        }
        ++report.zero_variance_groups;
        if (cfg.reshape_zero_variance) {
            auto adv = reshape_zero_variance(g, log_vocab, cfg.reshape, cfg.var_eps);
            for (std::size_t i = 0; i < g.rollouts.size(); ++i) g.rollouts[i].advantages = std::move(adv[i]);
        } else {
            for (auto& r : g.rollouts) r.advantages.assign(r.tokens.size(), 0.0);
        }
    }
    return report;
}

}  // namespace rlab
