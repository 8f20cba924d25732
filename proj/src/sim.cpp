// SPDX-License-Identifier: Apache-2.0

#include "rlab/sim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "rlab/rng.hpp"

namespace rlab::sim {

const char* to_string(AssignmentPolicy p) {
    return p == AssignmentPolicy::random ? "random" : "length_balanced";
}

AssignmentPolicy assignment_policy_from_string(const std::string& s) {
    if (s == "random") return AssignmentPolicy::random;
    if (s == "length_balanced") return AssignmentPolicy::length_balanced;
    throw std::invalid_argument("unknown assignment policy: " + s);
}

void SimConfig::validate() const {
    if (num_workers < 1) throw std::invalid_argument("num_workers must be >= 1");
    if (!(decode_rate > 0.0)) throw std::invalid_argument("decode_rate must be positive");
    if (!(fp8_speedup >= 1.0)) throw std::invalid_argument("fp8_speedup must be >= 1");
    if (!(detok_parallelism >= 1.0)) throw std::invalid_argument("detok_parallelism must be >= 1");
    if (!(prediction_sigma >= 0.0)) throw std::invalid_argument("prediction_sigma must be >= 0");
    if (!(update_time >= 0.0)) throw std::invalid_argument("update_time must be >= 0");
}

std::vector<SimJob> predict_lengths(std::vector<SimJob> jobs, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be >= 0");
    Rng rng(seed);
    for (auto& j : jobs) {
        const double z = rng.normal();
        j.predicted_len = sigma == 0.0 ? j.true_len : j.true_len * std::exp(sigma * z);
    }
    return jobs;
}

Assignment assign(const std::vector<SimJob>& jobs, std::size_t num_workers, AssignmentPolicy policy,
                  std::uint64_t seed) {
    if (num_workers < 1) throw std::invalid_argument("num_workers must be >= 1");
    Assignment out(num_workers);
    std::vector<std::size_t> order(jobs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    if (policy == AssignmentPolicy::random) {
        Rng rng(seed);
        rng.shuffle(order.begin(), order.end());
        for (std::size_t i = 0; i < order.size(); ++i) out[i % num_workers].push_back(order[i]);
        return out;
    }

    // Longest predicted job first onto the least-loaded worker.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return jobs[a].predicted_len > jobs[b].predicted_len; });
    using Load = std::pair<double, std::size_t>;  // (load, worker)
    std::priority_queue<Load, std::vector<Load>, std::greater<>> loads;
    for (std::size_t w = 0; w < num_workers; ++w) loads.emplace(0.0, w);
    for (auto j : order) {
        auto [load, w] = loads.top();
        loads.pop();
        out[w].push_back(j);
        loads.emplace(load + jobs[j].predicted_len, w);
    }
    return out;
}

SimTimeline simulate(const std::vector<SimJob>& jobs, const Assignment& assignment, const SimConfig& config) {
    config.validate();
    if (assignment.size() != config.num_workers) throw std::invalid_argument("assignment/worker count mismatch");
    std::vector<int> seen(jobs.size(), 0);
    for (const auto& w : assignment) {
        for (auto j : w) {
            if (j >= jobs.size()) throw std::invalid_argument("assignment references an unknown job");
            ++seen[j];
        }
    }
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        if (seen[j] != 1) {
            throw std::invalid_argument("job " + std::to_string(jobs[j].id) + " assigned to " +
                                        std::to_string(seen[j]) + " workers");
        }
        if (!(jobs[j].true_len > 0.0) || jobs[j].reward_cost < 0.0) {
            throw std::invalid_argument("job lengths must be positive and reward costs nonnegative");
        }
    }

    SimTimeline tl;
    tl.worker_busy.resize(config.num_workers);
    const double rate = config.decode_rate * config.fp8_speedup;
    std::vector<double> finish(jobs.size(), 0.0);
    double busy = 0.0;
    for (std::size_t w = 0; w < assignment.size(); ++w) {
        double t = 0.0;
        for (auto j : assignment[w]) {
            const double dur = jobs[j].true_len / rate;
            tl.worker_busy[w].push_back({t, t + dur, j});
            busy += dur;
            t += dur;
            finish[j] = t;
        }
        tl.rollout_end = std::max(tl.rollout_end, t);
    }

    // Rewards are processed in order of decode completion.
    std::vector<std::size_t> order(jobs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::tie(finish[a], jobs[a].id) < std::tie(finish[b], jobs[b].id);
    });

    tl.reward_end = tl.rollout_end;
    if (config.overlap_reward) {
        std::priority_queue<double, std::vector<double>, std::greater<>> lanes;
        for (std::size_t l = 0; l < config.reward_lanes; ++l) lanes.push(0.0);
        for (auto j : order) {
            const double cost = jobs[j].reward_cost / config.detok_parallelism;
            double start = finish[j];
            if (config.reward_lanes > 0) {
                start = std::max(start, lanes.top());
                lanes.pop();
                lanes.push(start + cost);
            }
            tl.reward_intervals.push_back({start, start + cost, j});
            tl.reward_end = std::max(tl.reward_end, start + cost);
        }
    } else {
        double t = tl.rollout_end;
        for (auto j : order) {
            const double cost = jobs[j].reward_cost / config.detok_parallelism;
            tl.reward_intervals.push_back({t, t + cost, j});
            t += cost;
        }
        tl.reward_end = t;
    }

    tl.makespan = tl.reward_end + config.update_time;
    tl.stage_totals = {tl.rollout_end, tl.reward_end - tl.rollout_end, config.update_time};
    tl.idle_ratio =
        tl.makespan > 0.0 ? 1.0 - busy / (static_cast<double>(config.num_workers) * tl.makespan) : 0.0;
    return tl;
}

SimTimeline run(const std::vector<SimJob>& jobs, const SimConfig& config) {
    const auto predicted = predict_lengths(jobs, config.prediction_sigma, derive_seed(config.seed, 1));
    const auto a = assign(predicted, config.num_workers, config.assignment, derive_seed(config.seed, 2));
    return simulate(predicted, a, config);
}

const char* to_string(Feature f) {
    switch (f) {
        case Feature::detok_parallelism: return "detok_parallelism";
        case Feature::overlap: return "overlap";
        case Feature::fp8: return "fp8";
        case Feature::length_balanced: return "length_balanced";
    }
    return "unknown";
}

Feature feature_from_string(const std::string& s) {
    for (auto f : {Feature::detok_parallelism, Feature::overlap, Feature::fp8, Feature::length_balanced}) {
        if (s == to_string(f)) return f;
    }
    throw std::invalid_argument("unknown feature: " + s);
}

SimConfig apply_features(SimConfig c, const std::vector<Feature>& enabled, const FeatureSettings& settings) {
    for (auto f : enabled) {
        switch (f) {
            case Feature::detok_parallelism: c.detok_parallelism = settings.detok_parallelism; break;
            case Feature::overlap: c.overlap_reward = true; break;
            case Feature::fp8: c.fp8_speedup = settings.fp8_speedup; break;
            case Feature::length_balanced: c.assignment = AssignmentPolicy::length_balanced; break;
        }
    }
    return c;
}

std::vector<SpeedupRow> speedup_report(const std::vector<SimJob>& jobs, const SimConfig& base,
                                       const std::vector<Feature>& stack, const FeatureSettings& settings) {
    for (std::size_t i = 0; i < stack.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (stack[i] == stack[j]) throw std::invalid_argument("feature stack repeats a feature");
        }
    }
    std::vector<SpeedupRow> rows;
    const double base_makespan = run(jobs, base).makespan;
    rows.push_back({"baseline", base_makespan, 1.0});
    std::vector<Feature> enabled;
    for (auto f : stack) {
        enabled.push_back(f);
        const double m = run(jobs, apply_features(base, enabled, settings)).makespan;
        rows.push_back({std::string("+") + to_string(f), m, base_makespan / m});
    }
    return rows;
}

StageBreakdown stage_breakdown(const SimTimeline& t) {
    if (!(t.makespan > 0.0)) return {};
    return {100.0 * t.stage_totals.rollout / t.makespan, 100.0 * t.stage_totals.reward / t.makespan,
            100.0 * t.stage_totals.other / t.makespan};
}

std::vector<SimJob> lognormal_workload(const WorkloadSpec& spec) {
    Rng rng(spec.seed);
    std::vector<SimJob> jobs;
    jobs.reserve(spec.num_jobs);
    for (std::size_t i = 0; i < spec.num_jobs; ++i) {
        const double len = std::exp(spec.log_mean + spec.log_sigma * rng.normal());
        jobs.push_back({i, len, len, spec.reward_cost});
    }
    return jobs;
}

std::vector<SimJob> load_workload(std::istream& is) {
    std::vector<SimJob> jobs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw std::invalid_argument("workload line " + std::to_string(lineno) + ": not a JSON object");
        }
        SimJob job;
        try {
            job.id = j.at("job_id").get<std::size_t>();
            job.true_len = j.at("true_len").get<double>();
            job.reward_cost = j.value("reward_cost", 0.0);
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("workload line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!(job.true_len > 0.0) || job.reward_cost < 0.0) {
            throw std::invalid_argument("workload line " + std::to_string(lineno) + ": bad length or cost");
        }
        job.predicted_len = job.true_len;
        jobs.push_back(job);
    }
    return jobs;
}

std::string speedup_csv(const std::vector<SpeedupRow>& rows) {
    std::ostringstream os;
    os << "feature,cumulative_speedup\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.4f", r.cumulative_speedup);
        os << r.label << ',' << buf << '\n';
    }
    return os.str();
}

nlohmann::json speedup_json(const std::vector<SpeedupRow>& rows) {
    auto arr = nlohmann::json::array();
    for (const auto& r : rows) {
        arr.push_back({{"feature", r.label}, {"makespan", r.makespan}, {"cumulative_speedup", r.cumulative_speedup}});
    }
    return arr;
}

nlohmann::json breakdown_json(const StageBreakdown& b, const SimTimeline& t) {
    return {
        {"rollout_pct", b.rollout_pct},
        {"reward_pct", b.reward_pct},
        {"other_pct", b.other_pct},
        {"makespan", t.makespan},
        {"idle_ratio", t.idle_ratio},
    };
}

}  // namespace rlab::sim
