// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "rlab/rng.hpp"
#include "rlab/sim.hpp"

using namespace rlab::sim;
using Catch::Approx;

namespace {

std::vector<SimJob> jobs_of(const std::vector<double>& lengths, double reward_cost = 0.0) {
    std::vector<SimJob> jobs;
    for (std::size_t i = 0; i < lengths.size(); ++i) jobs.push_back({i, lengths[i], lengths[i], reward_cost});
    return jobs;
}

double max_load(const std::vector<SimJob>& jobs, const Assignment& a) {
    double m = 0.0;
    for (const auto& w : a) {
        double s = 0.0;
        for (auto j : w) s += jobs[j].true_len;
        m = std::max(m, s);
    }
    return m;
}

SimConfig cfg_with(std::size_t workers, bool overlap = false) {
    SimConfig c;
    c.num_workers = workers;
    c.overlap_reward = overlap;
    return c;
}

}  // namespace

TEST_CASE("length prediction") {
    const auto jobs = lognormal_workload({10000, std::log(100.0), 0.5, 1.0, 3});
    const auto exact = predict_lengths(jobs, 0.0, 1);
    for (const auto& j : exact) CHECK(j.predicted_len == j.true_len);

    const auto noisy = predict_lengths(jobs, 0.3, 1);
    double sum = 0.0, sq = 0.0;
    for (const auto& j : noisy) {
        const double e = std::log(j.predicted_len / j.true_len);
        sum += e;
        sq += e * e;
    }
    const double n = static_cast<double>(noisy.size());
    const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
    CHECK(std::abs(sd - 0.3) < 0.03);

    const auto again = predict_lengths(jobs, 0.3, 1);
    for (std::size_t i = 0; i < jobs.size(); ++i) CHECK(again[i].predicted_len == noisy[i].predicted_len);
    CHECK_THROWS_AS(predict_lengths(jobs, -0.1, 1), std::invalid_argument);
}

TEST_CASE("assignment policies") {
    const auto equal = jobs_of({5, 5, 5, 5});
    const auto a = assign(equal, 2, AssignmentPolicy::length_balanced, 0);
    CHECK(a[0].size() == 2);
    CHECK(a[1].size() == 2);
    CHECK(max_load(equal, a) == 10.0);

    const auto skew = jobs_of({100, 1, 1, 1});
    const auto lpt = assign(skew, 2, AssignmentPolicy::length_balanced, 0);
    CHECK(lpt[0] == std::vector<std::size_t>{0});
    CHECK(lpt[1] == std::vector<std::size_t>{1, 2, 3});
    CHECK(max_load(skew, lpt) == 100.0);
    CHECK(oracle::optimal_makespan({100, 1, 1, 1}, 2) == 100.0);

    // Round-robin splits 2 + 2, so the long job always shares a worker.
    double worst_split = 0.0;
    for (unsigned mask = 0; mask < 16; ++mask) {
        if (__builtin_popcount(mask) != 2) continue;
        double l0 = 0.0, l1 = 0.0;
        for (int j = 0; j < 4; ++j) ((mask >> j) & 1 ? l0 : l1) += skew[static_cast<std::size_t>(j)].true_len;
        worst_split = std::max(worst_split, std::max(l0, l1));
    }
    CHECK(worst_split == 101.0);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        CHECK(max_load(skew, assign(skew, 2, AssignmentPolicy::random, seed)) == 101.0);
    }

    for (auto p : {AssignmentPolicy::random, AssignmentPolicy::length_balanced}) {
        const auto one = assign(skew, 1, p, 4);
        REQUIRE(one.size() == 1);
        CHECK(one[0].size() == 4);
    }
    CHECK_THROWS_AS(assign(skew, 0, AssignmentPolicy::random, 0), std::invalid_argument);
}

TEST_CASE("simulate: hand-checked schedules") {
    auto one = jobs_of({40}, 7);
    auto t = simulate(one, {{0}}, cfg_with(1));
    CHECK(t.makespan == 47.0);
    CHECK(t.rollout_end == 40.0);
    const auto b = stage_breakdown(t);
    CHECK(b.rollout_pct == Approx(100.0 * 40 / 47).margin(1e-12));
    CHECK(b.reward_pct == Approx(100.0 * 7 / 47).margin(1e-12));
    CHECK(b.other_pct == 0.0);
    CHECK(t.idle_ratio == Approx(7.0 / 47.0).margin(1e-15));

    // Three workers finish at 10, 20, 30; each reward costs 5.
    const auto three = jobs_of({10, 20, 30}, 5);
    const Assignment spread = {{0}, {1}, {2}};
    t = simulate(three, spread, cfg_with(3, true));
    CHECK(t.makespan == 35.0);
    REQUIRE(t.reward_intervals.size() == 3);
    CHECK(t.reward_intervals[0].start == 10.0);
    CHECK(t.reward_intervals[1].start == 20.0);
    CHECK(t.reward_intervals[2].start == 30.0);
    CHECK(t.stage_totals.reward == 5.0);
    t = simulate(three, spread, cfg_with(3, false));
    CHECK(t.makespan == 45.0);

    SimConfig fast = cfg_with(3);
    fast.fp8_speedup = 2.0;
    const auto slow_t = simulate(three, spread, cfg_with(3));
    const auto fast_t = simulate(three, spread, fast);
    for (std::size_t w = 0; w < 3; ++w) {
        CHECK(fast_t.worker_busy[w][0].start == slow_t.worker_busy[w][0].start / 2);
        CHECK(fast_t.worker_busy[w][0].end == slow_t.worker_busy[w][0].end / 2);
    }

    SimConfig upd = cfg_with(1);
    upd.update_time = 3.0;
    t = simulate(one, {{0}}, upd);
    CHECK(t.makespan == 50.0);
    CHECK(stage_breakdown(t).other_pct == Approx(6.0).margin(1e-12));
}

TEST_CASE("simulate rejects bad assignments and configs") {
    const auto jobs = jobs_of({1, 2});
    CHECK_THROWS_AS(simulate(jobs, {{0}, {}}, cfg_with(2)), std::invalid_argument);
    CHECK_THROWS_AS(simulate(jobs, {{0, 1}, {1}}, cfg_with(2)), std::invalid_argument);
    CHECK_THROWS_AS(simulate(jobs, {{0, 1}}, cfg_with(2)), std::invalid_argument);
    CHECK_THROWS_AS(simulate(jobs, {{0, 5}, {1}}, cfg_with(2)), std::invalid_argument);
    SimConfig bad = cfg_with(1);
    bad.fp8_speedup = 0.5;
    CHECK_THROWS_AS(simulate(jobs, {{0, 1}}, bad), std::invalid_argument);
    bad = cfg_with(0);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("timeline invariants on random workloads") {
    rlab::Rng rng(9);
    for (int i = 0; i < 100; ++i) {
        WorkloadSpec spec{1 + rng.below(60), std::log(500.0), 0.8, rng.uniform(0.0, 100.0), rng.next_u64()};
        const auto jobs = lognormal_workload(spec);
        SimConfig c = cfg_with(1 + rng.below(8), rng.below(2) == 1);
        c.fp8_speedup = rng.uniform(1.0, 2.0);
        c.detok_parallelism = rng.uniform(1.0, 4.0);
        c.assignment = rng.below(2) ? AssignmentPolicy::random : AssignmentPolicy::length_balanced;
        c.seed = rng.next_u64();
        const auto t = run(jobs, c);

        double busy = 0.0, decode = 0.0;
        for (const auto& w : t.worker_busy) {
            for (std::size_t k = 0; k < w.size(); ++k) {
                busy += w[k].end - w[k].start;
                if (k > 0) CHECK(w[k].start >= w[k - 1].end);
            }
        }
        for (const auto& j : jobs) decode += j.true_len / c.fp8_speedup;
        CHECK(busy == Approx(decode).epsilon(1e-12));
        CHECK(t.idle_ratio >= 0.0);
        CHECK(t.idle_ratio <= 1.0);
        CHECK(t.idle_ratio == Approx(1.0 - busy / (static_cast<double>(c.num_workers) * t.makespan)).margin(1e-12));
        const auto b = stage_breakdown(t);
        CHECK(b.rollout_pct + b.reward_pct + b.other_pct == Approx(100.0).margin(1e-9));

        const auto again = run(jobs, c);
        CHECK(again.makespan == t.makespan);
        CHECK(again.idle_ratio == t.idle_ratio);
    }
}

TEST_CASE("overlap never hurts") {
    rlab::Rng rng(10);
    for (int i = 0; i < 500; ++i) {
        const auto jobs = lognormal_workload({1 + rng.below(40), std::log(1000.0), rng.uniform(0.1, 1.5),
                                              rng.uniform(0.0, 500.0), rng.next_u64()});
        SimConfig off = cfg_with(1 + rng.below(16));
        off.seed = rng.next_u64();
        off.assignment = rng.below(2) ? AssignmentPolicy::random : AssignmentPolicy::length_balanced;
        SimConfig on = off;
        on.overlap_reward = true;
        REQUIRE(run(jobs, on).makespan <= run(jobs, off).makespan);
        on.reward_lanes = 1 + rng.below(3);
        REQUIRE(run(jobs, on).makespan <= run(jobs, off).makespan);
    }
}

TEST_CASE("length balancing beats random assignment on average") {
    double lpt = 0.0, rnd = 0.0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto jobs = lognormal_workload({128, std::log(8000.0), 0.8, 0.0, 1000 + s});
        SimConfig c = cfg_with(16);
        c.seed = s;
        rnd += run(jobs, c).makespan;
        c.assignment = AssignmentPolicy::length_balanced;
        lpt += run(jobs, c).makespan;
    }
    CHECK(lpt <= rnd);
}

TEST_CASE("LPT stays within 4/3 of optimal plus the longest job") {
    rlab::Rng rng(12);
    for (int i = 0; i < 150; ++i) {
        const std::size_t n = 1 + rng.below(10), W = 1 + rng.below(3);
        std::vector<double> len;
        for (std::size_t k = 0; k < n; ++k) len.push_back(std::floor(rng.uniform(1.0, 50.0)));
        const auto jobs = jobs_of(len);
        const double lpt = max_load(jobs, assign(jobs, W, AssignmentPolicy::length_balanced, 0));
        const double opt = oracle::optimal_makespan(len, W);
        CHECK(lpt >= opt);
        CHECK(lpt <= 4.0 / 3.0 * opt + *std::max_element(len.begin(), len.end()));
        // The classical bound for LPT holds as well.
        CHECK(lpt <= (4.0 / 3.0 - 1.0 / (3.0 * static_cast<double>(W))) * opt + 1e-9);
    }
}

TEST_CASE("speedup report") {
    const auto jobs = lognormal_workload({512, std::log(8000.0), 0.8, 200.0, 7});
    SimConfig base = cfg_with(16);
    base.seed = 5;
    auto rows = speedup_report(jobs, base, {});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].label == "baseline");
    CHECK(rows[0].cumulative_speedup == 1.0);

    FeatureSettings unit{1.0, 1.0};
    rows = speedup_report(jobs, base, {Feature::fp8, Feature::detok_parallelism}, unit);
    for (const auto& r : rows) CHECK(std::abs(r.cumulative_speedup - 1.0) <= 1e-12);

    const std::vector<Feature> stack = {Feature::detok_parallelism, Feature::overlap, Feature::fp8,
                                        Feature::length_balanced};
    rows = speedup_report(jobs, base, stack);
    REQUIRE(rows.size() == 5);
    std::vector<Feature> enabled;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].cumulative_speedup > rows[i - 1].cumulative_speedup);
        enabled.push_back(stack[i - 1]);
        // Independent re-run of each prefix.
        SimConfig c = base;
        for (auto f : enabled) {
            if (f == Feature::detok_parallelism) c.detok_parallelism = 3.0;
            if (f == Feature::overlap) c.overlap_reward = true;
            if (f == Feature::fp8) c.fp8_speedup = 1.43;
            if (f == Feature::length_balanced) c.assignment = AssignmentPolicy::length_balanced;
        }
        CHECK(rows[i].cumulative_speedup == run(jobs, base).makespan / run(jobs, c).makespan);
    }
    CHECK(rows.back().cumulative_speedup >= 1.3);
    CHECK_THROWS_AS(speedup_report(jobs, base, {Feature::fp8, Feature::fp8}), std::invalid_argument);
}

TEST_CASE("stage breakdown") {
    const auto jobs = lognormal_workload({64, std::log(8000.0), 0.8, 50.0, 1});
    const auto t = run(jobs, cfg_with(8));
    const auto b = stage_breakdown(t);
    CHECK(b.rollout_pct + b.reward_pct == Approx(100.0).margin(1e-9));
    CHECK(b.rollout_pct > 50.0);
}

TEST_CASE("workload files and report formats") {
    std::istringstream ok("{\"job_id\": 3, \"true_len\": 12.5, \"reward_cost\": 2}\n\n{\"job_id\": 4, \"true_len\": 1}\n");
    const auto jobs = load_workload(ok);
    REQUIRE(jobs.size() == 2);
    CHECK(jobs[0].id == 3);
    CHECK(jobs[0].predicted_len == 12.5);
    CHECK(jobs[1].reward_cost == 0.0);
    std::istringstream neg("{\"job_id\": 3, \"true_len\": -1}\n");
    CHECK_THROWS_AS(load_workload(neg), std::invalid_argument);
    std::istringstream junk("[]\n");
    CHECK_THROWS_AS(load_workload(junk), std::invalid_argument);

    const std::vector<SpeedupRow> rows = {{"baseline", 10.0, 1.0}, {"+fp8", 8.0, 1.25}};
    CHECK(speedup_csv(rows) == "feature,cumulative_speedup\nbaseline,1.0000\n+fp8,1.2500\n");
    CHECK(speedup_json(rows)[1]["cumulative_speedup"] == 1.25);
    CHECK(feature_from_string("overlap") == Feature::overlap);
    CHECK_THROWS(feature_from_string("turbo"));
}
