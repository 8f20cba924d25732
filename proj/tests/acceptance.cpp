// SPDX-License-Identifier: Apache-2.0
//
// One PASS/FAIL line per acceptance criterion; nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "rlab/config.hpp"
#include "rlab/matching.hpp"
#include "rlab/objective.hpp"
#include "rlab/reward.hpp"
#include "rlab/rng.hpp"
#include "rlab/rollout.hpp"
#include "rlab/sim.hpp"
#include "rlab/train.hpp"
#include "rlab/zvp.hpp"

using namespace rlab;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
    void require(bool ok, const std::string& what) {
        if (!ok && pass) detail = what;
        pass = pass && ok;
    }
};

std::vector<json> read_jsonl(const std::string& name) {
    std::ifstream is(std::string(RLAB_TEST_DATA_DIR) + "/" + name);
    if (!is) throw std::runtime_error("missing test data " + name);
    std::vector<json> out;
    for (std::string line; std::getline(is, line);) {
        if (!line.empty()) out.push_back(json::parse(line));
    }
    return out;
}

std::string num(double v, const char* spec = "%.3g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

ToolCall random_call(Rng& rng) {
    static const char* names[] = {"search", "get_weather", "add_to_cart", "track_order"};
    static const char* keys[] = {"query", "limit", "city", "unit", "item_id"};
    static const char* values[] = {"a", "b", "10", "5"};
    ToolCall c{names[rng.below(4)], {}};
    for (std::uint64_t i = 0, n = rng.below(4); i < n; ++i) c.params[keys[rng.below(5)]] = values[rng.below(4)];
    return c;
}

// ---------------------------------------------------------------------------

Outcome tool_reward_exactness() {
    Outcome o;
    const auto cases = read_jsonl("tool_cases.jsonl");
    o.require(cases.size() >= 50, "frozen suite has fewer than 50 cases");
    bool top = false, bottom = false;
    for (const auto& c : cases) {
        std::vector<ToolCall> gold, pred;
        for (const auto& g : c["gold"]) gold.push_back(tool_call_from_json(g));
        for (const auto& p : c["pred"]) pred.push_back(tool_call_from_json(p));
        o.require(gold.size() <= 4 && pred.size() <= 4, "case larger than 4 calls");
        const double fast = correctness_reward(gold, pred, MatchMethod::assignment).r_correct;
        const double slow = correctness_reward(gold, pred, MatchMethod::exhaustive).r_correct;
        const double brute = oracle::tool_r_correct(gold, pred);
        const double frozen = c["r_correct_num"].get<double>() / c["r_correct_den"].get<double>();
        o.require(fast == slow, c["name"].get<std::string>() + ": assignment != enumeration");
        o.require(std::abs(fast - brute) <= 1e-12 && std::abs(fast - frozen) <= 1e-12,
                  c["name"].get<std::string>() + ": differs from brute force");
        top |= fast == 3.0;
        bottom |= fast == -3.0;
    }
    o.require(top && bottom, "saturation cases missing");
    Rng rng(2024);
    for (int i = 0; i < 10000; ++i) {
        std::vector<ToolCall> gold, pred;
        for (std::uint64_t k = 0, n = rng.below(5); k < n; ++k) gold.push_back(random_call(rng));
        for (std::uint64_t k = 0, n = rng.below(5); k < n; ++k) pred.push_back(random_call(rng));
        const double r = correctness_reward(gold, pred).r_correct;
        o.require(r >= -3.0 && r <= 3.0, "fuzzed reward out of range");
    }
    if (o.pass) o.detail = std::to_string(cases.size()) + " frozen cases, 10000 fuzzed";
    return o;
}

ObjectiveConfig config_for(Algorithm a) {
    ObjectiveConfig c;
    c.algorithm = a;
    return c;
}

std::vector<double> objective_fd(const fixtures::ObjectiveInstance& inst, const ObjectiveConfig& cfg,
                                 const GroupRatios* pinned) {
    auto f = [&](const std::vector<double>& x) {
        return evaluate_objective(fixtures::with_values(inst.params, x), inst.groups, cfg, {}, pinned).value;
    };
    return oracle::central_difference(f, inst.params.values, 1e-5);
}

Outcome gradient_fidelity() {
    Outcome o;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const double displacement = 0.05 + 0.02 * static_cast<double>(seed % 5);
        const auto plain = fixtures::objective_instance(100 + seed, displacement);
        for (auto alg : {Algorithm::grpo, Algorithm::gspo_token}) {
            const auto cfg = config_for(alg);
            const auto res = evaluate_objective(plain.params, plain.groups, cfg);
            const GroupRatios* pin = alg == Algorithm::gspo_token ? &res.group_ratios : nullptr;
            const double err = oracle::relative_error(res.gradient, objective_fd(plain, cfg, pin));
            worst = std::max(worst, err);
            o.require(err < 1e-3, std::string(to_string(alg)) + " seed " + std::to_string(seed) + " rel err " + num(err));
        }
        const auto inst = fixtures::objective_instance(200 + seed, displacement);
        const auto cfg = config_for(Algorithm::espo);
        const auto res = evaluate_objective(inst.params, inst.groups, cfg);
        const double err = oracle::relative_error(res.gradient, objective_fd(inst, cfg, &res.group_ratios));
        worst = std::max(worst, err);
        o.require(err < 1e-3, "espo seed " + std::to_string(seed) + " rel err " + num(err));
    }
    const auto inst = fixtures::objective_instance(31, 0.1);
    const auto cfg = config_for(Algorithm::espo);
    const auto res = evaluate_objective(inst.params, inst.groups, cfg);
    const double pinned = oracle::relative_error(res.gradient, objective_fd(inst, cfg, &res.group_ratios));
    o.require(pinned < 1e-4, "pinned group-ratio check rel err " + num(pinned));
    if (o.pass) o.detail = "60 instances, worst rel err " + num(worst) + "; pinned path " + num(pinned);
    return o;
}

Outcome reduction_identity() {
    Outcome o;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto inst = fixtures::objective_instance(300 + seed, 0.15);
        ObjectiveConfig espo;
        espo.num_buckets = 1;
        espo.split_quantiles = {};
        espo.alpha = 1e-300;
        espo.eps_min = 0.2;
        const auto a = evaluate_objective(inst.params, inst.groups, espo);
        const auto b = gspo_token_objective(inst.params, inst.groups, 0.2);
        worst = std::max(worst, std::abs(a.value - b.value));
        for (std::size_t i = 0; i < a.gradient.size(); ++i) worst = std::max(worst, std::abs(a.gradient[i] - b.gradient[i]));
    }
    o.require(worst <= 1e-12, "max |diff| " + num(worst));
    if (o.pass) o.detail = "10 instances, max |diff| " + num(worst);
    return o;
}

Outcome router_replay() {
    Outcome o;
    const auto rc = parse_run_config(json{{"replay", {{"model_seed", 0}}}});
    ModelConfig mc = rc.train.model;
    mc.seed = rc.replay.model_seed;
    o.require(mc.num_experts == 4 && mc.top_k == 2, "toy model is not 4 experts / top-2");
    const auto params = PolicyParams::initialize(mc);
    const auto groups = sample_mismatch_workload(params, 1000, rc.replay.max_len, derive_seed(mc.seed, 7));
    std::size_t calibrated = 0;
    double best = 0.0;
    for (double delta : rc.replay.deltas) {
        const MismatchConfig m{delta, rc.replay.residual_noise, rc.replay.noise_seed};
        const auto off = measure_mismatch(params, groups, m, false);
        const auto on = measure_mismatch(params, groups, m, true);
        o.require(off.tokens >= 1000, "fewer than 1000 tokens");
        if (off.mean_abs_diff < 5e-4 || off.mean_abs_diff > 5e-3) continue;
        ++calibrated;
        const double ratio = on.mean_abs_diff > 0.0 ? off.mean_abs_diff / on.mean_abs_diff : INFINITY;
        o.require(ratio >= 10.0, "delta " + num(delta) + " reduction only " + num(ratio) + "x");
        if (best == 0.0) {
            o.detail = "delta " + num(delta) + ": " + num(off.mean_abs_diff) + " -> " + num(on.mean_abs_diff) + " (" +
                       num(ratio) + "x)";
        }
        best = std::max(best, ratio);
    }
    o.require(calibrated > 0, "no delta in the sweep lands in [5e-4, 5e-3]");
    return o;
}

Outcome zero_variance_law() {
    Outcome o;
    const std::size_t trials = 1000000;
    double worst_z = 0.0;
    for (double p : {0.2, 0.5, 0.8}) {
        for (std::size_t n : {2, 8, 32}) {
            const double law = zv_rate_bernoulli(p, n).zero_variance_rate;
            const auto mc = oracle::zero_variance_monte_carlo(p, n, trials, derive_seed(17, n) ^ static_cast<std::uint64_t>(p * 100));
            // Standard error under the law being tested; the empirical one is
            // zero when no hits are expected.
            const double se = std::sqrt(law * (1.0 - law) / static_cast<double>(trials));
            const double z = se > 0.0 ? std::abs(mc.mean - law) / se : (mc.mean == law ? 0.0 : INFINITY);
            worst_z = std::max(worst_z, z);
            o.require(z <= 3.0, "p=" + num(p) + " N=" + std::to_string(n) + " off by " + num(z) + " SE");
        }
    }
    for (double p : {0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95}) {
        double prev = 2.0;
        for (std::size_t n = 1; n <= 64; n *= 2) {
            const double r = zv_rate_bernoulli(p, n).zero_variance_rate;
            o.require(r < prev, "not strictly decreasing at p=" + num(p) + " N=" + std::to_string(n));
            prev = r;
        }
    }
    if (o.pass) o.detail = "9 grid points, worst " + num(worst_z) + " SE";
    return o;
}

RolloutGroup zv_group(double reward, const std::vector<std::vector<double>>& entropies) {
    RolloutGroup g;
    g.prompt = Prompt{"p", {1}, TaskKind::verifiable, {}, {}};
    for (const auto& e : entropies) {
        Rollout r;
        r.reward = reward;
        for (double x : e) {
            r.tokens.push_back(1);
            r.steps.push_back(TokenStep{1, -1.0, x});
            r.router_trace.push_back({});
        }
        g.rollouts.push_back(std::move(r));
    }
    return g;
}

Outcome zv_reshaping() {
    Outcome o;
    Rng rng(11);
    const double lv = std::log(16.0);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t G = 1 + rng.below(8);
        const double reward = rng.below(2) ? 1.0 : 0.0;
        std::vector<std::vector<double>> ent(G);
        for (auto& e : ent) {
            for (std::uint64_t t = 0, n = 1 + rng.below(12); t < n; ++t) e.push_back(rng.uniform(0.0, lv));
        }
        const ZeroVarianceReshape cfg{rng.uniform(0.0, 0.2), 0.5};
        for (const auto& row : reshape_zero_variance(zv_group(reward, ent), lv, cfg)) {
            double sum = 0.0;
            for (double x : row) {
                sum += x;
                o.require(std::abs(x) <= cfg.beta, "advantage exceeds beta");
            }
            o.require(std::abs(sum / static_cast<double>(row.size())) <= 1e-9, "rollout mean not centered");
        }
    }
    auto inst = fixtures::objective_instance(3, 0.0, 3, 4, 5);
    for (auto& g : inst.groups) {
        for (auto& r : g.rollouts) r.reward = 0.0;
    }
    const double vocab_lv = inst.params.config.log_vocab();
    AdvantageConfig with_beta, zero_beta;
    zero_beta.reshape.beta = 0.0;
    auto a = inst.groups, b = inst.groups;
    pipeline_advantages(a, vocab_lv, with_beta);
    pipeline_advantages(b, vocab_lv, zero_beta);
    const auto moved = evaluate_objective(inst.params, a, ObjectiveConfig{});
    const auto still = evaluate_objective(inst.params, b, ObjectiveConfig{});
    o.require(moved.report.grad_norm > 0.0, "beta > 0 gives a zero gradient");
    bool zero = still.value == 0.0;
    for (double g : still.gradient) zero = zero && g == 0.0;
    o.require(zero, "beta = 0 gives a nonzero gradient");
    if (o.pass) o.detail = "1000 groups; all-ZV grad norm " + num(moved.report.grad_norm) + " vs 0";
    return o;
}

Outcome scheduler_properties() {
    Outcome o;
    Rng rng(10);
    for (int i = 0; i < 500; ++i) {
        const auto jobs = sim::lognormal_workload(
            {1 + rng.below(40), std::log(1000.0), rng.uniform(0.1, 1.5), rng.uniform(0.0, 500.0), rng.next_u64()});
        sim::SimConfig off;
        off.num_workers = 1 + rng.below(16);
        off.seed = rng.next_u64();
        off.assignment = rng.below(2) ? sim::AssignmentPolicy::random : sim::AssignmentPolicy::length_balanced;
        auto on = off;
        on.overlap_reward = true;
        on.reward_lanes = i % 2 ? 0 : 1 + rng.below(3);
        o.require(sim::run(jobs, on).makespan <= sim::run(jobs, off).makespan, "overlap increased makespan");
    }

    double lpt = 0.0, rnd = 0.0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto jobs = sim::lognormal_workload({128, std::log(8000.0), 0.8, 0.0, 1000 + s});
        sim::SimConfig c;
        c.seed = s;
        rnd += sim::run(jobs, c).makespan;
        c.assignment = sim::AssignmentPolicy::length_balanced;
        lpt += sim::run(jobs, c).makespan;
    }
    o.require(lpt < rnd, "LPT mean makespan not below random");

    Rng small(12);
    for (int i = 0; i < 150; ++i) {
        const std::size_t n = 1 + small.below(10), W = 1 + small.below(3);
        std::vector<double> len;
        std::vector<sim::SimJob> jobs;
        for (std::size_t k = 0; k < n; ++k) {
            len.push_back(std::floor(small.uniform(1.0, 50.0)));
            jobs.push_back({k, len.back(), len.back(), 0.0});
        }
        double load = 0.0;
        for (const auto& w : sim::assign(jobs, W, sim::AssignmentPolicy::length_balanced, 0)) {
            double sum = 0.0;
            for (auto j : w) sum += len[j];
            load = std::max(load, sum);
        }
        o.require(load <= 4.0 / 3.0 * oracle::optimal_makespan(len, W) + *std::max_element(len.begin(), len.end()),
                  "LPT bound violated");
    }

    const auto jobs = sim::lognormal_workload({512, std::log(8000.0), 0.8, 200.0, 7});
    sim::SimConfig base;
    const auto rows = sim::speedup_report(
        jobs, base,
        {sim::Feature::detok_parallelism, sim::Feature::overlap, sim::Feature::fp8, sim::Feature::length_balanced},
        sim::FeatureSettings{1.43, 3.0});
    for (std::size_t i = 1; i < rows.size(); ++i) {
        o.require(rows[i].cumulative_speedup > rows[i - 1].cumulative_speedup, "speedups not strictly monotone");
    }
    o.require(rows.back().cumulative_speedup >= 1.3, "overall speedup " + num(rows.back().cumulative_speedup));
    if (o.pass) {
        o.detail = "LPT/random " + num(lpt / rnd) + ", overall speedup " + num(rows.back().cumulative_speedup, "%.2f") + "x";
    }
    return o;
}

Outcome learning_smoke() {
    Outcome o;
    const auto rc = parse_run_config(json{{"seed", 1}, {"iterations", 200}});
    o.require(rc.train.model.vocab_size == 8 && rc.train.sampling.group_size == 8, "not |V|=8, G=8");
    const auto prompts = build_prompts(rc);
    const auto a = train_loop(rc.train, prompts, rc.iterations);
    const auto b = train_loop(rc.train, prompts, rc.iterations);
    bool same = a.params.values == b.params.values && a.metrics.size() == b.metrics.size();
    for (std::size_t i = 0; same && i < a.metrics.size(); ++i) {
        same = a.metrics[i].to_json().dump() == b.metrics[i].to_json().dump();
    }
    o.require(same, "two runs with the same seed differ");
    // Single 4-prompt batches are noisy; the end point is the last 20 iterations.
    double tail = 0.0;
    for (std::size_t i = a.metrics.size() - 20; i < a.metrics.size(); ++i) tail += a.metrics[i].mean_reward;
    tail /= 20.0;
    const double start = a.metrics.front().mean_reward;
    o.require(tail - start >= 0.2, "improvement " + num(tail - start));
    if (o.pass) o.detail = "mean reward " + num(start) + " -> " + num(tail) + ", reproducible";
    return o;
}

Outcome judge_and_verifiers() {
    Outcome o;
    o.require(judge_to_reward(Verdict::a_better) == 1 && judge_to_reward(Verdict::tie) == 1 &&
                  judge_to_reward(Verdict::b_better) == 0,
              "ternary mapping table");
    const auto cases = read_jsonl("scripted_suite.jsonl");
    o.require(cases.size() == 100, "scripted suite is not 100 cases");
    for (const auto& c : cases) {
        const auto name = c["name"].get<std::string>();
        if (c["kind"] == "judge") {
            std::vector<Verdict> script;
            for (const auto& v : c["script"]) {
                for (auto verdict : {Verdict::a_better, Verdict::b_better, Verdict::tie}) {
                    if (v == to_string(verdict)) script.push_back(verdict);
                }
            }
            ScriptedJudge judge(script);
            for (const auto& want : c["rewards"]) {
                o.require(judged_reward(judge, "out", "ref") == want.get<int>(), name + ": wrong judged reward");
            }
        } else {
            const auto suite = ConstraintSuite::from_json(json{{"task_id", name}, {"constraints", c["constraints"]}});
            const auto response = c["response"].get<std::string>();
            const double score = verify_constraints(response, suite.constraints);
            const double want = c["score_num"].get<double>() / c["score_den"].get<double>();
            o.require(score == want, name + ": score " + num(score) + " want " + num(want));
            o.require(score >= 0.0 && score <= 1.0, name + ": score outside [0, 1]");
        }
    }
    if (o.pass) o.detail = std::to_string(cases.size()) + " scripted cases";
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"tool reward exactness", tool_reward_exactness},
        {"gradient fidelity", gradient_fidelity},
        {"reduction identity", reduction_identity},
        {"router replay", router_replay},
        {"zero-variance law", zero_variance_law},
        {"zero-variance reshaping bounds", zv_reshaping},
        {"scheduler properties", scheduler_properties},
        {"end-to-end learning", learning_smoke},
        {"judge mapping and verifiers", judge_and_verifiers},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %zu %s (%.2fs): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, secs,
                    o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
