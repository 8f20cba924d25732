// SPDX-License-Identifier: Apache-2.0

#include "rlab/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "rlab/config.hpp"
#include "rlab/policy.hpp"
#include "rlab/reward.hpp"
#include "rlab/rng.hpp"
#include "rlab/rollout.hpp"
#include "rlab/sim.hpp"
#include "rlab/tasks.hpp"
#include "rlab/train.hpp"
#include "rlab/zvp.hpp"

namespace fs = std::filesystem;

namespace rlab::cli {

namespace {

// Bad user input: maps to kExitInvalidInput.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

// Writes to a sibling temp file and renames, so readers never see a partial file.
void write_file(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        os << content;
        if (!os) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

fs::path prepare_out(const std::string& out) {
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory " + out + ": " + ec.message());
    return dir;
}

RunConfig load_config(const CommonOptions& o) {
    RunConfig rc;
    try {
        if (o.config.empty()) {
            rc = parse_run_config(nlohmann::json::object());
        } else {
            rc = load_run_config(o.config);
        }
        if (o.seed) override_seed(rc, *o.seed);
    } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
    }
    return rc;
}

std::string fmt(double v, const char* spec = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

// ---------------------------------------------------------------------------

int cmd_train(const CommonOptions& o, std::ostream& out) {
    if (o.config.empty()) throw InputError("train requires --config");
    const RunConfig rc = load_config(o);
    std::vector<Prompt> prompts;
    try {
        prompts = build_prompts(rc);
    } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
    }
    const auto& model = rc.train.model;
    if (rc.task.task.kind == SyntheticKind::parity_verifiable && model.vocab_size < parity::kMinVocab) {
        throw InputError("parity task needs model.vocab_size >= " + std::to_string(parity::kMinVocab));
    }
    if (rc.task.task.kind == SyntheticKind::tool_use_synthetic ||
        rc.task.task.kind == SyntheticKind::schema_extract) {
        throw InputError(std::string("task kind ") + to_string(rc.task.task.kind) +
                         " produces text cases and cannot drive token-level training");
    }
    for (const auto& p : prompts) {
        if (p.tokens.size() + rc.train.sampling.max_len > model.context_window) {
            throw InputError("prompt " + p.id + " plus rollout.max_len exceeds model.context_window");
        }
        for (Token t : p.tokens) {
            if (t < 0 || static_cast<std::size_t>(t) >= model.vocab_size) {
                throw InputError("prompt " + p.id + " uses a token outside the vocabulary");
            }
        }
    }

    const fs::path dir = prepare_out(o.out);
    std::ostringstream metrics;
    nlohmann::json manifest = {
        {"version", kVersion},
        {"command", "train"},
        {"seed", rc.seed},
        {"config_hash", config_hash(rc)},
        {"config", rc.resolved},
    };
    write_file(dir / kManifestFile, manifest.dump(2) + "\n");

    TrainConfig tc = rc.train;
    try {
        auto result = train_loop(tc, prompts, rc.iterations,
                                 [&](const IterationMetrics& m) { metrics << m.to_json().dump() << '\n'; });
        write_file(dir / kMetricsFile, metrics.str());
        save_params(result.params, dir / kFinalParamsFile);
        if (!result.metrics.empty()) {
            out << "iterations " << result.metrics.size() << ", mean reward "
                << fmt(result.metrics.front().mean_reward, "%.4f") << " -> "
                << fmt(result.metrics.back().mean_reward, "%.4f") << '\n';
        }
    } catch (const NonFiniteUpdate& e) {
        write_file(dir / kMetricsFile, metrics.str());
        save_params(e.last_good(), dir / kLastGoodParamsFile);
        throw;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_score_tools(const std::string& traces_path, const std::string& gold_path, const std::string& out_dir,
                    std::ostream& out) {
    std::ifstream gold_is(gold_path);
    if (!gold_is) throw InputError("cannot open gold file " + gold_path);
    std::vector<ToolTask> gold;
    try {
        gold = load_tool_tasks(gold_is);
    } catch (const std::invalid_argument& e) {
        throw InputError("gold: " + std::string(e.what()));
    }

    std::ifstream traces_is(traces_path);
    if (!traces_is) throw InputError("cannot open traces file " + traces_path);
    std::vector<std::string> traces;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(traces_is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j["text"].is_string()) {
            throw InputError("traces line " + std::to_string(lineno) + ": expected {\"text\": string}");
        }
        traces.push_back(j["text"].get<std::string>());
    }
    if (traces.size() != gold.size()) {
        throw InputError("traces has " + std::to_string(traces.size()) + " entries but gold has " +
                         std::to_string(gold.size()));
    }

    std::ostringstream csv;
    csv << "index,format,correct,length_penalty,repetition_penalty,final\n";
    double sum = 0.0;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const auto b = tool_reward(traces[i], gold[i].gold_calls);
        csv << i << ',' << fmt(b.format) << ',' << fmt(b.correct) << ',' << fmt(b.length_penalty) << ','
            << fmt(b.repetition_penalty) << ',' << fmt(b.final_reward) << '\n';
        sum += b.final_reward;
    }
    if (!traces.empty()) {
        csv << "mean,,,,," << fmt(sum / static_cast<double>(traces.size())) << '\n';
    }
    const fs::path dir = prepare_out(out_dir);
    write_file(dir / kScoreToolsFile, csv.str());
    out << "scored " << traces.size() << " traces\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const CommonOptions& o, std::ostream& out) {
    const RunConfig rc = load_config(o);
    std::vector<sim::SimJob> jobs;
    try {
        if (rc.sim.workload_path) {
            std::ifstream is(*rc.sim.workload_path);
            if (!is) throw InputError("cannot open workload " + rc.sim.workload_path->string());
            jobs = sim::load_workload(is);
        } else {
            jobs = sim::lognormal_workload(rc.sim.workload);
        }
    } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
    }
    if (jobs.empty()) throw InputError("workload has no jobs");

    const auto rows = sim::speedup_report(jobs, rc.sim.base, rc.sim.features, rc.sim.settings);
    const auto base_tl = sim::run(jobs, rc.sim.base);
    const auto full_tl = sim::run(jobs, sim::apply_features(rc.sim.base, rc.sim.features, rc.sim.settings));

    const fs::path dir = prepare_out(o.out);
    write_file(dir / kSpeedupCsvFile, sim::speedup_csv(rows));
    write_file(dir / kSpeedupJsonFile, sim::speedup_json(rows).dump(2) + "\n");
    nlohmann::json breakdown = {
        {"baseline", sim::breakdown_json(sim::stage_breakdown(base_tl), base_tl)},
        {"full_stack", sim::breakdown_json(sim::stage_breakdown(full_tl), full_tl)},
    };
    write_file(dir / kStageBreakdownFile, breakdown.dump(2) + "\n");
    out << sim::speedup_csv(rows);
    return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_replay_demo(const CommonOptions& o, std::ostream& out) {
    const RunConfig rc = load_config(o);
    const auto& rp = rc.replay;
    ModelConfig mc = rc.train.model;
    mc.seed = rp.model_seed;
    const auto params = PolicyParams::initialize(mc);
    const auto groups = sample_mismatch_workload(params, rp.min_tokens, rp.max_len, derive_seed(rp.model_seed, 7));

    nlohmann::json rows = nlohmann::json::array();
    out << "delta,no_replay_mean,replay_mean,ratio\n";
    for (double delta : rp.deltas) {
        const MismatchConfig m{delta, rp.residual_noise, rp.noise_seed};
        const auto off = measure_mismatch(params, groups, m, false);
        const auto on = measure_mismatch(params, groups, m, true);
        nlohmann::json row = {
            {"delta", delta},
            {"tokens", off.tokens},
            {"no_replay", {{"mean_abs_diff", off.mean_abs_diff}, {"max_abs_diff", off.max_abs_diff}}},
            {"replay", {{"mean_abs_diff", on.mean_abs_diff}, {"max_abs_diff", on.max_abs_diff}}},
        };
        if (on.mean_abs_diff > 0.0) {
            row["ratio"] = off.mean_abs_diff / on.mean_abs_diff;
        } else {
            row["ratio"] = nullptr;
        }
        out << delta << ',' << fmt(off.mean_abs_diff, "%.3e") << ',' << fmt(on.mean_abs_diff, "%.3e") << ','
            << (on.mean_abs_diff > 0.0 ? fmt(off.mean_abs_diff / on.mean_abs_diff, "%.2f") : "inf") << '\n';
        rows.push_back(std::move(row));
    }
    const fs::path dir = prepare_out(o.out);
    nlohmann::json report = {{"model", {{"vocab_size", mc.vocab_size},
                                        {"embed_dim", mc.embed_dim},
                                        {"num_experts", mc.num_experts},
                                        {"top_k", mc.top_k},
                                        {"seed", mc.seed}}},
                             {"rows", rows}};
    write_file(dir / kReplayReportFile, report.dump(2) + "\n");
    return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_zv_rate(const std::string& out_dir, std::ostream& out) {
    const double ps[] = {0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95};
    const std::size_t ns[] = {1, 2, 4, 8, 16, 32, 64};
    std::ostringstream csv;
    csv << "p,N,zv_rate,pass_at_n\n";
    out << "   p \\ N";
    for (auto n : ns) out << fmt(static_cast<double>(n), "%8.0f");
    out << '\n';
    for (double p : ps) {
        out << fmt(p, "%8.2f");
        for (auto n : ns) {
            const auto law = zv_rate_bernoulli(p, n);
            csv << fmt(p, "%.2f") << ',' << n << ',' << fmt(law.zero_variance_rate, "%.6g") << ','
                << fmt(law.pass_at_n, "%.6g") << '\n';
            out << fmt(law.zero_variance_rate, "%8.4f");
        }
        out << '\n';
    }
    const fs::path dir = prepare_out(out_dir);
    write_file(dir / kZvRateFile, csv.str());
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Toy RL post-training lab: objectives, rewards, rollout simulation"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    CommonOptions common;
    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* opt = sub->add_option("--config", common.config, "JSON run configuration");
        if (config_required) opt->required();
        sub->add_option("--seed", common.seed, "Override the master seed");
        sub->add_option("--out", common.out, "Output directory")->capture_default_str();
    };

    auto* train = app.add_subcommand("train", "Run the training loop on a synthetic task");
    add_common(train, true);

    std::string traces, gold;
    auto* score = app.add_subcommand("score-tools", "Score tool-call traces against gold calls");
    score->add_option("--traces", traces, "JSON lines of {\"text\": ...}")->required();
    score->add_option("--gold", gold, "JSON lines of tool tasks")->required();
    score->add_option("--out", common.out, "Output directory")->capture_default_str();

    auto* simulate = app.add_subcommand("simulate", "Stacked speedup report from the pipeline simulator");
    add_common(simulate, false);

    auto* replay = app.add_subcommand("replay-demo", "Log-prob mismatch with and without router replay");
    add_common(replay, false);

    auto* zv = app.add_subcommand("zv-rate", "Zero-variance rate table for Bernoulli rewards");
    zv->add_option("--out", common.out, "Output directory")->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*train) return cmd_train(common, out);
        if (*score) return cmd_score_tools(traces, gold, common.out, out);
        if (*simulate) return cmd_simulate(common, out);
        if (*replay) return cmd_replay_demo(common, out);
        if (*zv) return cmd_zv_rate(common.out, out);
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalidInput;
    } catch (const NonFiniteUpdate& e) {
        err << "error: " << e.what() << "; last good parameters saved to " << kLastGoodParamsFile << '\n';
        return kExitNonFinite;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalidInput;
    }
    return kExitUsage;
}

}  // namespace rlab::cli
