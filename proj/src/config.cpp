// SPDX-License-Identifier: Apache-2.0

#include "rlab/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "rlab/rng.hpp"

namespace rlab {

namespace {

// Reads keys from one JSON object, remembering which were consumed so that
// typos surface as errors instead of silently using defaults.
class Section {
public:
    Section(const nlohmann::json& j, std::string name) : name_(std::move(name)) {
        if (j.is_null()) {
            obj_ = nlohmann::json::object();
        } else if (!j.is_object()) {
            throw ConfigError(name_ + ": expected an object");
        } else {
            obj_ = j;
        }
    }

    template <class T>
    T get(const std::string& key, T fallback) {
        used_.insert(key);
        auto it = obj_.find(key);
        if (it == obj_.end()) return fallback;
        try {
            return it->get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(name_ + "." + key + ": wrong type");
        }
    }

    bool has(const std::string& key) const { return obj_.contains(key); }

    nlohmann::json sub(const std::string& key) {
        used_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nlohmann::json() : *it;
    }

    void finish() const {
        for (const auto& [k, v] : obj_.items()) {
            if (!used_.count(k)) throw ConfigError(name_ + ": unknown key \"" + k + "\"");
        }
    }

    const std::string& name() const { return name_; }

private:
    nlohmann::json obj_;
    std::string name_;
    std::set<std::string> used_;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p, const std::string& what) {
    std::filesystem::path path(p);
    if (path.is_relative() && !base.empty()) path = base / path;
    if (!std::filesystem::exists(path)) throw ConfigError(what + ": file not found: " + path.string());
    return path;
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
    RunConfig rc;
    Section root(doc, "config");
    rc.seed = root.get<std::uint64_t>("seed", 0);
    rc.iterations = root.get<std::size_t>("iterations", 200);

    auto& tc = rc.train;
    tc.seed = rc.seed;

    {
        Section s(root.sub("model"), "model");
        auto& m = tc.model;
        m.vocab_size = s.get<std::size_t>("vocab_size", 8);
        m.context_window = s.get<std::size_t>("context_window", 32);
        m.embed_dim = s.get<std::size_t>("embed_dim", 8);
        m.num_experts = s.get<std::size_t>("num_experts", 4);
        m.top_k = s.get<std::size_t>("top_k", 2);
        m.seed = s.get<std::uint64_t>("seed", derive_seed(rc.seed, 0x30de1));
        s.finish();
        try {
            m.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("model: ") + e.what());
        }
    }
    {
        Section s(root.sub("objective"), "objective");
        auto& o = tc.objective;
        try {
            o.algorithm = algorithm_from_string(s.get<std::string>("algorithm", "espo"));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("objective: ") + e.what());
        }
        o.alpha = s.get("alpha", 0.4);
        o.eps_fixed = s.get("eps_fixed", 0.2);
        o.eps_min = s.get("eps_min", 0.01);
        o.num_buckets = s.get<std::size_t>("num_buckets", 2);
        o.split_quantiles = s.get<std::vector<double>>("split_quantiles", o.num_buckets == 2
                                                                               ? std::vector<double>{0.8}
                                                                               : std::vector<double>{});
        const auto weighting = s.get<std::string>("weighting", "per_group");
        require(weighting == "per_group" || weighting == "token_weighted",
                "objective.weighting must be per_group or token_weighted");
        o.weighting = weighting == "per_group" ? GroupWeighting::per_group : GroupWeighting::token_weighted;
        o.router_replay = s.get("router_replay", true);
        s.finish();
        try {
            o.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("objective: ") + e.what());
        }
    }
    {
        Section s(root.sub("rollout"), "rollout");
        auto& r = tc.sampling;
        r.group_size = s.get<std::size_t>("G", 8);
        r.max_len = s.get<std::size_t>("max_len", 1);
        r.temperature = s.get("temperature", 1.0);
        r.greedy = s.get("greedy", false);
        s.finish();
        require(r.group_size >= 1, "rollout.G must be >= 1");
        require(r.max_len >= 1, "rollout.max_len must be >= 1");
        require(r.greedy || r.temperature > 0.0, "rollout.temperature must be positive");
    }
    {
        Section s(root.sub("zvp"), "zvp");
        auto& a = tc.advantages;
        a.reshape_zero_variance = s.get("reshape_zero_variance", true);
        a.reshape.beta = s.get("beta", 0.05);
        a.reshape.success_threshold = s.get("success_threshold", 0.5);
        const auto filter = s.get<std::string>("prompt_filter", "none");
        if (filter == "none") {
            tc.prompt_filter.reset();
        } else if (filter == "default") {
            tc.prompt_filter = PassRateBand{};
        } else if (filter == "medium_to_high") {
            tc.prompt_filter = PassRateBand::medium_to_high();
        } else {
            throw ConfigError("zvp.prompt_filter must be none, default or medium_to_high");
        }
        if (tc.prompt_filter) {
            tc.prompt_filter->p_lo = s.get("p_lo", tc.prompt_filter->p_lo);
            tc.prompt_filter->p_hi = s.get("p_hi", tc.prompt_filter->p_hi);
            require(tc.prompt_filter->p_lo >= 0.0 && tc.prompt_filter->p_lo < tc.prompt_filter->p_hi &&
                        tc.prompt_filter->p_hi <= 1.0,
                    "zvp: need 0 <= p_lo < p_hi <= 1");
        } else {
            s.get("p_lo", 0.0);
            s.get("p_hi", 0.0);
        }
        if (s.has("probe_stats")) {
            rc.task.probe_stats = resolve(base_dir, s.get<std::string>("probe_stats", ""), "zvp.probe_stats");
        } else {
            s.get<std::string>("probe_stats", "");
        }
        s.finish();
        require(a.reshape.beta >= 0.0, "zvp.beta must be >= 0");
    }
    {
        Section s(root.sub("reward"), "reward");
        tc.reshape_rewards = s.get("reshape", false);
        if (s.has("length_buffer")) tc.reshape.length_buffer = s.get<std::size_t>("length_buffer", 1);
        else s.get<std::size_t>("length_buffer", 0);
        tc.reshape.repetition_weight = s.get("repetition_weight", 1.0);
        tc.reshape.repetition_threshold = s.get("repetition_threshold", 0.2);
        tc.reshape.ngram = s.get<std::size_t>("ngram", 4);
        s.finish();
        require(tc.reshape.ngram >= 1, "reward.ngram must be >= 1");
    }
    {
        Section s(root.sub("train"), "train");
        tc.learning_rate = s.get("learning_rate", 0.5);
        tc.prompts_per_iter = s.get<std::size_t>("prompts_per_iter", 4);
        tc.inner_epochs = s.get<std::size_t>("inner_epochs", 1);
        s.finish();
        require(tc.learning_rate >= 0.0, "train.learning_rate must be >= 0");
        require(tc.prompts_per_iter >= 1, "train.prompts_per_iter must be >= 1");
        require(tc.inner_epochs >= 1, "train.inner_epochs must be >= 1");
    }
    {
        Section s(root.sub("task"), "task");
        try {
            rc.task.task.kind = synthetic_kind_from_string(s.get<std::string>("kind", "parity_verifiable"));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("task: ") + e.what());
        }
        rc.task.task.seed = s.get<std::uint64_t>("seed", derive_seed(rc.seed, 0x7a5c));
        rc.task.task.difficulty = s.get<std::size_t>("difficulty", 3);
        rc.task.num_prompts = s.get<std::size_t>("num_prompts", 16);
        s.finish();
        require(rc.task.task.difficulty >= 1, "task.difficulty must be >= 1");
        require(rc.task.num_prompts >= 1, "task.num_prompts must be >= 1");
    }
    {
        Section s(root.sub("sim"), "sim");
        auto& b = rc.sim.base;
        b.num_workers = s.get<std::size_t>("num_workers", 16);
        b.decode_rate = s.get("decode_rate", 1.0);
        b.fp8_speedup = s.get("fp8_speedup", 1.0);
        b.detok_parallelism = s.get("detok_parallelism", 1.0);
        b.overlap_reward = s.get("overlap_reward", false);
        b.reward_lanes = s.get<std::size_t>("reward_lanes", 0);
        try {
            b.assignment = sim::assignment_policy_from_string(s.get<std::string>("assignment", "random"));
            for (const auto& f : s.get<std::vector<std::string>>(
                     "features", {"detok_parallelism", "overlap", "fp8", "length_balanced"})) {
                rc.sim.features.push_back(sim::feature_from_string(f));
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("sim: ") + e.what());
        }
        b.prediction_sigma = s.get("prediction_sigma", 0.0);
        b.update_time = s.get("update_time", 0.0);
        b.seed = s.get<std::uint64_t>("seed", derive_seed(rc.seed, 0x5171));
        rc.sim.settings.fp8_speedup = s.get("fp8_factor", 1.43);
        rc.sim.settings.detok_parallelism = s.get("detok_factor", 3.0);
        if (s.has("workload_path")) {
            rc.sim.workload_path = resolve(base_dir, s.get<std::string>("workload_path", ""), "sim.workload_path");
        } else {
            s.get<std::string>("workload_path", "");
        }
        Section w(s.sub("workload"), "sim.workload");
        rc.sim.workload.num_jobs = w.get<std::size_t>("num_jobs", 512);
        rc.sim.workload.log_mean = w.get("log_mean", rc.sim.workload.log_mean);
        rc.sim.workload.log_sigma = w.get("log_sigma", 0.8);
        rc.sim.workload.reward_cost = w.get("reward_cost", 200.0);
        rc.sim.workload.seed = w.get<std::uint64_t>("seed", derive_seed(rc.seed, 0x3047));
        w.finish();
        s.finish();
        try {
            b.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("sim: ") + e.what());
        }
        require(rc.sim.settings.fp8_speedup >= 1.0 && rc.sim.settings.detok_parallelism >= 1.0,
                "sim: feature factors must be >= 1");
        for (std::size_t i = 0; i < rc.sim.features.size(); ++i) {
            for (std::size_t j = 0; j < i; ++j) require(rc.sim.features[i] != rc.sim.features[j], "sim.features repeats a feature");
        }
    }
    {
        Section s(root.sub("replay"), "replay");
        auto& r = rc.replay;
        r.deltas = s.get("deltas", r.deltas);
        r.min_tokens = s.get<std::size_t>("min_tokens", 1000);
        r.max_len = s.get<std::size_t>("max_len", 8);
        r.residual_noise = s.get("residual_noise", 0.0);
        r.noise_seed = s.get<std::uint64_t>("noise_seed", derive_seed(rc.seed, 0x2e91));
        r.model_seed = s.get<std::uint64_t>("model_seed", tc.model.seed);
        s.finish();
        require(!r.deltas.empty(), "replay.deltas must be nonempty");
        for (double d : r.deltas) require(d >= 0.0, "replay.deltas must be >= 0");
        require(r.residual_noise >= 0.0, "replay.residual_noise must be >= 0");
        require(r.min_tokens >= 1, "replay.min_tokens must be >= 1");
        require(r.max_len >= 1 && r.max_len + 4 <= tc.model.context_window,
                "replay.max_len must be >= 1 and leave room for a 4-token prompt");
    }
    root.finish();

    rc.resolved = doc.is_null() ? nlohmann::json::object() : doc;
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    const auto doc = nlohmann::json::parse(is, nullptr, false, true);
    if (doc.is_discarded()) throw ConfigError("config is not valid JSON: " + path.string());
    return parse_run_config(doc, path.parent_path());
}

void override_seed(RunConfig& config, std::uint64_t seed) {
    // Re-parse so every seed derived from the master seed follows it.
    auto doc = config.resolved;
    doc["seed"] = seed;
    // Paths were already resolved against the config directory.
    if (config.task.probe_stats) doc["zvp"]["probe_stats"] = config.task.probe_stats->string();
    if (config.sim.workload_path) doc["sim"]["workload_path"] = config.sim.workload_path->string();
    config = parse_run_config(doc, {});
}

std::vector<Prompt> build_prompts(const RunConfig& config) {
    auto prompts = make_prompts(config.task.task, config.task.num_prompts);
    if (config.task.probe_stats) {
        std::ifstream is(*config.task.probe_stats);
        if (!is) throw ConfigError("cannot open probe stats " + config.task.probe_stats->string());
        const auto stats = load_probe_stats(is);
        for (auto& p : prompts) {
            for (const auto& s : stats) {
                if (s.prompt_id == p.id) p.pass_rate_estimate = s.probe_pass_rate;
            }
        }
    }
    return prompts;
}

std::string config_hash(const RunConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : config.resolved.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace rlab
