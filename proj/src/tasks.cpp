// SPDX-License-Identifier: Apache-2.0

#include "rlab/tasks.hpp"

#include <stdexcept>

#include "rlab/rng.hpp"

namespace rlab {

const char* to_string(SyntheticKind k) {
    switch (k) {
        case SyntheticKind::parity_verifiable: return "parity_verifiable";
        case SyntheticKind::tool_use_synthetic: return "tool_use_synthetic";
        case SyntheticKind::judged_mock: return "judged_mock";
        case SyntheticKind::schema_extract: return "schema_extract";
    }
    return "unknown";
}

SyntheticKind synthetic_kind_from_string(const std::string& s) {
    for (auto k : {SyntheticKind::parity_verifiable, SyntheticKind::tool_use_synthetic, SyntheticKind::judged_mock,
                   SyntheticKind::schema_extract}) {
        if (s == to_string(k)) return k;
    }
    throw std::invalid_argument("unknown synthetic task kind: " + s);
}

std::vector<Prompt> make_prompts(const SyntheticTask& task, std::size_t count) {
    if (task.difficulty < 1) throw std::invalid_argument("difficulty must be >= 1");
    Rng rng(task.seed);
    std::vector<Prompt> prompts;
    prompts.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Prompt p;
        switch (task.kind) {
            case SyntheticKind::parity_verifiable: {
                int ones = 0;
                for (std::size_t b = 0; b < task.difficulty; ++b) {
                    const bool bit = rng.below(2) == 1;
                    ones += bit ? 1 : 0;
                    p.tokens.push_back(bit ? parity::kOne : parity::kZero);
                }
                p.tokens.push_back(parity::kQuery);
                p.id = "parity-" + std::to_string(i);
                p.task_kind = TaskKind::verifiable;
                p.gold = {{"answer", ones % 2 == 0 ? parity::kEven : parity::kOdd}};
                break;
            }
            case SyntheticKind::judged_mock: {
                std::vector<Token> ref;
                for (std::size_t b = 0; b < task.difficulty; ++b) {
                    const auto t = static_cast<Token>(1 + rng.below(5));
                    ref.push_back(t);
                    p.tokens.push_back(t);
                }
                p.tokens.push_back(parity::kQuery);
                p.id = "judged-" + std::to_string(i);
                p.task_kind = TaskKind::judged;
                p.gold = {{"reference", ref}};
                break;
            }
            default:
                throw std::invalid_argument(std::string("task kind has no token prompts: ") + to_string(task.kind));
        }
        prompts.push_back(std::move(p));
    }
    return prompts;
}

Verdict ReferenceMatchJudge::compare(std::span<const Token> response, std::span<const Token> reference) const {
    std::size_t matches = 0;
    for (std::size_t t = 0; t < reference.size() && t < response.size(); ++t) matches += response[t] == reference[t];
    // The reference stands for an answer that gets all but one position right.
    const std::size_t ref_quality = reference.empty() ? 0 : reference.size() - 1;
    if (matches > ref_quality) return Verdict::a_better;
    if (matches == ref_quality) return Verdict::tie;
    return Verdict::b_better;
}

double score_rollout(const Prompt& prompt, const Rollout& rollout) {
    switch (prompt.task_kind) {
        case TaskKind::verifiable: {
            const auto answer = prompt.gold.at("answer").get<Token>();
            return !rollout.tokens.empty() && rollout.tokens.front() == answer ? 1.0 : 0.0;
        }
        case TaskKind::judged: {
            const auto ref = prompt.gold.at("reference").get<std::vector<Token>>();
            return judge_to_reward(ReferenceMatchJudge{}.compare(rollout.tokens, ref));
        }
        default:
            throw std::invalid_argument(std::string("no token-level scorer for task kind ") + to_string(prompt.task_kind));
    }
}

namespace {

struct ToolSchema {
    const char* name;
    std::vector<const char*> keys;
};

const std::vector<ToolSchema>& schema_bank() {
    static const std::vector<ToolSchema> bank = {
        {"search", {"query", "limit"}},
        {"get_weather", {"city", "unit"}},
        {"add_to_cart", {"item_id", "quantity"}},
        {"track_order", {"order_id"}},
        {"convert_currency", {"amount", "from", "to"}},
        {"list_categories", {}},
    };
    return bank;
}

const char* kWords[] = {"shoes", "red", "paris", "celsius", "usd", "sgd", "bag", "phone", "42", "7", "blue", "lamp"};

std::string random_value(Rng& rng) { return kWords[rng.below(std::size(kWords))]; }

ToolCall random_call(Rng& rng) {
    const auto& s = schema_bank()[rng.below(schema_bank().size())];
    ToolCall c{s.name, {}};
    for (const char* k : s.keys) c.params[k] = random_value(rng);
    return c;
}

bool chance(Rng& rng, double p) { return rng.uniform() < p; }

}  // namespace

std::vector<ToolCase> make_tool_cases(const SyntheticTask& task, std::size_t count) {
    Rng rng(task.seed);
    const double q = static_cast<double>(task.difficulty) / 100.0;
    std::vector<ToolCase> cases;
    for (std::size_t i = 0; i < count; ++i) {
        ToolCase c;
        const std::size_t n = rng.below(4);
        for (std::size_t j = 0; j < n; ++j) c.gold.push_back(random_call(rng));

        std::vector<ToolCall> pred;
        for (const auto& g : c.gold) {
            if (chance(rng, q)) continue;  // dropped call
            ToolCall p = g;
            if (chance(rng, q)) p.name = schema_bank()[rng.below(schema_bank().size())].name;
            for (auto& [k, v] : p.params) {
                if (chance(rng, q)) v = random_value(rng);
            }
            if (!p.params.empty() && chance(rng, q)) p.params.erase(p.params.begin());
            if (chance(rng, q)) p.params["extra"] = random_value(rng);
            pred.push_back(std::move(p));
        }
        if (chance(rng, q) && pred.size() < 4) pred.push_back(random_call(rng));
        rng.shuffle(pred.begin(), pred.end());

        std::string text = chance(rng, q / 2) ? "" : "<think>plan the calls</think>";
        if (pred.empty() && chance(rng, 0.5)) {
            text += "no tool is needed";
        }
        for (const auto& p : pred) text += "<tool_call>" + tool_call_to_json(p).dump() + "</tool_call>";
        c.trace_text = std::move(text);
        cases.push_back(std::move(c));
    }
    return cases;
}

std::vector<SchemaCase> make_schema_cases(const SyntheticTask& task, std::size_t count) {
    Rng rng(task.seed);
    const double q = static_cast<double>(task.difficulty) / 100.0;
    const char* fields[] = {"brand", "category", "color", "price"};
    std::vector<SchemaCase> cases;
    for (std::size_t i = 0; i < count; ++i) {
        SchemaCase c;
        nlohmann::json out = nlohmann::json::object();
        for (const char* f : fields) {
            if (!chance(rng, 0.75)) continue;
            const auto v = random_value(rng);
            c.required_keys.emplace_back(f);
            c.expected_fields[f] = v;
            if (chance(rng, q)) continue;  // missing key
            out[f] = chance(rng, q) ? random_value(rng) : v;
        }
        c.response = out.dump();
        if (chance(rng, q / 2)) c.response.pop_back();  // truncated JSON
        cases.push_back(std::move(c));
    }
    return cases;
}

}  // namespace rlab
