// SPDX-License-Identifier: Apache-2.0

#include "rlab/reward.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "rlab/matching.hpp"

namespace rlab {

namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kCallOpen = "<tool_call>";
constexpr std::string_view kCallClose = "</tool_call>";

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::size_t skip_space(std::string_view s, std::size_t pos) {
    while (pos < s.size() && is_space(s[pos])) ++pos;
    return pos;
}

std::string_view trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return s.substr(b, e - b);
}

std::string json_value_text(const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

FormatError fail(std::size_t pos, std::string reason) { return FormatError{pos, std::move(reason)}; }

}  // namespace

ToolCall tool_call_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("tool call must be a JSON object");
    auto it = j.find("name");
    if (it == j.end() || !it->is_string() || it->get<std::string>().empty()) {
        throw std::invalid_argument("tool call needs a nonempty string \"name\"");
    }
    ToolCall call{it->get<std::string>(), {}};
    if (auto args = j.find("arguments"); args != j.end()) {
        if (!args->is_object()) throw std::invalid_argument("\"arguments\" must be an object");
        for (const auto& [k, v] : args->items()) call.params.emplace(k, json_value_text(v));
    }
    return call;
}

nlohmann::json tool_call_to_json(const ToolCall& call) {
    nlohmann::json args = nlohmann::json::object();
    for (const auto& [k, v] : call.params) args[k] = v;
    return {{"name", call.name}, {"arguments", args}};
}

TraceParse parse_trace(std::string_view text) {
    std::size_t pos = skip_space(text, 0);
    if (text.substr(pos, kThinkOpen.size()) != kThinkOpen) return fail(pos, "trace must begin with <think>");
    pos += kThinkOpen.size();
    const auto close = text.find(kThinkClose, pos);
    if (close == std::string_view::npos) return fail(pos, "missing </think>");
    ToolCallTrace trace;
    trace.think = std::string(text.substr(pos, close - pos));
    if (trace.think.find(kThinkOpen) != std::string::npos) return fail(pos, "nested <think>");
    pos = skip_space(text, close + kThinkClose.size());

    if (pos == text.size()) return trace;

    if (text.substr(pos, kCallOpen.size()) != kCallOpen) {
        const auto answer = trim(text.substr(pos));
        for (auto marker : {kCallOpen, kCallClose, kThinkOpen, kThinkClose}) {
            if (const auto at = answer.find(marker); at != std::string_view::npos) {
                return fail(pos + at, "answer text interleaved with markup " + std::string(marker));
            }
        }
        trace.answer = std::string(answer);
        return trace;
    }

    while (pos < text.size()) {
        if (text.substr(pos, kCallOpen.size()) != kCallOpen) return fail(pos, "text after tool calls");
        const std::size_t body = pos + kCallOpen.size();
        const auto end = text.find(kCallClose, body);
        if (end == std::string_view::npos) return fail(body, "missing </tool_call>");
        const auto parsed = nlohmann::json::parse(text.substr(body, end - body), nullptr, false);
        if (parsed.is_discarded()) return fail(body, "tool call body is not valid JSON");
        try {
            trace.calls.push_back(tool_call_from_json(parsed));
        } catch (const std::invalid_argument& e) {
            return fail(body, e.what());
        }
        pos = skip_space(text, end + kCallClose.size());
    }
    return trace;
}

int format_reward(const TraceParse& parsed) { return std::holds_alternative<ToolCallTrace>(parsed) ? 1 : 0; }

namespace {

std::set<std::string> names_of(std::span<const ToolCall> calls) {
    std::set<std::string> s;
    for (const auto& c : calls) s.insert(c.name);
    return s;
}

struct Ratio {
    std::int64_t num = 0;
    std::int64_t den = 1;
};

Ratio name_ratio(std::span<const ToolCall> gold, std::span<const ToolCall> pred) {
    const auto g = names_of(gold);
    const auto p = names_of(pred);
    if (g.empty() && p.empty()) return {1, 1};
    std::size_t inter = 0;
    for (const auto& n : g) inter += p.count(n);
    const std::size_t uni = g.size() + p.size() - inter;
    return {static_cast<std::int64_t>(inter), static_cast<std::int64_t>(uni)};
}

// key_jaccard as inter/uni (uni = 0 encodes "both empty", i.e. 1).
struct PairCounts {
    std::size_t inter = 0;
    std::size_t uni = 0;
    int value_matches = 0;
};

PairCounts pair_counts(const ToolCall& gold, const ToolCall& pred) {
    PairCounts c;
    for (const auto& [k, v] : gold.params) {
        auto it = pred.params.find(k);
        if (it == pred.params.end()) continue;
        ++c.inter;
        if (it->second == v) ++c.value_matches;
    }
    c.uni = gold.params.size() + pred.params.size() - c.inter;
    return c;
}

}  // namespace

double name_overlap(std::span<const ToolCall> gold, std::span<const ToolCall> pred) {
    const auto r = name_ratio(gold, pred);
    return static_cast<double>(r.num) / static_cast<double>(r.den);
}

PairScore pair_param_score(const ToolCall& gold, const ToolCall& pred) {
    const auto c = pair_counts(gold, pred);
    const double jac = c.uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(c.uni);
    return {jac, c.value_matches};
}

CorrectnessResult correctness_reward(std::span<const ToolCall> gold, std::span<const ToolCall> pred,
                                     MatchMethod method) {
    if (gold.size() > kMaxCallsPerSide || pred.size() > kMaxCallsPerSide) {
        throw std::invalid_argument("at most 8 gold and 8 predicted calls are supported");
    }
    // Pair score (inter + vm * uni) / uni, over the common denominator lcm(uni).
    std::vector<PairCounts> counts(gold.size() * pred.size());
    std::int64_t lcm = 1;
    for (std::size_t g = 0; g < gold.size(); ++g) {
        for (std::size_t p = 0; p < pred.size(); ++p) {
            counts[g * pred.size() + p] = pair_counts(gold[g], pred[p]);
            const auto uni = counts[g * pred.size() + p].uni;
            if (uni > 0) lcm = std::lcm(lcm, static_cast<std::int64_t>(uni));
        }
    }
    ScoreMatrix m{gold.size(), pred.size(), std::vector<std::int64_t>(counts.size())};
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const auto& c = counts[i];
        const std::int64_t jac = c.uni == 0 ? lcm : static_cast<std::int64_t>(c.inter) * (lcm / c.uni);
        m.scores[i] = jac + static_cast<std::int64_t>(c.value_matches) * lcm;
    }
    const auto match = method == MatchMethod::assignment ? hungarian_max_matching(m) : exhaustive_max_matching(m);

    std::size_t s_max = 1 + gold.size();
    for (const auto& g : gold) s_max += g.params.size();

    const auto name = name_ratio(gold, pred);
    // R_max = name.num/name.den + total/lcm
    const std::int64_t num = name.num * lcm + match.total * name.den;
    const std::int64_t den = name.den * lcm;

    CorrectnessResult r;
    r.r_name = static_cast<double>(name.num) / static_cast<double>(name.den);
    r.r_max = static_cast<double>(num) / static_cast<double>(den);
    r.s_max = static_cast<double>(s_max);
    r.r_correct = 6.0 * static_cast<double>(num) / static_cast<double>(den * static_cast<std::int64_t>(s_max)) - 3.0;
    r.matching = match.pairs;
    return r;
}

RewardBreakdown tool_reward(std::string_view text, std::span<const ToolCall> gold) {
    const auto parsed = parse_trace(text);
    RewardBreakdown b;
    b.format = format_reward(parsed);
    std::span<const ToolCall> pred;
    if (const auto* t = std::get_if<ToolCallTrace>(&parsed)) pred = t->calls;
    // Parsed-but-oversized predictions score as a total miss.
    if (pred.size() > kMaxCallsPerSide) {
        b.correct = -3.0;
    } else {
        b.correct = correctness_reward(gold, pred).r_correct;
    }
    b.final_reward = b.format + b.correct;
    return b;
}

std::vector<ToolTask> load_tool_tasks(std::istream& is) {
    std::vector<ToolTask> tasks;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw std::invalid_argument("line " + std::to_string(lineno) + ": not a JSON object");
        }
        ToolTask t;
        try {
            t.prompt_text = j.value("prompt_text", std::string{});
            const auto& calls = j.at("gold_calls");
            if (!calls.is_array()) throw std::invalid_argument("gold_calls must be an array");
            for (const auto& c : calls) t.gold_calls.push_back(tool_call_from_json(c));
        } catch (const std::exception& e) {
            throw std::invalid_argument("line " + std::to_string(lineno) + ": " + e.what());
        }
        tasks.push_back(std::move(t));
    }
    return tasks;
}

// ---------------------------------------------------------------------------

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool contains(std::string_view hay, std::string_view needle, bool case_sensitive) {
    if (case_sensitive) return hay.find(needle) != std::string_view::npos;
    return lower(hay).find(lower(needle)) != std::string::npos;
}

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) ++n;
    return n;
}

std::optional<nlohmann::json> parse_json(std::string_view s) {
    auto j = nlohmann::json::parse(trim(s), nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    return j;
}

ConstraintKind constraint_kind_from_string(const std::string& s) {
    static const std::pair<const char*, ConstraintKind> kinds[] = {
        {"keyword_present", ConstraintKind::keyword_present},
        {"keyword_absent", ConstraintKind::keyword_absent},
        {"word_count_range", ConstraintKind::word_count_range},
        {"symbol_count", ConstraintKind::symbol_count},
        {"must_be_json", ConstraintKind::must_be_json},
        {"required_json_keys", ConstraintKind::required_json_keys},
        {"field_value_exact", ConstraintKind::field_value_exact},
    };
    for (const auto& [name, kind] : kinds) {
        if (s == name) return kind;
    }
    throw std::invalid_argument("unknown constraint kind: " + s);
}

}  // namespace

std::size_t count_words(std::string_view text) { return split_words(text).size(); }

void Constraint::validate() const {
    switch (kind) {
        case ConstraintKind::keyword_present:
        case ConstraintKind::keyword_absent:
            if (text.empty()) throw std::invalid_argument("keyword constraint needs a nonempty keyword");
            break;
        case ConstraintKind::word_count_range:
            if (min > max) throw std::invalid_argument("word_count_range needs min <= max");
            break;
        case ConstraintKind::symbol_count:
            if (text.empty()) throw std::invalid_argument("symbol_count needs a nonempty symbol");
            if (min > max) throw std::invalid_argument("symbol_count needs min <= max");
            break;
        case ConstraintKind::must_be_json:
            break;
        case ConstraintKind::required_json_keys:
            if (keys.empty()) throw std::invalid_argument("required_json_keys needs at least one key");
            break;
        case ConstraintKind::field_value_exact:
            if (key.empty()) throw std::invalid_argument("field_value_exact needs a key");
            break;
    }
}

bool Constraint::check(std::string_view response) const {
    switch (kind) {
        case ConstraintKind::keyword_present: return contains(response, text, case_sensitive);
        case ConstraintKind::keyword_absent: return !contains(response, text, case_sensitive);
        case ConstraintKind::word_count_range: {
            const auto n = count_words(response);
            return n >= min && n <= max;
        }
        case ConstraintKind::symbol_count: {
            const auto n = count_occurrences(response, text);
            return n >= min && n <= max;
        }
        case ConstraintKind::must_be_json: return parse_json(response).has_value();
        case ConstraintKind::required_json_keys: {
            const auto j = parse_json(response);
            if (!j || !j->is_object()) return false;
            return std::all_of(keys.begin(), keys.end(), [&](const std::string& k) { return j->contains(k); });
        }
        case ConstraintKind::field_value_exact: {
            const auto j = parse_json(response);
            if (!j || !j->is_object() || !j->contains(key)) return false;
            return json_value_text((*j)[key]) == value;
        }
    }
    return false;
}

Constraint Constraint::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("constraint must be a JSON object");
    Constraint c;
    try {
        c.kind = constraint_kind_from_string(j.at("kind").get<std::string>());
        switch (c.kind) {
            case ConstraintKind::keyword_present:
            case ConstraintKind::keyword_absent:
                c.text = j.at("keyword").get<std::string>();
                c.case_sensitive = j.value("case_sensitive", false);
                break;
            case ConstraintKind::word_count_range:
                c.min = j.value("min", std::size_t{0});
                c.max = j.value("max", SIZE_MAX);
                break;
            case ConstraintKind::symbol_count:
                c.text = j.at("symbol").get<std::string>();
                c.min = j.value("min", std::size_t{0});
                c.max = j.value("max", SIZE_MAX);
                break;
            case ConstraintKind::must_be_json: break;
            case ConstraintKind::required_json_keys: c.keys = j.at("keys").get<std::vector<std::string>>(); break;
            case ConstraintKind::field_value_exact:
                c.key = j.at("key").get<std::string>();
                c.value = json_value_text(j.at("value"));
                break;
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("malformed constraint: ") + e.what());
    }
    c.validate();
    return c;
}

double verify_constraints(std::string_view response, std::span<const Constraint> constraints) {
    if (constraints.empty()) throw std::invalid_argument("at least one constraint is required");
    for (const auto& c : constraints) c.validate();
    std::size_t passed = 0;
    for (const auto& c : constraints) passed += c.check(response) ? 1 : 0;
    return static_cast<double>(passed) / static_cast<double>(constraints.size());
}

double schema_verify(std::string_view response, std::span<const std::string> required_keys,
                     const std::map<std::string, std::string>& expected_fields) {
    std::vector<Constraint> cs;
    cs.push_back(Constraint{.kind = ConstraintKind::must_be_json});
    if (!required_keys.empty()) {
        cs.push_back(Constraint{.kind = ConstraintKind::required_json_keys,
                                .keys = std::vector<std::string>(required_keys.begin(), required_keys.end())});
    }
    for (const auto& [k, v] : expected_fields) {
        cs.push_back(Constraint{.kind = ConstraintKind::field_value_exact, .key = k, .value = v});
    }
    return verify_constraints(response, cs);
}

ConstraintSuite ConstraintSuite::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("constraint suite must be a JSON object");
    ConstraintSuite s;
    s.task_id = j.value("task_id", std::string{});
    const auto it = j.find("constraints");
    if (it == j.end() || !it->is_array() || it->empty()) {
        throw std::invalid_argument("constraint suite needs a nonempty \"constraints\" array");
    }
    for (const auto& c : *it) s.constraints.push_back(Constraint::from_json(c));
    return s;
}

// ---------------------------------------------------------------------------

std::string normalize_answer(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (std::ispunct(static_cast<unsigned char>(c))) continue;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    // Collapse whitespace runs and trim.
    std::string collapsed;
    for (const auto& w : split_words(out)) {
        if (!collapsed.empty()) collapsed.push_back(' ');
        collapsed += w;
    }
    return collapsed;
}

namespace {

// "b", "b.", "b)", "(b)", "b:", optionally followed by whitespace and text.
std::optional<std::size_t> leading_letter(std::string_view answer, std::size_t num_options) {
    auto s = trim(answer);
    bool paren = false;
    if (!s.empty() && s.front() == '(') {
        paren = true;
        s.remove_prefix(1);
    }
    if (s.empty() || !std::isalpha(static_cast<unsigned char>(s.front()))) return std::nullopt;
    const auto idx = static_cast<std::size_t>(std::tolower(static_cast<unsigned char>(s.front())) - 'a');
    s.remove_prefix(1);
    if (paren) {
        if (s.empty() || s.front() != ')') return std::nullopt;
        s.remove_prefix(1);
    } else if (!s.empty() && (s.front() == '.' || s.front() == ')' || s.front() == ':')) {
        s.remove_prefix(1);
    }
    if (!s.empty() && !is_space(s.front())) return std::nullopt;
    if (idx >= num_options) return std::nullopt;
    return idx;
}

}  // namespace

std::optional<std::size_t> match_option(std::string_view answer, std::span<const std::string> options) {
    const auto norm = normalize_answer(answer);
    if (norm.empty()) return std::nullopt;
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (normalize_answer(options[i]) == norm) return i;
    }
    return leading_letter(answer, options.size());
}

int multiple_choice_verify(std::string_view answer, std::span<const std::string> options, std::size_t gold_index) {
    const auto m = match_option(answer, options);
    return m && *m == gold_index ? 1 : 0;
}

const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::a_better: return "A";
        case Verdict::b_better: return "B";
        case Verdict::tie: return "TIE";
    }
    return "?";
}

int judge_to_reward(Verdict v) {
    switch (v) {
        case Verdict::a_better:
        case Verdict::tie: return 1;
        case Verdict::b_better: return 0;
    }
    return 0;
}

ScriptedJudge::ScriptedJudge(std::vector<Verdict> script) : script_(std::move(script)) {
    if (script_.empty()) throw std::invalid_argument("scripted judge needs at least one verdict");
}

Verdict ScriptedJudge::compare(std::string_view, std::string_view) {
    const auto v = script_[next_];
    next_ = (next_ + 1) % script_.size();
    return v;
}

int judged_reward(Judge& judge, std::string_view policy_output, std::string_view reference) {
    return judge_to_reward(judge.compare(policy_output, reference));
}

// ---------------------------------------------------------------------------

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        const std::size_t b = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > b) words.emplace_back(text.substr(b, i - b));
    }
    return words;
}

double length_penalty(std::size_t response_len, std::size_t max_len, const ReshapeConfig& cfg) {
    if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
    const std::size_t buffer = std::max<std::size_t>(1, cfg.length_buffer.value_or((max_len + 7) / 8));
    const double start = static_cast<double>(max_len) - static_cast<double>(std::min(buffer, max_len));
    const double len = static_cast<double>(response_len);
    if (len <= start) return 0.0;
    return -std::min(1.0, (len - start) / (static_cast<double>(max_len) - start));
}

namespace {

template <class T>
double repetition_fraction_impl(std::span<const T> seq, std::size_t n) {
    if (n == 0) throw std::invalid_argument("n-gram size must be positive");
    if (seq.size() < n) return 0.0;
    const std::size_t positions = seq.size() - n + 1;
    std::set<std::vector<T>> seen;
    std::size_t repeated = 0;
    for (std::size_t i = 0; i < positions; ++i) {
        std::vector<T> gram(seq.begin() + i, seq.begin() + i + n);
        if (!seen.insert(std::move(gram)).second) ++repeated;
    }
    return static_cast<double>(repeated) / static_cast<double>(positions);
}

double repetition_penalty(double frac, const ReshapeConfig& cfg) {
    return -cfg.repetition_weight * std::max(0.0, frac - cfg.repetition_threshold);
}

}  // namespace

double repetition_fraction(std::span<const std::string> words, std::size_t n) {
    return repetition_fraction_impl(words, n);
}

double repetition_fraction(std::span<const Token> tokens, std::size_t n) { return repetition_fraction_impl(tokens, n); }

RewardBreakdown reshape_reward(double base, std::size_t response_len, std::size_t max_len, std::string_view text,
                               const ReshapeConfig& cfg) {
    RewardBreakdown b;
    b.correct = base;
    b.length_penalty = length_penalty(response_len, max_len, cfg);
    const auto words = split_words(text);
    b.repetition_penalty = repetition_penalty(repetition_fraction(std::span<const std::string>(words), cfg.ngram), cfg);
    b.final_reward = base + b.length_penalty + b.repetition_penalty;
    return b;
}

RewardBreakdown reshape_reward(double base, std::span<const Token> response, std::size_t max_len,
                               const ReshapeConfig& cfg) {
    RewardBreakdown b;
    b.correct = base;
    b.length_penalty = length_penalty(response.size(), max_len, cfg);
    b.repetition_penalty = repetition_penalty(repetition_fraction(response, cfg.ngram), cfg);
    b.final_reward = base + b.length_penalty + b.repetition_penalty;
    return b;
}

}  // namespace rlab
