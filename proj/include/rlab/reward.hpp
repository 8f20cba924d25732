// SPDX-License-Identifier: Apache-2.0
//
// Reward signals: tool-call traces, instruction/schema constraints,
// multiple-choice keyword matching, ternary judge mapping and length /
// repetition reshaping.

#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "rlab/policy.hpp"

namespace rlab {

// ---------------------------------------------------------------------------
// Tool-use reward
// ---------------------------------------------------------------------------

struct ToolCall {
    std::string name;
    std::map<std::string, std::string> params;

    friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

struct ToolCallTrace {
    std::string think;
    std::vector<ToolCall> calls;
    std::optional<std::string> answer;
};

struct FormatError {
    std::size_t position = 0;
    std::string reason;
};

using TraceParse = std::variant<ToolCallTrace, FormatError>;

/// trace := ws "<think>" any "</think>" ws ( tool_call (ws tool_call)* ws | answer_text )
/// tool_call := "<tool_call>" json_object "</tool_call>"
/// The JSON object needs a nonempty string "name" and an optional object
/// "arguments". Non-string argument values are kept as their JSON text.
TraceParse parse_trace(std::string_view text);

/// Converts a {"name": ..., "arguments": {...}} object. Throws on bad shape.
ToolCall tool_call_from_json(const nlohmann::json& j);
nlohmann::json tool_call_to_json(const ToolCall& call);

int format_reward(const TraceParse& parsed);

/// |N_G ∩ N_P| / |N_G ∪ N_P| over distinct names; 1 when both are empty.
double name_overlap(std::span<const ToolCall> gold, std::span<const ToolCall> pred);

struct PairScore {
    double key_jaccard = 0.0;
    int value_matches = 0;
};

PairScore pair_param_score(const ToolCall& gold, const ToolCall& pred);

enum class MatchMethod { assignment, exhaustive };

struct CorrectnessResult {
    double r_correct = 0.0;
    double r_name = 0.0;
    double r_max = 0.0;
    double s_max = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> matching;  // (gold index, pred index)
};

inline constexpr std::size_t kMaxCallsPerSide = 8;

/// R_max = r_name + best one-to-one matching of (key_jaccard + value_matches),
/// S_max = 1 + |G| + sum_j |keys(G_j)|, r_correct = 6 R_max / S_max - 3.
/// Pair scores are scaled to integers over a common denominator so both
/// matching methods produce bit-identical results.
CorrectnessResult correctness_reward(std::span<const ToolCall> gold, std::span<const ToolCall> pred,
                                     MatchMethod method = MatchMethod::assignment);

struct RewardBreakdown {
    double format = 0.0;
    double correct = 0.0;
    double length_penalty = 0.0;
    double repetition_penalty = 0.0;
    double final_reward = 0.0;
};

RewardBreakdown tool_reward(std::string_view text, std::span<const ToolCall> gold);

struct ToolTask {
    std::string prompt_text;
    std::vector<ToolCall> gold_calls;
};

/// Line-delimited {"prompt_text": ..., "gold_calls": [{"name", "arguments"}]}.
std::vector<ToolTask> load_tool_tasks(std::istream& is);

// ---------------------------------------------------------------------------
// Instruction-following and schema constraints
// ---------------------------------------------------------------------------

enum class ConstraintKind {
    keyword_present,
    keyword_absent,
    word_count_range,
    symbol_count,
    must_be_json,
    required_json_keys,
    field_value_exact,
};

struct Constraint {
    ConstraintKind kind = ConstraintKind::must_be_json;
    std::string text;                 // keyword or symbol
    bool case_sensitive = false;      // keyword kinds
    std::size_t min = 0;              // word_count_range, symbol_count
    std::size_t max = SIZE_MAX;
    std::vector<std::string> keys;    // required_json_keys
    std::string key;                  // field_value_exact
    std::string value;

    /// Throws std::invalid_argument on a malformed payload.
    void validate() const;
    bool check(std::string_view response) const;

    static Constraint from_json(const nlohmann::json& j);
};

/// Fraction of constraints satisfied.
double verify_constraints(std::string_view response, std::span<const Constraint> constraints);

/// JSON validity, required keys, then one exact-match check per field.
double schema_verify(std::string_view response, std::span<const std::string> required_keys,
                     const std::map<std::string, std::string>& expected_fields);

/// {"task_id": ..., "constraints": [...]}
struct ConstraintSuite {
    std::string task_id;
    std::vector<Constraint> constraints;

    static ConstraintSuite from_json(const nlohmann::json& j);
};

std::size_t count_words(std::string_view text);

// ---------------------------------------------------------------------------
// Multiple choice and judge
// ---------------------------------------------------------------------------

/// Lowercase, trim and drop ASCII punctuation.
std::string normalize_answer(std::string_view s);

/// Index of the option the answer refers to, by exact normalized text or by
/// a leading option letter ("B", "b)", "(b)", "B. text").
std::optional<std::size_t> match_option(std::string_view answer, std::span<const std::string> options);

int multiple_choice_verify(std::string_view answer, std::span<const std::string> options, std::size_t gold_index);

/// Policy output is side A, reference is side B.
enum class Verdict { a_better, b_better, tie };

const char* to_string(Verdict v);

int judge_to_reward(Verdict v);

class Judge {
public:
    virtual ~Judge() = default;
    virtual Verdict compare(std::string_view policy_output, std::string_view reference) = 0;
};

/// Replays a fixed verdict script, cycling when exhausted.
class ScriptedJudge final : public Judge {
public:
    explicit ScriptedJudge(std::vector<Verdict> script);
    Verdict compare(std::string_view policy_output, std::string_view reference) override;

private:
    std::vector<Verdict> script_;
    std::size_t next_ = 0;
};

int judged_reward(Judge& judge, std::string_view policy_output, std::string_view reference);

// ---------------------------------------------------------------------------
// Reward reshaping
// ---------------------------------------------------------------------------

struct ReshapeConfig {
    /// Width of the length-penalty ramp; ceil(max_len / 8) when unset.
    std::optional<std::size_t> length_buffer;
    double repetition_weight = 1.0;
    double repetition_threshold = 0.2;
    std::size_t ngram = 4;
};

double length_penalty(std::size_t response_len, std::size_t max_len, const ReshapeConfig& cfg = {});

/// Fraction of n-gram start positions whose n-gram already started earlier.
double repetition_fraction(std::span<const std::string> words, std::size_t n = 4);
double repetition_fraction(std::span<const Token> tokens, std::size_t n = 4);

std::vector<std::string> split_words(std::string_view text);

RewardBreakdown reshape_reward(double base, std::size_t response_len, std::size_t max_len, std::string_view text,
                               const ReshapeConfig& cfg = {});
RewardBreakdown reshape_reward(double base, std::span<const Token> response, std::size_t max_len,
                               const ReshapeConfig& cfg = {});

}  // namespace rlab
