// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic task generators.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rlab/reward.hpp"
#include "rlab/rollout.hpp"

namespace rlab {

enum class SyntheticKind { parity_verifiable, tool_use_synthetic, judged_mock, schema_extract };

const char* to_string(SyntheticKind k);
SyntheticKind synthetic_kind_from_string(const std::string& s);

struct SyntheticTask {
    SyntheticKind kind = SyntheticKind::parity_verifiable;
    std::uint64_t seed = 0;
    /// Number of bits (parity), reference length (judged), corruption rate in
    /// percent (tool use, schema).
    std::size_t difficulty = 3;
};

// Parity vocabulary. 0 is end-of-sequence.
namespace parity {
inline constexpr Token kZero = 1;
inline constexpr Token kOne = 2;
inline constexpr Token kQuery = 3;
inline constexpr Token kEven = 4;
inline constexpr Token kOdd = 5;
inline constexpr std::size_t kMinVocab = 6;
}  // namespace parity

/// Prompts for the token-level tasks (parity_verifiable, judged_mock).
std::vector<Prompt> make_prompts(const SyntheticTask& task, std::size_t count);

/// Mock judge for judged_mock prompts: compares how many positions of the
/// response match the gold reference against a reference that misses one.
class ReferenceMatchJudge final {
public:
    Verdict compare(std::span<const Token> response, std::span<const Token> reference) const;
};

/// Reward for a rollout of a token-level synthetic prompt.
double score_rollout(const Prompt& prompt, const Rollout& rollout);

struct ToolCase {
    std::string trace_text;
    std::vector<ToolCall> gold;
};

/// Gold call sets drawn from a small tool schema bank, with predicted traces
/// corrupted at `difficulty` percent per edit opportunity.
std::vector<ToolCase> make_tool_cases(const SyntheticTask& task, std::size_t count);

struct SchemaCase {
    std::string response;
    std::vector<std::string> required_keys;
    std::map<std::string, std::string> expected_fields;
};

std::vector<SchemaCase> make_schema_cases(const SyntheticTask& task, std::size_t count);

}  // namespace rlab
