// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace rlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInvalidInput = 2;
inline constexpr int kExitNonFinite = 3;

inline constexpr const char* kVersion = "rlab 0.1.0";

/// Entry point shared by the `rlab` binary and the tests. `args` excludes the
/// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Fixed output file names under --out.
inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kFinalParamsFile = "final.params";
inline constexpr const char* kLastGoodParamsFile = "last_good.params";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kScoreToolsFile = "score_tools.csv";
inline constexpr const char* kSpeedupCsvFile = "speedup.csv";
inline constexpr const char* kSpeedupJsonFile = "speedup.json";
inline constexpr const char* kStageBreakdownFile = "stage_breakdown.json";
inline constexpr const char* kReplayReportFile = "replay_report.json";
inline constexpr const char* kZvRateFile = "zv_rate.csv";

}  // namespace rlab::cli
