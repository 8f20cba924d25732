// SPDX-License-Identifier: Apache-2.0
//
// Maximum-weight bipartite matching over small integer score matrices.

#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace rlab {

/// Row-major rows x cols matrix of nonnegative integer scores.
struct ScoreMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int64_t> scores;

    std::int64_t at(std::size_t r, std::size_t c) const { return scores[r * cols + c]; }
};

struct Matching {
    std::int64_t total = 0;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
};

/// Hungarian algorithm (Kuhn-Munkres, O(n^3)) on the zero-padded square
/// matrix. Pairs whose score is zero are dropped from the result, so the
/// matching is partial.
Matching hungarian_max_matching(const ScoreMatrix& m);

/// Enumerates every injection of the smaller side into the larger one.
/// Intended for small inputs (min(rows, cols)! * ... assignments).
Matching exhaustive_max_matching(const ScoreMatrix& m);

}  // namespace rlab
