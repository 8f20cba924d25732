// SPDX-License-Identifier: Apache-2.0

#include "rlab/matching.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace rlab {

namespace {

void check(const ScoreMatrix& m) {
    if (m.scores.size() != m.rows * m.cols) throw std::invalid_argument("score matrix size mismatch");
    for (auto s : m.scores) {
        if (s < 0) throw std::invalid_argument("scores must be nonnegative");
    }
}

Matching finish(const ScoreMatrix& m, std::vector<std::pair<std::size_t, std::size_t>> pairs) {
    Matching out;
    for (auto [r, c] : pairs) {
        const auto s = m.at(r, c);
        if (s == 0) continue;
        out.total += s;
        out.pairs.emplace_back(r, c);
    }
    std::sort(out.pairs.begin(), out.pairs.end());
    return out;
}

}  // namespace

Matching hungarian_max_matching(const ScoreMatrix& m) {
    check(m);
    const std::size_t n = std::max(m.rows, m.cols);
    if (n == 0 || m.rows == 0 || m.cols == 0) return {};

    std::int64_t max_w = 0;
    for (auto s : m.scores) max_w = std::max(max_w, s);
    auto cost = [&](std::size_t i, std::size_t j) -> std::int64_t {
        const std::int64_t w = (i < m.rows && j < m.cols) ? m.at(i, j) : 0;
        return max_w - w;
    };

    // 1-indexed potentials; p[j] is the row assigned to column j.
    constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max() / 4;
    std::vector<std::int64_t> u(n + 1, 0), v(n + 1, 0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<std::int64_t> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            std::int64_t delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const std::int64_t cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t j = 1; j <= n; ++j) {
        const std::size_t r = p[j] - 1;
        const std::size_t c = j - 1;
        if (r < m.rows && c < m.cols) pairs.emplace_back(r, c);
    }
    return finish(m, std::move(pairs));
}

Matching exhaustive_max_matching(const ScoreMatrix& m) {
    check(m);
    if (m.rows == 0 || m.cols == 0) return {};
    const bool transpose = m.rows > m.cols;
    const std::size_t small = transpose ? m.cols : m.rows;
    const std::size_t large = transpose ? m.rows : m.cols;
    auto score = [&](std::size_t s, std::size_t l) { return transpose ? m.at(l, s) : m.at(s, l); };

    std::vector<std::size_t> assign(small), best_assign;
    std::vector<char> taken(large, 0);
    std::int64_t best = -1;

    auto recurse = [&](auto&& self, std::size_t s, std::int64_t acc) -> void {
        if (s == small) {
            if (acc > best) {
                best = acc;
                best_assign = assign;
            }
            return;
        }
        for (std::size_t l = 0; l < large; ++l) {
            if (taken[l]) continue;
            taken[l] = 1;
            assign[s] = l;
            self(self, s + 1, acc + score(s, l));
            taken[l] = 0;
        }
    };
    recurse(recurse, 0, 0);

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t s = 0; s < small; ++s) {
        pairs.emplace_back(transpose ? best_assign[s] : s, transpose ? s : best_assign[s]);
    }
    return finish(m, std::move(pairs));
}

}  // namespace rlab
