#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "carpas/errors.hpp"

namespace carpas::matching {

enum class Objective { Maximize, Minimize };

struct ScoreMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> scores; // row-major, rows * cols entries

    double at(std::size_t r, std::size_t c) const { return scores[r * cols + c]; }
};

struct Assignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs; // (row, col)
    double total = 0.0;
};

namespace detail {

// O(n^3) Hungarian algorithm (potentials formulation) on a square cost
// matrix, minimizing. Returns col index assigned to each row.
inline std::vector<std::size_t> solve_square_min(const std::vector<double>& cost, std::size_t n) {
    const double INF = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, INF);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = INF;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
    std::vector<std::size_t> row_to_col(n);
    for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

// Optimal total over all maximal matchings, minimizing. Rectangular input is
// padded to square with zeros; padded assignments contribute a constant so
// the real pairing is unaffected.
inline double optimal_total_min(const ScoreMatrix& m,
                                std::vector<std::pair<std::size_t, std::size_t>>* pairs_out) {
    const std::size_t n = std::max(m.rows, m.cols);
    std::vector<double> cost(n * n, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) cost[r * n + c] = m.at(r, c);
    const auto row_to_col = solve_square_min(cost, n);
    double total = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) {
        const std::size_t c = row_to_col[r];
        if (c < m.cols) {
            total += m.at(r, c);
            if (pairs_out) pairs_out->emplace_back(r, c);
        }
    }
    return total;
}

} // namespace detail

// Returns an assignment of min(rows, cols) pairs achieving the optimal total.
// Among equally optimal assignments the lexicographically smallest pair set
// is returned: pairs are fixed row by row, lowest feasible column first.
inline Assignment optimal_assignment(const ScoreMatrix& matrix, Objective objective) {
    for (double s : matrix.scores) {
        if (!std::isfinite(s))
            throw ValidationError("optimal_assignment: non-finite matrix entry");
    }
    Assignment result;
    if (matrix.rows == 0 || matrix.cols == 0) return result;

    ScoreMatrix work = matrix;
    if (objective == Objective::Maximize) {
        for (double& s : work.scores) s = -s;
    }

    const double best = detail::optimal_total_min(work, nullptr);
    const double eps = 1e-9 * (1.0 + std::abs(best));

    // Lexicographic refinement: pin (row, col) choices one row at a time,
    // keeping only columns under which the pinned prefix still reaches the
    // optimal total.
    std::vector<char> col_taken(work.cols, 0);
    double pinned = 0.0;
    const std::size_t k = std::min(work.rows, work.cols);
    std::vector<char> row_pinned(work.rows, 0);

    for (std::size_t r = 0; r < work.rows && result.pairs.size() < k; ++r) {
        for (std::size_t c = 0; c < work.cols; ++c) {
            if (col_taken[c]) continue;
            // Build the reduced matrix with (r, c) forced: drop row r and
            // col c, keep remaining rows/cols.
            ScoreMatrix reduced;
            std::vector<std::size_t> rrows, rcols;
            for (std::size_t i = 0; i < work.rows; ++i)
                if (i != r && !row_pinned[i]) rrows.push_back(i);
            for (std::size_t j = 0; j < work.cols; ++j)
                if (j != c && !col_taken[j]) rcols.push_back(j);
            reduced.rows = rrows.size();
            reduced.cols = rcols.size();
            reduced.scores.resize(reduced.rows * reduced.cols);
            for (std::size_t i = 0; i < rrows.size(); ++i)
                for (std::size_t j = 0; j < rcols.size(); ++j)
                    reduced.scores[i * reduced.cols + j] = work.at(rrows[i], rcols[j]);
            const double rest = (reduced.rows && reduced.cols)
                                    ? detail::optimal_total_min(reduced, nullptr)
                                    : 0.0;
            if (pinned + work.at(r, c) + rest <= best + eps) {
                result.pairs.emplace_back(r, c);
                col_taken[c] = 1;
                row_pinned[r] = 1;
                pinned += work.at(r, c);
                break;
            }
        }
        // When rows > cols some rows stay unmatched; a row with no feasible
        // column under the optimum is simply skipped.
    }

    result.total = 0.0;
    for (const auto& [r, c] : result.pairs) result.total += matrix.at(r, c);
    return result;
}

} // namespace carpas::matching
