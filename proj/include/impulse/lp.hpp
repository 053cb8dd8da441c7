#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "impulse/types.hpp"

namespace impulse::lp {

struct ConvexWeights {
    numvec weights;       ///< one per candidate, at most rows() positive
    real infeasibility;   ///< phase-I optimum (sum of artificials)
};

namespace detail {

inline void pivot(std::vector<numvec>& T, std::size_t leave, std::size_t enter) {
    const real piv = T[leave][enter];
    for (auto& v : T[leave]) v /= piv;
    for (std::size_t r = 0; r < T.size(); ++r) {
        if (r == leave) continue;
        const real f = T[r][enter];
        if (f == 0.0) continue;
        for (std::size_t c = 0; c < T[r].size(); ++c) T[r][c] -= f * T[leave][c];
    }
}

/// Bland ratio test; returns rows() when the column is unbounded.
inline std::size_t ratio_row(const std::vector<numvec>& T, const std::vector<std::size_t>& basis, std::size_t enter,
                             std::size_t rhs, real eps) {
    std::size_t leave = T.size();
    real best = kInf;
    for (std::size_t r = 0; r < T.size(); ++r) {
        if (T[r][enter] > eps) {
            const real ratio = T[r][rhs] / T[r][enter];
            if (ratio < best - eps || (std::abs(ratio - best) <= eps && leave < T.size() && basis[r] < basis[leave])) {
                best = ratio;
                leave = r;
            }
        }
    }
    return leave;
}

} // namespace detail

/**
 * Finds gamma >= 0 with sum gamma = 1 and sum_l gamma_l values[l][j] <= bounds[j]
 * (== when equality[j]) by a dense two-phase simplex with Bland's rule. When
 * `objective` is given (one entry per candidate) the feasible point minimizing
 * sum gamma_l objective[l] is returned. The result is basic, so at most J+1
 * weights are positive. Returns nullopt when the minimal total violation
 * exceeds `tolerance`.
 */
inline std::optional<ConvexWeights> convex_weights(const std::vector<numvec>& values, const numvec& bounds,
                                                   const std::vector<bool>& equality, real tolerance,
                                                   const numvec& objective = {}) {
    const std::size_t n = values.size(), J = bounds.size(), m = J + 1;
    if (n == 0) return std::nullopt;

    std::vector<std::size_t> slack_col(J, 0);
    std::size_t cols = n;
    for (std::size_t j = 0; j < J; ++j)
        if (!equality[j]) slack_col[j] = cols++;
    const std::size_t art0 = cols;
    cols += m;

    // Tableau rows 0..m-1, last column is the right-hand side.
    std::vector<numvec> T(m, numvec(cols + 1, 0.0));
    for (std::size_t l = 0; l < n; ++l) T[0][l] = 1.0;
    T[0][cols] = 1.0;
    for (std::size_t j = 0; j < J; ++j) {
        auto& row = T[j + 1];
        for (std::size_t l = 0; l < n; ++l) row[l] = values[l][j];
        if (!equality[j]) row[slack_col[j]] = 1.0;
        row[cols] = bounds[j];
        if (row[cols] < 0.0)
            for (auto& v : row) v = -v;
    }
    std::vector<std::size_t> basis(m);
    for (std::size_t r = 0; r < m; ++r) {
        T[r][art0 + r] = 1.0;
        basis[r] = art0 + r;
    }

    constexpr real eps = 1e-12;
    for (std::size_t iter = 0; iter < 50 * (cols + m); ++iter) {
        // Reduced costs of the phase-I objective: -sum of column entries over artificial rows.
        std::size_t enter = cols;
        for (std::size_t c = 0; c < art0; ++c) {
            real rc = 0.0;
            for (std::size_t r = 0; r < m; ++r)
                if (basis[r] >= art0) rc -= T[r][c];
            if (rc < -eps) {
                enter = c;
                break;
            }
        }
        if (enter == cols) break;
        const std::size_t leave = detail::ratio_row(T, basis, enter, cols, eps);
        if (leave == m) break;
        detail::pivot(T, leave, enter);
        basis[leave] = enter;
    }

    real violation = 0.0;
    for (std::size_t r = 0; r < m; ++r)
        if (basis[r] >= art0) violation += std::abs(T[r][cols]);
    if (!objective.empty() && violation <= tolerance) {
        // Drive zero-level artificials out so phase II cannot raise them.
        for (std::size_t r = 0; r < m; ++r) {
            if (basis[r] < art0) continue;
            for (std::size_t c = 0; c < art0; ++c)
                if (std::abs(T[r][c]) > 1e-9) {
                    detail::pivot(T, r, c);
                    basis[r] = c;
                    break;
                }
        }
        // Phase II over the original and slack columns; artificials never re-enter.
        auto cost = [&](std::size_t c) { return c < n ? objective[c] : 0.0; };
        const real scale = 1e-12 * [&] {
            real mx = 1.0;
            for (real v : objective) mx = std::max(mx, std::abs(v));
            return mx;
        }();
        for (std::size_t iter = 0; iter < 50 * (cols + m); ++iter) {
            std::size_t enter = cols;
            for (std::size_t c = 0; c < art0; ++c) {
                real rc = cost(c);
                for (std::size_t r = 0; r < m; ++r) rc -= cost(basis[r]) * T[r][c];
                if (rc < -scale) {
                    enter = c;
                    break;
                }
            }
            if (enter == cols) break;
            const std::size_t leave = detail::ratio_row(T, basis, enter, cols, eps);
            if (leave == m) break;
            detail::pivot(T, leave, enter);
            basis[leave] = enter;
        }
    }

    ConvexWeights out{numvec(n, 0.0), 0.0};
    for (std::size_t r = 0; r < m; ++r) {
        if (basis[r] >= art0) out.infeasibility += std::abs(T[r][cols]);
        else if (basis[r] < n) out.weights[basis[r]] = std::max(0.0, T[r][cols]);
    }
    if (out.infeasibility > tolerance) return std::nullopt;
    real s = 0.0;
    for (real w : out.weights) s += w;
    if (!(s > 0.0)) return std::nullopt;
    for (real& w : out.weights) w /= s;
    return out;
}

} // namespace impulse::lp
