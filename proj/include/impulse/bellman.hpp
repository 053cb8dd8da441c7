#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "impulse/model.hpp"
#include "impulse/types.hpp"

namespace impulse {

/// Bellman function on the grid states; the cemetery value is implicitly 0.
struct ValueFn {
    numvec values;
};

/// Deterministic stationary strategy: one action index per grid state.
struct StationaryPolicy {
    std::vector<std::size_t> choice;

    friend bool operator==(const StationaryPolicy&, const StationaryPolicy&) = default;
};

struct BellmanConfig {
    real tolerance = 1e-9;            ///< sup-norm stopping threshold
    std::size_t max_iterations = 100000;
    real argmin_slack = 1e-7;         ///< relative: slack at x is argmin_slack * (1 + W(x))
};

/// Per-state action indices attaining the Bellman minimum within the slack, ascending.
struct MinimizerSet {
    std::vector<std::vector<std::size_t>> actions;
};

struct BellmanSolution {
    ValueFn W;
    StationaryPolicy policy;
    std::size_t iterations = 0;
    real residual = kInf;
    bool converged = false;
    /// Largest pointwise decrease W_{k}(x) - W_{k+1}(x) observed; zero for monotone iterates.
    real max_decrease = 0.0;
    /// Largest value of any iterate.
    real max_value = 0.0;
    std::vector<real> residual_trace;
};

/// Combined cost C_0 + sum_j g_j C_j for every (state, action) cell.
inline numvec lagrangian_costs(const DiscreteMDP& mdp, const Multipliers& g) {
    if (g.size() != mdp.n_constraints())
        throw ModelError("multiplier vector has " + std::to_string(g.size()) + " entries, expected " +
                         std::to_string(mdp.n_constraints()));
    numvec c = mdp.cost_table(0);
    for (std::size_t j = 0; j < g.size(); ++j) {
        if (!(g[j] >= 0.0)) throw ModelError("multipliers must be nonnegative");
        if (g[j] == 0.0) continue;
        const numvec& cj = mdp.cost_table(j + 1);
        for (std::size_t i = 0; i < c.size(); ++i) c[i] += g[j] * cj[i];
    }
    return c;
}

namespace detail {

/// One Jacobi sweep; ties go to the smallest action index.
inline void backup_into(const DiscreteMDP& mdp, const numvec& cost, const numvec& W, numvec& out,
                        std::vector<std::size_t>& arg) {
    const std::size_t ns = mdp.n_states(), na = mdp.n_actions();
    out.resize(ns);
    arg.resize(ns);
    for (std::size_t s = 0; s < ns; ++s) {
        real best = kInf;
        std::size_t best_a = 0;
        for (std::size_t a = 0; a < na; ++a) {
            const real q = cost[mdp.cell(s, a)] + mdp.expected_next(W, s, a);
            if (q < best) {
                best = q;
                best_a = a;
            }
        }
        out[s] = best;
        arg[s] = best_a;
    }
}

} // namespace detail

/// W'(x) = min_b { C_0 + sum g_j C_j + survival * W(next) } with its argmin policy.
inline std::pair<ValueFn, StationaryPolicy> bellman_backup(const DiscreteMDP& mdp, const ValueFn& W,
                                                            const Multipliers& g) {
    const numvec cost = lagrangian_costs(mdp, g);
    std::pair<ValueFn, StationaryPolicy> r;
    detail::backup_into(mdp, cost, W.values, r.first.values, r.second.choice);
    return r;
}

/// Sup-norm of backup(W) - W.
inline real residual(const DiscreteMDP& mdp, const ValueFn& W, const Multipliers& g) {
    auto [next, _] = bellman_backup(mdp, W, g);
    real r = 0.0;
    for (std::size_t s = 0; s < W.values.size(); ++s) r = std::max(r, std::abs(next.values[s] - W.values[s]));
    return r;
}

/**
 * Successive approximation from W = 0. For nonnegative costs the iterates
 * increase pointwise; the run stops once the sup-norm change falls to the
 * tolerance or the iteration budget is exhausted (converged = false).
 */
inline BellmanSolution solve_W(const DiscreteMDP& mdp, const Multipliers& g, const BellmanConfig& cfg = {}) {
    if (!(cfg.tolerance > 0.0)) throw ModelError("bellman: tolerance must be positive");
    const numvec cost = lagrangian_costs(mdp, g);
    BellmanSolution sol;
    numvec W(mdp.n_states(), 0.0), next;
    std::vector<std::size_t> arg;
    for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
        detail::backup_into(mdp, cost, W, next, arg);
        real diff = 0.0;
        for (std::size_t s = 0; s < W.size(); ++s) {
            diff = std::max(diff, std::abs(next[s] - W[s]));
            sol.max_decrease = std::max(sol.max_decrease, W[s] - next[s]);
            sol.max_value = std::max(sol.max_value, next[s]);
        }
        W.swap(next);
        sol.iterations = it;
        sol.residual = diff;
        sol.residual_trace.push_back(diff);
        if (diff <= cfg.tolerance) {
            sol.converged = true;
            break;
        }
    }
    sol.W.values = std::move(W);
    sol.policy.choice = std::move(arg);
    return sol;
}

enum class SlackMode { Absolute, Relative };

/// All actions within slack of the per-state Bellman minimum (relative slack scales by 1 + W(x)).
inline MinimizerSet argmin_set(const DiscreteMDP& mdp, const ValueFn& W, const Multipliers& g, real slack,
                               SlackMode mode = SlackMode::Absolute) {
    const numvec cost = lagrangian_costs(mdp, g);
    const std::size_t ns = mdp.n_states(), na = mdp.n_actions();
    MinimizerSet F;
    F.actions.resize(ns);
    numvec q(na);
    for (std::size_t s = 0; s < ns; ++s) {
        real best = kInf;
        for (std::size_t a = 0; a < na; ++a) {
            q[a] = cost[mdp.cell(s, a)] + mdp.expected_next(W.values, s, a);
            best = std::min(best, q[a]);
        }
        const real eps = mode == SlackMode::Relative ? slack * (1.0 + std::abs(W.values[s])) : slack;
        for (std::size_t a = 0; a < na; ++a)
            if (q[a] - best <= eps || q[a] == best) F.actions[s].push_back(a);
    }
    return F;
}

/// Upper bound on Bellman iterates: (J+1) C (1/alpha + 1), with the cost weight
/// J+1 replaced by 1 + sum g_j when the multipliers outweigh it.
inline real value_bound(real cost_bound, real alpha, const Multipliers& g) {
    real w = 1.0;
    for (real gj : g) w += gj;
    w = std::max(w, static_cast<real>(g.size() + 1));
    return w * cost_bound * (1.0 / alpha + 1.0);
}

} // namespace impulse
