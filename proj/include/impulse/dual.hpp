#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "impulse/bellman.hpp"
#include "impulse/lp.hpp"
#include "impulse/model.hpp"
#include "impulse/policy_eval.hpp"
#include "impulse/types.hpp"

namespace impulse {

/// One evaluation of the dual functional h(g) = W*_g(x0) - sum_j g_j d_j.
struct DualPoint {
    Multipliers g;
    real h = 0.0;
    real W0 = 0.0;
    numvec slacks;        ///< V_j(f_g) - d_j for the greedy policy f_g
    StationaryPolicy policy;
    std::size_t iterations = 0;
    bool converged = true;
    bool monotone = true;   ///< Bellman iterates were pointwise nondecreasing
    real max_value = 0.0;   ///< largest Bellman iterate value
};

struct DualConfig {
    BellmanConfig bellman;
    real initial_g = 1.0;               ///< first doubling probe (J = 1)
    real g_tolerance = 1e-8;            ///< golden section stops at width <= g_tolerance * (1 + g)
    real doubling_cap = 1152921504606846976.0;  // 2^60
    std::size_t ascent_iterations = 400;  ///< projected supergradient steps (J >= 2)
    real ascent_step = 1.0;             ///< step c / sqrt(k)
    real multiplier_tolerance = 1e-6;   ///< g_j above this marks constraint j active
    real feasibility_tolerance = 1e-6;  ///< relative: V_j <= d_j + tol * (1 + d_j)
    std::size_t max_candidates = 64;
    std::size_t random_candidates = 256;
    std::uint64_t seed = 20240607;
    real slackness_tolerance = 1e-4;    ///< relative to 1 + |h*|
    real gap_tolerance = 1e-2;          ///< relative duality-gap tolerance
};

/**
 * Memoized dual functional. Evaluations are keyed by the exact bit pattern of
 * g; the table is shared and insert-if-absent, so concurrent callers asking for
 * the same point observe the same result.
 */
class DualEvaluator {
public:
    DualEvaluator(const DiscreteMDP& mdp, BellmanConfig cfg) : mdp_(mdp), cfg_(cfg) {}

    DualPoint operator()(const Multipliers& g) {
        std::vector<std::uint64_t> key;
        key.reserve(g.size());
        for (real v : g) key.push_back(std::bit_cast<std::uint64_t>(v));
        {
            std::lock_guard lock(mutex_);
            if (auto it = memo_.find(key); it != memo_.end()) return it->second;
        }
        DualPoint p = compute(g);
        std::lock_guard lock(mutex_);
        return memo_.try_emplace(key, std::move(p)).first->second;
    }

    std::size_t evaluations() const {
        std::lock_guard lock(mutex_);
        return memo_.size();
    }

    const DiscreteMDP& mdp() const { return mdp_; }

private:
    DualPoint compute(const Multipliers& g) const {
        const BellmanSolution sol = solve_W(mdp_, g, cfg_);
        DualPoint p;
        p.g = g;
        p.W0 = sol.W.values[mdp_.x0_index()];
        p.h = p.W0;
        for (std::size_t j = 0; j < g.size(); ++j) p.h -= g[j] * mdp_.bounds()[j];
        p.policy = sol.policy;
        p.iterations = sol.iterations;
        p.converged = sol.converged;
        p.monotone = sol.max_decrease <= 0.0;
        p.max_value = sol.max_value;
        const CostVector c = eval_policy(mdp_, sol.policy);
        for (std::size_t j = 0; j < g.size(); ++j) p.slacks.push_back(c.v[j + 1] - mdp_.bounds()[j]);
        return p;
    }

    const DiscreteMDP& mdp_;
    BellmanConfig cfg_;
    mutable std::mutex mutex_;
    std::map<std::vector<std::uint64_t>, DualPoint> memo_;
};

inline DualPoint dual_value(const DiscreteMDP& mdp, const Multipliers& g, const BellmanConfig& cfg = {}) {
    DualEvaluator ev(mdp, cfg);
    return ev(g);
}

struct DualMaximum {
    Multipliers g_star;
    DualPoint best;
    std::vector<DualPoint> trace;
    bool bracket_found = true;
    std::string diagnostic;
};

/**
 * Maximizes the concave dual functional over g >= 0.
 * J = 1: doubling bracket followed by golden-section search.
 * J >= 2: projected supergradient ascent using the greedy policy's constraint
 * slacks, returning the best iterate.
 * Either way g = 0 is returned directly when its greedy policy is feasible.
 */
inline DualMaximum maximize_dual(DualEvaluator& ev, const DualConfig& cfg) {
    const DiscreteMDP& mdp = ev.mdp();
    const std::size_t J = mdp.n_constraints();
    DualMaximum out;
    auto eval = [&](const Multipliers& g) {
        DualPoint p = ev(g);
        out.trace.push_back(p);
        if (out.trace.size() == 1 || p.h > out.best.h) out.best = p;
        return p;
    };

    const DualPoint zero = eval(Multipliers(J, 0.0));
    if (J == 0) {
        out.g_star = {};
        return out;
    }
    bool feasible_at_zero = true;
    for (std::size_t j = 0; j < J; ++j)
        feasible_at_zero = feasible_at_zero &&
                           zero.slacks[j] <= cfg.feasibility_tolerance * (1.0 + mdp.bounds()[j]);
    if (feasible_at_zero) {
        out.g_star = zero.g;
        out.best = zero;
        return out;
    }

    if (J == 1) {
        real prevprev = 0.0, prev = 0.0, hi = cfg.initial_g;
        real h_prev = zero.h;
        for (;;) {
            if (hi > cfg.doubling_cap) {
                out.bracket_found = false;
                out.diagnostic = "dual functional still increasing at g = " + format_real(prev) +
                                 "; the constraint may be infeasible (Slater condition fails)";
                out.g_star = out.best.g;
                return out;
            }
            const real h_hi = eval({hi}).h;
            if (h_hi <= h_prev) break;
            prevprev = prev;
            prev = hi;
            h_prev = h_hi;
            hi *= 2.0;
        }
        constexpr real invphi = 0.6180339887498948482;
        real a = prevprev, b = hi;
        real c = b - invphi * (b - a), d = a + invphi * (b - a);
        real hc = eval({c}).h, hd = eval({d}).h;
        while (b - a > cfg.g_tolerance * (1.0 + 0.5 * (a + b))) {
            if (hc >= hd) {
                b = d;
                d = c;
                hd = hc;
                c = b - invphi * (b - a);
                hc = eval({c}).h;
            } else {
                a = c;
                c = d;
                hc = hd;
                d = a + invphi * (b - a);
                hd = eval({d}).h;
            }
        }
        out.g_star = out.best.g;
        return out;
    }

    Multipliers g(J, 0.0);
    DualPoint p = zero;
    for (std::size_t k = 1; k <= cfg.ascent_iterations; ++k) {
        const real step = cfg.ascent_step / std::sqrt(static_cast<real>(k));
        for (std::size_t j = 0; j < J; ++j) g[j] = std::max(0.0, g[j] + step * p.slacks[j]);
        p = eval(g);
    }
    out.g_star = out.best.g;
    return out;
}

inline DualMaximum maximize_dual(const DiscreteMDP& mdp, const DualConfig& cfg = {}) {
    DualEvaluator ev(mdp, cfg.bellman);
    return maximize_dual(ev, cfg);
}

namespace detail {

inline void add_candidate(std::vector<StationaryPolicy>& out, StationaryPolicy f) {
    if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(std::move(f));
}

} // namespace detail

/**
 * Deterministic stationary policies drawn from the minimizer sets: a uniform
 * selector (k-th minimizer at every state, clamped), then policies that switch
 * once between the first and last minimizer along the sorted state grid.
 */
inline std::vector<StationaryPolicy> enumerate_candidates(const MinimizerSet& F, std::size_t cap) {
    std::vector<StationaryPolicy> out;
    const std::size_t ns = F.actions.size();
    std::size_t maxlen = 0;
    std::vector<std::size_t> ambiguous;
    for (std::size_t s = 0; s < ns; ++s) {
        maxlen = std::max(maxlen, F.actions[s].size());
        if (F.actions[s].size() > 1) ambiguous.push_back(s);
    }
    auto pick = [&](std::size_t s, std::size_t k) { return F.actions[s][std::min(k, F.actions[s].size() - 1)]; };
    const std::size_t last = maxlen == 0 ? 0 : maxlen - 1;

    for (std::size_t k = 0; k < maxlen && out.size() < cap; ++k) {
        StationaryPolicy f;
        for (std::size_t s = 0; s < ns; ++s) f.choice.push_back(pick(s, k));
        detail::add_candidate(out, std::move(f));
    }
    for (std::size_t c = 1; c < ambiguous.size() && out.size() < cap; ++c) {
        for (auto [below, above] : {std::pair{std::size_t{0}, last}, std::pair{last, std::size_t{0}}}) {
            if (out.size() >= cap) break;
            StationaryPolicy f;
            for (std::size_t s = 0; s < ns; ++s) f.choice.push_back(pick(s, s < ambiguous[c] ? below : above));
            detail::add_candidate(out, std::move(f));
        }
    }
    return out;
}

struct MixtureBuild {
    MixedPolicy mixture;
    std::vector<StationaryPolicy> candidates;
    std::vector<CostVector> candidate_costs;
};

/**
 * Combines minimizing policies into a mixture of at most J+1 components whose
 * constraint values are <= d_j, with equality for every active multiplier;
 * among those the cheapest (least V_0) basic solution is returned.
 * `extra` policies (greedy policies of near-optimal multipliers) are tried
 * after the structured candidates, then random per-state selections.
 */
inline MixtureBuild build_mixture_detailed(const DiscreteMDP& mdp, const Multipliers& g_star, const MinimizerSet& F,
                                           const DualConfig& cfg, const std::vector<StationaryPolicy>& extra = {}) {
    const std::size_t J = mdp.n_constraints();
    MixtureBuild out;
    std::vector<numvec> values;
    numvec objective;
    std::vector<std::size_t> index;
    std::vector<bool> equality(J);
    for (std::size_t j = 0; j < J; ++j) equality[j] = g_star[j] > cfg.multiplier_tolerance;
    real tol = 0.0;
    for (real d : mdp.bounds()) tol += cfg.feasibility_tolerance * (1.0 + d);

    auto add = [&](StationaryPolicy f) {
        if (std::find(out.candidates.begin(), out.candidates.end(), f) != out.candidates.end()) return;
        CostVector c = eval_policy(mdp, f);
        out.candidates.push_back(std::move(f));
        out.candidate_costs.push_back(c);
        if (c.infinite) return;
        values.emplace_back(c.v.begin() + 1, c.v.end());
        objective.push_back(c.v[0]);
        index.push_back(out.candidates.size() - 1);
    };
    auto try_solve = [&]() -> bool {
        auto w = lp::convex_weights(values, mdp.bounds(), equality, tol, objective);
        if (!w) return false;
        for (std::size_t i = 0; i < w->weights.size(); ++i)
            if (w->weights[i] > 1e-14) {
                out.mixture.weights.push_back(w->weights[i]);
                out.mixture.policies.push_back(out.candidates[index[i]]);
            }
        real s = 0.0;
        for (real v : out.mixture.weights) s += v;
        for (real& v : out.mixture.weights) v /= s;
        return true;
    };

    for (auto& f : enumerate_candidates(F, cfg.max_candidates)) add(std::move(f));
    if (try_solve()) return out;
    if (!extra.empty()) {
        for (const auto& f : extra) add(f);
        if (try_solve()) return out;
    }

    std::mt19937_64 rng(cfg.seed);
    for (std::size_t drawn = 0; drawn < cfg.random_candidates;) {
        for (std::size_t b = 0; b < 32 && drawn < cfg.random_candidates; ++b, ++drawn) {
            StationaryPolicy f;
            for (const auto& set : F.actions) {
                std::uniform_int_distribution<std::size_t> u(0, set.size() - 1);
                f.choice.push_back(set[u(rng)]);
            }
            add(std::move(f));
        }
        if (try_solve()) return out;
    }
    throw NumericalError("no mixture of minimizing policies meets the constraints; increase the argmin slack or "
                         "refine the grid");
}

inline MixedPolicy build_mixture(const DiscreteMDP& mdp, const Multipliers& g_star, const MinimizerSet& F,
                                 const DualConfig& cfg = {}) {
    return build_mixture_detailed(mdp, g_star, F, cfg).mixture;
}

struct Certificate {
    std::string name;
    real value = 0.0;
    real tolerance = 0.0;
    bool pass = false;
};

struct CertificateReport {
    std::vector<Certificate> checks;

    bool all_pass() const {
        return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
    }
    const Certificate* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }
};

struct DualResult {
    Multipliers g_star;
    real h_star = 0.0;
    real W0 = 0.0;
    std::vector<StationaryPolicy> F;
    MixedPolicy mixture;
    CostVector costs;
    CertificateReport certificates;
    std::vector<DualPoint> trace;
    std::size_t bellman_iterations = 0;
    bool converged = true;
    bool monotone = true;
    real max_value = 0.0;
    real argmin_slack = 0.0;
};

/**
 * Optimality certificates for a primal-dual pair: feasibility of the mixture,
 * Lagrangian minimality, complementary slackness, weak duality against every
 * evaluated multiplier and the duality gap at g*.
 */
inline CertificateReport verify_optimality(const DiscreteMDP& mdp, const DualResult& r, const numvec& d,
                                           const DualConfig& cfg = {}) {
    CertificateReport rep;
    const std::size_t J = d.size();
    const numvec& V = r.costs.v;
    for (std::size_t j = 0; j < J; ++j) {
        const real tol = cfg.feasibility_tolerance * (1.0 + d[j]);
        const real excess = V[j + 1] - d[j];
        rep.checks.push_back({"feasibility_" + std::to_string(j + 1), excess, tol, excess <= tol});
    }
    real comp = 0.0;
    for (std::size_t j = 0; j < J; ++j) comp += r.g_star[j] * (V[j + 1] - d[j]);
    const real stol = cfg.slackness_tolerance * (1.0 + std::abs(r.h_star));
    const real lag = std::abs(V[0] + comp - r.h_star);
    rep.checks.push_back({"lagrangian_minimality", lag, stol, lag <= stol});
    rep.checks.push_back({"complementary_slackness", std::abs(comp), stol, std::abs(comp) <= stol});

    real worst = -kInf;
    for (const auto& p : r.trace) worst = std::max(worst, p.h - V[0]);
    if (r.trace.empty()) worst = r.h_star - V[0];
    const real wtol = 10.0 * cfg.bellman.tolerance * (1.0 + std::abs(V[0]));
    rep.checks.push_back({"weak_duality", worst, wtol, worst <= wtol});

    const real gap = std::abs(r.h_star - V[0]);
    const real gtol = cfg.gap_tolerance * std::max(std::abs(V[0]), std::abs(r.h_star)) + wtol;
    rep.checks.push_back({"duality_gap", gap, gtol, gap <= gtol});
    (void)mdp;
    return rep;
}

/// Full dual procedure: maximize h, extract minimizers at g*, build and certify the mixture.
inline DualResult solve_constrained(const DiscreteMDP& mdp, const DualConfig& cfg = {}) {
    DualEvaluator ev(mdp, cfg.bellman);
    DualMaximum mx = maximize_dual(ev, cfg);
    if (!mx.bracket_found) throw NumericalError(mx.diagnostic);

    DualResult r;
    r.g_star = mx.g_star;
    r.trace = mx.trace;
    const BellmanSolution sol = solve_W(mdp, r.g_star, cfg.bellman);
    r.W0 = sol.W.values[mdp.x0_index()];
    r.h_star = r.W0;
    for (std::size_t j = 0; j < r.g_star.size(); ++j) r.h_star -= r.g_star[j] * mdp.bounds()[j];
    r.converged = sol.converged;
    for (const auto& p : r.trace) {
        r.converged = r.converged && p.converged;
        r.monotone = r.monotone && p.monotone;
        r.max_value = std::max(r.max_value, p.max_value);
        r.bellman_iterations += p.iterations;
    }
    r.argmin_slack = cfg.bellman.argmin_slack;
    // no mixture from unconverged values; callers report the failure
    if (!r.converged) return r;
    const MinimizerSet F = argmin_set(mdp, sol.W, r.g_star, cfg.bellman.argmin_slack, SlackMode::Relative);
    std::vector<StationaryPolicy> near;
    const real band = cfg.gap_tolerance * (1.0 + std::abs(mx.best.h));
    for (const auto& p : r.trace)
        if (p.h >= mx.best.h - band) near.push_back(p.policy);
    MixtureBuild mb = build_mixture_detailed(mdp, r.g_star, F, cfg, near);
    r.F = std::move(mb.candidates);
    r.mixture = std::move(mb.mixture);
    r.costs = eval_mixture(mdp, r.mixture);
    r.certificates = verify_optimality(mdp, r, mdp.bounds(), cfg);
    return r;
}

} // namespace impulse
