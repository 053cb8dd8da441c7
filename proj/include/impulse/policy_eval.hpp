#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <sstream>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "impulse/bellman.hpp"
#include "impulse/model.hpp"
#include "impulse/types.hpp"

namespace impulse {

/// Discounted cost values V_0..V_J of a strategy from x0.
struct CostVector {
    numvec v;
    /// Set when some component diverges (an all-theta=0 cycle).
    bool infinite = false;

    real operator[](std::size_t j) const { return v[j]; }
};

/// Discounted visit mass of (grid state, action) pairs.
struct OccupationMeasure {
    struct Entry {
        std::size_t state;
        std::size_t action;
        real mass;
    };
    std::vector<Entry> entries;
    real total = 0.0;

    /// Mass of {state} x B.
    real state_mass(std::size_t s) const {
        real m = 0.0;
        for (const auto& e : entries)
            if (e.state == s) m += e.mass;
        return m;
    }
};

/// Convex combination of deterministic stationary strategies.
struct MixedPolicy {
    numvec weights;
    std::vector<StationaryPolicy> policies;

    void check() const {
        if (weights.size() != policies.size() || weights.empty())
            throw ModelError("mixture: weights and policies must be nonempty and of equal length");
        real s = 0.0;
        for (real w : weights) {
            if (!(w > 0.0 && w <= 1.0)) throw ModelError("mixture: weights must lie in (0, 1]");
            s += w;
        }
        if (std::abs(s - 1.0) > 1e-12) throw ModelError("mixture: weights must sum to 1");
    }
};

inline void check_policy(const DiscreteMDP& mdp, const StationaryPolicy& f) {
    if (f.choice.size() != mdp.n_states()) throw ModelError("policy size does not match the state grid");
    for (std::size_t a : f.choice)
        if (a >= mdp.n_actions()) throw ModelError("policy has an out-of-range action index");
}

/**
 * Follows the grid trajectory from x0, summing discounted costs; a revisited
 * state closes a cycle whose repetitions are summed as a geometric series.
 * Returns nullopt when a landing falls between grid points (the trajectory is
 * then not a single path); use the linear-solve route instead.
 */
inline std::optional<CostVector> eval_policy_trajectory(const DiscreteMDP& mdp, const StationaryPolicy& f) {
    check_policy(mdp, f);
    const std::size_t nc = mdp.n_costs();
    std::vector<long> first_visit(mdp.n_states(), -1);
    numvec disc_at;
    std::vector<numvec> cost_at;

    CostVector out{numvec(nc, 0.0), false};
    real D = 1.0;
    std::size_t s = mdp.x0_index();
    for (;;) {
        if (first_visit[s] >= 0) {
            const auto k = static_cast<std::size_t>(first_visit[s]);
            const real rho = D / disc_at[k];
            for (std::size_t j = 0; j < nc; ++j) {
                const real cyc = out.v[j] - cost_at[k][j];
                if (rho >= 1.0) {
                    if (cyc > 0.0) {
                        out.v[j] = kInf;
                        out.infinite = true;
                    }
                } else {
                    out.v[j] = cost_at[k][j] + cyc / (1.0 - rho);
                }
            }
            return out;
        }
        first_visit[s] = static_cast<long>(disc_at.size());
        disc_at.push_back(D);
        cost_at.push_back(out.v);

        const std::size_t a = f.choice[s];
        for (std::size_t j = 0; j < nc; ++j) out.v[j] += D * mdp.cost(j, s, a);
        const Landing& l = mdp.landing(s, a);
        if (l.lo == mdp.cemetery()) return out;
        if (!l.one_hot()) return std::nullopt;
        D *= mdp.survival(s, a);
        if (D == 0.0) return out;
        s = l.lo;
    }
}

namespace detail {

/// Grid states reachable from x0 under f with positive probability.
inline std::vector<std::size_t> reachable(const DiscreteMDP& mdp, const StationaryPolicy& f) {
    std::vector<char> seen(mdp.n_states(), 0);
    std::vector<std::size_t> order{mdp.x0_index()};
    seen[mdp.x0_index()] = 1;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const std::size_t s = order[i], a = f.choice[s];
        const Landing& l = mdp.landing(s, a);
        if (l.lo == mdp.cemetery() || mdp.survival(s, a) == 0.0) continue;
        for (auto [t, w] : {std::pair{l.lo, l.w_lo}, std::pair{l.hi, l.w_hi()}}) {
            if (w > 0.0 && !seen[t]) {
                seen[t] = 1;
                order.push_back(t);
            }
        }
    }
    return order;
}

} // namespace detail

/**
 * Solves mu = delta_{x0} + Q_f^T mu on the states reachable from x0. Throws
 * NumericalError naming the trapped states when some reachable set never
 * leaks mass to the cemetery (an undiscounted theta = 0 loop).
 */
inline OccupationMeasure occupation_measure(const DiscreteMDP& mdp, const StationaryPolicy& f) {
    check_policy(mdp, f);
    const auto states = detail::reachable(mdp, f);
    const std::size_t n = states.size();
    std::vector<long> local(mdp.n_states(), -1);
    for (std::size_t i = 0; i < n; ++i) local[states[i]] = static_cast<long>(i);

    // A state escapes if it loses mass or can reach a state that does.
    std::vector<char> escapes(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t s = states[i], a = f.choice[s];
        escapes[i] = mdp.landing(s, a).lo == mdp.cemetery() || mdp.survival(s, a) < 1.0;
    }
    for (bool changed = true; changed;) {
        changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (escapes[i]) continue;
            const Landing& l = mdp.landing(states[i], f.choice[states[i]]);
            const bool to_lo = l.w_lo > 0.0 && escapes[local[l.lo]];
            const bool to_hi = l.w_hi() > 0.0 && escapes[local[l.hi]];
            if (to_lo || to_hi) escapes[i] = changed = true;
        }
    }
    std::ostringstream trapped;
    bool singular = false;
    for (std::size_t i = 0; i < n; ++i)
        if (!escapes[i]) {
            trapped << (singular ? ", " : "") << format_real(mdp.state_points()[states[i]]);
            singular = true;
        }
    if (singular)
        throw NumericalError("occupation measure is infinite: undiscounted cycle through states {" + trapped.str() +
                             "}");

    using SpMat = Eigen::SparseMatrix<real>;
    std::vector<Eigen::Triplet<real>> trip;
    trip.reserve(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
        trip.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
        const std::size_t s = states[i], a = f.choice[s];
        const Landing& l = mdp.landing(s, a);
        if (l.lo == mdp.cemetery()) continue;
        const real surv = mdp.survival(s, a);
        // Row = landing state, column = source: (I - Q^T) mu = delta.
        if (l.w_lo > 0.0) trip.emplace_back(static_cast<int>(local[l.lo]), static_cast<int>(i), -surv * l.w_lo);
        if (l.hi != l.lo && l.w_hi() > 0.0)
            trip.emplace_back(static_cast<int>(local[l.hi]), static_cast<int>(i), -surv * l.w_hi());
    }
    SpMat A(static_cast<int>(n), static_cast<int>(n));
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw NumericalError("occupation measure: singular balance system");
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<int>(n));
    rhs(0) = 1.0;  // states[0] is x0
    Eigen::VectorXd mu = lu.solve(rhs);
    if (lu.info() != Eigen::Success) throw NumericalError("occupation measure: linear solve failed");

    OccupationMeasure m;
    for (std::size_t i = 0; i < n; ++i) {
        const real mass = std::max(0.0, mu(static_cast<int>(i)));
        m.entries.push_back({states[i], f.choice[states[i]], mass});
        m.total += mass;
    }
    std::sort(m.entries.begin(), m.entries.end(),
              [](const auto& a, const auto& b) { return a.state < b.state; });
    return m;
}

/// Cost vector as the integral of the one-step costs against mu.
inline CostVector integrate_costs(const DiscreteMDP& mdp, const OccupationMeasure& mu) {
    CostVector c{numvec(mdp.n_costs(), 0.0), false};
    for (const auto& e : mu.entries)
        for (std::size_t j = 0; j < mdp.n_costs(); ++j) c.v[j] += e.mass * mdp.cost(j, e.state, e.action);
    return c;
}

/// Trajectory route when all landings hit grid points, linear solve otherwise.
inline CostVector eval_policy(const DiscreteMDP& mdp, const StationaryPolicy& f) {
    if (auto c = eval_policy_trajectory(mdp, f)) return *c;
    return integrate_costs(mdp, occupation_measure(mdp, f));
}

/// sup over grid states of |mu(s x B) - delta_{x0}(s) - sum Q(s | y, b) mu(y, b)|.
inline real check_characteristic(const DiscreteMDP& mdp, const OccupationMeasure& mu) {
    numvec r(mdp.n_states(), 0.0);
    r[mdp.x0_index()] -= 1.0;
    for (const auto& e : mu.entries) {
        r[e.state] += e.mass;
        const Landing& l = mdp.landing(e.state, e.action);
        if (l.lo == mdp.cemetery()) continue;
        const real m = e.mass * mdp.survival(e.state, e.action);
        r[l.lo] -= m * l.w_lo;
        if (l.hi != l.lo) r[l.hi] -= m * l.w_hi();
    }
    real sup = 0.0;
    for (real v : r) sup = std::max(sup, std::abs(v));
    return sup;
}

/// Same check for a state-mass vector paired with the actions of f.
inline real check_characteristic(const DiscreteMDP& mdp, const numvec& state_mass, const StationaryPolicy& f) {
    OccupationMeasure mu;
    for (std::size_t s = 0; s < state_mass.size(); ++s)
        if (state_mass[s] != 0.0) {
            mu.entries.push_back({s, f.choice[s], state_mass[s]});
            mu.total += state_mass[s];
        }
    return check_characteristic(mdp, mu);
}

inline CostVector eval_mixture(const DiscreteMDP& mdp, const MixedPolicy& m) {
    m.check();
    CostVector out{numvec(mdp.n_costs(), 0.0), false};
    for (std::size_t l = 0; l < m.policies.size(); ++l) {
        const CostVector c = eval_policy(mdp, m.policies[l]);
        out.infinite = out.infinite || c.infinite;
        for (std::size_t j = 0; j < out.v.size(); ++j) out.v[j] += m.weights[l] * c.v[j];
    }
    return out;
}

/// Weighted sum of the component occupation measures (a measure of some strategy).
inline OccupationMeasure mixture_occupation(const DiscreteMDP& mdp, const MixedPolicy& m) {
    m.check();
    OccupationMeasure out;
    for (std::size_t l = 0; l < m.policies.size(); ++l) {
        for (auto e : occupation_measure(mdp, m.policies[l]).entries) {
            e.mass *= m.weights[l];
            out.entries.push_back(e);
            out.total += e.mass;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Continuous-time oracle
// ---------------------------------------------------------------------------

/// Decision of a stationary rule at a continuous state.
struct Decision {
    WaitTime theta;
    std::size_t action = 0;
};

using ContinuousPolicy = std::function<Decision(real)>;

/// Intervene as soon as the state reaches `level` (flow x + t).
inline ContinuousPolicy threshold_rule(real level, std::size_t action = 0) {
    return [=](real x) { return Decision{WaitTime::finite(std::max(level - x, 0.0)), action}; };
}

inline ContinuousPolicy never_rule() {
    return [](real) { return Decision{WaitTime::never(), 0}; };
}

/// Reads a grid policy at the nearest grid state.
inline ContinuousPolicy table_rule(const DiscreteMDP& mdp, const StationaryPolicy& f) {
    return [&mdp, f](real x) {
        const auto& g = mdp.state_points();
        auto it = std::lower_bound(g.begin(), g.end(), x);
        std::size_t i = it == g.end() ? g.size() - 1 : static_cast<std::size_t>(it - g.begin());
        if (i > 0 && (it == g.end() || x - g[i - 1] < g[i] - x)) i -= 1;
        const std::size_t a = f.choice[i];
        return Decision{mdp.action_theta(a), mdp.label_index(a)};
    };
}

/// Grid policy realising a continuous rule (waiting times snap to the nearest theta point).
inline StationaryPolicy policy_from_rule(const DiscreteMDP& mdp, const ContinuousPolicy& rule) {
    StationaryPolicy f;
    for (real x : mdp.state_points()) {
        const Decision d = rule(x);
        f.choice.push_back(mdp.action(mdp.nearest_theta(d.theta), d.action));
    }
    return f;
}

struct OracleResult {
    CostVector costs;
    std::size_t impulses = 0;
    /// e^{-alpha t_N} at the truncation point; 0 when the run ended by never intervening.
    real tail_discount = 0.0;

    /// Bound on the cost not accounted for after truncation.
    real tail_bound(real cost_bound, real alpha) const {
        return tail_discount * static_cast<real>(costs.v.size()) * cost_bound * (1.0 / alpha + 1.0);
    }
};

/**
 * Direct evaluation of the continuous-time discounted cost along the true flow:
 * impulse times, discount factors and running-cost integrals, without any grid.
 * Stops after `horizon` impulses, when the rule never intervenes again, or
 * once e^{-alpha t} drops below 1e-17 (tail_discount then holds that factor).
 * Integrals are split where the flow crosses a running-cost jump.
 */
inline OracleResult simulate_oracle(const ImpulseProblem& p, const ContinuousPolicy& rule, std::size_t horizon) {
    if (horizon < 1) throw ModelError("simulate_oracle: horizon must be at least 1");
    p.check();
    using boost::math::quadrature::exp_sinh;
    using boost::math::quadrature::gauss_kronrod;
    const std::size_t nc = p.n_costs();
    OracleResult res;
    res.costs.v.assign(nc, 0.0);
    real t = 0.0, x = p.x0;
    for (std::size_t n = 0;; ++n) {
        const real disc_t = std::exp(-p.alpha * t);
        if (n == horizon || disc_t < 1e-17) {
            res.tail_discount = disc_t;
            break;
        }
        const Decision dec = rule(x);
        const real finite_end =
            dec.theta.is_infinite() ? 2.0 * quadrature::discount_horizon(p.alpha) : dec.theta.value();
        numvec cuts{0.0};
        for (real c : detail::crossing_times(p, x, 0.0, finite_end)) cuts.push_back(c);
        if (!dec.theta.is_infinite()) cuts.push_back(finite_end);
        for (std::size_t j = 0; j < nc; ++j) {
            auto integrand = [&](real s) { return std::exp(-p.alpha * s) * p.gradual_costs[j](p.flow(x, s)); };
            real run = 0.0;
            for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
                if (cuts[i + 1] > cuts[i])
                    run += gauss_kronrod<real, 61>::integrate(integrand, cuts[i], cuts[i + 1], 15, 1e-13);
            if (dec.theta.is_infinite()) {
                exp_sinh<real> integrator;
                run += integrator.integrate(integrand, cuts.back(), kInf, 1e-13);
            }
            res.costs.v[j] += disc_t * run;
            if (!dec.theta.is_infinite()) {
                const real y = p.flow(x, dec.theta.value());
                res.costs.v[j] += disc_t * std::exp(-p.alpha * dec.theta.value()) * p.impulse_costs[j](y, dec.action);
            }
        }
        if (dec.theta.is_infinite()) break;
        ++res.impulses;
        const real y = p.flow(x, dec.theta.value());
        t += dec.theta.value();
        x = p.reset(y, dec.action);
    }
    return res;
}

} // namespace impulse
