#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "impulse/quadrature.hpp"
#include "impulse/types.hpp"

namespace impulse {

/// Running cost rate C^g_j along the flow. A rate declared constant takes the
/// closed-form integration path; everything else is integrated by Simpson,
/// split wherever the flow crosses one of `breakpoints` (jumps of the rate).
struct RunningCost {
    std::function<real(real)> rate;
    std::optional<real> constant;
    numvec breakpoints;

    static RunningCost constant_rate(real c) {
        return {[c](real) { return c; }, c, {}};
    }
    static RunningCost of(std::function<real(real)> f, numvec breakpoints = {}) {
        return {std::move(f), std::nullopt, std::move(breakpoints)};
    }

    real operator()(real x) const { return rate(x); }
};

/// Impulse cost C^I_j(x, a), with a an index into ImpulseProblem::actions.
using ImpulseCost = std::function<real(real, std::size_t)>;

/**
 * A deterministic impulse control problem with discounted costs and J
 * constraints. Costs are indexed 0..J; index 0 is the objective.
 */
struct ImpulseProblem {
    std::function<real(real, real)> flow;          ///< phi(x, t)
    std::function<real(real, std::size_t)> reset;  ///< l(x, a)
    std::vector<RunningCost> gradual_costs;        ///< C^g_0 .. C^g_J
    std::vector<ImpulseCost> impulse_costs;        ///< C^I_0 .. C^I_J
    real alpha = 1.0;
    real x0 = 0.0;
    numvec bounds;                                 ///< d_1 .. d_J
    std::vector<std::string> actions;

    std::size_t n_constraints() const { return bounds.size(); }
    std::size_t n_costs() const { return bounds.size() + 1; }

    void check() const {
        if (!flow || !reset) throw ModelError("problem: flow and reset maps are required");
        if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ModelError("problem: alpha must be positive");
        if (gradual_costs.size() != n_costs() || impulse_costs.size() != n_costs())
            throw ModelError("problem: need J+1 gradual and impulse cost maps for J = " +
                             std::to_string(n_constraints()) + " bounds");
        for (std::size_t j = 0; j < bounds.size(); ++j)
            if (!(bounds[j] > 0.0)) throw ModelError("problem: bounds[" + std::to_string(j) + "] must be positive");
        if (actions.empty()) throw ModelError("problem: action set is empty");
    }
};

/// Finite truncation of X and of the finite part of [0, inf]. The infinite
/// waiting time is always present and is not listed in theta_points.
struct GridSpec {
    numvec state_points;
    numvec theta_points;
    real quadrature_step = 1e-3;

    static GridSpec uniform(real state_min, real state_max, std::size_t state_n, real theta_max,
                            std::size_t theta_n, real quadrature_step = 1e-3) {
        GridSpec g;
        g.quadrature_step = quadrature_step;
        g.state_points = linspace(state_min, state_max, state_n);
        g.theta_points = linspace(0.0, theta_max, theta_n);
        return g;
    }

    static numvec linspace(real lo, real hi, std::size_t n) {
        if (n == 0) return {};
        if (n == 1) return {lo};
        numvec v(n);
        for (std::size_t i = 0; i < n; ++i)
            v[i] = lo + (hi - lo) * static_cast<real>(i) / static_cast<real>(n - 1);
        v.back() = hi;
        return v;
    }

    /// Index of the grid point representing x0; throws if x0 is more than half a cell away.
    std::size_t locate_initial(real x0) const {
        auto it = std::lower_bound(state_points.begin(), state_points.end(), x0);
        std::size_t best = 0;
        if (it == state_points.end()) best = state_points.size() - 1;
        else if (it == state_points.begin()) best = 0;
        else {
            auto i = static_cast<std::size_t>(it - state_points.begin());
            best = (x0 - state_points[i - 1] <= state_points[i] - x0) ? i - 1 : i;
        }
        const real dist = std::abs(state_points[best] - x0);
        real half_cell = 0.0;
        if (state_points.size() > 1) {
            const std::size_t nb = best == 0 ? 1 : best - 1;
            half_cell = 0.5 * std::abs(state_points[best] - state_points[nb]);
        }
        if (dist > half_cell + 1e-12 * (1.0 + std::abs(x0)))
            throw ModelError("grid: x0 = " + format_real(x0) + " is not within half a cell of the state grid");
        return best;
    }

    void check(real x0) const {
        if (state_points.empty()) throw ModelError("grid: state_points is empty");
        for (std::size_t i = 1; i < state_points.size(); ++i)
            if (!(state_points[i] > state_points[i - 1]))
                throw ModelError("grid: state_points must be strictly increasing");
        if (theta_points.empty() || theta_points.front() != 0.0)
            throw ModelError("grid: theta_points must start at 0");
        for (std::size_t i = 1; i < theta_points.size(); ++i)
            if (!(theta_points[i] > theta_points[i - 1]))
                throw ModelError("grid: theta_points must be strictly increasing");
        if (!std::isfinite(theta_points.back())) throw ModelError("grid: theta_points must be finite");
        if (!(quadrature_step > 0.0)) throw ModelError("grid: quadrature_step must be positive");
        locate_initial(x0);
    }
};

/// Where the surviving mass of one transition lands: linear interpolation
/// between two grid states, or the cemetery.
struct Landing {
    std::size_t lo = 0;
    std::size_t hi = 0;
    real w_lo = 1.0;

    real w_hi() const { return 1.0 - w_lo; }
    bool one_hot() const { return lo == hi || w_lo == 1.0; }
};

/**
 * The induced MDP tabulated on a grid. States 0..n_states()-1 are grid points,
 * index n_states() is the cemetery. Actions enumerate (theta, label) pairs with
 * theta ascending and labels in declaration order; the last theta index is the
 * infinite waiting time. Immutable once built by discretize().
 */
class DiscreteMDP {
public:
    std::size_t n_states() const { return states_.size(); }
    std::size_t cemetery() const { return states_.size(); }
    std::size_t n_thetas() const { return thetas_.size() + 1; }
    std::size_t n_labels() const { return labels_.size(); }
    std::size_t n_actions() const { return n_thetas() * n_labels(); }
    std::size_t n_costs() const { return bounds_.size() + 1; }
    std::size_t n_constraints() const { return bounds_.size(); }

    real alpha() const { return alpha_; }
    std::size_t x0_index() const { return x0_index_; }
    const numvec& bounds() const { return bounds_; }
    const numvec& state_points() const { return states_; }
    const numvec& theta_points() const { return thetas_; }
    const std::vector<std::string>& labels() const { return labels_; }
    std::size_t clamped_landings() const { return clamped_; }

    std::size_t action(std::size_t theta_index, std::size_t label) const {
        return theta_index * n_labels() + label;
    }
    std::size_t theta_index(std::size_t action) const { return action / n_labels(); }
    std::size_t label_index(std::size_t action) const { return action % n_labels(); }
    std::size_t infinite_theta_index() const { return thetas_.size(); }

    WaitTime theta(std::size_t theta_index) const {
        return theta_index == thetas_.size() ? WaitTime::never() : WaitTime::finite(thetas_[theta_index]);
    }
    WaitTime action_theta(std::size_t action) const { return theta(theta_index(action)); }

    real survival(std::size_t s, std::size_t a) const { return survival_[cell(s, a)]; }
    const Landing& landing(std::size_t s, std::size_t a) const { return landing_[cell(s, a)]; }
    real cost(std::size_t j, std::size_t s, std::size_t a) const { return costs_[j][cell(s, a)]; }
    const numvec& cost_table(std::size_t j) const { return costs_[j]; }
    std::size_t cell(std::size_t s, std::size_t a) const { return s * n_actions() + a; }

    /// Expected value of v at the landing point of (s, a), excluding killed mass.
    real expected_next(const numvec& v, std::size_t s, std::size_t a) const {
        const Landing& l = landing(s, a);
        if (l.lo == cemetery()) return 0.0;
        real e = l.w_lo * v[l.lo];
        if (l.hi != l.lo) e += l.w_hi() * v[l.hi];
        return survival(s, a) * e;
    }

    /// Nearest theta grid index for a finite waiting time (or the infinite index).
    std::size_t nearest_theta(WaitTime t) const {
        if (t.is_infinite()) return infinite_theta_index();
        auto it = std::lower_bound(thetas_.begin(), thetas_.end(), t.value());
        if (it == thetas_.end()) return thetas_.size() - 1;
        auto i = static_cast<std::size_t>(it - thetas_.begin());
        if (i > 0 && t.value() - thetas_[i - 1] <= thetas_[i] - t.value()) return i - 1;
        return i;
    }

    std::size_t label_of(const std::string& name) const {
        auto it = std::find(labels_.begin(), labels_.end(), name);
        if (it == labels_.end()) throw ModelError("unknown action label '" + name + "'");
        return static_cast<std::size_t>(it - labels_.begin());
    }

private:
    friend DiscreteMDP discretize(const ImpulseProblem&, const GridSpec&);

    numvec states_;
    numvec thetas_;
    std::vector<std::string> labels_;
    numvec bounds_;
    real alpha_ = 1.0;
    std::size_t x0_index_ = 0;
    std::size_t clamped_ = 0;
    numvec survival_;
    std::vector<Landing> landing_;
    std::vector<numvec> costs_;
};

namespace detail {

inline void require_finite(real v, real x, WaitTime theta, std::size_t a, std::size_t j) {
    if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "non-finite cost at (x=" << format_real(x) << ", theta=" << theta.to_string() << ", a=" << a
           << ", j=" << j << ")";
        throw NumericalError(os.str());
    }
}

/**
 * Times in (t0, t1) where phi(x, .) passes a breakpoint of a non-constant
 * running cost, sorted. A one-dimensional semiflow is monotone in t, so each
 * breakpoint is crossed at most once and bisection locates it.
 */
inline numvec crossing_times(const ImpulseProblem& p, real x, real t0, real t1) {
    numvec out;
    const real y0 = p.flow(x, t0), y1 = p.flow(x, t1);
    for (const auto& c : p.gradual_costs) {
        if (c.constant) continue;
        for (real b : c.breakpoints) {
            if (!((y0 - b) * (y1 - b) < 0.0)) continue;
            real lo = t0, hi = t1;
            const bool rising = y1 > y0;
            for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
                const real mid = lo + 0.5 * (hi - lo);
                if (mid <= lo || mid >= hi) break;
                ((p.flow(x, mid) < b) == rising ? lo : hi) = mid;
            }
            out.push_back(lo + 0.5 * (hi - lo));
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline bool on_breakpoint(const ImpulseProblem& p, real y) {
    for (const auto& c : p.gradual_costs)
        for (real b : c.breakpoints)
            if (std::abs(y - b) <= 1e-12 * (1.0 + std::abs(b))) return true;
    return false;
}

/// Simpson on one piece where every rate is smooth. Ends sitting on a jump are
/// sampled a hair inside the piece so the one-sided value is used.
inline void simpson_piece(const ImpulseProblem& p, real x, real t0, real t1, real max_step, bool nudge_lo,
                          bool nudge_hi, numvec& acc) {
    const std::size_t nc = p.n_costs();
    auto n = static_cast<std::size_t>(std::ceil((t1 - t0) / max_step));
    n = std::max<std::size_t>(2, n + (n % 2));
    const real step = (t1 - t0) / static_cast<real>(n);
    const real eta = 1e-9 * (t1 - t0);
    for (std::size_t i = 0; i <= n; ++i) {
        real t = i == n ? t1 : t0 + step * static_cast<real>(i);
        const real w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const real disc = std::exp(-p.alpha * t);
        if (i == 0 && nudge_lo) t += eta;
        if (i == n && nudge_hi) t -= eta;
        const real y = p.flow(x, t);
        for (std::size_t j = 0; j < nc; ++j) {
            if (p.gradual_costs[j].constant) continue;
            acc[j] += step / 3.0 * w * disc * p.gradual_costs[j](y);
        }
    }
}

/// Integrates e^{-alpha t} C^g_j(phi(x, t)) over [t0, t1] for every j at once with
/// Simpson's rule; rates declared constant are skipped (handled in closed form).
inline void simpson_running(const ImpulseProblem& p, real x, real t0, real t1, real max_step, numvec& acc) {
    if (!(t1 > t0)) return;
    bool any = false, jumps = false;
    for (const auto& c : p.gradual_costs) {
        any = any || !c.constant;
        jumps = jumps || (!c.constant && !c.breakpoints.empty());
    }
    if (!any) return;
    if (!jumps) {
        simpson_piece(p, x, t0, t1, max_step, false, false, acc);
        return;
    }
    numvec cuts{t0};
    for (real t : crossing_times(p, x, t0, t1)) cuts.push_back(t);
    cuts.push_back(t1);
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        if (!(cuts[i + 1] > cuts[i])) continue;
        const bool lo = i > 0 || on_breakpoint(p, p.flow(x, t0));
        const bool hi = i + 2 < cuts.size() || on_breakpoint(p, p.flow(x, t1));
        simpson_piece(p, x, cuts[i], cuts[i + 1], max_step, lo, hi, acc);
    }
}

inline real running_constant_part(const ImpulseProblem& p, std::size_t j, real theta) {
    const auto& c = p.gradual_costs[j].constant;
    return c ? quadrature::discounted_constant(*c, p.alpha, theta) : 0.0;
}

} // namespace detail

/**
 * One-step cost of the induced MDP:
 * int_0^theta e^{-alpha t} C^g_j(phi(x,t)) dt + e^{-alpha theta} C^I_j(phi(x,theta), a).
 * Zero at the cemetery; the impulse term is dropped when theta is infinite.
 */
inline real stage_cost(const ImpulseProblem& p, ExtState x, WaitTime theta, std::size_t a, std::size_t j,
                       real quadrature_step = 1e-3) {
    if (x.is_cemetery()) return 0.0;
    const real t_end = theta.is_infinite() ? quadrature::discount_horizon(p.alpha) : theta.value();
    numvec acc(p.n_costs(), 0.0);
    detail::simpson_running(p, x.value(), 0.0, t_end, quadrature_step, acc);
    real v = acc[j] + detail::running_constant_part(p, j, theta.value());
    if (!theta.is_infinite()) {
        const real y = p.flow(x.value(), theta.value());
        v += theta.discount(p.alpha) * p.impulse_costs[j](y, a);
    }
    detail::require_finite(v, x.value(), theta, a, j);
    return v;
}

struct Transition {
    ExtState next;
    real survival;  ///< mass moved to next; the rest goes to the cemetery
};

/// Transition law of the induced MDP for a single (x, theta, a).
inline Transition transition(const ImpulseProblem& p, ExtState x, WaitTime theta, std::size_t a) {
    if (x.is_cemetery() || theta.is_infinite()) return {ExtState::cemetery(), 0.0};
    const real y = p.reset(p.flow(x.value(), theta.value()), a);
    return {ExtState::at(y), theta.discount(p.alpha)};
}

namespace detail {

/// Interpolation weights of y over the sorted grid; out-of-range points clamp.
inline Landing locate(const numvec& grid, real y, bool& clamped) {
    clamped = false;
    const real tol = 1e-12 * (1.0 + std::abs(y));
    if (y <= grid.front() + tol) {
        clamped = y < grid.front() - tol;
        return {0, 0, 1.0};
    }
    if (y >= grid.back() - tol) {
        clamped = y > grid.back() + tol;
        return {grid.size() - 1, grid.size() - 1, 1.0};
    }
    auto it = std::upper_bound(grid.begin(), grid.end(), y);
    const auto hi = static_cast<std::size_t>(it - grid.begin());
    const std::size_t lo = hi - 1;
    if (std::abs(y - grid[lo]) <= tol) return {lo, lo, 1.0};
    if (std::abs(grid[hi] - y) <= tol) return {hi, hi, 1.0};
    const real w_lo = (grid[hi] - y) / (grid[hi] - grid[lo]);
    return {lo, hi, w_lo};
}

} // namespace detail

/**
 * Tabulates costs, survival weights and landing interpolation for every grid
 * state and (theta, label) pair. Landings outside the state range clamp to the
 * boundary; the count is exposed as DiscreteMDP::clamped_landings().
 */
inline DiscreteMDP discretize(const ImpulseProblem& p, const GridSpec& grid) {
    p.check();
    grid.check(p.x0);

    DiscreteMDP m;
    m.states_ = grid.state_points;
    m.thetas_ = grid.theta_points;
    m.labels_ = p.actions;
    m.bounds_ = p.bounds;
    m.alpha_ = p.alpha;
    m.x0_index_ = grid.locate_initial(p.x0);

    const std::size_t ns = m.n_states(), na = m.n_actions(), nt = m.n_thetas(), nl = m.n_labels();
    const std::size_t nc = p.n_costs();
    m.survival_.assign(ns * na, 0.0);
    m.landing_.assign(ns * na, Landing{});
    m.costs_.assign(nc, numvec(ns * na, 0.0));

    const numvec& th = m.thetas_;
    const real tail_end = th.back() + quadrature::discount_horizon(p.alpha);

    for (std::size_t s = 0; s < ns; ++s) {
        const real x = m.states_[s];
        numvec running(nc, 0.0);  // Simpson part of the running cost up to the current theta
        for (std::size_t k = 0; k < nt; ++k) {
            const WaitTime t = m.theta(k);
            if (t.is_infinite()) {
                detail::simpson_running(p, x, th.back(), tail_end, grid.quadrature_step, running);
            } else if (k > 0) {
                detail::simpson_running(p, x, th[k - 1], th[k], grid.quadrature_step, running);
            }
            const real y = t.is_infinite() ? 0.0 : p.flow(x, t.value());
            const real surv = t.discount(p.alpha);
            for (std::size_t l = 0; l < nl; ++l) {
                const std::size_t c = m.cell(s, m.action(k, l));
                for (std::size_t j = 0; j < nc; ++j) {
                    real v = running[j] + detail::running_constant_part(p, j, t.value());
                    if (!t.is_infinite()) v += surv * p.impulse_costs[j](y, l);
                    detail::require_finite(v, x, t, l, j);
                    m.costs_[j][c] = v;
                }
                m.survival_[c] = surv;
                if (t.is_infinite()) {
                    m.landing_[c] = Landing{m.cemetery(), m.cemetery(), 1.0};
                } else {
                    bool clamped = false;
                    m.landing_[c] = detail::locate(m.states_, p.reset(y, l), clamped);
                    if (clamped) ++m.clamped_;
                }
            }
        }
    }
    return m;
}

/// Diagnostics on the standing assumptions of the dual procedure.
struct ValidationReport {
    real delta_hat = kInf;          ///< min of C^I_0 over grid states and actions
    real cost_bound = 0.0;          ///< max_j sup C^g_j + max_j sup C^I_j over the grid
    real semigroup_residual = 0.0;  ///< max flow composition / identity defect on samples
    bool delta_violation = false;
    bool cost_bound_violation = false;
    bool negative_cost = false;
    bool semigroup_violation = false;

    bool ok() const { return !delta_violation && !cost_bound_violation && !negative_cost && !semigroup_violation; }
};

inline ValidationReport validate(const ImpulseProblem& p, const GridSpec& grid) {
    ValidationReport r;
    real max_g = 0.0, max_i = 0.0;
    for (real x : grid.state_points) {
        for (std::size_t j = 0; j < p.n_costs(); ++j) {
            const real cg = p.gradual_costs[j](x);
            if (!std::isfinite(cg)) r.cost_bound_violation = true;
            if (cg < 0.0) r.negative_cost = true;
            max_g = std::max(max_g, cg);
            for (std::size_t a = 0; a < p.actions.size(); ++a) {
                const real ci = p.impulse_costs[j](x, a);
                if (!std::isfinite(ci)) r.cost_bound_violation = true;
                if (ci < 0.0) r.negative_cost = true;
                max_i = std::max(max_i, ci);
                if (j == 0) r.delta_hat = std::min(r.delta_hat, ci);
            }
        }
    }
    r.delta_violation = !(r.delta_hat > 0.0);
    r.cost_bound = max_g + max_i;
    if (!std::isfinite(r.cost_bound)) r.cost_bound_violation = true;

    // Sampled semigroup checks: phi(x, 0) = x and phi(phi(x, s), t) = phi(x, s + t).
    const auto& xs = grid.state_points;
    const auto& ts = grid.theta_points;
    const std::size_t sx = std::max<std::size_t>(1, xs.size() / 7);
    const std::size_t st = std::max<std::size_t>(1, ts.size() / 5);
    for (std::size_t i = 0; i < xs.size(); i += sx) {
        const real x = xs[i];
        r.semigroup_residual = std::max(r.semigroup_residual, std::abs(p.flow(x, 0.0) - x));
        for (std::size_t a = 0; a < ts.size(); a += st)
            for (std::size_t b = 0; b < ts.size(); b += st) {
                const real lhs = p.flow(p.flow(x, ts[a]), ts[b]);
                const real rhs = p.flow(x, ts[a] + ts[b]);
                r.semigroup_residual = std::max(r.semigroup_residual, std::abs(lhs - rhs) / (1.0 + std::abs(rhs)));
            }
    }
    r.semigroup_violation = !(r.semigroup_residual <= 1e-9);
    return r;
}

} // namespace impulse
