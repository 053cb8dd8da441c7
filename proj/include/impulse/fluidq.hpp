#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "impulse/model.hpp"
#include "impulse/roots.hpp"
#include "impulse/types.hpp"

/// Closed-form solution of the constrained fluid-queue impulse problem:
/// X = [0, inf), phi(x, t) = x + t, l(x) = 0, impulse price K, holding cost
/// rate h x, one constraint with bound d, initial state 0.
namespace impulse::fluidq {

struct FluidParams {
    real alpha = 1.0;
    real h = 1.0;
    real K = 1.0;
    real d = 0.5;

    void check() const {
        if (!(alpha > 0.0 && h > 0.0 && K > 0.0 && d > 0.0))
            throw ModelError("fluid parameters alpha, h, K, d must be strictly positive");
    }
    /// d >= h / alpha^2 leaves the constraint slack under the never-intervene policy.
    bool unconstrained() const { return d >= h / (alpha * alpha); }
};

enum class Regime { Constrained, Unconstrained };

inline std::string to_string(Regime r) { return r == Regime::Constrained ? "constrained" : "unconstrained"; }

struct AnalyticSolution {
    Regime regime = Regime::Unconstrained;
    real x_star = kInf;   ///< threshold; +inf means never intervene
    real g_star = 0.0;
    real V0 = 0.0;
    real V1 = 0.0;
    real W0 = 0.0;        ///< W*_{g*}(0)
    real h_star = 0.0;    ///< dual value h(g*)
    real root_residual = 0.0;
};

/// u - 1 + e^{-u}, accurate for small u.
inline real em1x(real u) {
    if (std::abs(u) < 1e-4) return u * u / 2.0 - u * u * u / 6.0 + u * u * u * u / 24.0;
    return u + std::expm1(-u);
}

/// 1 - e^{-u} - u e^{-u}, accurate for small u.
inline real cycle_holding_factor(real u) {
    if (std::abs(u) < 1e-3) {
        real term = 1.0, sum = 0.0, fact = 1.0;
        for (int n = 1; n <= 8; ++n) {
            term *= u;
            fact *= n;
            if (n >= 2) sum += ((n % 2) ? -1.0 : 1.0) * term * (n - 1) / fact;
        }
        return sum;
    }
    return -std::expm1(-u) - u * std::exp(-u);
}

/// Residual of the threshold equation (gh/alpha)(1 - e^{-alpha x}) - (ghx - K alpha).
inline real x_g_residual(const FluidParams& p, real g, real x) {
    return g * p.h / p.alpha * (-std::expm1(-p.alpha * x)) - (g * p.h * x - p.K * p.alpha);
}

/// Unique positive root of the threshold equation for g > 0.
inline real x_g(const FluidParams& p, real g) {
    p.check();
    if (!(g > 0.0)) throw ModelError("x_g requires g > 0");
    // The residual is K alpha > 0 at 0 and strictly decreasing.
    const auto r = [&](real x) { return x_g_residual(p, g, x); };
    real hi = 1.0;
    while (r(hi) > 0.0) hi *= 2.0;
    return roots::bisect(r, 0.0, hi, 0.0).x;
}

/// x_g extended to g = 0 with the value +inf.
inline real x_g_total(const FluidParams& p, real g) { return g == 0.0 ? kInf : x_g(p, g); }

/// Inverse of x_g: K alpha^2 / (alpha h x - h + h e^{-alpha x}).
inline real g_of_x(const FluidParams& p, real x) {
    p.check();
    if (!(x > 0.0)) throw ModelError("g_of_x requires x > 0");
    if (std::isinf(x)) return 0.0;
    return p.K * p.alpha * p.alpha / (p.h * em1x(p.alpha * x));
}

/// W*_g(0) = K(1 - e^{-alpha x_g}) / (alpha x_g - 1 + e^{-alpha x_g}).
inline real W0_of_threshold(const FluidParams& p, real xg) {
    if (std::isinf(xg)) return 0.0;
    const real u = p.alpha * xg;
    return p.K * (-std::expm1(-u)) / em1x(u);
}

/// Bellman function of the Lagrangian problem with multiplier g.
inline real W_star(const FluidParams& p, real g, real x) {
    if (g == 0.0) return 0.0;
    const real xg = x_g(p, g);
    const real W0 = W0_of_threshold(p, xg);
    if (x > xg) return p.K + W0;
    const real a = p.alpha, tau = xg - x, e = std::exp(-a * tau);
    return p.K * e + g * p.h * x / a * (-std::expm1(-a * tau)) + g * p.h / (a * a) * cycle_holding_factor(a * tau) +
           e * W0;
}

/// Left branch formula of W_star evaluated at any x (used for continuity checks).
inline real W_star_left_branch(const FluidParams& p, real g, real x) {
    const real xg = x_g(p, g);
    const real W0 = W0_of_threshold(p, xg);
    const real a = p.alpha, tau = xg - x, e = std::exp(-a * tau);
    return p.K * e + g * p.h * x / a * (-std::expm1(-a * tau)) + g * p.h / (a * a) * cycle_holding_factor(a * tau) +
           e * W0;
}

/// Dual functional h(g) = W*_g(0) - g d.
inline real dual_h(const FluidParams& p, real g) {
    return g == 0.0 ? 0.0 : W0_of_threshold(p, x_g(p, g)) - g * p.d;
}

/// Dual functional as a function of the threshold x = x_g; H(+inf) = 0.
inline real dual_H(const FluidParams& p, real x) {
    p.check();
    if (std::isinf(x)) return 0.0;
    if (!(x > 0.0)) throw ModelError("dual_H requires x > 0");
    const real u = p.alpha * x, den = em1x(u);
    return p.K * (-std::expm1(-u)) / den - p.K * p.alpha * p.alpha * p.d / (p.h * den);
}

/// alpha h x e^{-alpha x} - (1 - e^{-alpha x})(h - d alpha^2); its positive root is x*.
inline real optimality_residual(const FluidParams& p, real x) {
    return p.alpha * p.h * x * std::exp(-p.alpha * x) - (-std::expm1(-p.alpha * x)) * (p.h - p.d * p.alpha * p.alpha);
}

/// Discounted costs (V0, V1) of the policy "intervene when x reaches theta_hat" from 0.
inline std::pair<real, real> cycle_costs(const FluidParams& p, real theta_hat) {
    if (!(theta_hat > 0.0)) throw ModelError("cycle_costs requires theta_hat > 0");
    if (std::isinf(theta_hat)) return {0.0, p.h / (p.alpha * p.alpha)};
    const real u = p.alpha * theta_hat;
    const real kill = -std::expm1(-u);
    const real V0 = p.K * std::exp(-u) / kill;
    const real V1 = p.h / (p.alpha * p.alpha) * cycle_holding_factor(u) / kill;
    return {V0, V1};
}

inline AnalyticSolution solve_analytic(const FluidParams& p) {
    p.check();
    AnalyticSolution s;
    if (p.unconstrained()) {
        s.regime = Regime::Unconstrained;
        s.V1 = p.h / (p.alpha * p.alpha);
        return s;
    }
    s.regime = Regime::Constrained;
    // The residual rises from 0 to its peak at alpha d / h, then falls to alpha^2 d - h < 0.
    const auto D = [&](real x) { return optimality_residual(p, x); };
    const real lo = p.alpha * p.d / p.h;
    real hi = 2.0 * lo;
    while (D(hi) > 0.0) hi *= 2.0;
    const auto root = roots::bisect(D, lo, hi, 0.0);
    s.x_star = root.x;
    s.root_residual = root.residual;
    s.g_star = g_of_x(p, s.x_star);
    const auto [V0, V1] = cycle_costs(p, s.x_star);
    s.V0 = V0;
    s.V1 = V1;
    s.W0 = W0_of_threshold(p, s.x_star);
    s.h_star = s.W0 - s.g_star * p.d;
    return s;
}

/// The fluid model as a general impulse problem (single action "impulse").
inline ImpulseProblem make_problem(const FluidParams& p) {
    p.check();
    ImpulseProblem prob;
    prob.flow = [](real x, real t) { return x + t; };
    prob.reset = [](real, std::size_t) { return 0.0; };
    const real h = p.h, K = p.K;
    prob.gradual_costs = {RunningCost::constant_rate(0.0), RunningCost::of([h](real x) { return h * x; })};
    prob.impulse_costs = {[K](real, std::size_t) { return K; }, [](real, std::size_t) { return 0.0; }};
    prob.alpha = p.alpha;
    prob.x0 = 0.0;
    prob.bounds = {p.d};
    prob.actions = {"impulse"};
    return prob;
}

} // namespace impulse::fluidq
