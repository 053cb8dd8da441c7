#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "impulse/bellman.hpp"
#include "impulse/fluidq.hpp"
#include "impulse/model.hpp"
#include "impulse/policy_eval.hpp"

namespace testing_support {

using namespace impulse;

inline const fluidq::FluidParams kBenchmark{1.0, 1.0, 1.0, 0.5};

// mpmath, 30 digits (tests/oracles/fluid_oracle.py)
inline constexpr real kXStar = 1.25643120862616967698;
inline constexpr real kGStar = 1.84808946454612560318;
inline constexpr real kV0 = 0.397952547315916544786;
inline constexpr real kW0 = 1.32199727958897934638;

inline GridSpec uniform_grid(real state_max, std::size_t state_n, real theta_max, std::size_t theta_n) {
    return GridSpec::uniform(0.0, state_max, state_n, theta_max, theta_n);
}

/// Grid whose state and theta points include every entry of `extra` exactly.
inline GridSpec grid_with(real top, std::size_t n, const numvec& extra) {
    GridSpec g = uniform_grid(top, n, top, n);
    for (real v : extra) {
        g.state_points.push_back(v);
        g.theta_points.push_back(v);
    }
    for (auto* pts : {&g.state_points, &g.theta_points}) {
        std::sort(pts->begin(), pts->end());
        pts->erase(std::unique(pts->begin(), pts->end(),
                               [](real a, real b) { return std::abs(a - b) < 1e-9; }),
                   pts->end());
    }
    return g;
}

inline DiscreteMDP fluid_mdp(const fluidq::FluidParams& p, const GridSpec& g) {
    return discretize(fluidq::make_problem(p), g);
}

inline StationaryPolicy threshold_policy(const DiscreteMDP& mdp, real level) {
    return policy_from_rule(mdp, threshold_rule(level));
}

inline StationaryPolicy never_policy(const DiscreteMDP& mdp) {
    return policy_from_rule(mdp, never_rule());
}

inline real rel(real a, real b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

/// Drift-1 problem with actions "empty" (reset to 0) and "halve" (x/2); costs as in configs/two_constraints.json.
inline ImpulseProblem two_action_problem(numvec bounds) {
    ImpulseProblem p;
    p.flow = [](real x, real t) { return x + t; };
    p.reset = [](real x, std::size_t a) { return a == 0 ? 0.0 : 0.5 * x; };
    p.gradual_costs = {RunningCost::constant_rate(0.0), RunningCost::of([](real x) { return x; }),
                       RunningCost::of([](real x) { return x >= 2.0 ? 1.0 : 0.0; }, {2.0})};
    p.impulse_costs = {[](real, std::size_t a) { return a == 0 ? 2.0 : 1.0; },
                       [](real, std::size_t) { return 0.0; }, [](real, std::size_t) { return 0.0; }};
    p.alpha = 0.5;
    p.x0 = 0.0;
    p.bounds = std::move(bounds);
    p.actions = {"empty", "halve"};
    return p;
}

} // namespace testing_support
