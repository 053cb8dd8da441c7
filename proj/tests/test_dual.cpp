#include <cmath>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "impulse/dual.hpp"
#include "impulse/lp.hpp"
#include "support.hpp"

using namespace impulse;
using namespace testing_support;

namespace {

const DiscreteMDP& benchmark_mdp() {
    static const DiscreteMDP mdp = fluid_mdp(kBenchmark, uniform_grid(4.0 * kXStar, 201, 4.0 * kXStar, 401));
    return mdp;
}

const DiscreteMDP& two_action_mdp() {
    static const DiscreteMDP mdp = discretize(two_action_problem({2.2, 0.12}), uniform_grid(6.0, 121, 6.0, 121));
    return mdp;
}

real fluid_max_fraction() { return 1.0 / 401.0 * 4.0 * kXStar; }

} // namespace

TEST(DualValue, ZeroMultiplier) {
    const auto p = dual_value(benchmark_mdp(), {0.0});
    EXPECT_EQ(p.h, 0.0);
    EXPECT_EQ(p.W0, 0.0);
    ASSERT_EQ(p.slacks.size(), 1u);
    EXPECT_NEAR(p.slacks[0], 0.5, 1e-9);  // never intervening costs h / alpha^2 = 1
}

TEST(DualValue, MatchesClosedForm) {
    for (real g : {0.5, 1.0, kGStar, 3.0}) {
        const auto p = dual_value(benchmark_mdp(), {g});
        const real exact = fluidq::dual_h(kBenchmark, g);
        EXPECT_NEAR(p.h, exact, 0.01 * fluidq::W_star(kBenchmark, g, 0.0)) << g;
        EXPECT_NEAR(p.h, p.W0 - g * 0.5, 1e-12);
        EXPECT_TRUE(p.converged);
    }
}

TEST(DualValue, MidpointConcavity) {
    DualEvaluator ev(benchmark_mdp(), {});
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<real> U(0.0, 5.0);
    for (int trial = 0; trial < 15; ++trial) {
        const real a = U(rng), b = U(rng);
        EXPECT_GE(ev({0.5 * (a + b)}).h, 0.5 * (ev({a}).h + ev({b}).h) - 2e-7);
    }
}

TEST(DualValue, MemoizedByExactMultiplier) {
    DualEvaluator ev(benchmark_mdp(), {});
    const auto a = ev({1.25});
    const auto b = ev({1.25});
    EXPECT_EQ(ev.evaluations(), 1u);
    EXPECT_EQ(a.h, b.h);
    ev({std::nextafter(1.25, 2.0)});
    EXPECT_EQ(ev.evaluations(), 2u);
}

TEST(DualValue, ConcurrentEvaluationIsConsistent) {
    DualEvaluator ev(benchmark_mdp(), {});
    const numvec gs{0.5, 1.0, 1.5, 2.0};
    std::vector<std::vector<real>> seen(4);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < 4; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t i = 0; i < gs.size(); ++i) seen[t].push_back(ev({gs[(i + t) % gs.size()]}).h);
        });
    for (auto& th : pool) th.join();
    EXPECT_EQ(ev.evaluations(), gs.size());
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t i = 0; i < gs.size(); ++i) EXPECT_EQ(seen[t][i], ev({gs[(i + t) % gs.size()]}).h);
}

TEST(MaximizeDual, SlackConstraintGivesZeroMultiplier) {
    for (real d : {1.0, 2.0}) {
        const auto mdp = fluid_mdp({1.0, 1.0, 1.0, d}, uniform_grid(5.0, 101, 5.0, 101));
        const auto mx = maximize_dual(mdp);
        EXPECT_EQ(mx.g_star[0], 0.0);
        EXPECT_TRUE(mx.bracket_found);
    }
}

TEST(MaximizeDual, ConstrainedMatchesClosedForm) {
    const auto mx = maximize_dual(benchmark_mdp());
    EXPECT_TRUE(mx.bracket_found);
    EXPECT_LE(rel(mx.g_star[0], kGStar), 1e-2);
    for (const auto& p : mx.trace) EXPECT_LE(p.h, mx.best.h);
}

TEST(MaximizeDual, InfeasibleConstraintReportsNoBracket) {
    const auto mdp = fluid_mdp({1.0, 1.0, 1.0, 1e-6}, uniform_grid(2.0, 11, 2.0, 11));
    DualConfig cfg;
    cfg.doubling_cap = 1e6;
    const auto mx = maximize_dual(mdp, cfg);
    EXPECT_FALSE(mx.bracket_found);
    EXPECT_NE(mx.diagnostic.find("infeasible"), std::string::npos);
    EXPECT_THROW(solve_constrained(mdp, cfg), NumericalError);
}

TEST(MaximizeDual, InactiveConstraintStaysAtZero) {
    const auto mdp = discretize(two_action_problem({2.2, 5.0}), uniform_grid(6.0, 61, 6.0, 61));
    DualConfig cfg;
    cfg.ascent_iterations = 100;
    const auto mx = maximize_dual(mdp, cfg);
    for (const auto& p : mx.trace) {
        EXPECT_LT(p.slacks[1], 0.0);
        EXPECT_EQ(p.g[1], 0.0);
    }
    EXPECT_GT(mx.g_star[0], 0.0);
}

TEST(Candidates, UniformSelectorsComeFirstAndCapHolds) {
    MinimizerSet F;
    F.actions = {{1, 4}, {2}, {0, 3, 5}, {7, 8}};
    const auto c = enumerate_candidates(F, 64);
    ASSERT_GE(c.size(), 3u);
    EXPECT_EQ(c[0].choice, (std::vector<std::size_t>{1, 2, 0, 7}));
    EXPECT_EQ(c[1].choice, (std::vector<std::size_t>{4, 2, 3, 8}));
    EXPECT_EQ(c[2].choice, (std::vector<std::size_t>{4, 2, 5, 8}));
    for (std::size_t i = 0; i < c.size(); ++i)
        for (std::size_t k = i + 1; k < c.size(); ++k) EXPECT_FALSE(c[i] == c[k]);
    EXPECT_EQ(enumerate_candidates(F, 2).size(), 2u);
}

TEST(ConvexWeights, SyntheticInterpolation) {
    const auto w = lp::convex_weights({{0.2}, {0.8}}, {0.5}, {true}, 1e-9);
    ASSERT_TRUE(w.has_value());
    EXPECT_NEAR(w->weights[0], 0.5, 1e-12);
    EXPECT_NEAR(w->weights[1], 0.5, 1e-12);
}

TEST(ConvexWeights, InfeasibleAndInequality) {
    EXPECT_FALSE(lp::convex_weights({{0.6}, {0.8}}, {0.5}, {false}, 1e-9).has_value());
    const auto w = lp::convex_weights({{0.6}, {0.3}}, {0.5}, {false}, 1e-9);
    ASSERT_TRUE(w.has_value());
    EXPECT_LE(w->weights[0] * 0.6 + w->weights[1] * 0.3, 0.5 + 1e-12);
}

TEST(ConvexWeights, ObjectivePicksCheapestBasicPoint) {
    // three candidates reach the bound; the cheapest pair is {0, 2}
    const auto w = lp::convex_weights({{0.2}, {0.8}, {0.9}}, {0.5}, {true}, 1e-9, {1.0, 3.0, 0.0});
    ASSERT_TRUE(w.has_value());
    EXPECT_NEAR(w->weights[0], 4.0 / 7.0, 1e-12);
    EXPECT_NEAR(w->weights[2], 3.0 / 7.0, 1e-12);
    EXPECT_EQ(w->weights[1], 0.0);
}

TEST(ConvexWeights, AtMostRowsPositive) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<real> U(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<numvec> vals;
        numvec cost;
        for (int l = 0; l < 12; ++l) {
            vals.push_back({U(rng), U(rng)});
            cost.push_back(U(rng));
        }
        const auto w = lp::convex_weights(vals, {0.5, 0.5}, {true, false}, 1e-9, cost);
        if (!w) continue;
        int positive = 0;
        real s = 0.0, c0 = 0.0, c1 = 0.0;
        for (std::size_t l = 0; l < vals.size(); ++l) {
            positive += w->weights[l] > 0.0;
            s += w->weights[l];
            c0 += w->weights[l] * vals[l][0];
            c1 += w->weights[l] * vals[l][1];
        }
        EXPECT_LE(positive, 3);
        EXPECT_NEAR(s, 1.0, 1e-12);
        EXPECT_NEAR(c0, 0.5, 1e-9);
        EXPECT_LE(c1, 0.5 + 1e-9);
    }
}

TEST(BuildMixture, SyntheticEqualWeights) {
    const real ta = roots::bisect([](real t) { return fluidq::cycle_costs(kBenchmark, t).second - 0.2; }, 1e-6, 50.0, 1e-14).x;
    const real tb = roots::bisect([](real t) { return fluidq::cycle_costs(kBenchmark, t).second - 0.8; }, 1e-6, 50.0, 1e-14).x;
    const auto mdp = fluid_mdp(kBenchmark, grid_with(6.0, 31, {ta, tb}));
    // only the origin is visited; give it two minimizers
    MinimizerSet F;
    F.actions.assign(mdp.n_states(), {mdp.action(mdp.infinite_theta_index(), 0)});
    F.actions[0] = {mdp.action(mdp.nearest_theta(WaitTime::finite(ta)), 0),
                    mdp.action(mdp.nearest_theta(WaitTime::finite(tb)), 0)};
    const auto m = build_mixture(mdp, {1.0}, F);
    ASSERT_EQ(m.weights.size(), 2u);
    EXPECT_NEAR(m.weights[0], 0.5, 1e-7);
    EXPECT_NEAR(m.weights[1], 0.5, 1e-7);
    EXPECT_NEAR(eval_mixture(mdp, m)[1], 0.5, 1e-9);
}

TEST(BuildMixture, ZeroMultiplierTakesAFeasiblePolicy) {
    const auto mdp = fluid_mdp({1.0, 1.0, 1.0, 2.0}, uniform_grid(5.0, 51, 5.0, 51));
    const auto sol = solve_W(mdp, {0.0});
    const auto F = argmin_set(mdp, sol.W, {0.0}, 1e-7, SlackMode::Relative);
    const auto m = build_mixture(mdp, {0.0}, F);
    ASSERT_EQ(m.weights.size(), 1u);
    EXPECT_EQ(m.weights[0], 1.0);
    EXPECT_LE(eval_policy(mdp, m.policies[0])[1], 2.0);
}

TEST(BuildMixture, NoFeasibleCombination) {
    const auto mdp = fluid_mdp(kBenchmark, uniform_grid(5.0, 51, 5.0, 51));
    MinimizerSet F;
    F.actions.assign(mdp.n_states(), {mdp.action(mdp.infinite_theta_index(), 0)});
    DualConfig cfg;
    cfg.random_candidates = 4;
    EXPECT_THROW(build_mixture(mdp, {1.0}, F, cfg), NumericalError);
}

TEST(SolveConstrained, FluidBenchmark) {
    const auto r = solve_constrained(benchmark_mdp());
    EXPECT_TRUE(r.certificates.all_pass());
    EXPECT_LE(rel(r.g_star[0], kGStar), 1e-2);
    EXPECT_LE(rel(r.costs[0], kV0), 1e-2);
    EXPECT_LE(rel(r.costs[1], 0.5), 5e-3);
    EXPECT_LE(r.mixture.weights.size(), 2u);
    real s = 0.0;
    for (real w : r.mixture.weights) {
        EXPECT_GT(w, 0.0);
        s += w;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_TRUE(r.monotone);
    EXPECT_TRUE(r.converged);
    // every mixture component is a threshold policy near x*
    for (const auto& f : r.mixture.policies)
        EXPECT_NEAR(benchmark_mdp().action_theta(f.choice[0]).value(), kXStar, 2.0 * fluid_max_fraction());
}

TEST(SolveConstrained, SlackRegime) {
    const auto mdp = fluid_mdp({1.0, 1.0, 1.0, 1.0}, uniform_grid(5.0, 101, 5.0, 101));
    const auto r = solve_constrained(mdp);
    EXPECT_EQ(r.g_star[0], 0.0);
    EXPECT_EQ(r.costs[0], 0.0);
    EXPECT_NEAR(r.costs[1], 1.0, 1e-9);
    EXPECT_TRUE(r.certificates.all_pass());
}

TEST(SolveConstrained, TwoBindingConstraints) {
    const auto r = solve_constrained(two_action_mdp());
    EXPECT_TRUE(r.certificates.all_pass());
    for (const auto& c : r.certificates.checks) EXPECT_TRUE(c.pass) << c.name << " " << c.value << " > " << c.tolerance;
    EXPECT_GT(r.g_star[0], 1e-6);
    EXPECT_GT(r.g_star[1], 1e-6);
    EXPECT_NEAR(r.costs[1], 2.2, 1e-5);
    EXPECT_NEAR(r.costs[2], 0.12, 1e-5);
    EXPECT_LE(r.mixture.weights.size(), 3u);
}

TEST(Certificates, PerturbedWeightBreaksSlackness) {
    auto r = solve_constrained(benchmark_mdp());
    ASSERT_EQ(r.mixture.weights.size(), 2u);
    // shift weight towards the more expensive component
    const auto a = eval_policy(benchmark_mdp(), r.mixture.policies[0]);
    const auto b = eval_policy(benchmark_mdp(), r.mixture.policies[1]);
    const std::size_t heavy = a[1] > b[1] ? 0 : 1;
    r.mixture.weights[heavy] = std::min(1.0, r.mixture.weights[heavy] + 0.3);
    r.mixture.weights[1 - heavy] = 1.0 - r.mixture.weights[heavy];
    r.costs = eval_mixture(benchmark_mdp(), r.mixture);
    const auto rep = verify_optimality(benchmark_mdp(), r, benchmark_mdp().bounds(), {});
    EXPECT_FALSE(rep.find("complementary_slackness")->pass);
    EXPECT_FALSE(rep.all_pass());
}

TEST(Certificates, WeakDualityAgainstFeasibleThresholds) {
    DualEvaluator ev(benchmark_mdp(), {});
    const auto& mdp = benchmark_mdp();
    for (real th : {0.4, 0.8, 1.0, 1.2}) {
        const auto c = eval_policy(mdp, threshold_policy(mdp, th));
        ASSERT_LE(c[1], 0.5);
        for (real g = 0.0; g <= 6.0; g += 0.5) EXPECT_LE(ev({g}).h, c[0] + 1e-8);
    }
}

TEST(Certificates, DualBelowOptimumStaysBelowPrimal) {
    const auto r = solve_constrained(benchmark_mdp());
    for (real f : {0.1, 0.5, 0.9}) {
        const auto p = dual_value(benchmark_mdp(), {f * r.g_star[0]});
        EXPECT_LE(p.h, r.h_star + 1e-12);
        EXPECT_LE(r.h_star, r.costs[0] + 1e-8);
    }
}
