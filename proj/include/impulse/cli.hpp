#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "impulse/bellman.hpp"
#include "impulse/config.hpp"
#include "impulse/dual.hpp"
#include "impulse/fluidq.hpp"
#include "impulse/model.hpp"
#include "impulse/policy_eval.hpp"
#include "impulse/report.hpp"

namespace impulse::cli {

using json = nlohmann::json;

enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kValidationFailure = 3,
    kNotConverged = 4,
    kVerificationFailure = 5,
};

struct RunConfig {
    std::string command;
    std::string problem_file;
    std::string output;                   ///< empty or "-" for the standard stream
    std::vector<std::string> overrides;   ///< key=value
    real g_min = 0.0;
    real g_max = 4.0;
    std::size_t g_steps = 41;
    std::vector<Multipliers> dual_grid;   ///< explicit multiplier vectors for dual-curve
    real tol_scale = 1.0;
    std::string policy_file;              ///< eval: policy table
    std::optional<real> threshold;        ///< eval: "intervene at x >= threshold" instead of a table
    std::string trace_file;               ///< solve: CSV of (iteration, residual) at g*
};

namespace detail {

inline json grid_json(const DiscreteMDP& mdp, const GridSpec& grid) {
    return {{"state_min", mdp.state_points().front()},
            {"state_max", mdp.state_points().back()},
            {"state_n", mdp.n_states()},
            {"theta_max", mdp.theta_points().back()},
            {"theta_n", mdp.theta_points().size()},
            {"quadrature_step", grid.quadrature_step},
            {"actions", mdp.labels()},
            {"clamped_landings", mdp.clamped_landings()}};
}

inline json policy_json(const DiscreteMDP& mdp, const StationaryPolicy& f) {
    json rows = json::array();
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        const std::size_t a = f.choice[s];
        const WaitTime t = mdp.action_theta(a);
        rows.push_back({{"state", mdp.state_points()[s]},
                        {"theta", t.is_infinite() ? json("INF") : json(t.value())},
                        {"action", mdp.labels()[mdp.label_index(a)]}});
    }
    return rows;
}

inline json costs_json(const CostVector& c) {
    json v = json::array();
    for (real x : c.v) v.push_back(report::number(x));
    return v;
}

inline json certificate_json(const CertificateReport& rep) {
    json out = json::array();
    for (const auto& c : rep.checks)
        out.push_back({{"name", c.name}, {"value", c.value}, {"tolerance", c.tolerance}, {"pass", c.pass}});
    return out;
}

inline json validation_json(const ValidationReport& v) {
    return {{"delta_hat", report::number(v.delta_hat)},
            {"cost_bound", report::number(v.cost_bound)},
            {"semigroup_residual", v.semigroup_residual},
            {"delta_violation", v.delta_violation},
            {"cost_bound_violation", v.cost_bound_violation},
            {"negative_cost", v.negative_cost},
            {"semigroup_violation", v.semigroup_violation}};
}

inline json analytic_json(const fluidq::FluidParams& p, const fluidq::AnalyticSolution& s) {
    return {{"command", "analytic"},
            {"params", {{"alpha", p.alpha}, {"h", p.h}, {"K", p.K}, {"d", p.d}}},
            {"regime", fluidq::to_string(s.regime)},
            {"x_star", report::number(s.x_star)},
            {"g_star", s.g_star},
            {"V0", s.V0},
            {"V1", s.V1},
            {"W0", s.W0},
            {"h_star", s.h_star},
            {"root_residual", s.root_residual}};
}

inline void scale_tolerances(DualConfig& cfg, real k) {
    cfg.bellman.tolerance *= k;
    cfg.g_tolerance *= k;
    cfg.feasibility_tolerance *= k;
    cfg.slackness_tolerance *= k;
}

struct Output {
    std::ofstream file;
    std::ostream* stream;

    Output(const std::string& path, std::ostream& fallback) : stream(&fallback) {
        if (!path.empty() && path != "-") {
            file.open(path);
            if (!file) throw config::ConfigError("--out", "cannot write '" + path + "'");
            stream = &file;
        }
    }
    std::ostream& operator*() { return *stream; }
};

/// Chord test on sorted triples: h(g2) >= interpolation of h(g1), h(g3) - tol.
inline real worst_chord_defect(DualEvaluator& ev, const std::vector<std::array<real, 3>>& triples) {
    real worst = -kInf;
    for (auto t : triples) {
        const real h1 = ev({t[0]}).h, h2 = ev({t[1]}).h, h3 = ev({t[2]}).h;
        const real lam = (t[2] - t[1]) / (t[2] - t[0]);
        worst = std::max(worst, lam * h1 + (1.0 - lam) * h3 - h2);
    }
    return worst;
}

inline void write_trace(const std::string& path, const DiscreteMDP& mdp, const Multipliers& g, const DualConfig& cfg) {
    std::ofstream f(path);
    if (!f) throw config::ConfigError("--trace", "cannot write '" + path + "'");
    const BellmanSolution sol = solve_W(mdp, g, cfg.bellman);
    f << "iteration,residual\n";
    for (std::size_t k = 0; k < sol.residual_trace.size(); ++k)
        f << k + 1 << ',' << format_real(sol.residual_trace[k]) << '\n';
}

inline int cmd_solve(const config::ProblemConfig& pc, const DualConfig& cfg, const std::string& trace, std::ostream& out,
                     std::ostream& err) {
    const ValidationReport v = validate(pc.problem, pc.grid);
    if (v.delta_violation) {
        err << "error: the objective's impulse cost must be bounded below by a positive constant on every state "
               "and action (minimum over the grid is "
            << format_real(v.delta_hat)
            << "); without it the Lagrangian dual need not match the constrained problem, so solve is refused\n";
        return kValidationFailure;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const DiscreteMDP mdp = discretize(pc.problem, pc.grid);
    if (mdp.clamped_landings() > 0)
        err << "warning: " << mdp.clamped_landings() << " landing states fell outside the state grid and were clamped\n";
    const DualResult r = solve_constrained(mdp, cfg);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json mixture = json::array();
    for (std::size_t l = 0; l < r.mixture.weights.size(); ++l) {
        const CostVector c = eval_policy(mdp, r.mixture.policies[l]);
        mixture.push_back({{"weight", r.mixture.weights[l]},
                           {"costs", costs_json(c)},
                           {"policy", policy_json(mdp, r.mixture.policies[l])}});
    }
    json doc = {{"command", "solve"},
                {"model", pc.model},
                {"g_star", r.g_star},
                {"h_star", r.h_star},
                {"W0", r.W0},
                {"costs", costs_json(r.costs)},
                {"bounds", mdp.bounds()},
                {"mixture", mixture},
                {"candidates", r.F.size()},
                {"argmin_slack", r.argmin_slack},
                {"certificates", certificate_json(r.certificates)},
                {"grid", grid_json(mdp, pc.grid)},
                {"validation", validation_json(v)},
                {"bellman", {{"iterations", r.bellman_iterations},
                             {"dual_evaluations", r.trace.size()},
                             {"converged", r.converged},
                             {"monotone", r.monotone},
                             {"tolerance", cfg.bellman.tolerance}}},
                {"wall_time_s", wall}};
    out << report::dump(doc);
    if (!trace.empty()) write_trace(trace, mdp, r.g_star, cfg);
    if (!r.converged) {
        err << "error: value iteration did not reach the tolerance within the iteration budget\n";
        return kNotConverged;
    }
    return kOk;
}

inline int cmd_analytic(const config::ProblemConfig& pc, std::ostream& out) {
    if (!pc.fluid) throw config::ConfigError("model", "the analytic solution exists only for the fluid model");
    if (pc.problem.x0 != 0.0) throw config::ConfigError("x0", "the analytic solution is available for x0 = 0 only");
    out << report::dump(analytic_json(*pc.fluid, fluidq::solve_analytic(*pc.fluid)));
    return kOk;
}

inline int cmd_dual_curve(const config::ProblemConfig& pc, const DualConfig& cfg, const RunConfig& rc, std::ostream& out) {
    const DiscreteMDP mdp = discretize(pc.problem, pc.grid);
    const std::size_t J = mdp.n_constraints();
    std::vector<Multipliers> grid = rc.dual_grid;
    if (grid.empty()) {
        if (rc.g_steps < 1) throw config::ConfigError("--g-steps", "must be at least 1");
        for (std::size_t k = 0; k < rc.g_steps; ++k) {
            const real g = rc.g_steps == 1 ? rc.g_min
                                           : rc.g_min + (rc.g_max - rc.g_min) * static_cast<real>(k) /
                                                            static_cast<real>(rc.g_steps - 1);
            grid.push_back(Multipliers(J, g));
        }
    }
    DualEvaluator ev(mdp, cfg.bellman);
    out << (J == 1 ? "g" : "");
    for (std::size_t j = 0; J > 1 && j < J; ++j) out << (j ? "," : "") << "g_" << j + 1;
    out << ",h,W0";
    for (std::size_t j = 0; j < J; ++j) out << ",slack_" << j + 1;
    out << '\n';
    bool converged = true;
    for (const auto& g : grid) {
        if (g.size() != J) throw config::ConfigError("--g", "multiplier vector must have " + std::to_string(J) + " entries");
        for (real v : g)
            if (!(v >= 0.0)) throw config::ConfigError("--g", "multipliers must be nonnegative");
        const DualPoint p = ev(g);
        converged = converged && p.converged;
        for (std::size_t j = 0; j < J; ++j) out << (j ? "," : "") << format_real(g[j]);
        out << ',' << format_real(p.h) << ',' << format_real(p.W0);
        for (real s : p.slacks) out << ',' << format_real(s);
        out << '\n';
    }
    return converged ? kOk : kNotConverged;
}

inline int cmd_eval(const config::ProblemConfig& pc, const RunConfig& rc, std::ostream& out) {
    const DiscreteMDP mdp = discretize(pc.problem, pc.grid);
    StationaryPolicy f;
    if (rc.threshold) {
        f = policy_from_rule(mdp, threshold_rule(*rc.threshold));
    } else {
        if (rc.policy_file.empty()) throw config::ConfigError("--policy", "eval needs --policy <file> or --threshold <x>");
        std::ifstream in(rc.policy_file);
        if (!in) throw config::ConfigError("--policy", "cannot open '" + rc.policy_file + "'");
        f = config::read_policy_table(mdp, in);
    }
    const CostVector c = eval_policy(mdp, f);
    json doc = {{"command", "eval"}, {"costs", costs_json(c)}, {"infinite", c.infinite}, {"bounds", mdp.bounds()}};
    if (!c.infinite) {
        const OccupationMeasure mu = occupation_measure(mdp, f);
        doc["occupation_total"] = mu.total;
        doc["characteristic_residual"] = check_characteristic(mdp, mu);
    }
    doc["policy"] = policy_json(mdp, f);
    out << report::dump(doc);
    return kOk;
}

/**
 * Runs the invariant suite on one problem: model checks, Bellman behaviour,
 * dual certificates, evaluation-route agreement, concavity of h and, for the
 * fluid model, agreement with the closed form.
 */
inline int cmd_verify(const config::ProblemConfig& pc, const DualConfig& cfg, std::ostream& out) {
    json checks = json::array();
    bool all = true;
    auto check = [&](const std::string& name, real value, real tol, bool pass) {
        checks.push_back({{"name", name}, {"value", report::number(value)}, {"tolerance", tol}, {"pass", pass}});
        all = all && pass;
    };

    const ValidationReport v = validate(pc.problem, pc.grid);
    check("impulse_cost_lower_bound", v.delta_hat, 0.0, !v.delta_violation);
    check("cost_bound_finite", v.cost_bound, 0.0, !v.cost_bound_violation && !v.negative_cost);
    check("flow_semigroup", v.semigroup_residual, 1e-9, !v.semigroup_violation);
    if (v.delta_violation) {
        out << report::dump({{"command", "verify"}, {"pass", false}, {"checks", checks}});
        return kVerificationFailure;
    }

    const DiscreteMDP mdp = discretize(pc.problem, pc.grid);
    real mass_defect = 0.0;
    bool survival_ok = true;
    for (std::size_t s = 0; s < mdp.n_states(); ++s)
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
            const Landing& l = mdp.landing(s, a);
            const real surv = mdp.survival(s, a);
            const real moved = l.lo == mdp.cemetery() ? 0.0 : surv * (l.w_lo + l.w_hi());
            const real killed = l.lo == mdp.cemetery() ? 1.0 : 1.0 - surv;
            mass_defect = std::max(mass_defect, std::abs(moved + killed - 1.0));
            const WaitTime t = mdp.action_theta(a);
            survival_ok = survival_ok && (t.is_infinite() == (surv == 0.0)) && ((t.value() == 0.0) == (surv == 1.0));
            if (!t.is_infinite() && mdp.theta_index(a) + 1 < mdp.infinite_theta_index())
                survival_ok = survival_ok && mdp.survival(s, a + mdp.n_labels()) < surv;
        }
    check("kernel_mass", mass_defect, 1e-12, mass_defect <= 1e-12);
    check("survival_structure", survival_ok ? 0.0 : 1.0, 0.0, survival_ok);

    const DualResult r = solve_constrained(mdp, cfg);
    check("bellman_converged", r.converged ? 0.0 : 1.0, 0.0, r.converged);
    check("bellman_monotone", r.monotone ? 0.0 : 1.0, 0.0, r.monotone);
    real bound = 0.0;
    for (const auto& p : r.trace) bound = std::max(bound, value_bound(v.cost_bound, mdp.alpha(), p.g));
    check("bellman_bounded", r.max_value, bound, r.max_value <= bound);
    for (const auto& c : r.certificates.checks) check("certificate_" + c.name, c.value, c.tolerance, c.pass);

    real char_res = 0.0, occ_rel = 0.0, oracle_rel = 0.0;
    for (const auto& f : r.mixture.policies) {
        const CostVector ev = eval_policy(mdp, f);
        const OccupationMeasure mu = occupation_measure(mdp, f);
        char_res = std::max(char_res, check_characteristic(mdp, mu));
        const CostVector ci = integrate_costs(mdp, mu);
        for (std::size_t j = 0; j < ev.v.size(); ++j)
            occ_rel = std::max(occ_rel, std::abs(ci.v[j] - ev.v[j]) / (1.0 + std::abs(ev.v[j])));
        if (eval_policy_trajectory(mdp, f)) {
            const OracleResult o = simulate_oracle(pc.problem, table_rule(mdp, f), 100000);
            for (std::size_t j = 0; j < ev.v.size(); ++j)
                oracle_rel = std::max(oracle_rel, std::abs(o.costs.v[j] - ev.v[j]) / (1.0 + std::abs(ev.v[j])));
        }
    }
    check("characteristic_residual", char_res, 1e-9, char_res <= 1e-9);
    check("occupation_vs_trajectory", occ_rel, 1e-8, occ_rel <= 1e-8);
    check("oracle_vs_trajectory", oracle_rel, 1e-6, oracle_rel <= 1e-6);

    if (mdp.n_constraints() == 1) {
        DualEvaluator ev(mdp, cfg.bellman);
        const real top = 2.0 * std::max<real>(1.0, r.g_star[0]);
        std::mt19937_64 rng(7);
        std::uniform_real_distribution<real> u(0.0, top);
        std::vector<std::array<real, 3>> triples;
        for (int k = 0; k < 10; ++k) {
            std::array<real, 3> t{u(rng), u(rng), u(rng)};
            std::sort(t.begin(), t.end());
            if (t[2] - t[0] > 1e-6) triples.push_back(t);
        }
        const real tol = 2.0 * 1e-7;
        const real defect = worst_chord_defect(ev, triples);
        check("dual_concavity", defect, tol, defect <= tol);
    }

    if (pc.fluid && pc.problem.x0 == 0.0) {
        const auto an = fluidq::solve_analytic(*pc.fluid);
        const auto& p = *pc.fluid;
        const real boundary = p.h / (p.alpha * p.alpha);
        if (std::abs(p.d - boundary) > 0.01 * boundary) {
            const bool numeric_constrained = r.g_star[0] > cfg.multiplier_tolerance;
            const bool same = numeric_constrained == (an.regime == fluidq::Regime::Constrained);
            check("regime_matches_closed_form", same ? 0.0 : 1.0, 0.0, same);
        }
        if (an.regime == fluidq::Regime::Constrained) {
            const real eg = std::abs(r.g_star[0] - an.g_star) / an.g_star;
            const real e0 = std::abs(r.costs.v[0] - an.V0) / an.V0;
            const real e1 = std::abs(r.costs.v[1] - p.d) / p.d;
            check("closed_form_g_star", eg, 1e-2, eg <= 1e-2);
            check("closed_form_V0", e0, 1e-2, e0 <= 1e-2);
            check("closed_form_V1", e1, 5e-3, e1 <= 5e-3);
        } else {
            const real e1 = std::abs(r.costs.v[1] - boundary) / boundary;
            check("closed_form_g_star", r.g_star[0], 1e-4, r.g_star[0] <= 1e-4);
            check("closed_form_V0", r.costs.v[0], 1e-6, r.costs.v[0] <= 1e-6);
            check("closed_form_V1", e1, 5e-3, e1 <= 5e-3);
        }
    }

    out << report::dump({{"command", "verify"}, {"pass", all}, {"checks", checks}});
    return all ? kOk : kVerificationFailure;
}

} // namespace detail

/// Executes one command; diagnostics go to err, reports to the --out target or out.
inline int run(const RunConfig& rc, std::ostream& out, std::ostream& err) {
    try {
        if (rc.problem_file.empty()) throw config::ConfigError("--config", "a problem file is required");
        const config::ProblemConfig pc = config::load(rc.problem_file, rc.overrides);
        DualConfig cfg = pc.solver;
        if (!(rc.tol_scale > 0.0)) throw config::ConfigError("--tol", "must be positive");
        detail::scale_tolerances(cfg, rc.tol_scale);
        detail::Output o(rc.output, out);
        if (rc.command == "solve") return detail::cmd_solve(pc, cfg, rc.trace_file, *o, err);
        if (rc.command == "analytic") return detail::cmd_analytic(pc, *o);
        if (rc.command == "dual-curve") return detail::cmd_dual_curve(pc, cfg, rc, *o);
        if (rc.command == "eval") return detail::cmd_eval(pc, rc, *o);
        if (rc.command == "verify") return detail::cmd_verify(pc, cfg, *o);
        throw config::ConfigError("command", "unknown command '" + rc.command + "'");
    } catch (const ModelError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return kVerificationFailure;
    }
}

} // namespace impulse::cli
