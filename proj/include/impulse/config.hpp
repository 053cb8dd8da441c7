#pragma once

#include <cmath>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "impulse/bellman.hpp"
#include "impulse/dual.hpp"
#include "impulse/fluidq.hpp"
#include "impulse/model.hpp"
#include "impulse/types.hpp"

/// Problem definition files.
///
/// Common fields: model ("fluid" | "custom"), alpha, x0, bounds, actions,
/// grid {state_min, state_max, state_n, theta_max, theta_n, quadrature_step},
/// optional solver {tolerance, max_iterations, argmin_slack, g_tolerance, ...}.
///
/// fluid: h, K, d (bounds defaults to [d]).
///
/// custom:
///   flow:  {"type": "drift", "rate": v}                     phi = x + v t
///          {"type": "relaxation", "rate": k, "target": c}   phi = c + (x - c) e^{-k t}
///   reset: {label: reset-spec} with reset-spec
///          {"type": "constant", "value": c} | {"type": "affine", "slope": s, "intercept": b}
///   gradual_costs: J+1 cost-specs
///   impulse_costs: J+1 entries, each a cost-spec or {label: cost-spec}
///   cost-spec: {"type": "constant", "value": c}
///            | {"type": "polynomial", "coefficients": [c0, c1, ...]}
///            | {"type": "piecewise_constant", "breakpoints": [b1..bn], "values": [v0..vn]}
///     (piecewise_constant takes v_i on [b_i, b_{i+1}), with b_0 = -inf)
namespace impulse::config {

using json = nlohmann::json;

/// Malformed configuration; the message starts with the offending field path.
class ConfigError : public ModelError {
public:
    ConfigError(const std::string& path, const std::string& what) : ModelError(path + ": " + what) {}
};

struct ProblemConfig {
    std::string model;
    ImpulseProblem problem;
    GridSpec grid;
    std::optional<fluidq::FluidParams> fluid;
    DualConfig solver;
    json source;
};

namespace detail {

inline const json& require(const json& j, const std::string& key, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) throw ConfigError(path + "." + key, "missing required field");
    return j.at(key);
}

inline real number(const json& j, const std::string& key, const std::string& path) {
    const json& v = require(j, key, path);
    if (!v.is_number()) throw ConfigError(path + "." + key, "expected a number");
    return v.get<real>();
}

inline real number_or(const json& j, const std::string& key, real fallback, const std::string& path) {
    return j.contains(key) ? number(j, key, path) : fallback;
}

inline std::size_t count(const json& j, const std::string& key, const std::string& path) {
    const json& v = require(j, key, path);
    if (!v.is_number_integer() || v.get<long long>() < 1) throw ConfigError(path + "." + key, "expected a positive integer");
    return v.get<std::size_t>();
}

inline numvec number_list(const json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError(path, "expected an array of numbers");
    numvec out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) throw ConfigError(path + "[" + std::to_string(i) + "]", "expected a number");
        out.push_back(v[i].get<real>());
    }
    return out;
}

/// A scalar function of the state plus whether it is constant.
struct ScalarFn {
    std::function<real(real)> f;
    std::optional<real> constant;
    numvec breakpoints;
};

inline ScalarFn cost_spec(const json& s, const std::string& path) {
    if (!s.is_object()) throw ConfigError(path, "expected a cost specification object");
    const json& type = require(s, "type", path);
    if (!type.is_string()) throw ConfigError(path + ".type", "expected a string");
    const auto t = type.get<std::string>();
    if (t == "constant") {
        const real c = number(s, "value", path);
        return {[c](real) { return c; }, c, {}};
    }
    if (t == "polynomial") {
        numvec c = number_list(require(s, "coefficients", path), path + ".coefficients");
        if (c.empty()) throw ConfigError(path + ".coefficients", "must not be empty");
        std::optional<real> constant;
        if (c.size() == 1) constant = c[0];
        return {[c](real x) {
                    real v = 0.0;
                    for (auto it = c.rbegin(); it != c.rend(); ++it) v = v * x + *it;
                    return v;
                },
                constant,
                {}};
    }
    if (t == "piecewise_constant") {
        numvec b = number_list(require(s, "breakpoints", path), path + ".breakpoints");
        numvec v = number_list(require(s, "values", path), path + ".values");
        if (v.size() != b.size() + 1) throw ConfigError(path + ".values", "need one more value than breakpoints");
        for (std::size_t i = 1; i < b.size(); ++i)
            if (!(b[i] > b[i - 1])) throw ConfigError(path + ".breakpoints", "must be strictly increasing");
        std::optional<real> constant;
        if (b.empty()) constant = v[0];
        return {[b, v](real x) {
                    const auto k = static_cast<std::size_t>(std::upper_bound(b.begin(), b.end(), x) - b.begin());
                    return v[k];
                },
                constant,
                b};
    }
    throw ConfigError(path + ".type", "unknown cost type '" + t + "'");
}

inline std::function<real(real)> reset_spec(const json& s, const std::string& path) {
    const json& type = require(s, "type", path);
    const auto t = type.get<std::string>();
    if (t == "constant") {
        const real c = number(s, "value", path);
        return [c](real) { return c; };
    }
    if (t == "affine") {
        const real a = number(s, "slope", path), b = number(s, "intercept", path);
        return [a, b](real x) { return a * x + b; };
    }
    throw ConfigError(path + ".type", "unknown reset type '" + t + "'");
}

inline std::vector<std::string> action_labels(const json& root, const std::vector<std::string>& fallback) {
    if (!root.contains("actions")) return fallback;
    const json& a = root.at("actions");
    if (!a.is_array() || a.empty()) throw ConfigError("actions", "expected a nonempty array of labels");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_string()) throw ConfigError("actions[" + std::to_string(i) + "]", "expected a string");
        out.push_back(a[i].get<std::string>());
    }
    return out;
}

inline void read_solver(const json& root, DualConfig& cfg) {
    if (!root.contains("solver")) return;
    const json& s = root.at("solver");
    const std::string p = "solver";
    if (!s.is_object()) throw ConfigError(p, "expected an object");
    cfg.bellman.tolerance = number_or(s, "tolerance", cfg.bellman.tolerance, p);
    if (s.contains("max_iterations")) cfg.bellman.max_iterations = count(s, "max_iterations", p);
    cfg.bellman.argmin_slack = number_or(s, "argmin_slack", cfg.bellman.argmin_slack, p);
    cfg.g_tolerance = number_or(s, "g_tolerance", cfg.g_tolerance, p);
    cfg.initial_g = number_or(s, "initial_g", cfg.initial_g, p);
    if (s.contains("ascent_iterations")) cfg.ascent_iterations = count(s, "ascent_iterations", p);
    cfg.ascent_step = number_or(s, "ascent_step", cfg.ascent_step, p);
    cfg.multiplier_tolerance = number_or(s, "multiplier_tolerance", cfg.multiplier_tolerance, p);
    cfg.feasibility_tolerance = number_or(s, "feasibility_tolerance", cfg.feasibility_tolerance, p);
    cfg.slackness_tolerance = number_or(s, "slackness_tolerance", cfg.slackness_tolerance, p);
    cfg.gap_tolerance = number_or(s, "gap_tolerance", cfg.gap_tolerance, p);
    if (s.contains("max_candidates")) cfg.max_candidates = count(s, "max_candidates", p);
}

} // namespace detail

/// Applies a dotted "a.b.c=value" override; the value is parsed as JSON when possible.
inline void apply_override(json& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set", "expected key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &root;
    std::size_t start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError(key, "empty path component");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        if (!node->contains(part)) (*node)[part] = json::object();
        node = &(*node)[part];
        if (!node->is_object()) throw ConfigError(key, "cannot descend into non-object '" + part + "'");
        start = dot + 1;
    }
}

inline ProblemConfig parse_unchecked(const json& root) {
    using namespace detail;
    if (!root.is_object()) throw ConfigError("$", "expected a JSON object");
    ProblemConfig pc;
    pc.source = root;
    const json& model = require(root, "model", "$");
    if (!model.is_string()) throw ConfigError("model", "expected \"fluid\" or \"custom\"");
    pc.model = model.get<std::string>();

    const real alpha = number(root, "alpha", "$");
    const real x0 = number_or(root, "x0", 0.0, "$");

    if (pc.model == "fluid") {
        fluidq::FluidParams fp{alpha, number(root, "h", "$"), number(root, "K", "$"), number(root, "d", "$")};
        try {
            fp.check();
        } catch (const ModelError& e) {
            throw ConfigError("$", e.what());
        }
        pc.fluid = fp;
        pc.problem = fluidq::make_problem(fp);
        pc.problem.x0 = x0;
        if (root.contains("bounds")) {
            numvec b = number_list(root.at("bounds"), "bounds");
            if (b.size() != 1 || b[0] != fp.d) throw ConfigError("bounds", "fluid model takes a single bound equal to d");
        }
        pc.problem.actions = action_labels(root, {"impulse"});
        if (pc.problem.actions.size() != 1) throw ConfigError("actions", "fluid model has a single impulse action");
    } else if (pc.model == "custom") {
        ImpulseProblem& p = pc.problem;
        p.alpha = alpha;
        p.x0 = x0;
        p.bounds = number_list(require(root, "bounds", "$"), "bounds");
        p.actions = action_labels(root, {});
        if (p.actions.empty()) throw ConfigError("actions", "missing required field");

        const json& flow = require(root, "flow", "$");
        const auto ftype = require(flow, "type", "flow").get<std::string>();
        if (ftype == "drift") {
            const real v = number(flow, "rate", "flow");
            p.flow = [v](real x, real t) { return x + v * t; };
        } else if (ftype == "relaxation") {
            const real k = number(flow, "rate", "flow"), c = number(flow, "target", "flow");
            p.flow = [k, c](real x, real t) { return c + (x - c) * std::exp(-k * t); };
        } else {
            throw ConfigError("flow.type", "unknown flow type '" + ftype + "'");
        }

        const json& reset = require(root, "reset", "$");
        if (!reset.is_object()) throw ConfigError("reset", "expected an object keyed by action label");
        std::vector<std::function<real(real)>> resets;
        for (const auto& label : p.actions)
            resets.push_back(reset_spec(require(reset, label, "reset"), "reset." + label));
        p.reset = [resets](real x, std::size_t a) { return resets[a](x); };

        const std::size_t nc = p.bounds.size() + 1;
        const json& gc = require(root, "gradual_costs", "$");
        const json& ic = require(root, "impulse_costs", "$");
        if (!gc.is_array() || gc.size() != nc)
            throw ConfigError("gradual_costs", "expected " + std::to_string(nc) + " entries (J+1)");
        if (!ic.is_array() || ic.size() != nc)
            throw ConfigError("impulse_costs", "expected " + std::to_string(nc) + " entries (J+1)");
        for (std::size_t j = 0; j < nc; ++j) {
            const std::string gp = "gradual_costs[" + std::to_string(j) + "]";
            ScalarFn s = cost_spec(gc[j], gp);
            p.gradual_costs.push_back(RunningCost{s.f, s.constant, s.breakpoints});

            const std::string ip = "impulse_costs[" + std::to_string(j) + "]";
            std::vector<std::function<real(real)>> per_action;
            if (ic[j].is_object() && ic[j].contains("type")) {
                per_action.assign(p.actions.size(), cost_spec(ic[j], ip).f);
            } else {
                for (const auto& label : p.actions) per_action.push_back(cost_spec(require(ic[j], label, ip), ip + "." + label).f);
            }
            p.impulse_costs.push_back([per_action](real x, std::size_t a) { return per_action[a](x); });
        }
        try {
            p.check();
        } catch (const ModelError& e) {
            throw ConfigError("$", e.what());
        }
    } else {
        throw ConfigError("model", "expected \"fluid\" or \"custom\", got '" + pc.model + "'");
    }

    const json& g = require(root, "grid", "$");
    pc.grid = GridSpec::uniform(number(g, "state_min", "grid"), number(g, "state_max", "grid"),
                                count(g, "state_n", "grid"), number(g, "theta_max", "grid"),
                                count(g, "theta_n", "grid"), number_or(g, "quadrature_step", 1e-3, "grid"));
    try {
        pc.grid.check(pc.problem.x0);
    } catch (const ModelError& e) {
        throw ConfigError("grid", e.what());
    }
    read_solver(root, pc.solver);
    return pc;
}

/// Parses a problem document; JSON type mismatches surface as ConfigError.
inline ProblemConfig parse(const json& root) {
    try {
        return parse_unchecked(root);
    } catch (const json::exception& e) {
        throw ConfigError("$", e.what());
    }
}

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, "cannot open problem file");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path, std::string("malformed JSON: ") + e.what());
    }
}

inline ProblemConfig load(const std::string& path, const std::vector<std::string>& overrides = {}) {
    json root = load_json(path);
    for (const auto& o : overrides) apply_override(root, o);
    return parse(root);
}

// ---------------------------------------------------------------------------
// Policy tables: one row per grid state, "x theta-or-INF action-label".
// ---------------------------------------------------------------------------

inline std::string write_policy_table(const DiscreteMDP& mdp, const StationaryPolicy& f) {
    std::ostringstream os;
    os << "# state theta action\n";
    for (std::size_t s = 0; s < mdp.n_states(); ++s) {
        const std::size_t a = f.choice[s];
        os << format_real(mdp.state_points()[s]) << ' ' << mdp.action_theta(a).to_string() << ' '
           << mdp.labels()[mdp.label_index(a)] << '\n';
    }
    return os.str();
}

/// Rows map to the nearest grid state (within half a cell); every grid state needs a row.
inline StationaryPolicy read_policy_table(const DiscreteMDP& mdp, std::istream& in) {
    GridSpec locator;
    locator.state_points = mdp.state_points();
    StationaryPolicy f;
    f.choice.assign(mdp.n_states(), mdp.n_actions());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream row(line);
        std::string xs, ts, label;
        if (!(row >> xs)) continue;
        const std::string where = "policy line " + std::to_string(lineno);
        if (!(row >> ts >> label)) throw ConfigError(where, "expected 'state theta action'");
        real x;
        try {
            x = std::stod(xs);
        } catch (const std::exception&) {
            throw ConfigError(where, "bad state value '" + xs + "'");
        }
        WaitTime t;
        if (ts == "INF" || ts == "inf") {
            t = WaitTime::never();
        } else {
            try {
                t = WaitTime::finite(std::stod(ts));
            } catch (const std::exception&) {
                throw ConfigError(where, "bad theta value '" + ts + "'");
            }
            if (!(t.value() >= 0.0)) throw ConfigError(where, "theta must be nonnegative");
        }
        std::size_t s;
        try {
            s = locator.locate_initial(x);
        } catch (const ModelError& e) {
            throw ConfigError(where, e.what());
        }
        f.choice[s] = mdp.action(mdp.nearest_theta(t), mdp.label_of(label));
    }
    for (std::size_t s = 0; s < f.choice.size(); ++s)
        if (f.choice[s] == mdp.n_actions())
            throw ConfigError("policy", "no row for grid state " + format_real(mdp.state_points()[s]));
    return f;
}

} // namespace impulse::config
