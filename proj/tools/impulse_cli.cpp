#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "impulse/cli.hpp"

using namespace impulse;

namespace {

Multipliers parse_vector(const std::string& text) {
    Multipliers g;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        const real v = std::stod(item, &used);
        if (used != item.size()) throw std::invalid_argument(item);
        g.push_back(v);
    }
    return g;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Constrained impulse control solver"};
    app.require_subcommand(1, 1);

    cli::RunConfig rc;
    std::vector<std::string> raw_grid;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", rc.problem_file, "problem file (JSON)")->required();
        sub->add_option("--out", rc.output, "report destination, - for stdout");
        sub->add_option("--set", rc.overrides, "override a config field, key.path=value")->take_all();
        sub->add_option("--tol", rc.tol_scale, "scale every solver tolerance by this factor");
    };

    auto* solve = app.add_subcommand("solve", "solve the constrained problem on the grid");
    common(solve);
    solve->add_option("--trace", rc.trace_file, "write value-iteration residuals at g* as CSV");
    auto* analytic = app.add_subcommand("analytic", "closed-form fluid-queue solution");
    common(analytic);
    auto* curve = app.add_subcommand("dual-curve", "tabulate the dual functional");
    common(curve);
    curve->add_option("--g-min", rc.g_min);
    curve->add_option("--g-max", rc.g_max);
    curve->add_option("--g-steps", rc.g_steps);
    curve->add_option("--g", raw_grid, "explicit multiplier vector, comma separated (repeatable)")->take_all();
    auto* eval = app.add_subcommand("eval", "costs of a stationary policy");
    common(eval);
    eval->add_option("--policy", rc.policy_file, "policy table: state theta|INF label per line");
    eval->add_option("--threshold", rc.threshold, "threshold policy: intervene on reaching this level");
    auto* verify = app.add_subcommand("verify", "run the invariant suite");
    common(verify);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kConfigError;
    }
    rc.command = app.get_subcommands().front()->get_name();
    try {
        for (const auto& s : raw_grid) rc.dual_grid.push_back(parse_vector(s));
    } catch (const std::exception&) {
        std::cerr << "config error: --g expects comma separated numbers\n";
        return cli::kConfigError;
    }
    return cli::run(rc, std::cout, std::cerr);
}
