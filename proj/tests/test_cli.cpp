#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "impulse/cli.hpp"
#include "support.hpp"

using namespace impulse;
using namespace testing_support;
using json = nlohmann::json;

namespace {

const std::string kConfigs = IMPULSE_SOURCE_DIR "/configs/";

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "impulse_cli_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string write_file(const std::string& name, const std::string& text) {
    const auto path = scratch(name);
    std::ofstream(path) << text;
    return path.string();
}

struct Run {
    int code;
    std::string out, err;
};

Run run(cli::RunConfig rc) {
    std::ostringstream out, err;
    const int code = cli::run(rc, out, err);
    return {code, out.str(), err.str()};
}

cli::RunConfig command(const std::string& cmd, const std::string& file, std::vector<std::string> sets = {}) {
    cli::RunConfig rc;
    rc.command = cmd;
    rc.problem_file = file;
    rc.overrides = std::move(sets);
    return rc;
}

json fluid_doc() { return config::load_json(kConfigs + "fluid_default.json"); }

} // namespace

TEST(Config, ParsesShippedFiles) {
    const auto pc = config::load(kConfigs + "fluid_default.json");
    EXPECT_EQ(pc.model, "fluid");
    ASSERT_TRUE(pc.fluid.has_value());
    EXPECT_EQ(pc.fluid->d, 0.5);
    EXPECT_EQ(pc.grid.state_points.size(), 401u);
    EXPECT_EQ(pc.grid.theta_points.size(), 801u);
    const auto custom = config::load(kConfigs + "two_constraints.json");
    EXPECT_EQ(custom.problem.n_constraints(), 2u);
    EXPECT_EQ(custom.problem.actions, (std::vector<std::string>{"empty", "halve"}));
    EXPECT_EQ(custom.problem.gradual_costs[2].breakpoints, numvec{2.0});
}

TEST(Config, CustomModelMatchesHandBuiltProblem) {
    const auto pc = config::load(kConfigs + "two_constraints.json");
    const auto ref = two_action_problem({2.2, 0.12});
    for (real x : {0.0, 0.7, 2.5})
        for (std::size_t a = 0; a < 2; ++a) {
            EXPECT_DOUBLE_EQ(pc.problem.reset(pc.problem.flow(x, 0.4), a), ref.reset(ref.flow(x, 0.4), a));
            for (std::size_t j = 0; j < 3; ++j) {
                EXPECT_DOUBLE_EQ(pc.problem.gradual_costs[j](x), ref.gradual_costs[j](x));
                EXPECT_DOUBLE_EQ(pc.problem.impulse_costs[j](x, a), ref.impulse_costs[j](x, a));
            }
        }
    EXPECT_EQ(pc.problem.alpha, ref.alpha);
}

TEST(Config, ErrorsNameTheField) {
    auto expect_path = [](json doc, const std::string& needle) {
        try {
            config::parse(doc);
            ADD_FAILURE() << "expected ConfigError for " << needle;
        } catch (const config::ConfigError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    json d = fluid_doc();
    d.erase("alpha");
    expect_path(d, "alpha");
    d = fluid_doc();
    d["grid"]["state_n"] = "many";
    expect_path(d, "grid.state_n");
    d = fluid_doc();
    d["model"] = "stochastic";
    expect_path(d, "model");
    d = fluid_doc();
    d["K"] = -1.0;
    expect_path(d, "$");
    d = config::load_json(kConfigs + "two_constraints.json");
    d["gradual_costs"][1] = {{"type", "spline"}};
    expect_path(d, "gradual_costs[1].type");
    d = config::load_json(kConfigs + "two_constraints.json");
    d["reset"].erase("halve");
    expect_path(d, "reset.halve");
    d = config::load_json(kConfigs + "two_constraints.json");
    d["gradual_costs"][2]["values"] = {0.0};
    expect_path(d, "gradual_costs[2].values");
}

TEST(Config, OverridesFollowDottedPaths) {
    json d = fluid_doc();
    config::apply_override(d, "d=1");
    config::apply_override(d, "grid.state_n=51");
    config::apply_override(d, "solver.tolerance=1e-8");
    const auto pc = config::parse(d);
    EXPECT_EQ(pc.fluid->d, 1.0);
    EXPECT_EQ(pc.grid.state_points.size(), 51u);
    EXPECT_EQ(pc.solver.bellman.tolerance, 1e-8);
    EXPECT_THROW(config::apply_override(d, "novalue"), config::ConfigError);
    EXPECT_THROW(config::apply_override(d, "d.x=1"), config::ConfigError);
}

TEST(Config, PolicyTableRoundTrip) {
    const auto pc = config::load(kConfigs + "two_constraints.json", {"grid.state_n=13", "grid.theta_n=13"});
    const auto mdp = discretize(pc.problem, pc.grid);
    StationaryPolicy f;
    for (std::size_t s = 0; s < mdp.n_states(); ++s) f.choice.push_back((7 * s + 3) % mdp.n_actions());
    std::istringstream in(config::write_policy_table(mdp, f));
    EXPECT_EQ(config::read_policy_table(mdp, in).choice, f.choice);

    std::istringstream missing("0 INF empty\n");
    EXPECT_THROW(config::read_policy_table(mdp, missing), config::ConfigError);
    std::istringstream bad("0 soon empty\n");
    EXPECT_THROW(config::read_policy_table(mdp, bad), config::ConfigError);
}

TEST(Cli, AnalyticReport) {
    const auto r = run(command("analytic", kConfigs + "fluid_default.json"));
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    const json doc = json::parse(r.out);
    EXPECT_EQ(doc["regime"], "constrained");
    EXPECT_NEAR(doc["g_star"].get<real>(), kGStar, 1e-10);
    const auto u = run(command("analytic", kConfigs + "fluid_default.json", {"d=1"}));
    const json ud = json::parse(u.out);
    EXPECT_EQ(ud["regime"], "unconstrained");
    EXPECT_EQ(ud["x_star"], "INF");
    EXPECT_EQ(ud["V1"].get<real>(), 1.0);
}

TEST(Cli, AnalyticRefusesCustomModels) {
    EXPECT_EQ(run(command("analytic", kConfigs + "two_constraints.json")).code, cli::kConfigError);
}

TEST(Cli, SolveUnconstrainedFluid) {
    const auto r = run(command("solve", kConfigs + "fluid_default.json", {"d=1"}));
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    const json doc = json::parse(r.out);
    EXPECT_EQ(doc["g_star"][0].get<real>(), 0.0);
    EXPECT_EQ(doc["costs"][0].get<real>(), 0.0);
    EXPECT_NEAR(doc["costs"][1].get<real>(), 1.0, 1e-9);
    for (const auto& c : doc["certificates"]) {
        EXPECT_TRUE(c.contains("tolerance"));
        EXPECT_TRUE(c["pass"].get<bool>()) << c;
    }
    EXPECT_TRUE(doc.contains("wall_time_s"));
    EXPECT_GT(doc["bellman"]["iterations"].get<int>(), 0);
}

TEST(Cli, SolveAndAnalyticAgreeOnRegime) {
    for (real d : {0.3, 0.5, 0.98, 1.02, 1.5, 3.0}) {
        const std::string set = "d=" + std::to_string(d);
        const std::vector<std::string> coarse{set, "grid.state_n=101", "grid.theta_n=201"};
        const auto s = run(command("solve", kConfigs + "fluid_default.json", coarse));
        const auto a = run(command("analytic", kConfigs + "fluid_default.json", {set}));
        ASSERT_EQ(s.code, cli::kOk) << s.err;
        const bool numeric_constrained = json::parse(s.out)["g_star"][0].get<real>() > 1e-6;
        EXPECT_EQ(numeric_constrained, json::parse(a.out)["regime"] == "constrained") << d;
    }
}

TEST(Cli, SolveWritesFileAndTrace) {
    auto rc = command("solve", kConfigs + "fluid_default.json", {"grid.state_n=101", "grid.theta_n=101"});
    rc.output = scratch("solve.json").string();
    rc.trace_file = scratch("trace.csv").string();
    const auto r = run(rc);
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_TRUE(r.out.empty());
    std::ifstream in(rc.output);
    const json doc = json::parse(in);
    EXPECT_EQ(doc["command"], "solve");
    std::ifstream trace(rc.trace_file);
    std::string header, row;
    std::getline(trace, header);
    EXPECT_EQ(header, "iteration,residual");
    ASSERT_TRUE(static_cast<bool>(std::getline(trace, row)));
    EXPECT_EQ(row.rfind("1,", 0), 0u);
}

TEST(Cli, ValidationFailureRefusesSolve) {
    json d = config::load_json(kConfigs + "two_constraints.json");
    d["impulse_costs"][0] = {{"type", "constant"}, {"value", 0.0}};
    const auto r = run(command("solve", write_file("free.json", d.dump())));
    EXPECT_EQ(r.code, cli::kValidationFailure);
    EXPECT_NE(r.err.find("bounded below by a positive constant"), std::string::npos) << r.err;
    const auto v = run(command("verify", write_file("free.json", d.dump())));
    EXPECT_EQ(v.code, cli::kVerificationFailure);
}

TEST(Cli, NonConvergedSolve) {
    const auto r = run(command("solve", kConfigs + "fluid_default.json",
                               {"solver.max_iterations=2", "grid.state_n=51", "grid.theta_n=51"}));
    EXPECT_EQ(r.code, cli::kNotConverged);
}

TEST(Cli, ConfigErrors) {
    EXPECT_EQ(run(command("solve", "/nonexistent/problem.json")).code, cli::kConfigError);
    EXPECT_EQ(run(command("solve", write_file("broken.json", "{\"model\": "))).code, cli::kConfigError);
    EXPECT_EQ(run(command("launch", kConfigs + "fluid_default.json")).code, cli::kConfigError);
    auto rc = command("solve", kConfigs + "fluid_default.json");
    rc.tol_scale = -1.0;
    EXPECT_EQ(run(rc).code, cli::kConfigError);
    const auto r = run(command("solve", kConfigs + "fluid_default.json", {"grid.state_n=0"}));
    EXPECT_EQ(r.code, cli::kConfigError);
    EXPECT_NE(r.err.find("grid.state_n"), std::string::npos) << r.err;
}

TEST(Cli, DualCurveCsv) {
    auto rc = command("dual-curve", kConfigs + "fluid_default.json", {"grid.state_n=101", "grid.theta_n=201"});
    rc.g_min = 0.0;
    rc.g_max = 4.0;
    rc.g_steps = 5;
    const auto r = run(rc);
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    std::istringstream in(r.out);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "g,h,W0,slack_1");
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0].rfind("0,0,0,", 0), 0u);
    EXPECT_EQ(rows[2].rfind("2,", 0), 0u);
    // 17 significant digits
    const std::string h = rows[2].substr(2, rows[2].find(',', 2) - 2);
    EXPECT_GE(h.size(), 17u) << h;
}

TEST(Cli, DualCurveExplicitVectors) {
    auto rc = command("dual-curve", kConfigs + "two_constraints.json", {"grid.state_n=31", "grid.theta_n=31"});
    rc.dual_grid = {{0.0, 0.0}, {0.5, 1.0}};
    const auto r = run(rc);
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "g_1,g_2,h,W0,slack_1,slack_2");
    rc.dual_grid = {{1.0}};
    EXPECT_EQ(run(rc).code, cli::kConfigError);
    rc.dual_grid = {{-1.0, 0.0}};
    EXPECT_EQ(run(rc).code, cli::kConfigError);
}

TEST(Cli, EvalThresholdAndTable) {
    auto rc = command("eval", kConfigs + "fluid_default.json", {"grid.state_n=101", "grid.theta_n=101", "grid.state_max=5", "grid.theta_max=5"});
    rc.threshold = 1.0;
    const auto r = run(rc);
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    const json doc = json::parse(r.out);
    const auto [V0, V1] = fluidq::cycle_costs(kBenchmark, 1.0);
    EXPECT_NEAR(doc["costs"][0].get<real>(), V0, 1e-10);
    EXPECT_NEAR(doc["costs"][1].get<real>(), V1, 1e-10);
    EXPECT_LE(doc["characteristic_residual"].get<real>(), 1e-9);

    const auto pc = config::load(kConfigs + "fluid_default.json", rc.overrides);
    const auto mdp = discretize(pc.problem, pc.grid);
    rc.threshold.reset();
    rc.policy_file = write_file("policy.txt", config::write_policy_table(mdp, threshold_policy(mdp, 1.0)));
    const auto t = run(rc);
    ASSERT_EQ(t.code, cli::kOk) << t.err;
    EXPECT_EQ(json::parse(t.out)["costs"], doc["costs"]);

    rc.policy_file.clear();
    EXPECT_EQ(run(rc).code, cli::kConfigError);
}

TEST(Cli, VerifyDefaultConfigPasses) {
    const auto r = run(command("verify", kConfigs + "fluid_default.json"));
    EXPECT_EQ(r.code, cli::kOk) << r.out;
    const json doc = json::parse(r.out);
    EXPECT_TRUE(doc["pass"].get<bool>());
    EXPECT_GE(doc["checks"].size(), 15u);
}

TEST(Cli, VerifyTwoConstraintConfigPasses) {
    const auto r = run(command("verify", kConfigs + "two_constraints.json"));
    EXPECT_EQ(r.code, cli::kOk) << r.out;
}

TEST(Cli, VerifyFlagsCoarseGrids) {
    // too coarse to resolve the threshold: the closed-form comparison must fail
    const auto r = run(command("verify", kConfigs + "fluid_default.json", {"grid.state_n=6", "grid.theta_n=6"}));
    EXPECT_EQ(r.code, cli::kVerificationFailure);
}

TEST(Cli, TolScaleTightensBellman) {
    auto rc = command("solve", kConfigs + "fluid_default.json", {"grid.state_n=51", "grid.theta_n=51"});
    rc.tol_scale = 0.01;
    const auto r = run(rc);
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_NEAR(json::parse(r.out)["bellman"]["tolerance"].get<real>(), 1e-11, 1e-25);
}
