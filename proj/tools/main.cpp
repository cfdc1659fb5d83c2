#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nbsolve/io.hpp"
#include "nbsolve/mc.hpp"
#include "nbsolve/registry.hpp"
#include "nbsolve/solver.hpp"
#include "nbsolve/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitValidation = 3;
constexpr int kExitNoConvergence = 4;
constexpr int kExitPropertyFailure = 5;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CommonOpts {
    std::string config_path;
    std::string out_dir = ".";
    int threads = 1;
    std::uint64_t seed = 1;
    double tol = 1e-10;
    std::string mode = "control";
};

nbs::SolveMode parse_mode(const std::string& mode) {
    if (mode == "control") return nbs::SolveMode::control;
    if (mode == "stop-vi") return nbs::SolveMode::stopping_vi;
    if (mode == "stop-control") return nbs::SolveMode::stopping_control;
    throw ConfigError("unknown mode '" + mode + "' (expected control, stop-vi or stop-control)");
}

json load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    json doc;
    try {
        is >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
    return doc;
}

struct LoadedProblem {
    nbs::ControlledProblem problem;
    std::optional<nbs::RegistryEntry> registry;  // set when loaded from the registry
};

LoadedProblem load_problem(const json& cfg, const fs::path& config_dir) {
    if (!cfg.contains("problem")) throw ConfigError("config is missing \"problem\"");
    const json& p = cfg.at("problem");
    int sources = int(p.is_string()) + int(p.is_object() && p.contains("registry")) +
                  int(p.is_object() && p.contains("file")) +
                  int(p.is_object() && p.contains("controls"));
    if (sources != 1)
        throw ConfigError(
            "\"problem\" must be exactly one of: a registry name string, {\"registry\": name, "
            "\"params\": {...}}, {\"file\": path}, or an inline problem document");

    LoadedProblem out;
    if (p.is_string() || p.contains("registry")) {
        std::string name = p.is_string() ? p.get<std::string>() : p.at("registry").get<std::string>();
        std::map<std::string, double> params;
        if (p.is_object() && p.contains("params")) {
            for (const auto& [key, val] : p.at("params").items()) {
                if (!val.is_number()) throw ConfigError("registry param \"" + key + "\" must be a number");
                params[key] = val.get<double>();
            }
        }
        nbs::RegistryEntry entry = nbs::make_registry_problem(name, params);
        out.problem = entry.problem;
        out.registry = std::move(entry);
    } else if (p.contains("file")) {
        fs::path path = p.at("file").get<std::string>();
        if (path.is_relative()) path = config_dir / path;
        out.problem = nbs::load_problem_file(path);
    } else {
        out.problem = nbs::load_problem_json(p);
    }
    return out;
}

nbs::LatticeGrid build_grid(const LoadedProblem& lp, const json& cfg) {
    const json g = cfg.value("grid", json::object());
    double h = g.value("h", lp.registry ? lp.registry->default_h : 0.1);
    double tau = g.value("tau", lp.registry ? lp.registry->default_tau : 0.01);
    if (!(h > 0) || !(tau > 0)) throw ConfigError("grid h and tau must be positive");

    if (lp.registry && !g.contains("box") && !g.contains("x0")) {
        if (g.contains("radius")) {
            nbs::RegistryEntry e = *lp.registry;
            double radius = g.at("radius").get<double>();
            int r = std::max(2, static_cast<int>(std::lround(radius / h)));
            return nbs::LatticeGrid::build(e.problem.basis, h, tau, e.problem.T, {},
                                           nbs::IndexBox::cube(e.problem.basis.d1(), r));
        }
        return lp.registry->make_grid(tau, h);
    }

    nbs::IndexBox box;
    if (g.contains("box")) {
        for (const auto& axis : g.at("box")) {
            if (!axis.is_array() || axis.size() != 2)
                throw ConfigError("grid box entries must be [lo, hi] pairs");
            box.range.emplace_back(axis[0].get<int>(), axis[1].get<int>());
        }
    } else {
        double radius = g.value("radius", 3.0);
        int r = std::max(2, static_cast<int>(std::lround(radius / h)));
        box = nbs::IndexBox::cube(lp.problem.basis.d1(), r);
    }
    std::vector<double> x0 = g.value("x0", std::vector<double>{});
    return nbs::LatticeGrid::build(lp.problem.basis, h, tau, lp.problem.T, std::move(x0), box);
}

nbs::SolverConfig solver_config(const json& cfg, const CommonOpts& opts) {
    const json s = cfg.value("solver", json::object());
    nbs::SolverConfig sc;
    sc.epsilon = s.value("epsilon", 0.0);
    sc.gamma = s.value("gamma", 1.0);
    sc.tol = s.value("tol", opts.tol);
    sc.max_iter = s.value("max_iter", 10000);
    sc.safety = s.value("safety", 0.9);
    sc.threads = opts.threads;
    sc.mode = parse_mode(cfg.value("mode", opts.mode));
    sc.r_grid = cfg.value("r_grid", std::vector<double>{});
    return sc;
}

int validate_or_fail(const nbs::ControlledProblem& problem, const nbs::LatticeGrid& grid) {
    nbs::ValidationReport report = nbs::validate_problem(problem, nbs::sampling_plan_for(grid));
    if (report.passed) return kExitOk;
    std::cerr << "validation failed (" << report.violations.size() << " violation(s)):\n";
    std::size_t shown = 0;
    for (const nbs::Violation& v : report.violations) {
        std::cerr << "  " << nbs::format_violation(v) << '\n';
        if (++shown == 10) {
            std::cerr << "  ... (" << report.violations.size() - shown << " more)\n";
            break;
        }
    }
    return kExitValidation;
}

fs::path ensure_out_dir(const CommonOpts& opts) {
    fs::path dir = opts.out_dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "'");
    return dir;
}

void write_json(const json& doc, const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write '" + path.string() + "'");
    os << doc.dump(2) << '\n';
}

std::vector<std::vector<double>> read_probes(const json& cfg, int d) {
    std::vector<std::vector<double>> probes;
    for (const auto& entry : cfg.value("probes", json::array())) {
        std::vector<double> x = entry.get<std::vector<double>>();
        if (static_cast<int>(x.size()) != d)
            throw ConfigError("probe point has wrong dimension");
        probes.push_back(std::move(x));
    }
    return probes;
}

nbs::SolutionField run_solve(const nbs::ControlledProblem& problem, const nbs::LatticeGrid& grid,
                             const nbs::SolverConfig& sc) {
    switch (sc.mode) {
        case nbs::SolveMode::stopping_vi:
            return nbs::solve_stopping_vi(problem, grid, sc);
        case nbs::SolveMode::stopping_control: {
            std::vector<double> r = sc.r_grid;
            if (r.empty()) r = {0, 1, 10, 100, 1000, 10000};
            return nbs::solve_stopping_control(problem, grid, r, sc);
        }
        default:
            return nbs::solve(problem, grid, sc);
    }
}

int cmd_solve(const json& cfg, const CommonOpts& opts) {
    fs::path config_dir = fs::path(opts.config_path).parent_path();
    LoadedProblem lp = load_problem(cfg, config_dir);
    nbs::LatticeGrid grid = build_grid(lp, cfg);
    if (int rc = validate_or_fail(lp.problem, grid); rc != kExitOk) return rc;

    nbs::SolverConfig sc = solver_config(cfg, opts);
    nbs::SolutionField field = run_solve(lp.problem, grid, sc);

    fs::path out = ensure_out_dir(opts);
    nbs::write_field_csv(field, out / "field.csv");
    nbs::write_field_bfd(field, out / "field.bfd");
    write_json(nbs::diagnostics_json(field), out / "diagnostics.json");

    for (const auto& probe : read_probes(cfg, grid.d())) {
        std::size_t p = grid.nearest_point(probe);
        std::printf("u(t=0, x=(");
        for (std::size_t i = 0; i < probe.size(); ++i)
            std::printf("%s%.17g", i ? ", " : "", grid.coord(p)[i]);
        std::printf(")) = %.17g\n", field.value(0, p));
    }
    std::printf("wrote %s\n", (out / "field.csv").string().c_str());
    return kExitOk;
}

int cmd_converge(const json& cfg, const CommonOpts& opts) {
    fs::path config_dir = fs::path(opts.config_path).parent_path();
    LoadedProblem lp = load_problem(cfg, config_dir);

    nbs::StudyConfig study;
    if (!cfg.contains("ladder")) throw ConfigError("converge config needs a \"ladder\"");
    for (const auto& rung : cfg.at("ladder")) {
        double tau, h;
        if (rung.is_array() && rung.size() == 2) {
            tau = rung[0].get<double>();
            h = rung[1].get<double>();
        } else if (rung.is_object()) {
            tau = rung.at("tau").get<double>();
            h = rung.at("h").get<double>();
        } else {
            throw ConfigError("ladder entries must be [tau, h] or {\"tau\":..., \"h\":...}");
        }
        study.ladder.emplace_back(tau, h);
    }
    study.probes = read_probes(cfg, lp.problem.basis.d());
    if (study.probes.empty())
        study.probes.push_back(std::vector<double>(static_cast<std::size_t>(lp.problem.basis.d()), 0.0));
    study.solver = solver_config(cfg, opts);
    study.mode = study.solver.mode;
    if (lp.registry) {
        study.make_grid = lp.registry->make_grid;
    } else {
        const nbs::ControlledProblem& prob = lp.problem;
        double radius = cfg.value("grid", json::object()).value("radius", 3.0);
        study.make_grid = [prob, radius](double tau, double h) {
            int r = std::max(2, static_cast<int>(std::lround(radius / h)));
            return nbs::LatticeGrid::build(prob.basis, h, tau, prob.T, {},
                                           nbs::IndexBox::cube(prob.basis.d1(), r));
        };
    }

    // validate once on the coarsest rung
    {
        auto [tau0, h0] = study.ladder.front();
        nbs::LatticeGrid coarse = study.make_grid(tau0, h0);
        if (int rc = validate_or_fail(lp.problem, coarse); rc != kExitOk) return rc;
    }

    nbs::Reference reference;
    const json ref = cfg.value("reference", json::object());
    std::string ref_kind = ref.value("type", "expression");
    if (ref_kind == "expression") {
        if (!ref.contains("u")) throw ConfigError("expression reference needs \"u\"");
        nbs::Expr expr = nbs::Expr::parse(ref.at("u").get<std::string>(), lp.problem.basis.d());
        reference = [expr](double t, std::span<const double> x) { return expr.eval(t, x); };
        study.reference_description = "expression: " + ref.at("u").get<std::string>();
    } else if (ref_kind == "self") {
        double rt = ref.at("tau").get<double>();
        double rh = ref.at("h").get<double>();
        nbs::LatticeGrid fine = study.make_grid(rt, rh);
        if (study.solver.mode == nbs::SolveMode::stopping_control)
            throw ConfigError("self reference supports control and stop-vi modes only");
        nbs::SolutionField fine_field = study.solver.mode == nbs::SolveMode::stopping_vi
                                            ? nbs::solve_stopping_vi(lp.problem, fine, study.solver)
                                            : nbs::solve(lp.problem, fine, study.solver);
        auto grid_ptr = std::make_shared<nbs::SolutionField>(std::move(fine_field));
        reference = [grid_ptr](double, std::span<const double> x) {
            return grid_ptr->value(0, grid_ptr->grid().nearest_point(x));
        };
        char buf[96];
        std::snprintf(buf, sizeof buf, "self-reference at tau=%g, h=%g", rt, rh);
        study.reference_description = buf;
    } else {
        throw ConfigError("reference type must be \"expression\" or \"self\"");
    }

    nbs::RateReport report = nbs::convergence_study(lp.problem, reference, study);

    fs::path out = ensure_out_dir(opts);
    nbs::write_rate_csv(report, out / "rates.csv");
    write_json(nbs::rate_report_json(report), out / "rates.json");

    for (const nbs::RateRung& r : report.ladder)
        std::printf("tau=%-12g h=%-10g error=%.6e%s\n", r.tau, r.h, r.error,
                    r.exact ? "  (exact to solver tolerance)" : "");
    if (report.all_exact)
        std::printf("all rungs exact to solver tolerance; no rate fitted\n");
    else
        std::printf("fitted exponents: p_h = %.4f, p_tau = %.4f (R^2 = %.4f)\n", report.p_h,
                    report.p_tau, report.r2);
    return kExitOk;
}

int cmd_mc(const json& cfg, const CommonOpts& opts) {
    fs::path config_dir = fs::path(opts.config_path).parent_path();
    LoadedProblem lp = load_problem(cfg, config_dir);

    const json mc = cfg.value("mc", json::object());
    double dt = mc.value("dt", 1e-3);
    long paths = mc.value("paths", 100000L);
    if (paths <= 0) throw ConfigError("mc paths must be positive");
    if (!(dt > 0)) throw ConfigError("mc dt must be positive");
    double s = mc.value("t", 0.0);
    std::vector<double> x = mc.value("x", std::vector<double>{});
    if (x.empty()) x.assign(static_cast<std::size_t>(lp.problem.basis.d()), 0.0);
    if (static_cast<int>(x.size()) != lp.problem.basis.d())
        throw ConfigError("mc start point has wrong dimension");

    json result;
    std::string check = mc.value("check", "policies");
    if (check == "randomized-stopping") {
        std::vector<double> r_levels =
            mc.value("r_levels", std::vector<double>{0, 1, 10, 100, 1000});
        nbs::RandomizedStoppingReport rep = nbs::randomized_stopping_check(
            lp.problem, s, x, dt, paths, r_levels, opts.seed, opts.threads);
        result = {{"check", "randomized-stopping"},
                  {"stop_rule_max", rep.stop_rule_max},
                  {"stop_rule_se", rep.stop_rule_se},
                  {"intensity_max", rep.intensity_max},
                  {"intensity_se", rep.intensity_se},
                  {"gap", rep.gap},
                  {"best_stop_rule", rep.best_stop_rule},
                  {"best_intensity", rep.best_intensity},
                  {"paths", paths},
                  {"dt", dt},
                  {"seed", opts.seed}};
        std::printf("stop-rule max = %.6f (se %.2e), intensity max = %.6f (se %.2e), gap = %.6f\n",
                    rep.stop_rule_max, rep.stop_rule_se, rep.intensity_max, rep.intensity_se,
                    rep.gap);
    } else if (check == "policies") {
        std::vector<nbs::Policy> policies;
        if (mc.value("feedback", true)) {
            nbs::LatticeGrid grid = build_grid(lp, cfg);
            if (int rc = validate_or_fail(lp.problem, grid); rc != kExitOk) return rc;
            nbs::SolverConfig sc = solver_config(cfg, opts);
            nbs::SolutionField field = run_solve(lp.problem, grid, sc);
            policies.push_back(nbs::Policy::from_field(field, lp.problem));
        }
        for (const nbs::ControlPoint& ctl : lp.problem.controls)
            policies.push_back(nbs::Policy::constant(ctl.label));
        auto [best, est] =
            nbs::best_over_policies(lp.problem, policies, s, x, dt, paths, opts.seed, opts.threads);
        result = {{"check", "policies"},    {"best_policy", best}, {"mean", est.mean},
                  {"se", est.se},           {"paths", est.paths},  {"dt", est.dt},
                  {"seed", est.seed}};
        std::printf("best policy '%s': mean = %.6f, se = %.2e (%ld paths)\n", best.c_str(),
                    est.mean, est.se, est.paths);
    } else {
        throw ConfigError("mc check must be \"policies\" or \"randomized-stopping\"");
    }

    fs::path out = ensure_out_dir(opts);
    write_json(result, out / "mc.json");
    return kExitOk;
}

int cmd_suite(const json& cfg, const CommonOpts& opts) {
    nbs::SuiteConfig sc;
    sc.solver = solver_config(cfg, opts);
    sc.threads = opts.threads;
    nbs::SuiteReport report = nbs::property_suite(sc);

    fs::path out = ensure_out_dir(opts);
    write_json(nbs::suite_report_json(report), out / "suite.json");

    for (const nbs::PropertyResult& r : report.results)
        std::printf("%-24s %s  margin=%-12.4g %s\n", r.name.c_str(),
                    r.passed ? "PASS" : "FAIL", r.margin, r.detail.c_str());
    return report.all_passed() ? kExitOk : kExitPropertyFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Finite-difference solver for normalized Bellman equations on space-time lattices"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string command;
    for (const char* name : {"solve", "converge", "mc", "suite"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", opts.config_path, "JSON run configuration")
            ->required(name != std::string("suite"));
        sub->add_option("--out", opts.out_dir, "output directory (default: current)");
        sub->add_option("--threads", opts.threads, "worker threads, 0 = hardware concurrency");
        sub->add_option("--seed", opts.seed, "Monte Carlo seed");
        sub->add_option("--tol", opts.tol, "solver tolerance");
        sub->add_option("--mode", opts.mode, "control | stop-vi | stop-control");
        sub->callback([&command, name] { command = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        json cfg = json::object();
        if (!opts.config_path.empty()) cfg = load_config(opts.config_path);
        if (command == "solve") return cmd_solve(cfg, opts);
        if (command == "converge") return cmd_converge(cfg, opts);
        if (command == "mc") return cmd_mc(cfg, opts);
        return cmd_suite(cfg, opts);
    } catch (const nbs::ConvergenceError& e) {
        std::cerr << "error: " << e.what() << " (last update " << e.residual << ")\n";
        return kExitNoConvergence;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const nbs::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const nbs::McError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNoConvergence;
    } catch (const json::exception& e) {
        std::cerr << "error: malformed config: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}
