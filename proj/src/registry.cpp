#include "nbsolve/registry.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "nbsolve/io.hpp"

namespace nbs {

namespace {

using nlohmann::json;

double get(const std::map<std::string, double>& m, const std::string& key, double fallback) {
    auto it = m.find(key);
    return it == m.end() ? fallback : it->second;
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

RegistryEntry finish(std::string name, json doc, double h, double tau, double radius) {
    RegistryEntry e;
    e.name = std::move(name);
    e.problem = load_problem_json(doc);
    e.default_h = h;
    e.default_tau = tau;
    e.radius = radius;
    DirectionBasis basis = e.problem.basis;
    double T = e.problem.T;
    e.make_grid = [basis, T, radius](double tau_, double h_) {
        int r = static_cast<int>(std::lround(radius / h_));
        if (r < 2) r = 2;
        return LatticeGrid::build(basis, h_, tau_, T, {}, IndexBox::cube(basis.d1(), r));
    };
    return e;
}

}  // namespace

RegistryEntry make_registry_problem(const std::string& name,
                                    const std::map<std::string, double>& overrides) {
    const auto& ov = overrides;

    if (name == "exact1d") {
        // f = 1, everything else zero: u(t,x) = T - t exactly.
        double T = get(ov, "T", 1.0);
        json doc = {
            {"d", 1}, {"d1", 1}, {"ell", {{1.0}}},
            {"T", T}, {"K", get(ov, "K", 2.0)}, {"lambda", 0.0},
            {"g", "0"},
            {"controls",
             {{{"label", "only"},
               {"sigma", {num(get(ov, "sigma", 0.0))}},
               {"b", {"0", "0"}},
               {"c", "0"},
               {"f", num(get(ov, "f", 1.0))},
               {"m", 1.0}}}},
        };
        return finish(name, doc, get(ov, "h", 0.1), get(ov, "tau", T / 100.0),
                      get(ov, "radius", 10.0));
    }

    if (name == "heat1d") {
        // sigma_{+-1} = 1 gives effective a = 1; with g = cos x the solution
        // is u(t,x) = e^{-(T-t)} cos x.
        json doc = {
            {"d", 1}, {"d1", 1}, {"ell", {{1.0}}},
            {"T", get(ov, "T", 1.0)}, {"K", get(ov, "K", 2.0)}, {"lambda", 0.0},
            {"g", "cos(x1)"},
            {"controls",
             {{{"label", "only"},
               {"sigma", {num(get(ov, "sigma", 1.0))}},
               {"b", {num(get(ov, "b", 0.0)), "0"}},
               {"c", num(get(ov, "c", 0.0))},
               {"f", num(get(ov, "f", 0.0))},
               {"m", 1.0}}}},
        };
        return finish(name, doc, get(ov, "h", 0.05), get(ov, "tau", 0.0025),
                      get(ov, "radius", 8.0));
    }

    if (name == "kink1d") {
        // Lipschitz terminal reward with a kink at 0 (and at +-1).
        json doc = {
            {"d", 1}, {"d1", 1}, {"ell", {{1.0}}},
            {"T", get(ov, "T", 1.0)}, {"K", get(ov, "K", 2.0)}, {"lambda", 0.0},
            {"g", "min(abs(x1), 1)"},
            {"controls",
             {{{"label", "only"},
               {"sigma", {num(get(ov, "sigma", 1.0))}},
               {"b", {"0", "0"}},
               {"c", "0"},
               {"f", "0"},
               {"m", 1.0}}}},
        };
        return finish(name, doc, get(ov, "h", 0.1), get(ov, "tau", 0.01), get(ov, "radius", 3.0));
    }

    if (name == "twocontrol1d") {
        // Two genuinely competing controls: different diffusion strength and
        // running reward, so the argmax varies over the grid.
        double fshift = get(ov, "f_shift", 0.0);
        double gshift = get(ov, "g_shift", 0.0);
        json doc = {
            {"d", 1}, {"d1", 1}, {"ell", {{1.0}}},
            {"T", get(ov, "T", 1.0)}, {"K", get(ov, "K", 2.0)}, {"lambda", 0.0},
            {"g", gshift == 0.0 ? std::string("cos(x1)") : "cos(x1) + " + num(gshift)},
            {"controls",
             {{{"label", "diffuse"},
               {"sigma", {"1"}},
               {"b", {"0", "0"}},
               {"c", "0.25"},
               {"f", "0.5*cos(x1) + " + num(fshift)},
               {"m", 1.0}},
              {{"label", "drift"},
               {"sigma", {num(get(ov, "sigma2", 0.6))}},
               {"b", {num(get(ov, "b2", 0.3)), "0"}},
               {"c", "0.25"},
               {"f", "0.5*sin(x1) + " + num(fshift)},
               {"m", 1.0}}}},
        };
        return finish(name, doc, get(ov, "h", 0.05), get(ov, "tau", 0.0025),
                      get(ov, "radius", 6.0));
    }

    if (name == "amerput1d") {
        // Optimal stopping of a discounted driftless unit diffusion against the
        // smooth cap g(x) = max(0, 1 - x^2); the obstacle binds near the top.
        json doc = {
            {"d", 1}, {"d1", 1}, {"ell", {{1.0}}},
            {"T", get(ov, "T", 1.0)}, {"K", get(ov, "K", 2.0)}, {"lambda", 0.0},
            {"g", "max(0, 1 - x1*x1)"},
            {"controls",
             {{{"label", "only"},
               {"sigma", {num(get(ov, "sigma", 1.0))}},
               {"b", {"0", "0"}},
               {"c", num(get(ov, "c", 0.25))},
               {"f", num(get(ov, "f", 0.0))},
               {"m", 1.0}}}},
        };
        return finish(name, doc, get(ov, "h", 0.1), get(ov, "tau", 0.02), get(ov, "radius", 3.0));
    }

    if (name == "degenerate2d") {
        // Rank-1 diffusion along (1,1) plus a drift along e1; the diffusion
        // matrix [[1,1],[1,1]] is degenerate.
        json doc = {
            {"d", 2}, {"d1", 2}, {"ell", {{1.0, 1.0}, {1.0, 0.0}}},
            {"T", get(ov, "T", 0.5)}, {"K", get(ov, "K", 2.0)}, {"lambda", 0.0},
            {"g", "cos(x1 + x2)"},
            {"controls",
             {{{"label", "only"},
               {"sigma", {num(get(ov, "sigma", 1.0)), "0"}},
               {"b", {"0", "0", num(get(ov, "drift", 0.5)), "0"}},
               {"c", "0"},
               {"f", "0"},
               {"m", 1.0}}}},
        };
        return finish(name, doc, get(ov, "h", 0.2), get(ov, "tau", 0.01), get(ov, "radius", 3.0));
    }

    throw ProblemError("unknown registry problem '" + name + "'");
}

std::vector<std::string> registry_names() {
    return {"exact1d", "heat1d", "kink1d", "twocontrol1d", "amerput1d", "degenerate2d"};
}

}  // namespace nbs
