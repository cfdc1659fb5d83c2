#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nbsolve/mc.hpp"
#include "nbsolve/registry.hpp"
#include "nbsolve/solver.hpp"

using namespace nbs;

TEST_CASE("deterministic running reward integrates to T") {
    // sigma = beta = 0, c = 0, f = 1, g = 0: every path pays exactly T
    ControlledProblem prob = nbtest::simple1d(0.0, 0, 0, 0, 1.0, [](double) { return 0.0; });
    McEstimate est = simulate_payoff(prob, Policy::constant("only"), 0.0,
                                     std::vector<double>{0.0}, 0.01, 500, 1);
    CHECK(est.mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(est.se <= 1e-12);
    CHECK(est.paths == 500);
}

TEST_CASE("deterministic discount pays exp(-T)") {
    ControlledProblem prob = nbtest::simple1d(0.0, 0, 0, 1.0, 0.0, [](double) { return 1.0; });
    McEstimate est = simulate_payoff(prob, Policy::constant("only"), 0.0,
                                     std::vector<double>{0.0}, 0.001, 200, 1);
    CHECK(est.mean == doctest::Approx(std::exp(-1.0)).epsilon(1e-9));
    CHECK(est.se <= 1e-12);
}

TEST_CASE("estimates are reproducible across seeds and thread counts") {
    ControlledProblem prob =
        nbtest::simple1d(1.0, 0.2, 0, 0.1, 0.3, [](double x) { return std::cos(x); });
    Policy pol = Policy::constant("only");
    McEstimate a = simulate_payoff(prob, pol, 0.0, std::vector<double>{0.3}, 0.01, 2000, 42, 1);
    McEstimate b = simulate_payoff(prob, pol, 0.0, std::vector<double>{0.3}, 0.01, 2000, 42, 4);
    McEstimate c = simulate_payoff(prob, pol, 0.0, std::vector<double>{0.3}, 0.01, 2000, 42, 3);
    CHECK(a.mean == b.mean);
    CHECK(a.se == b.se);
    CHECK(a.mean == c.mean);
    McEstimate other = simulate_payoff(prob, pol, 0.0, std::vector<double>{0.3}, 0.01, 2000, 43, 1);
    CHECK(a.mean != other.mean);
}

TEST_CASE("increasing the discount cannot increase the payoff") {
    // f >= 0, g >= 0, common random numbers via the shared seed
    auto g = [](double x) { return 1.0 + 0.5 * std::cos(x); };
    ControlledProblem low = nbtest::simple1d(1.0, 0, 0, 0.1, 0.5, g);
    ControlledProblem high = nbtest::simple1d(1.0, 0, 0, 0.4, 0.5, g);
    McEstimate a = simulate_payoff(low, Policy::constant("only"), 0.0,
                                   std::vector<double>{0.0}, 0.01, 4000, 11);
    McEstimate b = simulate_payoff(high, Policy::constant("only"), 0.0,
                                   std::vector<double>{0.0}, 0.01, 4000, 11);
    CHECK(b.mean <= a.mean);
}

TEST_CASE("best_over_policies picks the better running reward") {
    ControlledProblem prob = nbtest::simple1d(1.0, 0, 0, 0, 0.0, [](double) { return 0.0; });
    ControlPoint better = prob.controls[0];
    better.label = "paying";
    better.f = Coeff(1.0);
    prob.controls.push_back(better);
    auto [name, est] = best_over_policies(
        prob, {Policy::constant("only"), Policy::constant("paying")}, 0.0,
        std::vector<double>{0.0}, 0.01, 1000, 5);
    CHECK(name == "paying");
    CHECK(est.mean == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("single policy equals simulate_payoff") {
    ControlledProblem prob = nbtest::simple1d(1.0, 0, 0, 0.2, 0.3, [](double x) { return std::cos(x); });
    Policy pol = Policy::constant("only");
    McEstimate direct = simulate_payoff(prob, pol, 0.0, std::vector<double>{0.0}, 0.01, 1000, 9);
    auto [name, est] = best_over_policies(prob, {pol}, 0.0, std::vector<double>{0.0}, 0.01, 1000, 9);
    CHECK(name == "only");
    CHECK(est.mean == direct.mean);
    CHECK(est.se == direct.se);
}

TEST_CASE("feedback policy follows the solved field") {
    RegistryEntry e = make_registry_problem("twocontrol1d", {{"h", 0.1}, {"tau", 0.01}});
    LatticeGrid grid = e.make_grid(0.01, 0.1);
    SolverConfig cfg;
    cfg.tol = 1e-10;
    SolutionField field = solve(e.problem, grid, cfg);
    Policy fb = Policy::from_field(field, e.problem);
    McEstimate est =
        simulate_payoff(e.problem, fb, 0.0, std::vector<double>{0.0}, 0.005, 4000, 3);
    // statistical lower bound must sit below the FD value plus tolerance
    double fd = field.value(0, grid.nearest_point(std::vector<double>{0.0}));
    CHECK(est.mean <= fd + 3 * est.se + 0.01);
    // and the feedback policy should do at least as well as both constants (CRN, same seed)
    for (const char* label : {"diffuse", "drift"}) {
        McEstimate cst = simulate_payoff(e.problem, Policy::constant(label), 0.0,
                                         std::vector<double>{0.0}, 0.005, 4000, 3);
        CHECK(est.mean >= cst.mean - 3 * (est.se + cst.se) - 0.01);
    }
}

TEST_CASE("mc oracle brackets the heat solution") {
    RegistryEntry e = make_registry_problem("heat1d");
    McEstimate est = simulate_payoff(e.problem, Policy::constant("only"), 0.0,
                                     std::vector<double>{0.0}, 0.001, 20000, 12345);
    CHECK(std::abs(est.mean - std::exp(-1.0)) <= 3 * est.se + 0.01);
}

TEST_CASE("randomized stopping check: immediate stopping optimal") {
    // f = -1, g = 1: stop at once; both formulations give 1
    ControlledProblem prob = nbtest::simple1d(1.0, 0, 0, 0, -1.0, [](double) { return 1.0; });
    RandomizedStoppingReport rep = randomized_stopping_check(
        prob, 0.0, std::vector<double>{0.0}, 1.0 / 16.0, 4000, {0, 1, 10, 100, 1000}, 21);
    CHECK(rep.stop_rule_max == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(rep.gap) <= 3 * (rep.stop_rule_se + rep.intensity_se) + 1.0 / 1001.0 + 1e-5);
}

TEST_CASE("randomized stopping check: never stopping optimal") {
    // g = 0, f = 1: both formulations give T - s
    ControlledProblem prob = nbtest::simple1d(1.0, 0, 0, 0, 1.0, [](double) { return 0.0; });
    RandomizedStoppingReport rep = randomized_stopping_check(
        prob, 0.0, std::vector<double>{0.0}, 1.0 / 16.0, 4000, {0, 1, 10, 100}, 21);
    CHECK(rep.stop_rule_max == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rep.best_intensity == 0.0);
    CHECK(std::abs(rep.gap) <= 3 * (rep.stop_rule_se + rep.intensity_se) + 1e-9);
}

TEST_CASE("invalid monte carlo inputs are rejected") {
    ControlledProblem prob = nbtest::simple1d(1.0, 0, 0, 0, 0, [](double) { return 0.0; });
    Policy pol = Policy::constant("only");
    CHECK_THROWS_AS(simulate_payoff(prob, pol, 0.0, std::vector<double>{0.0}, 0.01, 0, 1), McError);
    CHECK_THROWS_AS(simulate_payoff(prob, pol, 0.0, std::vector<double>{0.0}, -0.1, 10, 1), McError);
    CHECK_THROWS_AS(best_over_policies(prob, {}, 0.0, std::vector<double>{0.0}, 0.01, 10, 1),
                    McError);
    CHECK_THROWS_AS(randomized_stopping_check(prob, 0.0, std::vector<double>{0.0}, 0.001, 10,
                                              {0.0}, 1),
                    McError);  // > 32 steps
}
