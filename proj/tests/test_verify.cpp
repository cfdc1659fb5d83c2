#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "nbsolve/registry.hpp"
#include "nbsolve/verify.hpp"

using namespace nbs;

TEST_CASE("fit_rate recovers an exact quadratic decay") {
    std::vector<std::pair<double, double>> pairs = {
        {0.1, 0.01}, {0.05, 0.0025}, {0.025, 0.000625}};
    FitResult fit = fit_rate(pairs);
    CHECK(fit.exponent == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.used == 3);
    CHECK(fit.excluded.empty());
}

TEST_CASE("fit_rate on constant errors gives exponent 0") {
    std::vector<std::pair<double, double>> pairs = {
        {0.1, 0.5}, {0.05, 0.5}, {0.025, 0.5}, {0.0125, 0.5}};
    FitResult fit = fit_rate(pairs);
    CHECK(fit.exponent == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("fit_rate excludes zero-error rungs") {
    std::vector<std::pair<double, double>> pairs = {
        {0.2, 0.04}, {0.1, 0.01}, {0.05, 0.0025}, {0.025, 0.0}};
    FitResult fit = fit_rate(pairs);
    CHECK(fit.used == 3);
    REQUIRE(fit.excluded.size() == 1);
    CHECK(fit.excluded[0] == 3);
    CHECK(fit.exponent == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("fit_rate needs three usable rungs") {
    std::vector<std::pair<double, double>> two = {{0.1, 0.01}, {0.05, 0.0025}};
    CHECK_THROWS_AS(fit_rate(two), VerifyError);
    std::vector<std::pair<double, double>> zeros = {
        {0.1, 0.0}, {0.05, 0.0}, {0.025, 0.01}, {0.0125, 0.005}};
    CHECK_THROWS_AS(fit_rate(zeros), VerifyError);
}

TEST_CASE("convergence study on the smooth heat problem") {
    RegistryEntry e = make_registry_problem("heat1d");
    StudyConfig cfg;
    cfg.ladder = {{0.04, 0.2}, {0.01, 0.1}, {0.0025, 0.05}, {0.000625, 0.025}};
    cfg.make_grid = e.make_grid;
    cfg.probes = {{0.0}, {1.0}, {-1.0}};
    cfg.solver.tol = 1e-10;
    cfg.reference_description = "analytic";
    Reference ref = [](double t, std::span<const double> x) {
        return std::exp(-(1.0 - t)) * std::cos(x[0]);
    };
    RateReport report = convergence_study(e.problem, ref, cfg);
    REQUIRE(report.ladder.size() == 4);
    for (std::size_t i = 1; i < report.ladder.size(); ++i)
        CHECK(report.ladder[i].error < report.ladder[i - 1].error);
    CHECK(!report.all_exact);
    // smooth problem beats the worst-case 1/2 guarantee by a wide margin
    CHECK(report.p_h >= 1.5);
}

TEST_CASE("convergence study flags the exact problem") {
    RegistryEntry e = make_registry_problem("exact1d");
    StudyConfig cfg;
    cfg.ladder = {{0.1, 0.5}, {0.05, 0.25}, {0.025, 0.125}};
    cfg.make_grid = e.make_grid;
    cfg.probes = {{0.0}};
    cfg.solver.tol = 1e-10;
    RateReport report = convergence_study(e.problem, [](double t, std::span<const double>) {
        return 1.0 - t;
    }, cfg);
    CHECK(report.all_exact);
    for (const RateRung& r : report.ladder) {
        CHECK(r.exact);
        CHECK(r.error <= 10 * cfg.solver.tol);
    }
}

TEST_CASE("non-representable probes are a configuration error") {
    RegistryEntry e = make_registry_problem("heat1d");
    StudyConfig cfg;
    cfg.ladder = {{0.04, 0.2}, {0.01, 0.1}, {0.0025, 0.05}};
    cfg.make_grid = e.make_grid;
    cfg.probes = {{0.137}};  // not a lattice point at any rung
    cfg.solver.tol = 1e-8;
    CHECK_THROWS_AS(convergence_study(
                        e.problem,
                        [](double, std::span<const double>) { return 0.0; }, cfg),
                    VerifyError);
}

TEST_CASE("rate CSV has the documented columns") {
    RateReport report;
    report.ladder = {{0.04, 0.2, 0.01, 0.5, false}, {0.01, 0.1, 0.0025, 1.5, false}};
    std::filesystem::path path =
        std::filesystem::temp_directory_path() / "nbsolve_rate_test.csv";
    write_rate_csv(report, path);
    std::ifstream is(path);
    std::string header;
    std::getline(is, header);
    CHECK(header == "tau,h,error,runtime_s");
    std::string row;
    std::getline(is, row);
    CHECK(row.rfind("0.04", 0) == 0);
    CHECK(std::count(row.begin(), row.end(), ',') == 3);
    std::filesystem::remove(path);
}

TEST_CASE("reports serialize to JSON") {
    RateReport report;
    report.ladder = {{0.04, 0.2, 0.01, 0.5, false}};
    report.p_h = 2.0;
    report.reference = "analytic";
    nlohmann::json j = rate_report_json(report);
    CHECK(j["ladder"].size() == 1);
    CHECK(j["p_h"] == 2.0);
    CHECK(j["reference"] == "analytic");

    SuiteReport suite;
    suite.results.push_back({"boundedness", true, 0.5, "ok"});
    suite.results.push_back({"comparison", false, -0.1, "violated"});
    nlohmann::json sj = suite_report_json(suite);
    CHECK(sj["all_passed"] == false);
    CHECK(sj["tests"].size() == 2);
    CHECK(sj["tests"][0]["name"] == "boundedness");
    CHECK(sj["tests"][1]["passed"] == false);
}

TEST_CASE("the shipped registry passes the whole property suite") {
    SuiteConfig cfg;
    SuiteReport report = property_suite(cfg);
    for (const PropertyResult& r : report.results) {
        CAPTURE(r.name);
        CAPTURE(r.detail);
        CHECK(r.passed);
    }
    CHECK(report.all_passed());
    // suite composition: every family of checks present
    auto has = [&](const char* name) {
        for (const PropertyResult& r : report.results)
            if (r.name == name) return true;
        return false;
    };
    for (const char* name : {"validation", "consistency-order", "stencil-monotonicity",
                             "boundedness", "comparison", "contraction", "lipschitz-x",
                             "holder-t", "continuous-dependence", "vi-consistency", "residual"})
        CHECK(has(name));
}
