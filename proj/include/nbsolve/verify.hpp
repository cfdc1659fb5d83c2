#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbsolve/solver.hpp"

namespace nbs {

class VerifyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FitResult {
    double exponent = 0;
    double intercept = 0;
    double r2 = 0;
    int used = 0;
    std::vector<int> excluded;  // rungs dropped for zero/negative error
};

/// Ordinary least squares of log(error) against log(mesh).
/// Throws VerifyError when fewer than 3 usable pairs remain.
FitResult fit_rate(std::span<const std::pair<double, double>> mesh_error);

struct RateRung {
    double tau = 0, h = 0;
    double error = 0;
    double runtime_s = 0;
    bool exact = false;
};

struct RateReport {
    std::vector<RateRung> ladder;
    double p_tau = 0, p_h = 0;  // fitted exponents (p_tau from tau, p_h from h)
    double intercept = 0, r2 = 0;
    bool all_exact = false;
    std::string reference;
};

using Reference = std::function<double(double t, std::span<const double> x)>;

struct StudyConfig {
    std::vector<std::pair<double, double>> ladder;  // (tau, h), sorted by refinement
    std::function<LatticeGrid(double tau, double h)> make_grid;
    std::vector<std::vector<double>> probes;  // spatial probe points, measured at t = 0
    SolverConfig solver;
    SolveMode mode = SolveMode::control;
    std::string reference_description;
};

RateReport convergence_study(const ControlledProblem& problem, const Reference& reference,
                             const StudyConfig& config);

void write_rate_csv(const RateReport& report, const std::filesystem::path& path);
nlohmann::json rate_report_json(const RateReport& report);

// --- property suite ----------------------------------------------------------

struct PropertyResult {
    std::string name;
    bool passed = false;
    double margin = 0;   // slack to the bound; negative = violated
    std::string detail;
};

struct SuiteReport {
    std::vector<PropertyResult> results;
    bool all_passed() const;
};

struct SuiteConfig {
    SolverConfig solver;
    int threads = 1;
};

/// Runs the full property battery over the shipped registry problems:
/// validation, operator consistency, stencil monotonicity, boundedness,
/// comparison, contraction, Lipschitz/Holder regularity, continuous
/// dependence and the equivalence of the two stopping formulations.
/// Individual failures are collected, never aborting the suite.
SuiteReport property_suite(const SuiteConfig& config);

nlohmann::json suite_report_json(const SuiteReport& report);

}  // namespace nbs
