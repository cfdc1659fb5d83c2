#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nbsolve/grid.hpp"
#include "nbsolve/problem.hpp"

namespace nbs {

class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConvergenceError : public SolverError {
public:
    ConvergenceError(const std::string& what, double last_residual)
        : SolverError(what), residual(last_residual) {}
    double residual;
};

enum class SolveMode { control, stopping_vi, stopping_control };

struct SolverConfig {
    double epsilon = 0.0;   // fixed-point step; 0 = derive from max_epsilon
    double gamma = 1.0;     // damping recursion parameter in (0,1]
    double tol = 1e-10;     // sup-norm distance to the per-level fixed point
    int max_iter = 10000;
    SolveMode mode = SolveMode::control;
    std::vector<double> r_grid;  // stopping intensities for stopping_control
    double safety = 0.9;         // fraction of the nonnegativity bound used for auto-epsilon
    int threads = 1;             // worker count for sweeps; 0 = hardware concurrency
};

/// Convex-combination weights of the fixed-point map at one control and one
/// sample point. Exposed for tests; the solver works with the same formulas
/// in its sweep kernel.
struct ContractionWeights {
    double p_tau = 0;
    std::vector<double> p_k;  // signed order +1,-1,+2,-2,...
    double p = 0;
    double eps = 0, gamma = 1, nu = 0;

    double sum() const;
};

ContractionWeights contraction_weights(const ControlledProblem& problem, int control_index,
                                       const LatticeGrid& grid, double eps, double gamma,
                                       double tau_level, double t, std::span<const double> x);

/// Largest step keeping every weight nonnegative at every grid sample, scaled
/// by `safety`: safety / sup m^a (gamma/tau + sum_k (2 a_k / h^2 + b_k / h) + nu + c).
double max_epsilon(const ControlledProblem& problem, const LatticeGrid& grid, double safety,
                   double gamma = 1.0);

struct LevelResult {
    std::vector<double> values;
    std::vector<std::int16_t> argmax;
    int iterations = 0;
    double observed_ratio = 0;
    double final_update = 0;
};

/// One backward step: solves for the level-j values given the known level j+1,
/// by Jacobi iteration of u <- u + eps * max_a m^a (delta_tau u + L_h u + f).
LevelResult fixed_point_level(const ControlledProblem& problem, const LatticeGrid& grid,
                              std::size_t j, std::span<const double> next_level,
                              const SolverConfig& config);

SolutionField solve(const ControlledProblem& problem, const LatticeGrid& grid,
                    const SolverConfig& config);

/// Obstacle form: per-level map u -> max(g, G[u]); the result satisfies the
/// complementarity system (u >= g, scheme <= 0, one of them tight).
SolutionField solve_stopping_vi(const ControlledProblem& problem, const LatticeGrid& grid,
                                const SolverConfig& config);

/// Randomized-stopping form: control set augmented with intensities r from
/// r_grid (f -> f + r g, c -> c + r, m -> min(m, 1/(1+r))), then a standard solve.
SolutionField solve_stopping_control(const ControlledProblem& problem, const LatticeGrid& grid,
                                     const std::vector<double>& r_grid, const SolverConfig& config);

/// The augmented problem used by solve_stopping_control.
ControlledProblem augment_with_stopping(const ControlledProblem& problem,
                                        const std::vector<double>& r_grid);

struct ResidualReport {
    double sup = 0;
    std::size_t level = 0;
    std::size_t point = 0;
};

/// Re-evaluates the scheme expression on the returned field. For stopping_vi
/// the complementarity residual |max(g - u, B)| is measured, B being the
/// scheme expression.
ResidualReport residual(const ControlledProblem& problem, const LatticeGrid& grid,
                        const SolutionField& field, SolveMode mode,
                        const std::vector<double>& r_grid = {});

}  // namespace nbs
