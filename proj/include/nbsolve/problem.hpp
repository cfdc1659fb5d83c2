#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nbsolve/expr.hpp"

namespace nbs {

class ProblemError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Coefficient evaluator (t,x) -> real. `time_invariant` lets the solver cache
/// per-level coefficient tables across time levels; evaluators must be pure.
struct Coeff {
    std::function<double(double, std::span<const double>)> fn;
    bool time_invariant = false;

    Coeff() = default;
    Coeff(double v) : fn([v](double, std::span<const double>) { return v; }), time_invariant(true) {}
    Coeff(std::function<double(double, std::span<const double>)> f, bool ti = false)
        : fn(std::move(f)), time_invariant(ti) {}
    static Coeff from_expr(Expr e);

    double operator()(double t, std::span<const double> x) const { return fn(t, x); }
};

/// Terminal reward evaluator x -> real.
struct Terminal {
    std::function<double(std::span<const double>)> fn;

    Terminal() = default;
    Terminal(double v) : fn([v](std::span<const double>) { return v; }) {}
    Terminal(std::function<double(std::span<const double>)> f) : fn(std::move(f)) {}
    static Terminal from_expr(Expr e);

    double operator()(std::span<const double> x) const { return fn(x); }
};

/// The lattice direction vectors. Positive indices 1..d1 are stored; the
/// negative directions are their exact negations (dir(-k) == -dir(k)).
class DirectionBasis {
public:
    DirectionBasis() = default;
    DirectionBasis(int d, std::vector<std::vector<double>> ell_positive);

    int d() const { return d_; }
    int d1() const { return d1_; }

    // Signed k in {±1..±d1}.
    std::span<const double> dir(int k) const;

    // |ell_k| (same for -k).
    double norm(int k) const;

private:
    int d_ = 0;
    int d1_ = 0;
    std::vector<std::vector<double>> dirs_;  // 2*d1 entries: +1,-1,+2,-2,...
    std::vector<double> norms_;
};

/// One point of the discretized control set: per-direction diffusion and
/// drift decomposition, discount, running reward and the normalizer m.
/// sigma has d1 entries (shared by +-k); b has 2*d1 entries ordered
/// +1,-1,+2,-2,...
struct ControlPoint {
    std::string label;
    std::vector<Coeff> sigma;
    std::vector<Coeff> b;
    Coeff c;
    Coeff f;
    double m = 1.0;

    const Coeff& b_signed(int k) const;
    const Coeff& sigma_signed(int k) const;  // sigma_k = sigma_{-k}
};

struct ControlledProblem {
    DirectionBasis basis;
    std::vector<ControlPoint> controls;
    Terminal g;
    double T = 1.0;
    double K = 1.0;
    double lambda = 0.0;

    int control_index(std::string_view label) const;  // throws ProblemError if unknown
    const ControlPoint& control(std::string_view label) const;
};

struct Violation {
    std::string assumption;  // e.g. "b-nonnegative", "m-normalization", "finite-eval"
    std::string control;     // empty for problem-level checks
    double t = 0.0;
    std::vector<double> x;
    double measured = 0.0;
    double required = 0.0;
};

struct ValidationReport {
    bool passed = true;
    std::vector<Violation> violations;
};

struct SamplingPlan {
    // (t, x) points at which per-control bounds are checked.
    std::vector<std::pair<double, std::vector<double>>> points;
    // (x, y) pairs for the Lipschitz difference quotients of g.
    std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
};

ValidationReport validate_problem(const ControlledProblem& problem, const SamplingPlan& plan);

/// Effective diffusion matrix a_ij = sum_k a_k l_k^i l_k^j (row-major d*d)
/// and drift beta_i = sum_k b_k l_k^i, summed over signed k.
struct Coefficients {
    std::vector<double> a;     // d*d, symmetric PSD
    std::vector<double> beta;  // d
};

Coefficients reconstruct_continuous_coefficients(const ControlledProblem& problem,
                                                 std::string_view control_label, double t,
                                                 std::span<const double> x);

std::string format_violation(const Violation& v);

}  // namespace nbs
