#include "nbsolve/problem.hpp"

#include <cmath>
#include <sstream>

namespace nbs {

Coeff Coeff::from_expr(Expr e) {
    bool ti = !e.depends_on_t();
    auto shared = std::make_shared<Expr>(std::move(e));
    return Coeff([shared](double t, std::span<const double> x) { return shared->eval(t, x); }, ti);
}

Terminal Terminal::from_expr(Expr e) {
    auto shared = std::make_shared<Expr>(std::move(e));
    return Terminal([shared](std::span<const double> x) { return shared->eval(0.0, x); });
}

DirectionBasis::DirectionBasis(int d, std::vector<std::vector<double>> ell_positive)
    : d_(d), d1_(static_cast<int>(ell_positive.size())) {
    if (d_ <= 0) throw ProblemError("spatial dimension must be positive");
    if (d1_ <= 0) throw ProblemError("at least one direction pair is required");
    dirs_.reserve(2 * static_cast<std::size_t>(d1_));
    for (const auto& ell : ell_positive) {
        if (static_cast<int>(ell.size()) != d_)
            throw ProblemError("direction vector has wrong dimension");
        std::vector<double> neg(ell.size());
        for (std::size_t i = 0; i < ell.size(); ++i) neg[i] = -ell[i];
        dirs_.push_back(ell);
        dirs_.push_back(std::move(neg));
    }
    norms_.resize(static_cast<std::size_t>(d1_));
    for (int k = 1; k <= d1_; ++k) {
        double s = 0.0;
        for (double v : dir(k)) s += v * v;
        norms_[static_cast<std::size_t>(k - 1)] = std::sqrt(s);
    }
}

std::span<const double> DirectionBasis::dir(int k) const {
    if (k == 0 || k > d1_ || k < -d1_) throw ProblemError("direction index out of range");
    std::size_t axis = static_cast<std::size_t>(std::abs(k) - 1);
    return dirs_[2 * axis + (k > 0 ? 0 : 1)];
}

double DirectionBasis::norm(int k) const {
    if (k == 0 || k > d1_ || k < -d1_) throw ProblemError("direction index out of range");
    return norms_[static_cast<std::size_t>(std::abs(k) - 1)];
}

const Coeff& ControlPoint::b_signed(int k) const {
    std::size_t axis = static_cast<std::size_t>(std::abs(k) - 1);
    return b[2 * axis + (k > 0 ? 0 : 1)];
}

const Coeff& ControlPoint::sigma_signed(int k) const {
    return sigma[static_cast<std::size_t>(std::abs(k) - 1)];
}

int ControlledProblem::control_index(std::string_view label) const {
    for (std::size_t i = 0; i < controls.size(); ++i)
        if (controls[i].label == label) return static_cast<int>(i);
    throw ProblemError("unknown control label '" + std::string(label) + "'");
}

const ControlPoint& ControlledProblem::control(std::string_view label) const {
    return controls[static_cast<std::size_t>(control_index(label))];
}

namespace {

struct Checker {
    ValidationReport& report;

    void violation(std::string assumption, std::string control, double t,
                   std::span<const double> x, double measured, double required) {
        report.violations.push_back(
            {std::move(assumption), std::move(control), t, std::vector<double>(x.begin(), x.end()),
             measured, required});
    }

    // Returns the value, recording a "finite-eval" violation if it is not finite.
    // Non-finite values are reported once and then treated as 0 so that later
    // checks do not cascade.
    double checked(double v, const std::string& ctl, const char* what, double t,
                   std::span<const double> x) {
        if (!std::isfinite(v)) {
            violation(std::string("finite-eval:") + what, ctl, t, x, v, 0.0);
            return 0.0;
        }
        return v;
    }
};

double dist(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return std::sqrt(s);
}

}  // namespace

ValidationReport validate_problem(const ControlledProblem& problem, const SamplingPlan& plan) {
    ValidationReport report;
    Checker chk{report};

    if (problem.controls.empty())
        chk.violation("controls-nonempty", "", 0.0, {}, 0.0, 1.0);
    if (!(problem.T > 0.0)) chk.violation("T-positive", "", 0.0, {}, problem.T, 0.0);
    if (!(problem.K >= 1.0)) chk.violation("K-geq-1", "", 0.0, {}, problem.K, 1.0);
    if (!(problem.lambda >= 0.0)) chk.violation("lambda-nonnegative", "", 0.0, {}, problem.lambda, 0.0);

    const double K = problem.K;
    const int d1 = problem.basis.d1();

    for (int k = 1; k <= d1; ++k) {
        double n = problem.basis.norm(k);
        if (!(n <= K))
            chk.violation("direction-norm", "", 0.0, problem.basis.dir(k), n, K);
    }

    for (const ControlPoint& ctl : problem.controls) {
        if (!(ctl.m > 0.0)) chk.violation("m-positive", ctl.label, 0.0, {}, ctl.m, 0.0);
        if (static_cast<int>(ctl.sigma.size()) != d1)
            chk.violation("sigma-count", ctl.label, 0.0, {}, double(ctl.sigma.size()), double(d1));
        if (static_cast<int>(ctl.b.size()) != 2 * d1)
            chk.violation("b-count", ctl.label, 0.0, {}, double(ctl.b.size()), double(2 * d1));
    }
    if (!report.violations.empty()) {
        report.passed = false;
        return report;  // structural problems; pointwise checks would be meaningless
    }

    for (const ControlPoint& ctl : problem.controls) {
        for (const auto& [t, x] : plan.points) {
            double c = chk.checked(ctl.c(t, x), ctl.label, "c", t, x);
            double f = chk.checked(ctl.f(t, x), ctl.label, "f", t, x);
            double mc = ctl.m * (1.0 + c);
            if (!(mc >= 1.0 / K - 1e-15))
                chk.violation("m-normalization", ctl.label, t, x, mc, 1.0 / K);
            if (!(c >= problem.lambda - 1e-15))
                chk.violation("c-geq-lambda", ctl.label, t, x, c, problem.lambda);
            for (int k = -d1; k <= d1; ++k) {
                if (k == 0) continue;
                double s = chk.checked(ctl.sigma_signed(k)(t, x), ctl.label, "sigma", t, x);
                double bk = chk.checked(ctl.b_signed(k)(t, x), ctl.label, "b", t, x);
                if (!(bk >= 0.0)) chk.violation("b-nonnegative", ctl.label, t, x, bk, 0.0);
                double bound = std::abs(s) + bk + ctl.m * std::abs(f) + ctl.m * c;
                if (!(bound <= K + 1e-12))
                    chk.violation("coefficient-bound", ctl.label, t, x, bound, K);
            }
        }
    }

    for (const auto& [t, x] : plan.points) {
        double gv = chk.checked(problem.g(x), "", "g", t, x);
        if (!(std::abs(gv) <= K + 1e-12))
            chk.violation("g-bound", "", t, x, std::abs(gv), K);
    }
    for (const auto& [x, y] : plan.pairs) {
        double r = dist(x, y);
        if (r == 0.0) continue;
        double gx = chk.checked(problem.g(x), "", "g", 0.0, x);
        double gy = chk.checked(problem.g(y), "", "g", 0.0, y);
        double q = std::abs(gx - gy) / r;
        if (!(q <= K + 1e-9))
            chk.violation("g-lipschitz", "", 0.0, x, q, K);
    }

    report.passed = report.violations.empty();
    return report;
}

Coefficients reconstruct_continuous_coefficients(const ControlledProblem& problem,
                                                 std::string_view control_label, double t,
                                                 std::span<const double> x) {
    const ControlPoint& ctl = problem.control(control_label);
    const DirectionBasis& basis = problem.basis;
    const int d = basis.d();
    const int d1 = basis.d1();

    Coefficients out;
    out.a.assign(static_cast<std::size_t>(d) * d, 0.0);
    out.beta.assign(static_cast<std::size_t>(d), 0.0);

    for (int k = -d1; k <= d1; ++k) {
        if (k == 0) continue;
        std::span<const double> ell = basis.dir(k);
        double s = ctl.sigma_signed(k)(t, x);
        double ak = 0.5 * s * s;
        double bk = ctl.b_signed(k)(t, x);
        for (int i = 0; i < d; ++i) {
            out.beta[static_cast<std::size_t>(i)] += bk * ell[static_cast<std::size_t>(i)];
            for (int j = 0; j < d; ++j)
                out.a[static_cast<std::size_t>(i * d + j)] +=
                    ak * ell[static_cast<std::size_t>(i)] * ell[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

std::string format_violation(const Violation& v) {
    std::ostringstream os;
    os << v.assumption;
    if (!v.control.empty()) os << " [control " << v.control << "]";
    os << " at t=" << v.t << " x=(";
    for (std::size_t i = 0; i < v.x.size(); ++i) os << (i ? "," : "") << v.x[i];
    os << "): measured " << v.measured << ", required bound " << v.required;
    return os.str();
}

}  // namespace nbs
