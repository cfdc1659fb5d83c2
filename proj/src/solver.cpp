#include "nbsolve/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "nbsolve/parallel.hpp"

namespace nbs {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Per-control coefficient tables at one time level. Axis-major layout:
// entry [ax * npts + p].
struct ControlTable {
    std::vector<double> ca;  // a_{+k} + a_{-k} per axis (= sigma_k^2)
    std::vector<double> bp;  // b_{+k}
    std::vector<double> bm;  // b_{-k}
    std::vector<double> c;
    std::vector<double> f;
    double m = 1.0;
};

struct LevelTables {
    std::vector<ControlTable> controls;
    double t = 0.0;
};

bool all_time_invariant(const ControlledProblem& problem) {
    for (const ControlPoint& ctl : problem.controls) {
        for (const Coeff& s : ctl.sigma)
            if (!s.time_invariant) return false;
        for (const Coeff& b : ctl.b)
            if (!b.time_invariant) return false;
        if (!ctl.c.time_invariant || !ctl.f.time_invariant) return false;
    }
    return true;
}

LevelTables build_tables(const ControlledProblem& problem, const LatticeGrid& grid, double t,
                         int threads) {
    const std::size_t npts = grid.num_points();
    const int d1 = grid.d1();
    LevelTables tab;
    tab.t = t;
    tab.controls.resize(problem.controls.size());
    for (std::size_t ci = 0; ci < problem.controls.size(); ++ci) {
        const ControlPoint& ctl = problem.controls[ci];
        ControlTable& ct = tab.controls[ci];
        ct.m = ctl.m;
        ct.ca.resize(static_cast<std::size_t>(d1) * npts);
        ct.bp.resize(static_cast<std::size_t>(d1) * npts);
        ct.bm.resize(static_cast<std::size_t>(d1) * npts);
        ct.c.resize(npts);
        ct.f.resize(npts);
        parallel_for(npts, threads, [&](std::size_t lo, std::size_t hi, std::size_t) {
            for (std::size_t p = lo; p < hi; ++p) {
                std::span<const double> x = grid.coord(p);
                for (int ax = 0; ax < d1; ++ax) {
                    double s = ctl.sigma[static_cast<std::size_t>(ax)](t, x);
                    ct.ca[static_cast<std::size_t>(ax) * npts + p] = s * s;
                    ct.bp[static_cast<std::size_t>(ax) * npts + p] = ctl.b_signed(ax + 1)(t, x);
                    ct.bm[static_cast<std::size_t>(ax) * npts + p] = ctl.b_signed(-(ax + 1))(t, x);
                }
                ct.c[p] = ctl.c(t, x);
                ct.f[p] = ctl.f(t, x);
            }
        });
    }
    return tab;
}

// sup over controls and interior points of
// m (gamma/tau_level + sum_k (2 a_k / h^2 + b_k / h) + nu + c).
double weight_sup(const LevelTables& tab, const LatticeGrid& grid, double tau_level, double gamma,
                  double nu) {
    const std::size_t npts = grid.num_points();
    const int d1 = grid.d1();
    const double inv_h2 = 1.0 / (grid.h() * grid.h());
    const double inv_h = 1.0 / grid.h();
    double sup = 0.0;
    for (const ControlTable& ct : tab.controls) {
        for (std::size_t p = 0; p < npts; ++p) {
            if (!grid.interior(p)) continue;
            double s = gamma / tau_level + nu + ct.c[p];
            for (int ax = 0; ax < d1; ++ax) {
                std::size_t o = static_cast<std::size_t>(ax) * npts + p;
                s += 2.0 * ct.ca[o] * inv_h2 + (ct.bp[o] + ct.bm[o]) * inv_h;
            }
            sup = std::max(sup, ct.m * s);
        }
    }
    return sup;
}

// Lipschitz bound of the per-level map: 1 - eps * inf m (gamma/tau + nu + c).
double level_delta_bound(const LevelTables& tab, const LatticeGrid& grid, double tau_level,
                         double gamma, double nu, double eps) {
    double worst = 0.0;  // worst (largest) Lipschitz constant over controls
    for (const ControlTable& ct : tab.controls) {
        double inf_mass = kInf;
        for (std::size_t p = 0; p < grid.num_points(); ++p) {
            if (!grid.interior(p)) continue;
            inf_mass = std::min(inf_mass, ct.m * (gamma / tau_level + nu + ct.c[p]));
        }
        if (inf_mass == kInf) inf_mass = 0.0;
        worst = std::max(worst, 1.0 - eps * inf_mass);
    }
    return worst;
}

struct SweepResult {
    double sup_update = 0.0;
    bool finite = true;
};

// One Jacobi sweep: writes unew and argmax for interior points, copies
// boundary values unchanged. Obstacle clamp applied when gvals is nonempty
// and clamp_g is set.
// Axis strides: neighbor(p, +-k) = p +- stride_k for interior p.
std::vector<std::size_t> axis_strides(const LatticeGrid& grid) {
    const std::size_t npts = grid.num_points();
    std::size_t probe = 0;
    while (probe < npts && !grid.interior(probe)) ++probe;
    if (probe == npts) throw SolverError("grid has no interior points");
    std::vector<std::size_t> stride(static_cast<std::size_t>(grid.d1()));
    for (int ax = 0; ax < grid.d1(); ++ax)
        stride[static_cast<std::size_t>(ax)] = grid.neighbor(probe, ax + 1) - probe;
    return stride;
}

SweepResult sweep(const LevelTables& tab, const LatticeGrid& grid,
                  std::span<const std::size_t> stride, std::span<const double> next_level,
                  std::span<const double> u, std::span<double> unew,
                  std::span<std::int16_t> argmax, double tau_level, double eps, bool clamp_g,
                  std::span<const double> gvals, int threads) {
    const std::size_t npts = grid.num_points();
    const int d1 = grid.d1();
    const double inv_h2 = 1.0 / (grid.h() * grid.h());
    const double inv_h = 1.0 / grid.h();
    const double inv_tau = 1.0 / tau_level;

    const int nthreads = effective_threads(threads);
    std::vector<SweepResult> partial(static_cast<std::size_t>(nthreads));

    parallel_for(npts, nthreads, [&](std::size_t lo, std::size_t hi, std::size_t chunk) {
        double local_sup = 0.0;
        bool local_finite = true;
        for (std::size_t p = lo; p < hi; ++p) {
            if (!grid.interior(p)) {
                unew[p] = u[p];
                continue;
            }
            double best = -kInf;
            std::int16_t best_i = 0;
            const double up0 = u[p];
            for (std::size_t ci = 0; ci < tab.controls.size(); ++ci) {
                const ControlTable& ct = tab.controls[ci];
                double lh = 0.0;
                for (int ax = 0; ax < d1; ++ax) {
                    const std::size_t o = static_cast<std::size_t>(ax) * npts + p;
                    const double uplus = u[p + stride[static_cast<std::size_t>(ax)]];
                    const double uminus = u[p - stride[static_cast<std::size_t>(ax)]];
                    lh += ct.ca[o] * (uplus - 2.0 * up0 + uminus) * inv_h2 +
                          ct.bp[o] * (uplus - up0) * inv_h + ct.bm[o] * (uminus - up0) * inv_h;
                }
                const double val =
                    ct.m * ((next_level[p] - up0) * inv_tau + lh - ct.c[p] * up0 + ct.f[p]);
                if (val > best) {
                    best = val;
                    best_i = static_cast<std::int16_t>(ci);
                }
            }
            double v = up0 + eps * best;
            if (clamp_g) v = std::max(gvals[p], v);
            unew[p] = v;
            argmax[p] = best_i;
            const double upd = std::abs(v - up0);
            if (upd > local_sup) local_sup = upd;
            if (!std::isfinite(v)) local_finite = false;
        }
        partial[chunk].sup_update = local_sup;
        partial[chunk].finite = local_finite;
    });

    SweepResult out;
    for (const SweepResult& r : partial) {
        out.sup_update = std::max(out.sup_update, r.sup_update);
        out.finite = out.finite && r.finite;
    }
    return out;
}

std::vector<double> terminal_values(const ControlledProblem& problem, const LatticeGrid& grid) {
    std::vector<double> g(grid.num_points());
    for (std::size_t p = 0; p < grid.num_points(); ++p) g[p] = problem.g(grid.coord(p));
    return g;
}

// Step size and contraction bound for one level; separated from the sweep so
// solve() can reuse them across levels with identical tables and tau.
struct LevelStep {
    double eps = 0;
    double delta = 0;
};

LevelStep level_step(const LevelTables& tab, const LatticeGrid& grid, double tau_level,
                     const SolverConfig& config) {
    if (config.gamma <= 0.0 || config.gamma > 1.0) throw SolverError("gamma must lie in (0, 1]");
    const double nu = (1.0 - config.gamma) / grid.tau();
    LevelStep st;
    st.eps = config.epsilon;
    if (st.eps <= 0.0) {
        double sup = weight_sup(tab, grid, tau_level, config.gamma, nu);
        if (sup <= 0.0)
            throw SolverError("all coefficients vanish; cannot derive a fixed-point step");
        st.eps = config.safety / sup;
    }
    st.delta = std::clamp(level_delta_bound(tab, grid, tau_level, config.gamma, nu, st.eps), 0.0,
                          1.0 - 1e-15);
    return st;
}

LevelResult run_level(const LatticeGrid& grid, const LevelTables& tab, std::size_t j,
                      std::span<const double> next_level, std::span<const double> gvals,
                      const SolverConfig& config, const LevelStep& step) {
    const double tau_level = grid.tau_T(j);
    const double eps = step.eps;
    const double delta_theory = step.delta;

    const std::size_t npts = grid.num_points();
    const bool clamp_g = config.mode == SolveMode::stopping_vi;
    // Thread spawns per sweep only pay off on large levels.
    const int sweep_threads = npts >= 16384 ? config.threads : 1;
    const std::vector<std::size_t> stride = axis_strides(grid);

    LevelResult res;
    res.values.assign(next_level.begin(), next_level.end());  // warm start
    for (std::size_t p = 0; p < npts; ++p)
        if (!grid.interior(p)) res.values[p] = gvals[p];
    res.argmax.assign(npts, 0);

    std::vector<double> unew(npts);
    double prev_update = -1.0;
    double ratio = delta_theory;
    double prev_ratio = delta_theory;

    for (int it = 1; it <= config.max_iter; ++it) {
        SweepResult sr = sweep(tab, grid, stride, next_level, res.values, unew, res.argmax,
                               tau_level, eps, clamp_g, gvals, sweep_threads);
        if (!sr.finite)
            throw ConvergenceError(
                "non-finite iterate at level " + std::to_string(j) +
                    "; a fixed-point weight is likely negative at an unsampled point, re-derive "
                    "epsilon with denser sampling",
                sr.sup_update);
        res.values.swap(unew);
        res.iterations = it;
        res.final_update = sr.sup_update;
        bool stagnated = prev_update > 0.0 && sr.sup_update >= prev_update;
        if (prev_update > 0.0) {
            prev_ratio = ratio;
            ratio = sr.sup_update / prev_update;
        }
        prev_update = sr.sup_update;

        // Banach a-posteriori stop: ||u_n - u*|| <= d/(1-d) ||u_n - u_{n-1}||.
        // The guaranteed Lipschitz bound caps the observed ratio, which drifts
        // toward 1 once updates are dominated by rounding noise.
        double d_hat =
            std::clamp(std::min(std::max(ratio, prev_ratio), delta_theory), 1e-6, 1.0 - 1e-12);
        res.observed_ratio = d_hat;
        bool distance_ok = sr.sup_update <= config.tol * (1.0 - d_hat) / d_hat;
        // Also drive the scheme residual itself below tol: the update equals
        // eps times the residual, so re-evaluation on the result stays <= tol.
        // A non-decreasing update with the distance met means the iterate sits
        // at the rounding floor and the residual is as small as representable.
        bool residual_ok = sr.sup_update <= eps * config.tol || stagnated;
        if (sr.sup_update == 0.0 || (distance_ok && residual_ok)) return res;
    }
    throw ConvergenceError("fixed point not reached within max_iter at level " + std::to_string(j),
                           res.final_update);
}

SolutionField solve_impl(const ControlledProblem& problem, const LatticeGrid& grid,
                         const SolverConfig& config) {
    auto grid_ptr = std::make_shared<const LatticeGrid>(grid);
    SolutionField field(grid_ptr);
    const std::size_t J = grid.num_levels();
    const std::size_t npts = grid.num_points();

    std::vector<double> gvals = terminal_values(problem, grid);
    for (double gv : gvals)
        if (!std::isfinite(gv)) throw SolverError("terminal reward evaluates to a non-finite value");

    // terminal level and lateral boundary carry g
    for (std::size_t p = 0; p < npts; ++p) field.value(J - 1, p) = gvals[p];
    field.policy().assign(J, std::vector<std::int16_t>(npts, 0));

    SolveDiagnostics& diag = field.diagnostics();
    diag.gamma = config.gamma;
    diag.epsilon = config.epsilon;
    diag.delta_bound = 0.0;
    diag.levels.resize(J - 1);

    const bool cache_tables = all_time_invariant(problem);
    LevelTables cached;
    if (cache_tables) cached = build_tables(problem, grid, grid.time(0), config.threads);
    LevelStep regular_step;
    bool have_regular_step = false;

    double min_eps = kInf;
    for (std::size_t jj = J - 1; jj-- > 0;) {
        const double t = grid.time(jj);
        const LevelTables& tab =
            cache_tables ? cached : (cached = build_tables(problem, grid, t, config.threads), cached);
        const double tau_level = grid.tau_T(jj);
        LevelStep step;
        if (cache_tables && tau_level == grid.tau()) {
            if (!have_regular_step) {
                regular_step = level_step(tab, grid, tau_level, config);
                have_regular_step = true;
            }
            step = regular_step;
        } else {
            step = level_step(tab, grid, tau_level, config);
        }
        LevelResult lr = run_level(grid, tab, jj, field.level(jj + 1), gvals, config, step);
        std::copy(lr.values.begin(), lr.values.end(), field.level(jj).begin());
        field.policy()[jj] = std::move(lr.argmax);
        diag.levels[jj] = {t, lr.iterations, lr.final_update, lr.observed_ratio};
        diag.delta_bound = std::max(diag.delta_bound, step.delta);
        min_eps = std::min(min_eps, step.eps);
    }
    if (config.epsilon <= 0.0) diag.epsilon = (J > 1 ? min_eps : 0.0);
    return field;
}

}  // namespace

double ContractionWeights::sum() const {
    double s = p_tau + p;
    for (double v : p_k) s += v;
    return s;
}

ContractionWeights contraction_weights(const ControlledProblem& problem, int control_index,
                                       const LatticeGrid& grid, double eps, double gamma,
                                       double tau_level, double t, std::span<const double> x) {
    const ControlPoint& ctl = problem.controls[static_cast<std::size_t>(control_index)];
    const int d1 = grid.d1();
    const double h = grid.h();
    ContractionWeights w;
    w.eps = eps;
    w.gamma = gamma;
    w.nu = (1.0 - gamma) / grid.tau();
    w.p_tau = eps * gamma * ctl.m / tau_level;
    w.p_k.reserve(2 * static_cast<std::size_t>(d1));
    double sum_k = 0.0;
    for (int ax = 1; ax <= d1; ++ax) {
        for (int sign : {+1, -1}) {
            int k = sign * ax;
            double s = ctl.sigma_signed(k)(t, x);
            double ak = 0.5 * s * s;
            double bk = ctl.b_signed(k)(t, x);
            double pk = eps * (2.0 * ak / (h * h) + bk / h) * ctl.m;
            w.p_k.push_back(pk);
            sum_k += pk;
        }
    }
    double c = ctl.c(t, x);
    w.p = 1.0 - w.p_tau - sum_k - eps * w.nu * ctl.m - eps * ctl.m * c;
    return w;
}

double max_epsilon(const ControlledProblem& problem, const LatticeGrid& grid, double safety,
                   double gamma) {
    if (safety <= 0.0 || safety > 1.0) throw SolverError("safety must lie in (0, 1]");
    const double nu = (1.0 - gamma) / grid.tau();
    double sup = 0.0;
    const bool ti = all_time_invariant(problem);
    LevelTables tab;
    for (std::size_t j = 0; j + 1 < grid.num_levels(); ++j) {
        if (j == 0 || !ti) tab = build_tables(problem, grid, grid.time(j), 1);
        sup = std::max(sup, weight_sup(tab, grid, grid.tau_T(j), gamma, nu));
    }
    if (sup <= 0.0)
        throw SolverError("all coefficients vanish; the nonnegativity bound is unbounded");
    return safety / sup;
}

LevelResult fixed_point_level(const ControlledProblem& problem, const LatticeGrid& grid,
                              std::size_t j, std::span<const double> next_level,
                              const SolverConfig& config) {
    if (j + 1 >= grid.num_levels()) throw SolverError("no level above j to step from");
    for (double v : next_level)
        if (!std::isfinite(v)) throw SolverError("next-level values must be finite");
    LevelTables tab = build_tables(problem, grid, grid.time(j), config.threads);
    std::vector<double> gvals = terminal_values(problem, grid);
    LevelStep step = level_step(tab, grid, grid.tau_T(j), config);
    return run_level(grid, tab, j, next_level, gvals, config, step);
}

SolutionField solve(const ControlledProblem& problem, const LatticeGrid& grid,
                    const SolverConfig& config) {
    SolverConfig cfg = config;
    cfg.mode = SolveMode::control;
    return solve_impl(problem, grid, cfg);
}

SolutionField solve_stopping_vi(const ControlledProblem& problem, const LatticeGrid& grid,
                                const SolverConfig& config) {
    SolverConfig cfg = config;
    cfg.mode = SolveMode::stopping_vi;
    return solve_impl(problem, grid, cfg);
}

ControlledProblem augment_with_stopping(const ControlledProblem& problem,
                                        const std::vector<double>& r_grid) {
    if (r_grid.empty() || r_grid.front() != 0.0)
        throw SolverError("r_grid must be a nonnegative increasing list containing 0");
    for (std::size_t i = 0; i < r_grid.size(); ++i) {
        if (!std::isfinite(r_grid[i]) || r_grid[i] < 0.0 ||
            (i > 0 && r_grid[i] <= r_grid[i - 1]))
            throw SolverError("r_grid must be a nonnegative increasing list containing 0");
    }
    ControlledProblem aug = problem;
    aug.controls.clear();
    for (const ControlPoint& ctl : problem.controls) {
        for (double r : r_grid) {
            ControlPoint a = ctl;
            std::ostringstream label;
            label << ctl.label << "|r=" << r;
            a.label = label.str();
            a.m = std::min(ctl.m, 1.0 / (1.0 + r));
            if (r > 0.0) {
                auto cfn = ctl.c;
                a.c = Coeff([cfn, r](double t, std::span<const double> x) { return cfn(t, x) + r; },
                            cfn.time_invariant);
                auto ffn = ctl.f;
                auto g = problem.g;
                a.f = Coeff([ffn, g, r](double t, std::span<const double> x) {
                                return ffn(t, x) + r * g(x);
                            },
                            ffn.time_invariant);
            }
            aug.controls.push_back(std::move(a));
        }
    }
    return aug;
}

SolutionField solve_stopping_control(const ControlledProblem& problem, const LatticeGrid& grid,
                                     const std::vector<double>& r_grid,
                                     const SolverConfig& config) {
    ControlledProblem aug = augment_with_stopping(problem, r_grid);
    SolverConfig cfg = config;
    cfg.mode = SolveMode::control;
    return solve_impl(aug, grid, cfg);
}

ResidualReport residual(const ControlledProblem& problem, const LatticeGrid& grid,
                        const SolutionField& field, SolveMode mode,
                        const std::vector<double>& r_grid) {
    if (mode == SolveMode::stopping_control) {
        ControlledProblem aug = augment_with_stopping(problem, r_grid);
        return residual(aug, grid, field, SolveMode::control);
    }
    if (field.grid().num_levels() != grid.num_levels() ||
        field.grid().num_points() != grid.num_points())
        throw SolverError("field dimensions do not match the grid");

    ResidualReport rep;
    for (std::size_t j = 0; j + 1 < grid.num_levels(); ++j) {
        const double t = grid.time(j);
        for (std::size_t p = 0; p < grid.num_points(); ++p) {
            if (!grid.interior(p)) continue;
            double dtau = delta_tau(field, j, p);
            double best = -kInf;
            for (std::size_t ci = 0; ci < problem.controls.size(); ++ci) {
                const ControlPoint& ctl = problem.controls[ci];
                double val = ctl.m * (dtau +
                                      apply_Lh(problem, static_cast<int>(ci), grid, field.level(j),
                                               t, p) +
                                      ctl.f(t, grid.coord(p)));
                best = std::max(best, val);
            }
            double r;
            if (mode == SolveMode::stopping_vi) {
                double gv = problem.g(grid.coord(p));
                r = std::abs(std::max(gv - field.value(j, p), best));
            } else {
                r = std::abs(best);
            }
            if (r > rep.sup) {
                rep.sup = r;
                rep.level = j;
                rep.point = p;
            }
        }
    }
    return rep;
}

}  // namespace nbs
