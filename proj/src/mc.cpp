#include "nbsolve/mc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "nbsolve/parallel.hpp"

namespace nbs {

namespace {

// Per-path RNG stream keyed by (seed, path index): splitmix64 over a state
// derived from both, so streams are independent of worker count and of how
// many draws other paths consume.
struct PathRng {
    std::uint64_t state;
    bool have_spare = false;
    double spare = 0.0;

    PathRng(std::uint64_t seed, std::uint64_t path) {
        // full avalanche of the combined key; without it nearby path indices
        // start on the same increment orbit and their streams overlap shifted
        // by one draw, correlating the paths
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (2 * path + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        state = z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in (0, 1]
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    double next_normal() {
        if (have_spare) {
            have_spare = false;
            return spare;
        }
        double u1 = next_uniform();
        double u2 = next_uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare = r * std::sin(a);
        have_spare = true;
        return r * std::cos(a);
    }
};

// Symmetric square root of a PSD matrix by cyclic Jacobi rotations.
// A is d*d row-major; overwritten with sqrt(A).
void sym_sqrt(int d, std::vector<double>& A) {
    if (d == 1) {
        if (A[0] < -1e-12) throw McError("reconstructed diffusion matrix is not PSD");
        A[0] = std::sqrt(std::max(0.0, A[0]));
        return;
    }
    const std::size_t n = static_cast<std::size_t>(d);
    std::vector<double> V(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) V[i * n + i] = 1.0;
    std::vector<double> M = A;

    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += M[p * n + q] * M[p * n + q];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = M[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                double app = M[p * n + p], aqq = M[q * n + q];
                double theta = 0.5 * (aqq - app) / apq;
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    double mip = M[i * n + p], miq = M[i * n + q];
                    M[i * n + p] = c * mip - s * miq;
                    M[i * n + q] = s * mip + c * miq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double mpi = M[p * n + i], mqi = M[q * n + i];
                    M[p * n + i] = c * mpi - s * mqi;
                    M[q * n + i] = s * mpi + c * mqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double vip = V[i * n + p], viq = V[i * n + q];
                    V[i * n + p] = c * vip - s * viq;
                    V[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    std::vector<double> lam(n);
    for (std::size_t i = 0; i < n; ++i) {
        double l = M[i * n + i];
        if (l < -1e-9) throw McError("reconstructed diffusion matrix is not PSD");
        lam[i] = std::sqrt(std::max(0.0, l));
    }
    // sqrt(A) = V sqrt(Lambda) V^T
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += V[i * n + k] * lam[k] * V[j * n + k];
            A[i * n + j] = s;
        }
}

McEstimate reduce(std::vector<double>& payoffs, double dt, std::uint64_t seed,
                  const std::string& name) {
    McEstimate est;
    est.paths = static_cast<long>(payoffs.size());
    est.dt = dt;
    est.seed = seed;
    est.policy = name;
    double sum = 0.0;
    for (double v : payoffs) sum += v;
    est.mean = sum / static_cast<double>(payoffs.size());
    double ss = 0.0;
    for (double v : payoffs) ss += (v - est.mean) * (v - est.mean);
    est.se = payoffs.size() > 1
                 ? std::sqrt(ss / static_cast<double>(payoffs.size() - 1)) /
                       std::sqrt(static_cast<double>(payoffs.size()))
                 : 0.0;
    return est;
}

struct StepPlan {
    long n_steps = 0;
    double dt = 0;
    double last_dt = 0;
};

StepPlan plan_steps(double horizon, double dt) {
    if (horizon < 0) throw McError("start time beyond the horizon");
    StepPlan plan;
    plan.dt = dt;
    if (horizon == 0) return plan;
    plan.n_steps = static_cast<long>(std::ceil(horizon / dt - 1e-9));
    plan.last_dt = horizon - static_cast<double>(plan.n_steps - 1) * dt;
    return plan;
}

}  // namespace

int FeedbackTable::lookup(double t, std::span<const double> x) const {
    std::span<const double> times = grid->times();
    auto it = std::upper_bound(times.begin(), times.end(), t + 1e-12);
    std::size_t j = it == times.begin() ? 0 : static_cast<std::size_t>(it - times.begin() - 1);
    if (j >= control_index.size()) j = control_index.size() - 1;
    std::size_t p = grid->nearest_point(x);
    return control_index[j][p];
}

Policy Policy::constant(std::string control_label) {
    Policy pol;
    pol.name = control_label;
    pol.constant_control = std::move(control_label);
    return pol;
}

Policy Policy::from_field(const SolutionField& field, const ControlledProblem& problem) {
    Policy pol;
    pol.name = "feedback";
    pol.constant_control = problem.controls.front().label;
    FeedbackTable tab;
    tab.grid = field.grid_ptr();
    tab.control_index = field.policy();
    pol.feedback = std::move(tab);
    return pol;
}

McEstimate simulate_payoff(const ControlledProblem& problem, const Policy& policy, double s,
                           std::span<const double> x0, double dt, long n_paths,
                           std::uint64_t seed, int threads) {
    if (n_paths <= 0) throw McError("path count must be positive");
    if (dt <= 0) throw McError("dt must be positive");
    const int d = problem.basis.d();
    const StepPlan plan = plan_steps(problem.T - s, dt);

    int fixed_control = -1;
    if (!policy.feedback) fixed_control = problem.control_index(policy.constant_control);
    if (policy.stop == Policy::StopKind::region && !policy.stop_region)
        throw McError("region policy without a stop_region indicator");
    if (policy.stop == Policy::StopKind::intensity && !policy.stop_intensity)
        throw McError("intensity policy without an intensity evaluator");

    std::vector<double> payoffs(static_cast<std::size_t>(n_paths));
    std::vector<double> start(x0.begin(), x0.end());

    parallel_for(static_cast<std::size_t>(n_paths), threads,
                 [&](std::size_t lo, std::size_t hi, std::size_t) {
        std::vector<double> x(static_cast<std::size_t>(d));
        std::vector<double> xi(static_cast<std::size_t>(d));
        std::vector<double> root;
        for (std::size_t path = lo; path < hi; ++path) {
            PathRng rng(seed, path);
            x = start;
            double t = s;
            double disc = 1.0;      // exp(-integral of c)
            double acc = 0.0;       // accumulated running reward
            double surv = 1.0;      // exp(-integral of r)
            bool stopped = false;

            for (long i = 0; i < plan.n_steps; ++i) {
                const double step_dt = (i + 1 == plan.n_steps) ? plan.last_dt : plan.dt;
                const int ci = policy.feedback ? policy.feedback->lookup(t, x) : fixed_control;
                const ControlPoint& ctl = problem.controls[static_cast<std::size_t>(ci)];

                if (policy.stop == Policy::StopKind::region && policy.stop_region(t, x)) {
                    acc += problem.g(x) * disc;
                    stopped = true;
                    break;
                }

                const double fv = ctl.f(t, x);
                const double cv = ctl.c(t, x);
                if (policy.stop == Policy::StopKind::intensity) {
                    const double r = policy.stop_intensity(t, x);
                    if (!(r >= 0.0) || !std::isfinite(r))
                        throw McError("stopping intensity must be finite and nonnegative");
                    const double decay = std::exp(-r * step_dt);
                    const double surv_next = surv * decay;
                    // integral of e^{-r(u - t_i)} over the step, exact for r large
                    const double w = r > 0.0 ? (1.0 - decay) / r : step_dt;
                    acc += fv * disc * surv * w;
                    acc += problem.g(x) * disc * (surv - surv_next);
                    surv = surv_next;
                } else if (fv != 0.0) {
                    acc += fv * disc * step_dt;
                }
                if (cv != 0.0) disc *= std::exp(-cv * step_dt);

                const double sq = std::sqrt(step_dt);
                if (d == 1) {
                    // allocation-free scalar path
                    double a = 0.0, beta = 0.0;
                    const int d1 = problem.basis.d1();
                    for (int k = -d1; k <= d1; ++k) {
                        if (k == 0) continue;
                        double ell = problem.basis.dir(k)[0];
                        double sg = ctl.sigma_signed(k)(t, x);
                        a += 0.5 * sg * sg * ell * ell;
                        beta += ctl.b_signed(k)(t, x) * ell;
                    }
                    x[0] += beta * step_dt + std::sqrt(2.0 * a) * rng.next_normal() * sq;
                } else {
                    Coefficients co = reconstruct_continuous_coefficients(problem, ctl.label, t, x);
                    root = co.a;
                    for (double& v : root) v *= 2.0;
                    sym_sqrt(d, root);
                    for (int ii = 0; ii < d; ++ii)
                        xi[static_cast<std::size_t>(ii)] = rng.next_normal();
                    for (int ii = 0; ii < d; ++ii) {
                        double dx = co.beta[static_cast<std::size_t>(ii)] * step_dt;
                        for (int jj = 0; jj < d; ++jj)
                            dx += root[static_cast<std::size_t>(ii * d + jj)] *
                                  xi[static_cast<std::size_t>(jj)] * sq;
                        x[static_cast<std::size_t>(ii)] += dx;
                    }
                }
                t += step_dt;
                for (double v : x)
                    if (!std::isfinite(v))
                        throw McError("non-finite path value at path " + std::to_string(path));
            }
            if (!stopped) {
                if (policy.stop == Policy::StopKind::region && policy.stop_region(t, x)) {
                    acc += problem.g(x) * disc;
                } else {
                    acc += problem.g(x) * disc * surv;
                }
            }
            payoffs[path] = acc;
        }
    });

    return reduce(payoffs, dt, seed, policy.name);
}

std::pair<std::string, McEstimate> best_over_policies(const ControlledProblem& problem,
                                                      const std::vector<Policy>& policies,
                                                      double s, std::span<const double> x,
                                                      double dt, long n_paths,
                                                      std::uint64_t seed, int threads) {
    if (policies.empty()) throw McError("policy list must be nonempty");
    McEstimate best;
    std::string best_name;
    bool first = true;
    for (const Policy& pol : policies) {
        McEstimate est = simulate_payoff(problem, pol, s, x, dt, n_paths, seed, threads);
        if (first || est.mean > best.mean) {
            best = est;
            best_name = pol.name;
            first = false;
        }
    }
    return {best_name, best};
}

RandomizedStoppingReport randomized_stopping_check(const ControlledProblem& problem, double s,
                                                   std::span<const double> x0, double dt,
                                                   long n_paths,
                                                   const std::vector<double>& r_levels,
                                                   std::uint64_t seed, int threads) {
    (void)threads;
    if (problem.basis.d() != 1) throw McError("randomized stopping check requires d = 1");
    if (problem.controls.size() != 1)
        throw McError("randomized stopping check requires a single control");
    const StepPlan plan = plan_steps(problem.T - s, dt);
    if (plan.n_steps > 32) throw McError("randomized stopping check requires <= 32 time steps");
    if (n_paths <= 0) throw McError("path count must be positive");
    const ControlPoint& ctl = problem.controls.front();
    const long n = plan.n_steps;

    // threshold grid from a presample of reward values
    double gmin = std::numeric_limits<double>::infinity(), gmax = -gmin;
    {
        std::vector<double> x(1);
        for (long path = 0; path < std::min<long>(n_paths, 200); ++path) {
            PathRng rng(seed, static_cast<std::uint64_t>(path));
            x[0] = x0[0];
            double t = s;
            for (long i = 0; i <= n; ++i) {
                double gv = problem.g(x);
                gmin = std::min(gmin, gv);
                gmax = std::max(gmax, gv);
                if (i == n) break;
                double step_dt = (i + 1 == n) ? plan.last_dt : plan.dt;
                Coefficients co = reconstruct_continuous_coefficients(problem, ctl.label, t, x);
                double sig = std::sqrt(std::max(0.0, 2.0 * co.a[0]));
                x[0] += co.beta[0] * step_dt + sig * std::sqrt(step_dt) * rng.next_normal();
                t += step_dt;
            }
        }
    }
    const int n_theta = 21;
    std::vector<double> thetas(n_theta);
    for (int i = 0; i < n_theta; ++i)
        thetas[i] = gmin + (gmax - gmin) * static_cast<double>(i) / (n_theta - 1);

    const std::size_t n_det = static_cast<std::size_t>(n + 1);
    const std::size_t n_rules = n_det + thetas.size();
    std::vector<std::vector<double>> rule_payoffs(n_rules,
                                                  std::vector<double>(static_cast<std::size_t>(n_paths)));
    std::vector<std::vector<double>> intensity_payoffs(
        r_levels.size(), std::vector<double>(static_cast<std::size_t>(n_paths)));

    std::vector<double> gs(static_cast<std::size_t>(n + 1));
    std::vector<double> phis(static_cast<std::size_t>(n + 1));
    std::vector<double> F(static_cast<std::size_t>(n + 1));   // running-reward integral up to step m
    std::vector<double> ts(static_cast<std::size_t>(n + 1));
    std::vector<double> x(1);

    for (long path = 0; path < n_paths; ++path) {
        PathRng rng(seed, static_cast<std::uint64_t>(path));
        x[0] = x0[0];
        double t = s, phi = 0.0, Facc = 0.0;
        for (long i = 0; i <= n; ++i) {
            std::size_t ii = static_cast<std::size_t>(i);
            gs[ii] = problem.g(x);
            phis[ii] = phi;
            F[ii] = Facc;
            ts[ii] = t - s;
            if (i == n) break;
            double step_dt = (i + 1 == n) ? plan.last_dt : plan.dt;
            Facc += ctl.f(t, x) * std::exp(-phi) * step_dt;
            phi += ctl.c(t, x) * step_dt;
            Coefficients co = reconstruct_continuous_coefficients(problem, ctl.label, t, x);
            double sig = std::sqrt(std::max(0.0, 2.0 * co.a[0]));
            x[0] += co.beta[0] * step_dt + sig * std::sqrt(step_dt) * rng.next_normal();
            t += step_dt;
        }

        auto stop_value = [&](std::size_t m) { return F[m] + gs[m] * std::exp(-phis[m]); };

        for (std::size_t m = 0; m < n_det; ++m)
            rule_payoffs[m][static_cast<std::size_t>(path)] = stop_value(m);
        for (std::size_t j = 0; j < thetas.size(); ++j) {
            std::size_t m = static_cast<std::size_t>(n);
            for (std::size_t i = 0; i <= static_cast<std::size_t>(n); ++i)
                if (gs[i] >= thetas[j]) {
                    m = i;
                    break;
                }
            rule_payoffs[n_det + j][static_cast<std::size_t>(path)] = stop_value(m);
        }
        for (std::size_t ri = 0; ri < r_levels.size(); ++ri) {
            const double r = r_levels[ri];
            double acc = 0.0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
                double step_dt = ts[i + 1] - ts[i];
                double surv = std::exp(-r * ts[i]);
                double surv_next = std::exp(-r * ts[i + 1]);
                // reweight the left-endpoint f increment by the exact in-step
                // survival integral so large r does not overweight it
                double w = r > 0.0 ? (1.0 - std::exp(-r * step_dt)) / (r * step_dt) : 1.0;
                acc += (F[i + 1] - F[i]) * surv * w;
                acc += gs[i] * std::exp(-phis[i]) * (surv - surv_next);
            }
            acc += gs[static_cast<std::size_t>(n)] *
                   std::exp(-phis[static_cast<std::size_t>(n)] - r * ts[static_cast<std::size_t>(n)]);
            intensity_payoffs[ri][static_cast<std::size_t>(path)] = acc;
        }
    }

    RandomizedStoppingReport rep;
    bool first = true;
    for (std::size_t m = 0; m < n_rules; ++m) {
        McEstimate est = reduce(rule_payoffs[m], dt, seed, "");
        if (first || est.mean > rep.stop_rule_max) {
            rep.stop_rule_max = est.mean;
            rep.stop_rule_se = est.se;
            rep.best_stop_rule =
                m < n_det ? "stop-at-step-" + std::to_string(m)
                          : "threshold-" + std::to_string(thetas[m - n_det]);
            first = false;
        }
    }
    first = true;
    for (std::size_t ri = 0; ri < r_levels.size(); ++ri) {
        McEstimate est = reduce(intensity_payoffs[ri], dt, seed, "");
        if (first || est.mean > rep.intensity_max) {
            rep.intensity_max = est.mean;
            rep.intensity_se = est.se;
            rep.best_intensity = r_levels[ri];
            first = false;
        }
    }
    rep.gap = rep.stop_rule_max - rep.intensity_max;
    return rep;
}

}  // namespace nbs
