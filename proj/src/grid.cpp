#include "nbsolve/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace nbs {

namespace {

struct CoordKey {
    std::vector<std::int64_t> q;
    bool operator==(const CoordKey& o) const { return q == o.q; }
};

struct CoordKeyHash {
    std::size_t operator()(const CoordKey& k) const {
        std::size_t h = 1469598103934665603ull;
        for (std::int64_t v : k.q) {
            h ^= static_cast<std::size_t>(v);
            h *= 1099511628211ull;
        }
        return h;
    }
};

}  // namespace

LatticeGrid LatticeGrid::build(DirectionBasis basis, double h, double tau, double T,
                               std::vector<double> x0, IndexBox box) {
    if (!(h > 0) || !(tau > 0) || !(T > 0)) throw GridError("h, tau and T must be positive");
    const int d1 = basis.d1();
    const int d = basis.d();
    if (static_cast<int>(box.range.size()) != d1)
        throw GridError("index box must have one range per direction pair");
    for (auto& [lo, hi] : box.range)
        if (lo > hi) throw GridError("empty index box range");
    if (x0.empty()) x0.assign(static_cast<std::size_t>(d), 0.0);
    if (static_cast<int>(x0.size()) != d) throw GridError("x0 has wrong dimension");

    LatticeGrid g;
    g.basis_ = std::move(basis);
    g.h_ = h;
    g.tau_ = tau;
    g.T_ = T;
    g.x0_ = std::move(x0);
    g.box_ = std::move(box);

    // time levels {j*tau : j*tau < T} plus T itself
    for (double t = 0.0; t < T - 1e-12 * T; ) {
        g.times_.push_back(t);
        t = g.times_.size() * tau;  // avoids accumulation drift
    }
    g.times_.push_back(T);

    // spatial layout
    g.strides_.resize(static_cast<std::size_t>(d1));
    std::size_t n = 1;
    for (int ax = 0; ax < d1; ++ax) {
        g.strides_[static_cast<std::size_t>(ax)] = n;
        auto [lo, hi] = g.box_.range[static_cast<std::size_t>(ax)];
        n *= static_cast<std::size_t>(hi - lo + 1);
    }
    g.npts_ = n;

    g.coords_.resize(n * static_cast<std::size_t>(d));
    g.interior_.assign(n, 1);

    std::unordered_map<CoordKey, std::size_t, CoordKeyHash> seen;
    seen.reserve(n * 2);
    const double quant = h * 1e-7;

    std::vector<int> idx(static_cast<std::size_t>(d1));
    for (std::size_t p = 0; p < n; ++p) {
        std::size_t rem = p;
        bool interior = true;
        for (int ax = d1 - 1; ax >= 0; --ax) {
            auto [lo, hi] = g.box_.range[static_cast<std::size_t>(ax)];
            std::size_t width = static_cast<std::size_t>(hi - lo + 1);
            std::size_t stride = g.strides_[static_cast<std::size_t>(ax)];
            std::size_t q = rem / stride;
            (void)width;
            idx[static_cast<std::size_t>(ax)] = lo + static_cast<int>(q);
            rem -= q * stride;
            if (idx[static_cast<std::size_t>(ax)] == lo || idx[static_cast<std::size_t>(ax)] == hi)
                interior = false;
        }
        g.interior_[p] = interior ? 1 : 0;
        if (interior) ++g.n_interior_;

        double* c = g.coords_.data() + p * static_cast<std::size_t>(d);
        for (int i = 0; i < d; ++i) c[i] = g.x0_[static_cast<std::size_t>(i)];
        for (int ax = 0; ax < d1; ++ax) {
            std::span<const double> ell = g.basis_.dir(ax + 1);
            double w = h * idx[static_cast<std::size_t>(ax)];
            for (int i = 0; i < d; ++i) c[i] += w * ell[static_cast<std::size_t>(i)];
        }

        CoordKey key;
        key.q.resize(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i)
            key.q[static_cast<std::size_t>(i)] = llround(c[i] / quant);
        auto [it, inserted] = seen.emplace(std::move(key), p);
        if (!inserted)
            throw GridError("coordinate collision: the direction basis is not injective on the "
                            "index box (points " + std::to_string(it->second) + " and " +
                            std::to_string(p) + " coincide)");
    }

    // Invert the square direction matrix when possible so nearest_point can
    // round a multi-index instead of scanning every grid point.
    if (d1 == d) {
        std::size_t nd = static_cast<std::size_t>(d);
        std::vector<double> m(nd * nd), inv(nd * nd, 0.0);
        for (int ax = 0; ax < d1; ++ax) {
            std::span<const double> ell = g.basis_.dir(ax + 1);
            for (int i = 0; i < d; ++i)
                m[static_cast<std::size_t>(i) * nd + static_cast<std::size_t>(ax)] =
                    ell[static_cast<std::size_t>(i)];
        }
        for (std::size_t i = 0; i < nd; ++i) inv[i * nd + i] = 1.0;
        bool singular = false;
        for (std::size_t col = 0; col < nd && !singular; ++col) {
            std::size_t piv = col;
            for (std::size_t r = col + 1; r < nd; ++r)
                if (std::abs(m[r * nd + col]) > std::abs(m[piv * nd + col])) piv = r;
            if (std::abs(m[piv * nd + col]) < 1e-12) {
                singular = true;
                break;
            }
            if (piv != col)
                for (std::size_t j = 0; j < nd; ++j) {
                    std::swap(m[piv * nd + j], m[col * nd + j]);
                    std::swap(inv[piv * nd + j], inv[col * nd + j]);
                }
            double diag = m[col * nd + col];
            for (std::size_t j = 0; j < nd; ++j) {
                m[col * nd + j] /= diag;
                inv[col * nd + j] /= diag;
            }
            for (std::size_t r = 0; r < nd; ++r) {
                if (r == col) continue;
                double factor = m[r * nd + col];
                if (factor == 0.0) continue;
                for (std::size_t j = 0; j < nd; ++j) {
                    m[r * nd + j] -= factor * m[col * nd + j];
                    inv[r * nd + j] -= factor * inv[col * nd + j];
                }
            }
        }
        if (!singular) g.dir_inv_ = std::move(inv);
    }
    return g;
}

double LatticeGrid::tau_T(std::size_t j) const {
    if (j + 1 >= times_.size()) throw GridError("tau_T undefined at the final level");
    return times_[j + 1] - times_[j];
}

std::size_t LatticeGrid::neighbor(std::size_t p, int k) const {
    const int ax = std::abs(k) - 1;
    const int step = k > 0 ? 1 : -1;
    auto [lo, hi] = box_.range[static_cast<std::size_t>(ax)];
    std::size_t stride = strides_[static_cast<std::size_t>(ax)];
    std::size_t width = static_cast<std::size_t>(hi - lo + 1);
    std::size_t cur = (p / stride) % width;
    int pos = lo + static_cast<int>(cur) + step;
    if (pos < lo || pos > hi) throw GridError("neighbor outside the index box");
    return p + static_cast<std::size_t>(step) * stride;
}

std::vector<int> LatticeGrid::multi_index(std::size_t p) const {
    const int d1v = d1();
    std::vector<int> idx(static_cast<std::size_t>(d1v));
    for (int ax = 0; ax < d1v; ++ax) {
        auto [lo, hi] = box_.range[static_cast<std::size_t>(ax)];
        std::size_t width = static_cast<std::size_t>(hi - lo + 1);
        idx[static_cast<std::size_t>(ax)] =
            lo + static_cast<int>((p / strides_[static_cast<std::size_t>(ax)]) % width);
    }
    return idx;
}

std::optional<std::size_t> LatticeGrid::find_index(std::span<const int> idx) const {
    if (static_cast<int>(idx.size()) != d1()) return std::nullopt;
    std::size_t p = 0;
    for (int ax = 0; ax < d1(); ++ax) {
        auto [lo, hi] = box_.range[static_cast<std::size_t>(ax)];
        int v = idx[static_cast<std::size_t>(ax)];
        if (v < lo || v > hi) return std::nullopt;
        p += static_cast<std::size_t>(v - lo) * strides_[static_cast<std::size_t>(ax)];
    }
    return p;
}

std::size_t LatticeGrid::nearest_point(std::span<const double> x) const {
    if (!dir_inv_.empty()) {
        const std::size_t nd = static_cast<std::size_t>(d());
        // y = E^{-1} (x - x0) / h, then check the floor/ceil corner candidates
        double y[8];
        int base[8];
        for (std::size_t ax = 0; ax < nd && ax < 8; ++ax) {
            double s = 0.0;
            for (std::size_t i = 0; i < nd; ++i)
                s += dir_inv_[ax * nd + i] * (x[i] - x0_[i]);
            y[ax] = s / h_;
            base[ax] = static_cast<int>(std::floor(y[ax]));
        }
        if (nd <= 8) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            int idx[8];
            for (unsigned corner = 0; corner < (1u << nd); ++corner) {
                for (std::size_t ax = 0; ax < nd; ++ax) {
                    int v = base[ax] + static_cast<int>((corner >> ax) & 1u);
                    auto [lo, hi] = box_.range[ax];
                    idx[ax] = std::clamp(v, lo, hi);
                }
                std::size_t p = 0;
                for (std::size_t ax = 0; ax < nd; ++ax)
                    p += static_cast<std::size_t>(idx[ax] - box_.range[ax].first) * strides_[ax];
                std::span<const double> c = coord(p);
                double s = 0.0;
                for (std::size_t i = 0; i < nd; ++i) s += (c[i] - x[i]) * (c[i] - x[i]);
                if (s < best_d) {
                    best_d = s;
                    best = p;
                }
            }
            return best;
        }
    }
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < npts_; ++p) {
        std::span<const double> c = coord(p);
        double s = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) s += (c[i] - x[i]) * (c[i] - x[i]);
        if (s < best_d) {
            best_d = s;
            best = p;
        }
    }
    return best;
}

SolutionField::SolutionField(std::shared_ptr<const LatticeGrid> grid) : grid_(std::move(grid)) {
    levels_.assign(grid_->num_levels(), std::vector<double>(grid_->num_points(), 0.0));
}

double delta_tau(const SolutionField& u, std::size_t j, std::size_t p) {
    const LatticeGrid& g = u.grid();
    if (j + 1 >= g.num_levels()) throw GridError("delta_tau undefined at the final level");
    double dt = g.tau_T(j);
    return (u.value(j + 1, p) - u.value(j, p)) / dt;
}

double delta_h(const LatticeGrid& grid, std::span<const double> level, std::size_t p, int k) {
    std::size_t q = grid.neighbor(p, k);
    return (level[q] - level[p]) / grid.h();
}

double Delta_h(const LatticeGrid& grid, std::span<const double> level, std::size_t p, int k) {
    // Written in terms of |k| only so the k and -k results are bit-identical.
    int ax = std::abs(k);
    std::size_t qp = grid.neighbor(p, ax);
    std::size_t qm = grid.neighbor(p, -ax);
    double h = grid.h();
    return (level[qp] - 2.0 * level[p] + level[qm]) / (h * h);
}

double apply_Lh(const ControlledProblem& problem, int control_index, const LatticeGrid& grid,
                std::span<const double> level, double t, std::size_t p) {
    const ControlPoint& ctl = problem.controls[static_cast<std::size_t>(control_index)];
    std::span<const double> x = grid.coord(p);
    const int d1 = grid.d1();
    double acc = 0.0;
    for (int k = -d1; k <= d1; ++k) {
        if (k == 0) continue;
        double s = ctl.sigma_signed(k)(t, x);
        double ak = 0.5 * s * s;
        if (ak != 0.0) acc += ak * Delta_h(grid, level, p, k);
        double bk = ctl.b_signed(k)(t, x);
        if (bk != 0.0) acc += bk * delta_h(grid, level, p, k);
    }
    acc -= ctl.c(t, x) * level[p];
    return acc;
}

double apply_Lh(const ControlledProblem& problem, std::string_view control_label,
                const LatticeGrid& grid, std::span<const double> level, double t, std::size_t p) {
    return apply_Lh(problem, problem.control_index(control_label), grid, level, t, p);
}

SamplingPlan sampling_plan_for(const LatticeGrid& grid) {
    SamplingPlan plan;
    plan.points.reserve(grid.num_levels() * grid.num_points());
    for (std::size_t j = 0; j < grid.num_levels(); ++j) {
        double t = grid.time(j);
        for (std::size_t p = 0; p < grid.num_points(); ++p) {
            std::span<const double> c = grid.coord(p);
            plan.points.emplace_back(t, std::vector<double>(c.begin(), c.end()));
        }
    }
    // neighbor pairs along each direction for the Lipschitz quotients
    for (std::size_t p = 0; p < grid.num_points(); ++p) {
        if (!grid.interior(p)) continue;
        std::span<const double> c = grid.coord(p);
        for (int k = 1; k <= grid.d1(); ++k) {
            std::span<const double> n = grid.coord(grid.neighbor(p, k));
            plan.pairs.emplace_back(std::vector<double>(c.begin(), c.end()),
                                    std::vector<double>(n.begin(), n.end()));
        }
    }
    return plan;
}

}  // namespace nbs
