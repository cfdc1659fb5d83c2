#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "nbsolve/problem.hpp"

namespace nbs {

class GridError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-axis inclusive integer ranges for the multi-index i in Z^{d1}.
struct IndexBox {
    std::vector<std::pair<int, int>> range;

    static IndexBox cube(int d1, int radius) {
        IndexBox box;
        box.range.assign(static_cast<std::size_t>(d1), {-radius, radius});
        return box;
    }
};

/// Space-time lattice: points x = x0 + h * sum_k i_k ell_k over an index box,
/// time levels 0, tau, 2*tau, ... with a possibly shortened final step to T.
/// Interior points are those whose +-ell_k neighbors all stay inside the box;
/// everything else carries the terminal/lateral value g.
class LatticeGrid {
public:
    static LatticeGrid build(DirectionBasis basis, double h, double tau, double T,
                             std::vector<double> x0, IndexBox box);

    const DirectionBasis& basis() const { return basis_; }
    int d() const { return basis_.d(); }
    int d1() const { return basis_.d1(); }
    double h() const { return h_; }
    double tau() const { return tau_; }
    double T() const { return T_; }

    std::size_t num_points() const { return npts_; }
    std::size_t num_levels() const { return times_.size(); }
    double time(std::size_t j) const { return times_[j]; }
    std::span<const double> times() const { return times_; }

    // Gap to the next level; the last gap is the shortened step to T.
    double tau_T(std::size_t j) const;

    bool interior(std::size_t p) const { return interior_[p] != 0; }
    std::size_t num_interior() const { return n_interior_; }

    std::span<const double> coord(std::size_t p) const {
        return {coords_.data() + p * static_cast<std::size_t>(d()), static_cast<std::size_t>(d())};
    }

    // Flat index of the point shifted by ell_k (signed k). Valid for interior p;
    // throws GridError if the shift leaves the box.
    std::size_t neighbor(std::size_t p, int k) const;

    std::vector<int> multi_index(std::size_t p) const;
    std::optional<std::size_t> find_index(std::span<const int> idx) const;

    // Flat index of the grid point nearest to x (by multi-index rounding when
    // the basis is 1D-per-axis; by coordinate scan otherwise).
    std::size_t nearest_point(std::span<const double> x) const;

    const IndexBox& index_box() const { return box_; }
    std::span<const double> x0() const { return x0_; }

private:
    DirectionBasis basis_;
    double h_ = 0, tau_ = 0, T_ = 0;
    std::vector<double> x0_;
    IndexBox box_;
    std::vector<double> times_;
    std::size_t npts_ = 0;
    std::size_t n_interior_ = 0;
    std::vector<std::size_t> strides_;  // per axis
    std::vector<double> coords_;        // npts * d
    std::vector<std::uint8_t> interior_;
    std::vector<double> dir_inv_;  // d1*d inverse of the direction matrix; empty = scan
};

struct LevelDiagnostics {
    double level_time = 0;
    int iterations = 0;
    double final_update = 0;
    double observed_ratio = 0;
};

struct SolveDiagnostics {
    double epsilon = 0;
    double gamma = 1;
    double delta_bound = 0;  // contraction factor bound actually used
    std::vector<LevelDiagnostics> levels;
};

/// Grid values u(t_j, x_p), one dense layer per time level, plus solver
/// diagnostics and the per-point argmax control recorded by the solver.
class SolutionField {
public:
    SolutionField() = default;
    SolutionField(std::shared_ptr<const LatticeGrid> grid);

    const LatticeGrid& grid() const { return *grid_; }
    std::shared_ptr<const LatticeGrid> grid_ptr() const { return grid_; }

    double value(std::size_t j, std::size_t p) const { return levels_[j][p]; }
    double& value(std::size_t j, std::size_t p) { return levels_[j][p]; }
    std::span<const double> level(std::size_t j) const { return levels_[j]; }
    std::span<double> level(std::size_t j) { return levels_[j]; }

    // argmax control index per (level, point); empty if not recorded.
    std::vector<std::vector<std::int16_t>>& policy() { return policy_; }
    const std::vector<std::vector<std::int16_t>>& policy() const { return policy_; }

    SolveDiagnostics& diagnostics() { return diag_; }
    const SolveDiagnostics& diagnostics() const { return diag_; }

private:
    std::shared_ptr<const LatticeGrid> grid_;
    std::vector<std::vector<double>> levels_;
    std::vector<std::vector<std::int16_t>> policy_;
    SolveDiagnostics diag_;
};

// --- discrete operators ------------------------------------------------------

// Forward time quotient with the shortened final step. j must not be the last level.
double delta_tau(const SolutionField& u, std::size_t j, std::size_t p);

// Forward difference along ell_k (signed k) at an interior point.
double delta_h(const LatticeGrid& grid, std::span<const double> level, std::size_t p, int k);

// Symmetric second difference along ell_k; identical for k and -k.
double Delta_h(const LatticeGrid& grid, std::span<const double> level, std::size_t p, int k);

// sum_k a_k Delta_k u + sum_k b_k delta_k u - c u, summed over signed k,
// with a_k = (1/2) sigma_k^2.
double apply_Lh(const ControlledProblem& problem, int control_index, const LatticeGrid& grid,
                std::span<const double> level, double t, std::size_t p);
double apply_Lh(const ControlledProblem& problem, std::string_view control_label,
                const LatticeGrid& grid, std::span<const double> level, double t, std::size_t p);

/// Sampling plan covering every grid (t,x) point plus neighbor pairs for the
/// Lipschitz quotients.
SamplingPlan sampling_plan_for(const LatticeGrid& grid);

}  // namespace nbs
