#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "nbsolve/grid.hpp"
#include "nbsolve/problem.hpp"

namespace nbtest {

// Single-control 1D problem with constant coefficients and an arbitrary
// terminal reward. sigma is shared by the +-1 pair; bp/bm are b_{+1}/b_{-1}.
inline nbs::ControlledProblem simple1d(double sigma, double bp, double bm, double c, double f,
                                       std::function<double(double)> g, double T = 1.0,
                                       double K = 2.0, double m = 1.0) {
    nbs::ControlledProblem prob;
    prob.basis = nbs::DirectionBasis(1, {{1.0}});
    nbs::ControlPoint ctl;
    ctl.label = "only";
    ctl.sigma = {nbs::Coeff(sigma)};
    ctl.b = {nbs::Coeff(bp), nbs::Coeff(bm)};
    ctl.c = nbs::Coeff(c);
    ctl.f = nbs::Coeff(f);
    ctl.m = m;
    prob.controls = {ctl};
    prob.g = nbs::Terminal([g](std::span<const double> x) { return g(x[0]); });
    prob.T = T;
    prob.K = K;
    return prob;
}

inline nbs::LatticeGrid grid1d(double h, double tau, double T, int radius) {
    return nbs::LatticeGrid::build(nbs::DirectionBasis(1, {{1.0}}), h, tau, T, {},
                                   nbs::IndexBox::cube(1, radius));
}

inline double sup_diff_to(const nbs::SolutionField& field,
                          std::function<double(double, std::span<const double>)> ref) {
    double worst = 0.0;
    const nbs::LatticeGrid& g = field.grid();
    for (std::size_t j = 0; j < g.num_levels(); ++j)
        for (std::size_t p = 0; p < g.num_points(); ++p)
            worst = std::max(worst, std::abs(field.value(j, p) - ref(g.time(j), g.coord(p))));
    return worst;
}

}  // namespace nbtest
