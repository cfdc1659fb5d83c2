#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nbsolve/grid.hpp"
#include "nbsolve/problem.hpp"

namespace nbs {

/// A shipped benchmark problem plus its default discretization. make_grid
/// builds a grid at any (tau, h) with the entry's box radius (index box
/// +-round(radius/h) per axis).
struct RegistryEntry {
    std::string name;
    ControlledProblem problem;
    double default_h = 0.1;
    double default_tau = 0.01;
    double radius = 3.0;  // physical half-width per axis
    std::function<LatticeGrid(double tau, double h)> make_grid;
};

/// Entries: exact1d, heat1d, kink1d, twocontrol1d, amerput1d, degenerate2d.
/// Numeric overrides (problem- and grid-level): "T", "K", "radius", "h",
/// "tau", plus per-problem coefficient constants such as "sigma", "b", "c",
/// "f" where the entry defines them.
RegistryEntry make_registry_problem(const std::string& name,
                                    const std::map<std::string, double>& overrides = {});

std::vector<std::string> registry_names();

}  // namespace nbs
