#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "nbsolve/grid.hpp"
#include "nbsolve/problem.hpp"

namespace nbs {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// CSV with columns t, x1..xd, u (one row per grid point per level).
void write_field_csv(const SolutionField& field, const std::filesystem::path& path);

// Compact binary dump. Header: magic "BFD1", then little-endian
// u32 d, u32 level_count, u64 point_count, f64 h, f64 tau, f64 T,
// f64 times[level_count], then f64 values level-major. See docs/file-formats.md.
void write_field_bfd(const SolutionField& field, const std::filesystem::path& path);

struct FieldDump {
    int d = 0;
    std::vector<double> times;
    std::vector<std::vector<double>> levels;
    double h = 0, tau = 0, T = 0;
};
FieldDump read_field_bfd(const std::filesystem::path& path);

nlohmann::json diagnostics_json(const SolutionField& field);

// --- problem loading ---------------------------------------------------------

/// Builds a problem from its JSON document. Coefficients are expression
/// strings over t, x1..xd; "m", "T", "K", "lambda" and the entries of "ell"
/// are numbers. Throws ProblemError / ParseError on malformed input.
ControlledProblem load_problem_json(const nlohmann::json& doc);
ControlledProblem load_problem_file(const std::filesystem::path& path);

}  // namespace nbs
