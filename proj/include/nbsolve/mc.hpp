#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nbsolve/grid.hpp"
#include "nbsolve/problem.hpp"

namespace nbs {

class McError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Control choice per (level, spatial cell), read off a solved field's argmax.
struct FeedbackTable {
    std::shared_ptr<const LatticeGrid> grid;
    std::vector<std::vector<std::int16_t>> control_index;  // [level][point]

    int lookup(double t, std::span<const double> x) const;
};

/// A simulatable policy: which control to run and (optionally) how to stop.
struct Policy {
    enum class StopKind { none, region, intensity };

    std::string name;
    std::string constant_control;            // used when feedback is absent
    std::optional<FeedbackTable> feedback;
    StopKind stop = StopKind::none;
    std::function<bool(double, std::span<const double>)> stop_region;
    std::function<double(double, std::span<const double>)> stop_intensity;

    static Policy constant(std::string control_label);
    static Policy from_field(const SolutionField& field, const ControlledProblem& problem);
};

struct McEstimate {
    double mean = 0;
    double se = 0;
    long paths = 0;
    double dt = 0;
    std::uint64_t seed = 0;
    std::string policy;
};

/// Euler-Maruyama estimate of the discounted payoff started at (s, x) under
/// the given policy. Uses the reconstructed (a, beta): steps
/// x <- x + beta dt + sqrt(2a) sqrt(dt) xi with a symmetric matrix root,
/// left-endpoint discount quadrature, per-path RNG streams keyed by
/// (seed, path index).
McEstimate simulate_payoff(const ControlledProblem& problem, const Policy& policy, double s,
                           std::span<const double> x, double dt, long n_paths, std::uint64_t seed,
                           int threads = 1);

/// Max of simulate_payoff over a finite policy list with common random
/// numbers. A statistical lower bound for the value function.
std::pair<std::string, McEstimate> best_over_policies(const ControlledProblem& problem,
                                                      const std::vector<Policy>& policies,
                                                      double s, std::span<const double> x,
                                                      double dt, long n_paths, std::uint64_t seed,
                                                      int threads = 1);

struct RandomizedStoppingReport {
    double stop_rule_max = 0;     // best threshold / deterministic stop rule
    double stop_rule_se = 0;
    double intensity_max = 0;     // best constant intensity
    double intensity_se = 0;
    double gap = 0;               // stop_rule_max - intensity_max
    std::string best_stop_rule;
    double best_intensity = 0;
};

/// Desk-scale two-sided check that stopping-time and randomized-stopping
/// formulations agree: compares the best grid-time threshold/deterministic
/// stop rule against the best constant intensity from r_levels.
RandomizedStoppingReport randomized_stopping_check(const ControlledProblem& problem, double s,
                                                   std::span<const double> x, double dt,
                                                   long n_paths,
                                                   const std::vector<double>& r_levels,
                                                   std::uint64_t seed, int threads = 1);

}  // namespace nbs
