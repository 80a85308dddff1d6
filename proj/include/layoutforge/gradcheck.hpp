#pragma once
// Central-difference verification of analytic gradients. The harness stays
// independent of the kernels it checks: it only ever calls a value function
// and a gradient function at perturbed points.

#include <functional>
#include <string>
#include <vector>

#include "layoutforge/rng.hpp"

namespace lf {

struct GradCheckEntry {
    std::string name;
    int dim = 0;
    int checked = 0;
    double h = 0.0;
    double tol = 0.0;
    double max_rel_err = 0.0;
    int worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool pass = false;
};

struct CheckReport {
    std::vector<GradCheckEntry> entries;

    bool all_pass() const;
    std::string to_json() const;
    std::string summary() const; // one line per entry
};

using ValueFn = std::function<double(std::span<const double>)>;
using GradFn = std::function<std::vector<double>(std::span<const double>)>;

// Compares (f(x+h e_i) - f(x-h e_i)) / 2h against g(x)_i on a random subset of
// coordinates (all of them when dim <= max_coords). Relative error uses
// denominator max(|analytic|, |numeric|, 1e-8). Non-finite values fail with
// the offending coordinate recorded.
GradCheckEntry gradcheck(const std::string& name, const ValueFn& f, const GradFn& g,
                         std::vector<double> x0, double h, double tol, int max_coords,
                         CounterRng& rng);

// same check at an explicit coordinate set (callers handle stratification)
GradCheckEntry gradcheck_at(const std::string& name, const ValueFn& f, const GradFn& g,
                            std::vector<double> x0, std::span<const int> coords, double h,
                            double tol);

// Runs every loss kernel on seeded random instances. `inject_bug` names a
// kernel whose reported gradient is scaled by 2 (negative-control hook).
CheckReport gradcheck_losses(uint64_t seed, double h = 1e-5, double tol = 1e-4,
                             const std::string& inject_bug = "");

} // namespace lf
