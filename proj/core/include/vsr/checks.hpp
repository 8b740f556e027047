#pragma once

#include <string>
#include <vector>

namespace vsr {

// One verification probe: a measured quantity against its pass criterion.
struct CheckRow {
    std::string name;
    bool pass = false;
    double value = 0.0;
    std::string detail;
};

struct CheckReport {
    std::vector<CheckRow> rows;

    bool all_pass() const {
        if (rows.empty()) return false;
        for (const auto& r : rows)
            if (!r.pass) return false;
        return true;
    }
};

// Text rendering: one PASS/FAIL line per row plus a summary line.
std::string render_check_report(const CheckReport& rep);

// Finite-difference validation (64-bit, central differences, rel. tol 1e-4,
// >= 10 random points per input) of every differentiable op and of the
// smallest full velocity model.
CheckReport grad_check_report();

// Integrator probes: exponential-growth accuracy at the fixed budget,
// empirical convergence order over step halvings, exactness on constant
// velocity, and a closed-form rotation system.
CheckReport solver_check_report();

}  // namespace vsr
