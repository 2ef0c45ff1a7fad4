#pragma once

#include <cstdint>
#include <string>

namespace prosma {

/// Randomized property checks for the soft-threshold operator:
/// exact zeros at/below threshold, support nesting under larger thresholds,
/// non-expansiveness in Frobenius norm (1e-12 absolute slack), and norm
/// shrinkage. One counted trial per property per round.
struct TheoremReport {
    int trials = 0;
    int exact_zero_pass = 0;
    int nesting_pass = 0;
    int nonexpansive_pass = 0;
    int shrinkage_pass = 0;

    bool ok() const {
        return exact_zero_pass == trials && nesting_pass == trials &&
               nonexpansive_pass == trials && shrinkage_pass == trials;
    }
};

/// sabotage: "" for the real operator, "shrink-off" for a deliberately broken
/// one (negative control for the checker itself). Unknown names are rejected.
TheoremReport theorem_check(int trials, uint64_t seed, const std::string& sabotage = "");

}  // namespace prosma
