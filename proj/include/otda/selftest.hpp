#pragma once

// Oracle suites: Sinkhorn against brute force, gradients against central
// differences, AUC and accuracy against direct recounts. Run by the CLI's
// selftest subcommand and the acceptance checks.

#include <cstdint>
#include <string>
#include <vector>

namespace otda::selftest {

struct CheckResult {
    std::string name;
    bool passed = false;
    int cases = 0;
    double worst = 0.0;  // worst observed error for the suite's own measure
    double seconds = 0.0;
    std::string detail;
};

/// Uniform instances with n in [4, 6], d = 8, eps = 1e-3 in the log domain:
/// the entropic plan's cost must lie in [exact, 1.01 * exact] with marginal
/// residuals <= 1e-6.
CheckResult sinkhorn_oracle(int instances = 100, std::uint64_t seed = 0);

/// OT point gradients vs central differences of the entropic value.
CheckResult ot_gradient_check(int instances = 20, std::uint64_t seed = 0);

/// Parameter gradients of CE + alpha * OT on a small network vs central differences.
CheckResult composite_gradient_check(int instances = 20, std::uint64_t seed = 0);

/// AUC vs pairwise concordance (n <= 50, ties included) and accuracy vs a loop count.
CheckResult metric_oracles(int cases = 500, std::uint64_t seed = 0);

std::vector<CheckResult> run_all();

}  // namespace otda::selftest
