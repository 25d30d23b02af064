#pragma once

#include <optional>
#include <string>
#include <vector>

#include "objex/layers.hpp"

namespace objex {

struct GradCheckReport {
    LayerKind kind;
    int configs = 0;
    double max_rel_err = 0.0;
    bool passed = false;
};

// Checks every layer kind's analytic gradients (parameters and inputs)
// against central finite differences of the forward pass on random small
// configurations. Double precision, eps = 1e-5, pass threshold 1e-4.
// `corrupt` deliberately biases the analytic gradients of one kind
// (negative-control hook).
std::vector<GradCheckReport> run_gradcheck(uint64_t seed, int configs_per_kind = 20,
                                           double fd_eps = 1e-5, double tol = 1e-4,
                                           std::optional<LayerKind> corrupt = std::nullopt);

bool all_passed(const std::vector<GradCheckReport>& reports);

}  // namespace objex
