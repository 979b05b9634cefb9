// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "cimn/param_set.hpp"

namespace cimn::gradcheck {

struct CheckLine {
    std::string name;
    double max_rel_err = 0.0;
    double bound = 0.0;
    bool pass = false;
};

struct Summary {
    std::vector<CheckLine> lines;
    bool all_pass = true;
};

// L2 relative disagreement between two gradient sets with identical layout.
double relative_error(const ad::ParamSet& a, const ad::ParamSet& b);

// Every loss gradient against central finite differences (h = 1e-5) over
// `num_seeds` random instances each. Inputs landing within 1e-3 of a hinge
// or selection tie are resampled. Bound: 1e-5 relative.
Summary run_loss_gradient_checks(std::uint64_t seed, std::size_t num_seeds = 10);

// Second-order checks: the composed inner-update objective against finite
// differences (1e-4) on smooth random nets, and against the closed form
// (I - eta H) grad_outer(theta') on random quadratics (1e-10).
Summary run_meta_gradient_checks(std::uint64_t seed, std::size_t num_seeds = 10);

}  // namespace cimn::gradcheck
