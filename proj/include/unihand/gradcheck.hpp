#pragma once

#include <functional>
#include <string>
#include <vector>

#include "unihand/nn.hpp"
#include "unihand/tensor.hpp"

namespace unihand {

struct GradCheckEntry {
    std::string param;
    double max_rel_err = 0.0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    std::string worst_param;
    std::vector<GradCheckEntry> per_param;
};

// Central-difference check of reverse-mode gradients.
//
// loss_fn must be a pure function of the parameter values (fix RNG seeds
// inside). Every entry of every checked parameter is perturbed by +/- eps and
// the analytic gradient (one backward pass at the base point) is compared via
// rel_err = |a - n| / max(1, |a|, |n|). float64 throughout.
//
// Throws EvalError naming the parameter if a perturbed loss is non-finite.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<Tensor>& params, double eps = 1e-5,
                           double tol = 1e-4);

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, const ParamStore& store,
                           double eps = 1e-5, double tol = 1e-4);

} // namespace unihand
