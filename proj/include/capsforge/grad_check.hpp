#pragma once

#include <functional>
#include <string>
#include <vector>

#include "capsforge/tensor.hpp"

namespace capsforge {

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t checked = 0;
    std::size_t below_floor = 0;  // pairs under atol on both sides, excluded from max_rel_err
    std::string worst;            // "<tensor>[<index>]" of the largest relative error
};

// Central finite differences against reverse-mode gradients.  loss_fn must
// rebuild the graph from the given leaves on every call and return a scalar.
// stride > 1 checks every stride-th element of each leaf.  Pairs whose
// disagreement sits under atol are below the finite-difference noise floor
// (rounding noise of the loss divided by 2h), so their ratio carries no
// signal; they are counted in below_floor but not scored.
GradCheckResult grad_check_params(const std::function<TensorD()>& loss_fn, const std::vector<TensorD>& params,
                                  double h = 1e-5, std::size_t stride = 1, double atol = 1e-8);

// Single-input convenience wrapper.
GradCheckResult grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& x, double h = 1e-5);

double rel_err(double a, double b);

}  // namespace capsforge
