#include "capsforge/grad_check.hpp"

#include <cmath>

namespace capsforge {

double rel_err(double a, double b) { return std::abs(a - b) / (std::abs(a) + std::abs(b) + 1e-12); }

GradCheckResult grad_check_params(const std::function<TensorD()>& loss_fn, const std::vector<TensorD>& params,
                                  double h, std::size_t stride, double atol) {
    if (stride == 0) throw ContractError("grad_check_params: stride must be >= 1");
    for (const auto& p : params) {
        if (!p.node()->leaf) throw ContractError("grad_check_params: inputs must be leaves");
        if (!p.requires_grad()) throw ContractError("grad_check_params: leaf does not require grad");
        p.zero_grad();
    }
    TensorD loss = loss_fn();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        if (!p.has_grad()) throw ContractError("grad_check_params: no gradient reached " + p.name());
        analytic.push_back(p.node()->grad);
        p.zero_grad();
    }

    GradCheckResult res;
    NoGradGuard guard;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& values = params[pi].node()->value;
        for (std::size_t i = 0; i < values.size(); i += stride) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = loss_fn().item();
            values[i] = saved - h;
            const double down = loss_fn().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][i];
            const double abs_err = std::abs(a - numeric);
            res.max_abs_err = std::max(res.max_abs_err, abs_err);
            ++res.checked;
            // Disagreements below atol are indistinguishable from finite-difference
            // rounding noise, so a relative score there is meaningless.
            if (abs_err <= atol) {
                ++res.below_floor;
                continue;
            }
            const double r = rel_err(a, numeric);
            if (r > res.max_rel_err) {
                res.max_rel_err = r;
                res.worst = params[pi].name() + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

GradCheckResult grad_check(const std::function<TensorD(const TensorD&)>& f, const TensorD& x, double h) {
    return grad_check_params([&] { return f(x); }, {x}, h);
}

}  // namespace capsforge
