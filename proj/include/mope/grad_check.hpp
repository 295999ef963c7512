#pragma once

#include <functional>
#include <vector>

#include "mope/autodiff.hpp"

namespace mope {

// Central-difference gradient verification. `f` rebuilds the scalar loss
// from the given leaves; analytic grads come from one backward sweep and
// are compared element-wise against (f(p+eps)-f(p-eps))/(2 eps) with
// denominator max(|analytic|, |numeric|, 1e-8). Returns the max relative
// error over all parameter elements.
inline double grad_check(const std::function<NodePtr(const std::vector<NodePtr>&)>& f,
                         const std::vector<Tensor>& params, double eps = 1e-5) {
    if (eps <= 0.0 || eps > 1e-2) throw_error("contract", "grad_check: eps must be in (0, 1e-2]");

    std::vector<NodePtr> leaves;
    leaves.reserve(params.size());
    for (const auto& p : params) leaves.push_back(leaf(p));
    NodePtr loss = f(leaves);
    backward(loss);

    std::vector<Tensor> work = params;
    auto eval = [&]() {
        std::vector<NodePtr> consts;
        consts.reserve(work.size());
        for (const auto& p : work) consts.push_back(constant(p));
        return f(consts)->value[0];
    };

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < work.size(); ++pi) {
        const std::size_t n = work[pi].numel();
        for (std::size_t i = 0; i < n; ++i) {
            const double saved = work[pi][i];
            work[pi][i] = saved + eps;
            const double fp = eval();
            work[pi][i] = saved - eps;
            const double fm = eval();
            work[pi][i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic =
                leaves[pi]->grad.numel() == n ? leaves[pi]->grad[i] : 0.0;
            const double denom =
                std::max(std::max(std::abs(analytic), std::abs(numeric)), 1e-8);
            max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace mope
