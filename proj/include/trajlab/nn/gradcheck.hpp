#pragma once

#include <functional>
#include <vector>

#include <trajlab/nn/tensor.hpp>

namespace trajlab::nn {

/// Compares analytic gradients against central finite differences.
///
/// `fn(with_grad)` must evaluate the scalar objective at the current
/// parameter values; when `with_grad` is true it must also accumulate
/// analytic gradients into each Param::grad. Returns the maximum over all
/// parameter entries of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(const std::function<double(bool)>& fn, const std::vector<Param*>& params,
                         double eps = 1e-5) {
    for (Param* p : params) p->grad.setZero();
    double f0 = fn(true);
    require(std::isfinite(f0), "grad_check: objective is not finite");
    std::vector<Mat> analytic;
    analytic.reserve(params.size());
    for (Param* p : params) {
        require(all_finite(p->grad), "grad_check: analytic gradient of ", p->name,
                " is not finite");
        analytic.push_back(p->grad);
        p->grad.setZero();
    }

    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Param* p = params[k];
        for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
            for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
                const double saved = p->value(i, j);
                p->value(i, j) = saved + eps;
                double fp = fn(false);
                p->value(i, j) = saved - eps;
                double fm = fn(false);
                p->value(i, j) = saved;
                require(std::isfinite(fp) && std::isfinite(fm),
                        "grad_check: non-finite objective while perturbing ", p->name);
                double numeric = (fp - fm) / (2.0 * eps);
                double a = analytic[k](i, j);
                double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
                worst = std::max(worst, rel);
            }
        }
    }
    return worst;
}

}  // namespace trajlab::nn
