#pragma once

#include <cmath>
#include <vector>

#include <trajlab/nn/tensor.hpp>

namespace trajlab::nn {

/// Bias-corrected adaptive-moment optimizer. Moments live inside each Param;
/// the step counter is shared. Gradients are cleared after a step so chunked
/// backward passes can accumulate into Param::grad between steps.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    double learning_rate() const { return lr_; }
    long long step_count() const { return step_; }

    void step(const std::vector<Param*>& params) {
        for (Param* p : params)
            if (!all_finite(p->grad))
                contract_fail("adam_step: non-finite gradient for ", p->name, "; step aborted");
        ++step_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (Param* p : params) {
            p->moment1 = beta1_ * p->moment1 + (1.0 - beta1_) * p->grad;
            p->moment2 =
                (beta2_ * p->moment2.array() + (1.0 - beta2_) * p->grad.array().square()).matrix();
            p->value.array() -=
                lr_ * (p->moment1.array() / c1) / ((p->moment2.array() / c2).sqrt() + eps_);
            p->grad.setZero();
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    long long step_ = 0;
};

}  // namespace trajlab::nn
