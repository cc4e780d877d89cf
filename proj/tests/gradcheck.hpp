#pragma once

// Finite-difference gradient oracle shared by the unit and acceptance suites.
// Central differences with step h on every parameter entry; independent of
// the tape's backward path.

#include <cmath>
#include <functional>
#include <vector>

#include "fairdiff/autodiff.hpp"

namespace gradcheck {

using fairdiff::Parameter;
using fairdiff::Tensor;

/// Max relative error between analytic gradients (via tape backward) and
/// central finite differences of `loss_fn`, over all entries of `params`.
/// `loss_fn` must rebuild the forward pass from current parameter values.
inline double max_relative_error(const std::vector<Parameter*>& params,
                                 const std::function<double()>& loss_fn,
                                 const std::function<std::vector<Tensor>()>& analytic_fn,
                                 double h = 1e-6) {
    const std::vector<Tensor> analytic = analytic_fn();
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        for (size_t j = 0; j < p.value.numel(); ++j) {
            const double orig = p.value.v[j];
            p.value.v[j] = orig + h;
            const double lp = loss_fn();
            p.value.v[j] = orig - h;
            const double lm = loss_fn();
            p.value.v[j] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = analytic[pi].v[j];
            const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
            worst = std::max(worst, std::fabs(fd - an) / denom);
        }
    }
    return worst;
}

}  // namespace gradcheck
