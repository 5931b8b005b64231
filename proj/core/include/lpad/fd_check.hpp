#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "lpad/tensor.hpp"

namespace lpad::diff {

/// Central-difference gradient of a scalar function: (f(x+eps e_i) - f(x-eps e_i)) / (2 eps).
/// The test oracle for every analytic gradient in the project.
inline Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                     double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_difference_grad: eps must be positive");
    Tensor grad(x.shape);
    Tensor probe = x;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double fp = f(probe);
        probe[i] = orig - eps;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::runtime_error("finite_difference_grad: non-finite value at coordinate " +
                                     std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

/// Elementwise relative error with an absolute floor: differences at or below
/// `floor` count as zero (they are indistinguishable from central-difference
/// rounding noise, e.g. on gradients that are exactly zero by invariance);
/// larger differences are measured relative to max(|a|, |b|).
inline double max_rel_error(const Tensor& a, const Tensor& b, double floor = 1e-8) {
    if (a.shape != b.shape) {
        throw std::invalid_argument("max_rel_error: shape mismatch " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    }
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double diff = std::abs(a[i] - b[i]);
        if (diff <= floor) continue;
        worst = std::max(worst, diff / std::max(std::abs(a[i]), std::abs(b[i])));
    }
    return worst;
}

}  // namespace lpad::diff
