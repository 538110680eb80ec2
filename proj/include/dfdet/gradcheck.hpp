#pragma once

#include <cmath>
#include <functional>

#include "dfdet/tensor.hpp"

// Central finite differences. This is the verification oracle for the
// autograd engine: it only ever evaluates the function forward, so it stays
// independent of the backward path it is used to check.

namespace dfdet {

template <class T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& point, T h) {
    if (!(h > T(0))) throw ContractError("finite_diff_grad: h must be positive");
    Tensor<T> x = point;
    Tensor<T> g(point.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T orig = x[i];
        x[i] = orig + h;
        const T fp = f(x);
        x[i] = orig - h;
        const T fm = f(x);
        x[i] = orig;
        if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
            throw NumericFault("finite_diff_grad: non-finite function value");
        g[i] = (fp - fm) / (T(2) * h);
    }
    return g;
}

struct GradCompareResult {
    double max_abs_diff = 0.0;
    double max_rel_diff = 0.0;  // |a-b| / max(|a|,|b|), over coords above the absolute floor
    bool pass = true;
};

// A coordinate passes when |a-b| <= atol + rtol * max(|a|,|b|); the atol
// floor keeps near-zero gradients from blowing up the relative measure.
template <class T>
GradCompareResult compare_grads(const Tensor<T>& analytic, const Tensor<T>& fd, double rtol, double atol) {
    if (!analytic.same_shape(fd)) throw ShapeError("compare_grads: shape mismatch");
    GradCompareResult r;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = static_cast<double>(analytic[i]);
        const double b = static_cast<double>(fd[i]);
        const double diff = std::abs(a - b);
        const double mag = std::max(std::abs(a), std::abs(b));
        r.max_abs_diff = std::max(r.max_abs_diff, diff);
        if (diff > atol) r.max_rel_diff = std::max(r.max_rel_diff, diff / std::max(mag, 1e-300));
        if (diff > atol + rtol * mag) r.pass = false;
    }
    return r;
}

}  // namespace dfdet
