#pragma once

#include <cmath>
#include <vector>

#include "dfdet/ops.hpp"

// Additive angular margin classification loss. Features and class weights
// are L2-normalized internally; the true-class cosine gets the margin via
// cos(t + m) = cos t * cos m - sin t * sin m, with the cosine clamped away
// from +/-1 so the sqrt stays differentiable.

namespace dfdet {

inline constexpr double kArcCosClamp = 1e-7;

// features: [B, D]; class_weights: [C, D]; labels: class indices.
template <class T>
Var<T> arcface_loss(const Var<T>& features, const std::vector<std::size_t>& labels,
                    const Var<T>& class_weights, T scale, T margin) {
    opdetail::require_2d("arcface_loss", features);
    opdetail::require_2d("arcface_loss", class_weights);
    const std::size_t B = features->value.dim(0);
    const std::size_t C = class_weights->value.dim(0);
    if (features->value.dim(1) != class_weights->value.dim(1))
        throw ShapeError("arcface_loss: feature dim " + shape_str(features->value.shape()) + " vs weights " +
                         shape_str(class_weights->value.shape()));
    if (labels.size() != B) throw ContractError("arcface_loss: label count mismatch");

    auto fn = l2_normalize_rows(features);
    auto wn = l2_normalize_rows(class_weights);
    auto cos_theta = clamp(matmul_nt(fn, wn), T(-1) + T(kArcCosClamp), T(1) - T(kArcCosClamp));

    Tensor<T> mask({B, C});
    for (std::size_t i = 0; i < B; ++i) mask.at(i, labels[i]) = T(1);
    auto mask_v = make_constant<T>(mask);
    Tensor<T> inv_mask({B, C});
    for (std::size_t i = 0; i < inv_mask.size(); ++i) inv_mask[i] = T(1) - mask[i];
    auto inv_mask_v = make_constant<T>(std::move(inv_mask));

    const T cm = std::cos(margin), sm = std::sin(margin);
    auto sin_theta = sqrt_op(one_minus(mul(cos_theta, cos_theta)));
    auto cos_margined = sub(dfdet::scale(cos_theta, cm), dfdet::scale(sin_theta, sm));
    auto logits = dfdet::scale(add(mul(mask_v, cos_margined), mul(inv_mask_v, cos_theta)), scale);
    return cross_entropy_logits(logits, labels);
}

}  // namespace dfdet
