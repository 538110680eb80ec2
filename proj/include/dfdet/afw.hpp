#pragma once

#include <span>

#include "dfdet/ops.hpp"

// Automatic face weighting: the weighted-logit video aggregation and the
// boosted combination rules. Graph versions drive training; the scalar
// versions are the plain-arithmetic forms used by evaluation.
//
// The boosted forms reduce bit-exactly to the main-network forms when every
// boost weight and logit is zero: the per-face terms and the summation order
// are identical.

namespace dfdet {

// Pre-sigmoid video logit: sum(w_j * l_j) / (sum(w_j) + eps).
template <class T>
Var<T> afw_logit(const Var<T>& l, const Var<T>& w, T eps) {
    opdetail::require_same_shape("afw_logit", l, w);
    if (l->value.size() < 1) throw ContractError("afw_logit: need at least one face");
    auto num = sum(mul(w, l));
    auto den = add_scalar(sum(w), eps);
    return div(num, den);
}

template <class T>
Var<T> afw_probability(const Var<T>& l, const Var<T>& w, T eps) {
    return sigmoid(afw_logit(l, w, eps));
}

template <class T>
T afw_probability_value(std::span<const T> l, std::span<const T> w, T eps) {
    if (l.size() != w.size() || l.empty()) throw ContractError("afw_probability: bad spans");
    T num = T(0), den = T(0);
    for (std::size_t j = 0; j < l.size(); ++j) {
        num += w[j] * l[j];
        den += w[j];
    }
    return opdetail::sigmoid_val(num / (den + eps));
}

// Boosted face weighting:
// sigma( sum(w_j l_j + w_j^b l_j^b) / (sum(w_j + w_j^b) + eps) ).
template <class T>
Var<T> combine_afw_logit(const Var<T>& l, const Var<T>& w, const Var<T>& l_b, const Var<T>& w_b, T eps) {
    opdetail::require_same_shape("combine_afw", l, w);
    opdetail::require_same_shape("combine_afw", l_b, w_b);
    opdetail::require_same_shape("combine_afw", l, l_b);
    auto num = sum(add(mul(w, l), mul(w_b, l_b)));
    auto den = add_scalar(sum(add(w, w_b)), eps);
    return div(num, den);
}

template <class T>
Var<T> combine_afw(const Var<T>& l, const Var<T>& w, const Var<T>& l_b, const Var<T>& w_b, T eps) {
    return sigmoid(combine_afw_logit(l, w, l_b, w_b, eps));
}

template <class T>
T combine_afw_value(std::span<const T> l, std::span<const T> w, std::span<const T> l_b,
                    std::span<const T> w_b, T eps) {
    if (l.size() != w.size() || l.size() != l_b.size() || l.size() != w_b.size() || l.empty())
        throw ContractError("combine_afw: length mismatch");
    T num = T(0), den = T(0);
    for (std::size_t j = 0; j < l.size(); ++j) {
        num += w[j] * l[j] + w_b[j] * l_b[j];
        den += w[j] + w_b[j];
    }
    return opdetail::sigmoid_val(num / (den + eps));
}

// Boosted sequence prediction: sigma(l_RNN + l_RNN^b).
template <class T>
Var<T> combine_gru(const Var<T>& l_rnn, const Var<T>& l_rnn_b) {
    return sigmoid(add(l_rnn, l_rnn_b));
}

template <class T>
T combine_gru_value(T l_rnn, T l_rnn_b) {
    return opdetail::sigmoid_val(l_rnn + l_rnn_b);
}

}  // namespace dfdet
