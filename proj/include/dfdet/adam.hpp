#pragma once

#include <cmath>
#include <vector>

#include "dfdet/autograd.hpp"

// Bias-corrected Adam. State holds one first/second-moment buffer per
// parameter, aligned by index with the parameter list it was built from.

namespace dfdet {

template <class T>
struct AdamState {
    std::size_t step = 0;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    T lr = T(0.001);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

template <class T>
AdamState<T> make_adam_state(const std::vector<Var<T>>& params, T lr = T(0.001), T beta1 = T(0.9),
                             T beta2 = T(0.999), T eps = T(1e-8)) {
    AdamState<T> st;
    st.lr = lr;
    st.beta1 = beta1;
    st.beta2 = beta2;
    st.eps = eps;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& p : params) {
        st.m.emplace_back(p->value.shape());
        st.v.emplace_back(p->value.shape());
    }
    return st;
}

// One update over explicit gradient buffers (the trainer keeps per-loss
// accumulators, so gradients are not read from the nodes here).
template <class T>
void adam_step(const std::vector<Var<T>>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& st) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        throw ContractError("adam_step: params/grads/state sizes disagree");
    st.step += 1;
    const T bc1 = T(1) - std::pow(st.beta1, static_cast<T>(st.step));
    const T bc2 = T(1) - std::pow(st.beta2, static_cast<T>(st.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<T>& p = params[pi]->value;
        const Tensor<T>& g = grads[pi];
        if (!p.same_shape(g) || !p.same_shape(st.m[pi]))
            throw ContractError("adam_step: shape mismatch at parameter " + std::to_string(pi) + " " +
                                shape_str(p.shape()) + " vs " + shape_str(g.shape()));
        Tensor<T>& m = st.m[pi];
        Tensor<T>& v = st.v[pi];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = st.beta1 * m[i] + (T(1) - st.beta1) * g[i];
            v[i] = st.beta2 * v[i] + (T(1) - st.beta2) * g[i] * g[i];
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            p[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

// Convenience: step from the .grad buffers accumulated on the nodes.
template <class T>
void adam_step_from_node_grads(const std::vector<Var<T>>& params, AdamState<T>& st) {
    std::vector<Tensor<T>> grads;
    grads.reserve(params.size());
    for (const auto& p : params)
        grads.push_back(p->has_grad() ? p->grad : Tensor<T>(p->value.shape()));
    adam_step(params, grads, st);
}

}  // namespace dfdet
