#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dfdet/common.hpp"
#include "dfdet/tensor.hpp"

// Reverse-mode automatic differentiation over a dynamically built tape.
// Every op call (ops.hpp) creates a Node holding the result value plus a
// closure that routes the incoming gradient to the node's parents. backward()
// walks the graph in reverse topological order with per-pass scratch buffers
// for intermediate gradients, so only leaf nodes (parameters, inputs) keep
// .grad storage -- and those accumulate additively across backward() calls
// until zero_grad(), which is what gradient accumulation relies on.

namespace dfdet {

template <class T>
class Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

namespace detail {
inline thread_local int nograd_depth = 0;
inline bool finite_checks_enabled = true;
}  // namespace detail

inline bool grad_enabled() { return detail::nograd_depth == 0; }

inline void set_finite_checks(bool on) { detail::finite_checks_enabled = on; }
inline bool finite_checks() { return detail::finite_checks_enabled; }

// RAII guard: disables tape recording (eval-mode forward passes).
struct NoGrad {
    NoGrad() { ++detail::nograd_depth; }
    ~NoGrad() { --detail::nograd_depth; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

template <class T>
class Node {
public:
    using BackwardFn = std::function<void(Node<T>& self, const Tensor<T>& gout,
                                          const std::function<void(std::size_t, Tensor<T>&&)>& to_parent)>;

    Tensor<T> value;
    Tensor<T> grad;  // leaves only; empty until first accumulation
    bool requires_grad = false;
    std::string name;  // parameter name or op label, for diagnostics
    std::vector<Var<T>> parents;
    BackwardFn backward_fn;

    bool is_leaf() const { return !backward_fn; }
    bool has_grad() const { return grad.size() != 0; }

    Tensor<T>& ensure_grad() {
        if (!has_grad()) grad = Tensor<T>(value.shape());
        return grad;
    }

    void zero_grad() {
        if (has_grad()) grad.fill(T(0));
    }
};

template <class T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false, std::string name = {}) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->name = std::move(name);
    return n;
}

template <class T>
Var<T> make_constant(Tensor<T> value) {
    return make_leaf<T>(std::move(value), false);
}

template <class T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    T* d = dst.data();
    const T* s = src.data();
    const std::size_t n = dst.size();
    for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
}

// Create an op node. If recording is off or no parent needs gradients, the
// result is a plain constant and the inputs are not retained.
template <class T>
Var<T> make_op(const char* op_name, Tensor<T> value, std::vector<Var<T>> parents,
               typename Node<T>::BackwardFn backward) {
    if (finite_checks() && !value.all_finite())
        throw NumericFault(std::string(op_name) + ": non-finite output");
    bool need = false;
    if (grad_enabled())
        for (const auto& p : parents)
            if (p->requires_grad) {
                need = true;
                break;
            }
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->name = op_name;
    if (need) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward);
    }
    return n;
}

// Reverse topological order (every node before any of its parents).
template <class T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    // Iterative post-order DFS; recursion would overflow on long GRU chains.
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    std::reverse(order.begin(), order.end());
    return order;
}

// Backpropagate from a scalar loss. Leaf .grad buffers accumulate; gradients
// of intermediate nodes live in per-call scratch storage and are dropped as
// soon as they have been consumed.
template <class T>
void backward(const Var<T>& loss) {
    if (!loss) throw ContractError("backward: null loss");
    if (loss->value.size() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss->value.shape()));
    if (!loss->requires_grad) return;  // nothing reachable

    std::vector<Node<T>*> order = topo_order(loss.get());
    std::unordered_map<Node<T>*, Tensor<T>> flight;
    flight.emplace(loss.get(), Tensor<T>::scalar(T(1)));

    for (Node<T>* node : order) {
        auto it = flight.find(node);
        if (it == flight.end()) continue;
        Tensor<T> g = std::move(it->second);
        flight.erase(it);
        if (finite_checks() && !g.all_finite())
            throw NumericFault("backward(" + node->name + "): non-finite gradient");
        if (node->is_leaf()) {
            accumulate(node->ensure_grad(), g);
            continue;
        }
        auto to_parent = [&](std::size_t i, Tensor<T>&& pg) {
            Node<T>* p = node->parents[i].get();
            if (!p->requires_grad) return;
            auto fit = flight.find(p);
            if (fit == flight.end())
                flight.emplace(p, std::move(pg));
            else
                accumulate(fit->second, pg);
        };
        node->backward_fn(*node, g, to_parent);
    }
}

template <class T>
void zero_grads(const std::vector<Var<T>>& params) {
    for (const auto& p : params) p->zero_grad();
}

}  // namespace dfdet
