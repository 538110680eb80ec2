#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dfdet/autograd.hpp"
#include "dfdet/checkpoint.hpp"

// Ordered named-parameter registry. Registration order is the canonical
// order for optimizer state, checkpoints and hashes.

namespace dfdet {

template <class T>
class ParamRegistry {
public:
    struct Item {
        std::string name;
        Var<T> var;
        bool trainable;
    };

    Var<T> add(std::string name, Tensor<T> init) { return add_item(std::move(name), std::move(init), true); }

    // Non-trainable state that still travels with the checkpoint
    // (normalization statistics and the like).
    Var<T> add_buffer(std::string name, Tensor<T> init) {
        return add_item(std::move(name), std::move(init), false);
    }

    const std::vector<Item>& items() const { return items_; }

    // Trainable parameters, in registration order (the optimizer order).
    std::vector<Var<T>> vars() const {
        std::vector<Var<T>> out;
        for (const auto& it : items_)
            if (it.trainable) out.push_back(it.var);
        return out;
    }

    std::size_t size() const { return items_.size(); }

    void zero_grads() const {
        for (const auto& it : items_) it.var->zero_grad();
    }

    // Combined value hash of everything whose name starts with prefix.
    std::uint64_t value_hash(const std::string& prefix = {}) const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& it : items_) {
            if (it.name.rfind(prefix, 0) != 0) continue;
            h = fnv1a(it.name.data(), it.name.size(), h);
            h = fnv1a(it.var->value.data(), it.var->value.size() * sizeof(T), h);
        }
        return h;
    }

    Checkpoint<T> to_checkpoint(std::string config_echo) const {
        Checkpoint<T> ck;
        ck.config_echo = std::move(config_echo);
        for (const auto& it : items_) ck.entries.emplace_back(it.name, it.var->value);
        return ck;
    }

    // Strict load: every registered entry must be present with its shape.
    void load(const Checkpoint<T>& ck) {
        for (auto& it : items_) {
            const Tensor<T>* t = ck.find(it.name);
            if (!t) throw IoError("checkpoint missing parameter '" + it.name + "'");
            if (t->shape() != it.var->value.shape())
                throw IoError("checkpoint shape mismatch for '" + it.name + "': " + shape_str(t->shape()) +
                              " vs " + shape_str(it.var->value.shape()));
            it.var->value = *t;
        }
    }

private:
    Var<T> add_item(std::string name, Tensor<T> init, bool trainable) {
        for (const auto& it : items_)
            if (it.name == name) throw ContractError("ParamRegistry: duplicate parameter '" + name + "'");
        Var<T> v = make_leaf<T>(std::move(init), trainable, name);
        items_.push_back(Item{std::move(name), v, trainable});
        return v;
    }

    std::vector<Item> items_;
};

}  // namespace dfdet
