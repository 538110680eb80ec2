#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dfdet/ops.hpp"
#include "dfdet/params.hpp"
#include "dfdet/rng.hpp"

// Gated recurrent unit stack: bidirectional layers (direction outputs
// concatenated per step) followed by one unidirectional layer whose final
// hidden state maps through a linear head to the sequence logit.
//
// Cell equations (update gate z, reset gate r, tanh candidate n):
//   z = sigmoid(Wz x + Uz h + bz)
//   r = sigmoid(Wr x + Ur h + br)
//   n = tanh(Wn x + Un (r . h) + bn)
//   h' = (1 - z) . h + z . n

namespace dfdet {

template <class T>
struct GruConfig {
    int input_dim = 131;  // D + 3 companion scalars (l_j, w_j, p_w)
    int hidden_dim = 64;
    int bi_layers = 3;

    void validate() const {
        if (input_dim < 1 || hidden_dim < 1 || bi_layers < 0)
            throw ContractError("GruConfig: dims must be positive");
    }
};

template <class T>
struct GruCellParams {
    Var<T> Wz, Uz, bz;
    Var<T> Wr, Ur, br;
    Var<T> Wn, Un, bn;
};

template <class T>
GruCellParams<T> make_gru_cell(int input_dim, int hidden_dim, ParamRegistry<T>& reg, Rng& rng,
                               const std::string& prefix) {
    const std::size_t I = static_cast<std::size_t>(input_dim);
    const std::size_t H = static_cast<std::size_t>(hidden_dim);
    const T bound = std::sqrt(T(1) / static_cast<T>(hidden_dim));
    auto w = [&](const char* name, Shape shape) {
        return reg.add(prefix + name, Tensor<T>::rand_uniform(std::move(shape), rng, -bound, bound));
    };
    GruCellParams<T> p;
    p.Wz = w("Wz", {H, I});
    p.Uz = w("Uz", {H, H});
    p.bz = reg.add(prefix + "bz", Tensor<T>({H}));
    p.Wr = w("Wr", {H, I});
    p.Ur = w("Ur", {H, H});
    p.br = reg.add(prefix + "br", Tensor<T>({H}));
    p.Wn = w("Wn", {H, I});
    p.Un = w("Un", {H, H});
    p.bn = reg.add(prefix + "bn", Tensor<T>({H}));
    return p;
}

// One step: x [1,I], h_prev [1,H] -> h [1,H].
template <class T>
Var<T> gru_cell(const Var<T>& x, const Var<T>& h_prev, const GruCellParams<T>& p) {
    auto z = sigmoid(add_rowvec(add(matmul_nt(x, p.Wz), matmul_nt(h_prev, p.Uz)), p.bz));
    auto r = sigmoid(add_rowvec(add(matmul_nt(x, p.Wr), matmul_nt(h_prev, p.Ur)), p.br));
    auto n = tanh_op(add_rowvec(add(matmul_nt(x, p.Wn), matmul_nt(mul(r, h_prev), p.Un)), p.bn));
    return add(mul(one_minus(z), h_prev), mul(z, n));
}

namespace grudetail {

// Runs one direction over the sequence. The input-to-gate transforms for all
// steps are batched into three matmuls up front; only the recurrent part is
// per-step. Returns the per-step hidden states as [N, H].
template <class T>
Var<T> run_direction(const Var<T>& inputs, const GruCellParams<T>& p, bool backward_dir) {
    const std::size_t N = inputs->value.dim(0);
    const std::size_t H = p.Uz->value.dim(0);
    auto xz = add_rowvec(matmul_nt(inputs, p.Wz), p.bz);
    auto xr = add_rowvec(matmul_nt(inputs, p.Wr), p.br);
    auto xn = add_rowvec(matmul_nt(inputs, p.Wn), p.bn);

    Var<T> h = make_constant<T>(Tensor<T>({1, H}));
    std::vector<Var<T>> steps(N);
    for (std::size_t i = 0; i < N; ++i) {
        const std::size_t t = backward_dir ? N - 1 - i : i;
        auto z = sigmoid(add(slice_rows(xz, t, t + 1), matmul_nt(h, p.Uz)));
        auto r = sigmoid(add(slice_rows(xr, t, t + 1), matmul_nt(h, p.Ur)));
        auto n = tanh_op(add(slice_rows(xn, t, t + 1), matmul_nt(mul(r, h), p.Un)));
        h = add(mul(one_minus(z), h), mul(z, n));
        steps[t] = h;
    }
    return concat(steps, 0);
}

}  // namespace grudetail

template <class T>
class GruNet {
public:
    GruNet(const GruConfig<T>& cfg, ParamRegistry<T>& reg, Rng& rng, const std::string& prefix,
           bool zero_init_head = false)
        : cfg_(cfg) {
        cfg.validate();
        int in_dim = cfg.input_dim;
        for (int layer = 0; layer < cfg.bi_layers; ++layer) {
            const std::string base = prefix + "l" + std::to_string(layer) + "/";
            fwd_.push_back(make_gru_cell(in_dim, cfg.hidden_dim, reg, rng, base + "fwd/"));
            bwd_.push_back(make_gru_cell(in_dim, cfg.hidden_dim, reg, rng, base + "bwd/"));
            in_dim = 2 * cfg.hidden_dim;
        }
        uni_ = make_gru_cell(in_dim, cfg.hidden_dim, reg, rng, prefix + "uni/");
        const std::size_t H = static_cast<std::size_t>(cfg.hidden_dim);
        out_w_ = reg.add(prefix + "out/w",
                         zero_init_head ? Tensor<T>({1, H}) : Tensor<T>::randn({1, H}, rng, T(0.01)));
        out_b_ = reg.add(prefix + "out/b", Tensor<T>({1}));
    }

    // inputs: [N, input_dim] -> pre-sigmoid sequence logit [1, 1].
    Var<T> forward(const Var<T>& inputs) const {
        opdetail::require_2d("gru", inputs);
        if (inputs->value.dim(0) < 1) throw ContractError("gru: empty sequence");
        if (inputs->value.dim(1) != static_cast<std::size_t>(cfg_.input_dim))
            throw ShapeError("gru: input dim " + shape_str(inputs->value.shape()) + ", expected " +
                             std::to_string(cfg_.input_dim));
        Var<T> seq = inputs;
        for (std::size_t layer = 0; layer < fwd_.size(); ++layer) {
            auto f = grudetail::run_direction(seq, fwd_[layer], false);
            auto b = grudetail::run_direction(seq, bwd_[layer], true);
            seq = concat<T>({f, b}, 1);
        }
        auto uni = grudetail::run_direction(seq, uni_, false);
        const std::size_t N = uni->value.dim(0);
        auto last = slice_rows(uni, N - 1, N);
        return linear(last, out_w_, out_b_);
    }

    const GruConfig<T>& config() const { return cfg_; }

private:
    GruConfig<T> cfg_;
    std::vector<GruCellParams<T>> fwd_;
    std::vector<GruCellParams<T>> bwd_;
    GruCellParams<T> uni_;
    Var<T> out_w_, out_b_;
};

}  // namespace dfdet
