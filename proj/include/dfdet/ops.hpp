#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dfdet/autograd.hpp"

// Differentiable operations. Forward values are computed eagerly; each op
// registers a closure that maps the output gradient onto its parents.
// Shape violations throw ShapeError naming the op and the offending shapes.

namespace dfdet {

// ---------------------------------------------------------------------------
// Accumulating gemm kernels (C += ...). Row-major, contiguous.
// ---------------------------------------------------------------------------

template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    for (std::size_t i = 0; i < M; ++i) {
        const T* a = A + i * K;
        T* c = C + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const T av = a[k];
            const T* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C(MxN) += A(MxK) * B(NxK)^T
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    for (std::size_t i = 0; i < M; ++i) {
        const T* a = A + i * K;
        T* c = C + i * N;
        for (std::size_t j = 0; j < N; ++j) {
            const T* b = B + j * K;
            T acc = T(0);
            for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

// C(MxN) += A(KxM)^T * B(KxN)
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    for (std::size_t k = 0; k < K; ++k) {
        const T* a = A + k * M;
        const T* b = B + k * N;
        for (std::size_t i = 0; i < M; ++i) {
            const T av = a[i];
            T* c = C + i * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Shape checks
// ---------------------------------------------------------------------------

namespace opdetail {

template <class T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->value.shape()) + " vs " +
                         shape_str(b->value.shape()));
}

template <class T>
void require_2d(const char* op, const Var<T>& a) {
    if (a->value.ndim() != 2)
        throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(a->value.shape()));
}

template <class T>
T sigmoid_val(T x) {
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace opdetail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    opdetail::require_same_shape("add", a, b);
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
    return make_op<T>("add", std::move(out), {a, b},
                      [](Node<T>&, const Tensor<T>& g, const auto& to_parent) {
                          to_parent(0, Tensor<T>(g));
                          to_parent(1, Tensor<T>(g));
                      });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    opdetail::require_same_shape("sub", a, b);
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
    return make_op<T>("sub", std::move(out), {a, b},
                      [](Node<T>&, const Tensor<T>& g, const auto& to_parent) {
                          to_parent(0, Tensor<T>(g));
                          Tensor<T> gb(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
                          to_parent(1, std::move(gb));
                      });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    opdetail::require_same_shape("mul", a, b);
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
    return make_op<T>("mul", std::move(out), {a, b},
                      [](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& av = self.parents[0]->value;
                          const Tensor<T>& bv = self.parents[1]->value;
                          Tensor<T> ga(g.shape()), gb(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) {
                              ga[i] = g[i] * bv[i];
                              gb[i] = g[i] * av[i];
                          }
                          to_parent(0, std::move(ga));
                          to_parent(1, std::move(gb));
                      });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
    opdetail::require_same_shape("div", a, b);
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] / b->value[i];
    return make_op<T>("div", std::move(out), {a, b},
                      [](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& av = self.parents[0]->value;
                          const Tensor<T>& bv = self.parents[1]->value;
                          Tensor<T> ga(g.shape()), gb(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) {
                              ga[i] = g[i] / bv[i];
                              gb[i] = -g[i] * av[i] / (bv[i] * bv[i]);
                          }
                          to_parent(0, std::move(ga));
                          to_parent(1, std::move(gb));
                      });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> scale(const Var<T>& a, T c) {
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * c;
    return make_op<T>("scale", std::move(out), {a},
                      [c](Node<T>&, const Tensor<T>& g, const auto& to_parent) {
                          Tensor<T> ga(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * c;
                          to_parent(0, std::move(ga));
                      });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T c) {
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + c;
    return make_op<T>("add_scalar", std::move(out), {a},
                      [](Node<T>&, const Tensor<T>& g, const auto& to_parent) { to_parent(0, Tensor<T>(g)); });
}

// 1 - x, handy for gate blends.
template <class T>
Var<T> one_minus(const Var<T>& a) {
    return add_scalar(scale(a, T(-1)), T(1));
}

template <class T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] > T(0) ? a->value[i] : T(0);
    return make_op<T>("relu", std::move(out), {a},
                      [](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& x = self.parents[0]->value;
                          Tensor<T> ga(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > T(0) ? g[i] : T(0);
                          to_parent(0, std::move(ga));
                      });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = opdetail::sigmoid_val(a->value[i]);
    return make_op<T>("sigmoid", std::move(out), {a},
                      [](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& y = self.value;
                          Tensor<T> ga(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i] * (T(1) - y[i]);
                          to_parent(0, std::move(ga));
                      });
}

template <class T>
Var<T> tanh_op(const Var<T>& a) {
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a->value[i]);
    return make_op<T>("tanh", std::move(out), {a},
                      [](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& y = self.value;
                          Tensor<T> ga(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (T(1) - y[i] * y[i]);
                          to_parent(0, std::move(ga));
                      });
}

template <class T>
Var<T> sqrt_op(const Var<T>& a) {
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a->value[i]);
    return make_op<T>("sqrt", std::move(out), {a},
                      [](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& y = self.value;
                          Tensor<T> ga(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * T(0.5) / y[i];
                          to_parent(0, std::move(ga));
                      });
}

template <class T>
Var<T> exp_op(const Var<T>& a) {
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a->value[i]);
    return make_op<T>("exp", std::move(out), {a},
                      [](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& y = self.value;
                          Tensor<T> ga(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i];
                          to_parent(0, std::move(ga));
                      });
}

template <class T>
Var<T> log_op(const Var<T>& a) {
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a->value[i]);
    return make_op<T>("log", std::move(out), {a},
                      [](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& x = self.parents[0]->value;
                          Tensor<T> ga(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / x[i];
                          to_parent(0, std::move(ga));
                      });
}

// Gradient passes through strictly inside (lo, hi) and is zero outside.
template <class T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
    Tensor<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        T v = a->value[i];
        out[i] = v < lo ? lo : (v > hi ? hi : v);
    }
    return make_op<T>("clamp", std::move(out), {a},
                      [lo, hi](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& x = self.parents[0]->value;
                          Tensor<T> ga(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i)
                              ga[i] = (x[i] > lo && x[i] < hi) ? g[i] : T(0);
                          to_parent(0, std::move(ga));
                      });
}

// Break the graph: value is shared, gradient stops here.
template <class T>
Var<T> detach(const Var<T>& a) {
    return make_leaf<T>(Tensor<T>(a->value), false);
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    opdetail::require_2d("matmul", a);
    opdetail::require_2d("matmul", b);
    const std::size_t M = a->value.dim(0), K = a->value.dim(1);
    if (b->value.dim(0) != K)
        throw ShapeError("matmul: inner dims disagree " + shape_str(a->value.shape()) + " x " +
                         shape_str(b->value.shape()));
    const std::size_t N = b->value.dim(1);
    Tensor<T> out({M, N});
    gemm_nn(M, N, K, a->value.data(), b->value.data(), out.data());
    return make_op<T>("matmul", std::move(out), {a, b},
                      [M, N, K](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& av = self.parents[0]->value;
                          const Tensor<T>& bv = self.parents[1]->value;
                          Tensor<T> ga({M, K});
                          gemm_nt(M, K, N, g.data(), bv.data(), ga.data());
                          to_parent(0, std::move(ga));
                          Tensor<T> gb({K, N});
                          gemm_tn(K, N, M, av.data(), g.data(), gb.data());
                          to_parent(1, std::move(gb));
                      });
}

// a (MxK) times b (NxK) transposed: the natural layout for linear layers.
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    opdetail::require_2d("matmul_nt", a);
    opdetail::require_2d("matmul_nt", b);
    const std::size_t M = a->value.dim(0), K = a->value.dim(1);
    if (b->value.dim(1) != K)
        throw ShapeError("matmul_nt: inner dims disagree " + shape_str(a->value.shape()) + " x " +
                         shape_str(b->value.shape()) + "^T");
    const std::size_t N = b->value.dim(0);
    Tensor<T> out({M, N});
    gemm_nt(M, N, K, a->value.data(), b->value.data(), out.data());
    return make_op<T>("matmul_nt", std::move(out), {a, b},
                      [M, N, K](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& av = self.parents[0]->value;
                          const Tensor<T>& bv = self.parents[1]->value;
                          Tensor<T> ga({M, K});
                          gemm_nn(M, K, N, g.data(), bv.data(), ga.data());
                          to_parent(0, std::move(ga));
                          Tensor<T> gb({N, K});
                          gemm_tn(N, K, M, g.data(), av.data(), gb.data());
                          to_parent(1, std::move(gb));
                      });
}

template <class T>
Var<T> transpose(const Var<T>& a) {
    opdetail::require_2d("transpose", a);
    const std::size_t M = a->value.dim(0), N = a->value.dim(1);
    Tensor<T> out({N, M});
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) out.at(j, i) = a->value.at(i, j);
    return make_op<T>("transpose", std::move(out), {a},
                      [M, N](Node<T>&, const Tensor<T>& g, const auto& to_parent) {
                          Tensor<T> ga({M, N});
                          for (std::size_t i = 0; i < M; ++i)
                              for (std::size_t j = 0; j < N; ++j) ga.at(i, j) = g.at(j, i);
                          to_parent(0, std::move(ga));
                      });
}

// Add a bias row vector to every row of a 2-D tensor.
template <class T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& b) {
    opdetail::require_2d("add_rowvec", x);
    const std::size_t M = x->value.dim(0), N = x->value.dim(1);
    if (b->value.size() != N)
        throw ShapeError("add_rowvec: bias " + shape_str(b->value.shape()) + " does not match row width " +
                         std::to_string(N));
    Tensor<T> out({M, N});
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) out.at(i, j) = x->value.at(i, j) + b->value[j];
    return make_op<T>("add_rowvec", std::move(out), {x, b},
                      [M, N](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          to_parent(0, Tensor<T>(g));
                          Tensor<T> gb(self.parents[1]->value.shape());
                          for (std::size_t i = 0; i < M; ++i)
                              for (std::size_t j = 0; j < N; ++j) gb[j] += g.at(i, j);
                          to_parent(1, std::move(gb));
                      });
}

// Repeat a 1xK row n times.
template <class T>
Var<T> broadcast_rows(const Var<T>& x, std::size_t n) {
    opdetail::require_2d("broadcast_rows", x);
    if (x->value.dim(0) != 1)
        throw ShapeError("broadcast_rows: expected a single row, got " + shape_str(x->value.shape()));
    const std::size_t K = x->value.dim(1);
    Tensor<T> out({n, K});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < K; ++j) out.at(i, j) = x->value[j];
    return make_op<T>("broadcast_rows", std::move(out), {x},
                      [n, K](Node<T>&, const Tensor<T>& g, const auto& to_parent) {
                          Tensor<T> gx({1, K});
                          for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < K; ++j) gx[j] += g.at(i, j);
                          to_parent(0, std::move(gx));
                      });
}

// linear layer: x (BxI), W (HxI), bias (H) -> (BxH)
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& W, const Var<T>& b) {
    return add_rowvec(matmul_nt(x, W), b);
}

// ---------------------------------------------------------------------------
// Concatenation and slicing (2-D)
// ---------------------------------------------------------------------------

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    if (axis > 1) throw ContractError("concat: axis must be 0 or 1");
    for (const auto& p : parts) opdetail::require_2d("concat", p);
    const std::size_t fixed = parts[0]->value.dim(1 - axis);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p->value.dim(1 - axis) != fixed)
            throw ShapeError("concat: inconsistent shapes " + shape_str(parts[0]->value.shape()) + " vs " +
                             shape_str(p->value.shape()));
        total += p->value.dim(axis);
    }
    Shape oshape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
    Tensor<T> out(oshape);
    std::vector<std::size_t> offsets(parts.size());
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        offsets[pi] = off;
        const Tensor<T>& v = parts[pi]->value;
        if (axis == 0) {
            std::copy(v.data(), v.data() + v.size(), out.data() + off * fixed);
        } else {
            for (std::size_t i = 0; i < fixed; ++i)
                for (std::size_t j = 0; j < v.dim(1); ++j) out.at(i, off + j) = v.at(i, j);
        }
        off += v.dim(axis);
    }
    std::vector<Var<T>> parents(parts.begin(), parts.end());
    return make_op<T>("concat", std::move(out), std::move(parents),
                      [axis, fixed, offsets](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                              const Tensor<T>& v = self.parents[pi]->value;
                              Tensor<T> gp(v.shape());
                              const std::size_t off = offsets[pi];
                              if (axis == 0) {
                                  std::copy(g.data() + off * fixed, g.data() + off * fixed + v.size(),
                                            gp.data());
                              } else {
                                  for (std::size_t i = 0; i < fixed; ++i)
                                      for (std::size_t j = 0; j < v.dim(1); ++j) gp.at(i, j) = g.at(i, off + j);
                              }
                              to_parent(pi, std::move(gp));
                          }
                      });
}

template <class T>
Var<T> slice_rows(const Var<T>& x, std::size_t r0, std::size_t r1) {
    opdetail::require_2d("slice_rows", x);
    const std::size_t M = x->value.dim(0), N = x->value.dim(1);
    if (r0 >= r1 || r1 > M)
        throw ContractError("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                            ") for " + shape_str(x->value.shape()));
    Tensor<T> out({r1 - r0, N});
    std::copy(x->value.data() + r0 * N, x->value.data() + r1 * N, out.data());
    return make_op<T>("slice_rows", std::move(out), {x},
                      [r0, M, N](Node<T>&, const Tensor<T>& g, const auto& to_parent) {
                          Tensor<T> gx({M, N});
                          std::copy(g.data(), g.data() + g.size(), gx.data() + r0 * N);
                          to_parent(0, std::move(gx));
                      });
}

template <class T>
Var<T> slice_cols(const Var<T>& x, std::size_t c0, std::size_t c1) {
    opdetail::require_2d("slice_cols", x);
    const std::size_t M = x->value.dim(0), N = x->value.dim(1);
    if (c0 >= c1 || c1 > N)
        throw ContractError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                            ") for " + shape_str(x->value.shape()));
    Tensor<T> out({M, c1 - c0});
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = x->value.at(i, j);
    return make_op<T>("slice_cols", std::move(out), {x},
                      [c0, M, N](Node<T>&, const Tensor<T>& g, const auto& to_parent) {
                          Tensor<T> gx({M, N});
                          for (std::size_t i = 0; i < M; ++i)
                              for (std::size_t j = 0; j < g.dim(1); ++j) gx.at(i, c0 + j) = g.at(i, j);
                          to_parent(0, std::move(gx));
                      });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    if (numel(shape) != x->value.size())
        throw ShapeError("reshape: cannot view " + shape_str(x->value.shape()) + " as " + shape_str(shape));
    Tensor<T> out(shape, x->value.vec());
    return make_op<T>("reshape", std::move(out), {x},
                      [](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          to_parent(0, Tensor<T>(self.parents[0]->value.shape(), g.vec()));
                      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Var<T> sum(const Var<T>& x) {
    T acc = T(0);
    for (std::size_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
    return make_op<T>("sum", Tensor<T>::scalar(acc), {x},
                      [](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          to_parent(0, Tensor<T>(self.parents[0]->value.shape(), g[0]));
                      });
}

template <class T>
Var<T> mean(const Var<T>& x) {
    if (x->value.size() == 0) throw ContractError("mean: empty tensor");
    T acc = T(0);
    for (std::size_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
    const T inv = T(1) / static_cast<T>(x->value.size());
    return make_op<T>("mean", Tensor<T>::scalar(acc * inv), {x},
                      [inv](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          to_parent(0, Tensor<T>(self.parents[0]->value.shape(), g[0] * inv));
                      });
}

// ---------------------------------------------------------------------------
// Convolution (NCHW, square kernel, symmetric padding)
// ---------------------------------------------------------------------------

namespace opdetail {

struct ConvDims {
    std::size_t B, C, H, W, O, k, stride, pad, OH, OW;
};

// col is (C*k*k) x (OH*OW); zero-padded reads become zeros.
template <class T>
void im2col(const T* x, const ConvDims& d, T* col) {
    const std::size_t plane = d.H * d.W;
    std::size_t row = 0;
    for (std::size_t c = 0; c < d.C; ++c) {
        for (std::size_t ki = 0; ki < d.k; ++ki) {
            for (std::size_t kj = 0; kj < d.k; ++kj, ++row) {
                T* out = col + row * d.OH * d.OW;
                for (std::size_t oi = 0; oi < d.OH; ++oi) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * d.stride + ki) -
                                              static_cast<std::ptrdiff_t>(d.pad);
                    for (std::size_t oj = 0; oj < d.OW; ++oj) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * d.stride + kj) -
                                                  static_cast<std::ptrdiff_t>(d.pad);
                        const bool in = ii >= 0 && ii < static_cast<std::ptrdiff_t>(d.H) && jj >= 0 &&
                                        jj < static_cast<std::ptrdiff_t>(d.W);
                        out[oi * d.OW + oj] =
                            in ? x[c * plane + static_cast<std::size_t>(ii) * d.W + static_cast<std::size_t>(jj)]
                               : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_accum(const T* col, const ConvDims& d, T* gx) {
    const std::size_t plane = d.H * d.W;
    std::size_t row = 0;
    for (std::size_t c = 0; c < d.C; ++c) {
        for (std::size_t ki = 0; ki < d.k; ++ki) {
            for (std::size_t kj = 0; kj < d.k; ++kj, ++row) {
                const T* in = col + row * d.OH * d.OW;
                for (std::size_t oi = 0; oi < d.OH; ++oi) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * d.stride + ki) -
                                              static_cast<std::ptrdiff_t>(d.pad);
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(d.H)) continue;
                    for (std::size_t oj = 0; oj < d.OW; ++oj) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * d.stride + kj) -
                                                  static_cast<std::ptrdiff_t>(d.pad);
                        if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(d.W)) continue;
                        gx[c * plane + static_cast<std::size_t>(ii) * d.W + static_cast<std::size_t>(jj)] +=
                            in[oi * d.OW + oj];
                    }
                }
            }
        }
    }
}

}  // namespace opdetail

// x: BxCxHxW, w: OxCxkxk, b: O. Output BxOxOHxOW.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride, std::size_t pad) {
    const Tensor<T>& xv = x->value;
    const Tensor<T>& wv = w->value;
    if (xv.ndim() != 4 || wv.ndim() != 4)
        throw ShapeError("conv2d: need 4-D input and weight, got " + shape_str(xv.shape()) + " and " +
                         shape_str(wv.shape()));
    if (xv.dim(1) != wv.dim(1))
        throw ShapeError("conv2d: channel mismatch " + shape_str(xv.shape()) + " vs " + shape_str(wv.shape()));
    if (wv.dim(2) != wv.dim(3)) throw ShapeError("conv2d: kernel must be square, got " + shape_str(wv.shape()));
    if (b->value.size() != wv.dim(0))
        throw ShapeError("conv2d: bias " + shape_str(b->value.shape()) + " vs out channels " +
                         std::to_string(wv.dim(0)));
    opdetail::ConvDims d{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3),
                         wv.dim(0), wv.dim(2), stride,    pad,
                         0,         0};
    if (d.H + 2 * pad < d.k || d.W + 2 * pad < d.k)
        throw ShapeError("conv2d: kernel larger than padded input " + shape_str(xv.shape()));
    d.OH = (d.H + 2 * pad - d.k) / stride + 1;
    d.OW = (d.W + 2 * pad - d.k) / stride + 1;

    const std::size_t ckk = d.C * d.k * d.k;
    const std::size_t owhw = d.OH * d.OW;
    Tensor<T> out({d.B, d.O, d.OH, d.OW});
    std::vector<T> col(ckk * owhw);
    for (std::size_t bi = 0; bi < d.B; ++bi) {
        opdetail::im2col(xv.data() + bi * d.C * d.H * d.W, d, col.data());
        T* y = out.data() + bi * d.O * owhw;
        gemm_nn(d.O, owhw, ckk, wv.data(), col.data(), y);
        for (std::size_t o = 0; o < d.O; ++o) {
            const T bias = b->value[o];
            for (std::size_t p = 0; p < owhw; ++p) y[o * owhw + p] += bias;
        }
    }
    // im2col is recomputed in the backward pass instead of captured; the
    // buffers would otherwise dominate graph memory on long tracks.
    return make_op<T>("conv2d", std::move(out), {x, w, b},
                      [d](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& xv2 = self.parents[0]->value;
                          const Tensor<T>& wv2 = self.parents[1]->value;
                          const std::size_t ckk2 = d.C * d.k * d.k;
                          const std::size_t owhw2 = d.OH * d.OW;
                          Tensor<T> gx(xv2.shape());
                          Tensor<T> gw(wv2.shape());
                          Tensor<T> gb(self.parents[2]->value.shape());
                          std::vector<T> col2(ckk2 * owhw2);
                          std::vector<T> gcol(ckk2 * owhw2);
                          for (std::size_t bi = 0; bi < d.B; ++bi) {
                              const T* gy = g.data() + bi * d.O * owhw2;
                              opdetail::im2col(xv2.data() + bi * d.C * d.H * d.W, d, col2.data());
                              gemm_nt(d.O, ckk2, owhw2, gy, col2.data(), gw.data());
                              std::fill(gcol.begin(), gcol.end(), T(0));
                              gemm_tn(ckk2, owhw2, d.O, wv2.data(), gy, gcol.data());
                              opdetail::col2im_accum(gcol.data(), d, gx.data() + bi * d.C * d.H * d.W);
                              for (std::size_t o = 0; o < d.O; ++o)
                                  for (std::size_t p = 0; p < owhw2; ++p) gb[o] += gy[o * owhw2 + p];
                          }
                          to_parent(0, std::move(gx));
                          to_parent(1, std::move(gw));
                          to_parent(2, std::move(gb));
                      });
}

// BxCxHxW -> BxC spatial mean.
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
    const Tensor<T>& xv = x->value;
    if (xv.ndim() != 4) throw ShapeError("global_avg_pool: need 4-D input, got " + shape_str(xv.shape()));
    const std::size_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    Tensor<T> out({B, C});
    const T inv = T(1) / static_cast<T>(HW);
    for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t c = 0; c < C; ++c) {
            const T* p = xv.data() + (bi * C + c) * HW;
            T acc = T(0);
            for (std::size_t i = 0; i < HW; ++i) acc += p[i];
            out.at(bi, c) = acc * inv;
        }
    return make_op<T>("global_avg_pool", std::move(out), {x},
                      [B, C, HW, inv](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          Tensor<T> gx(self.parents[0]->value.shape());
                          for (std::size_t bi = 0; bi < B; ++bi)
                              for (std::size_t c = 0; c < C; ++c) {
                                  const T gv = g.at(bi, c) * inv;
                                  T* p = gx.data() + (bi * C + c) * HW;
                                  for (std::size_t i = 0; i < HW; ++i) p[i] = gv;
                              }
                          to_parent(0, std::move(gx));
                      });
}

// ---------------------------------------------------------------------------
// Normalization and losses
// ---------------------------------------------------------------------------

// Row-wise L2 normalization. A zero-norm row is a numeric fault, not a silent
// output.
template <class T>
Var<T> l2_normalize_rows(const Var<T>& x) {
    opdetail::require_2d("l2_normalize_rows", x);
    const std::size_t M = x->value.dim(0), N = x->value.dim(1);
    Tensor<T> out({M, N});
    std::vector<T> inv_norms(M);
    for (std::size_t i = 0; i < M; ++i) {
        T acc = T(0);
        for (std::size_t j = 0; j < N; ++j) acc += x->value.at(i, j) * x->value.at(i, j);
        const T norm = std::sqrt(acc);
        if (!(norm > T(1e-20)))
            throw NumericFault("l2_normalize_rows: degenerate zero-norm row " + std::to_string(i));
        inv_norms[i] = T(1) / norm;
        for (std::size_t j = 0; j < N; ++j) out.at(i, j) = x->value.at(i, j) * inv_norms[i];
    }
    return make_op<T>("l2_normalize_rows", std::move(out), {x},
                      [M, N, inv_norms](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& y = self.value;
                          Tensor<T> gx({M, N});
                          for (std::size_t i = 0; i < M; ++i) {
                              T dot = T(0);
                              for (std::size_t j = 0; j < N; ++j) dot += g.at(i, j) * y.at(i, j);
                              for (std::size_t j = 0; j < N; ++j)
                                  gx.at(i, j) = (g.at(i, j) - y.at(i, j) * dot) * inv_norms[i];
                          }
                          to_parent(0, std::move(gx));
                      });
}

// Mean softmax cross-entropy over rows of logits (BxC) with integer labels.
template <class T>
Var<T> cross_entropy_logits(const Var<T>& logits, const std::vector<std::size_t>& labels) {
    opdetail::require_2d("cross_entropy_logits", logits);
    const std::size_t B = logits->value.dim(0), C = logits->value.dim(1);
    if (labels.size() != B)
        throw ContractError("cross_entropy_logits: " + std::to_string(labels.size()) + " labels for batch " +
                            std::to_string(B));
    for (std::size_t l : labels)
        if (l >= C) throw ContractError("cross_entropy_logits: label out of range");
    T total = T(0);
    for (std::size_t i = 0; i < B; ++i) {
        const T* z = logits->value.data() + i * C;
        T m = z[0];
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, z[c]);
        T lse = T(0);
        for (std::size_t c = 0; c < C; ++c) lse += std::exp(z[c] - m);
        total += m + std::log(lse) - z[labels[i]];
    }
    const T inv = T(1) / static_cast<T>(B);
    return make_op<T>("cross_entropy_logits", Tensor<T>::scalar(total * inv), {logits},
                      [B, C, labels, inv](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& zv = self.parents[0]->value;
                          Tensor<T> gz({B, C});
                          for (std::size_t i = 0; i < B; ++i) {
                              const T* z = zv.data() + i * C;
                              T m = z[0];
                              for (std::size_t c = 1; c < C; ++c) m = std::max(m, z[c]);
                              T lse = T(0);
                              for (std::size_t c = 0; c < C; ++c) lse += std::exp(z[c] - m);
                              for (std::size_t c = 0; c < C; ++c) {
                                  T soft = std::exp(z[c] - m) / lse;
                                  if (c == labels[i]) soft -= T(1);
                                  gz.at(i, c) = g[0] * inv * soft;
                              }
                          }
                          to_parent(0, std::move(gz));
                      });
}

// Mean binary cross-entropy computed from logits (numerically stable form).
// Targets are plain values, not graph nodes.
template <class T>
Var<T> bce_with_logits(const Var<T>& z, const Tensor<T>& y) {
    if (!z->value.same_shape(y))
        throw ShapeError("bce_with_logits: shape mismatch " + shape_str(z->value.shape()) + " vs " +
                         shape_str(y.shape()));
    const std::size_t n = z->value.size();
    T total = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T zi = z->value[i];
        total += std::max(zi, T(0)) - zi * y[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    const T inv = T(1) / static_cast<T>(n);
    return make_op<T>("bce_with_logits", Tensor<T>::scalar(total * inv), {z},
                      [y, inv](Node<T>& self, const Tensor<T>& g, const auto& to_parent) {
                          const Tensor<T>& zv = self.parents[0]->value;
                          Tensor<T> gz(zv.shape());
                          for (std::size_t i = 0; i < zv.size(); ++i)
                              gz[i] = g[0] * inv * (opdetail::sigmoid_val(zv[i]) - y[i]);
                          to_parent(0, std::move(gz));
                      });
}

}  // namespace dfdet
