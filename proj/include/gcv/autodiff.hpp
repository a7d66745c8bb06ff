#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "gcv/tensor.hpp"

namespace gcv::ad {

// Reverse-mode tape. Nodes are created in evaluation order (define-by-run),
// so every node's inputs precede it; backward() walks a topological order
// derived from the loss node.
template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::shared_ptr<Node<T>>> inputs;
    std::function<void(Node<T>&)> backprop;
    const char* op = "leaf";
    bool requires_grad = false;
    std::uint64_t pass = 0;
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> leaf(Tensor<T> value, bool requires_grad, const char* name = "leaf") {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->op = name;
    return n;
}

template <class T>
Var<T> constant(Tensor<T> value, const char* name = "const") {
    return leaf<T>(std::move(value), false, name);
}

template <class T>
Var<T> scalar_const(T v) {
    return constant<T>(Tensor<T>::from({1}, {v}), "scalar");
}

namespace detail {

template <class T>
Var<T> make_node(const char* op, Tensor<T> value, std::vector<Var<T>> inputs,
                 std::function<void(Node<T>&)> bp) {
    auto n = std::make_shared<Node<T>>();
    n->op = op;
    n->value = std::move(value);
    for (const auto& in : inputs) {
        if (in->requires_grad) {
            n->requires_grad = true;
        }
    }
    n->inputs = std::move(inputs);
    if (n->requires_grad) {
        n->backprop = std::move(bp);
    }
    return n;
}

template <class T>
[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
    throw ShapeError(std::string("op '") + op + "': " + detail);
}

template <class T>
void require(bool ok, const char* op, const std::string& detail) {
    if (!ok) {
        shape_fail<T>(op, detail);
    }
}

inline std::atomic<std::uint64_t> backward_pass_counter{1};

}  // namespace detail

// ---------------------------------------------------------------------------
// backward / gradient access
// ---------------------------------------------------------------------------

template <class T>
std::uint64_t backward(const Var<T>& loss) {
    if (loss->value.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + loss->value.shape_str());
    }
    std::uint64_t pass = detail::backward_pass_counter.fetch_add(1);
    if (!loss->requires_grad) {
        loss->pass = pass;
        loss->grad = Tensor<T>::full(loss->value.shape, T(1));
        return pass;
    }
    // Iterative post-order DFS over the requires_grad subgraph.
    std::vector<Node<T>*> topo;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    loss->pass = pass;
    stack.emplace_back(loss.get(), 0);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->inputs.size()) {
            Node<T>* child = node->inputs[idx].get();
            ++idx;
            if (child->requires_grad && child->pass != pass) {
                child->pass = pass;
                stack.emplace_back(child, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    for (Node<T>* n : topo) {
        n->grad = Tensor<T>::zeros(n->value.shape);
    }
    loss->grad[0] = T(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        if ((*it)->backprop) {
            (*it)->backprop(**it);
        }
    }
    return pass;
}

template <class T>
struct LeafGrad {
    Tensor<T> grad;
    bool reached = false;  // false: leaf not reachable from the loss
};

template <class T>
LeafGrad<T> gradient_of(const Var<T>& leaf_var, std::uint64_t pass) {
    LeafGrad<T> out;
    out.reached = (leaf_var->pass == pass);
    out.grad = out.reached ? leaf_var->grad : Tensor<T>::zeros(leaf_var->value.shape);
    return out;
}

// ---------------------------------------------------------------------------
// elementwise and linear ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require<T>(a->value.same_shape(b->value), "add",
                       a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor<T> y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        y[i] += b->value[i];
    }
    return detail::make_node<T>("add", std::move(y), {a, b}, [](Node<T>& n) {
        for (int k = 0; k < 2; ++k) {
            if (n.inputs[k]->requires_grad) {
                auto& g = n.inputs[k]->grad;
                for (std::int64_t i = 0; i < g.numel(); ++i) {
                    g[i] += n.grad[i];
                }
            }
        }
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::require<T>(a->value.same_shape(b->value), "sub",
                       a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor<T> y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        y[i] -= b->value[i];
    }
    return detail::make_node<T>("sub", std::move(y), {a, b}, [](Node<T>& n) {
        if (n.inputs[0]->requires_grad) {
            auto& g = n.inputs[0]->grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                g[i] += n.grad[i];
            }
        }
        if (n.inputs[1]->requires_grad) {
            auto& g = n.inputs[1]->grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                g[i] -= n.grad[i];
            }
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::require<T>(a->value.same_shape(b->value), "mul",
                       a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor<T> y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        y[i] *= b->value[i];
    }
    return detail::make_node<T>("mul", std::move(y), {a, b}, [](Node<T>& n) {
        if (n.inputs[0]->requires_grad) {
            auto& g = n.inputs[0]->grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                g[i] += n.grad[i] * n.inputs[1]->value[i];
            }
        }
        if (n.inputs[1]->requires_grad) {
            auto& g = n.inputs[1]->grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                g[i] += n.grad[i] * n.inputs[0]->value[i];
            }
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, double c) {
    Tensor<T> y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        y[i] = static_cast<T>(y[i] * static_cast<T>(c));
    }
    return detail::make_node<T>("scale", std::move(y), {a}, [c](Node<T>& n) {
        auto& g = n.inputs[0]->grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            g[i] += n.grad[i] * static_cast<T>(c);
        }
    });
}

template <class T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        if (y[i] < T(0)) {
            y[i] = T(0);
        }
    }
    return detail::make_node<T>("relu", std::move(y), {a}, [](Node<T>& n) {
        auto& g = n.inputs[0]->grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            if (n.value[i] > T(0)) {
                g[i] += n.grad[i];
            }
        }
    });
}

template <class T>
T stable_sigmoid(T z) {
    if (z >= T(0)) {
        T e = std::exp(-z);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(z);
    return e / (T(1) + e);
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> y = a->value;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        y[i] = stable_sigmoid(y[i]);
    }
    return detail::make_node<T>("sigmoid", std::move(y), {a}, [](Node<T>& n) {
        auto& g = n.inputs[0]->grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            T s = n.value[i];
            g[i] += n.grad[i] * s * (T(1) - s);
        }
    });
}

// x: [..., k] viewed as rows, w: [k, n] -> [..., n] (leading shape kept).
template <class T>
Var<T> matmul(const Var<T>& x, const Var<T>& w) {
    detail::require<T>(w->value.shape.size() == 2, "matmul", "weight must be 2-D, got " + w->value.shape_str());
    std::int64_t k = w->value.shape[0];
    std::int64_t n = w->value.shape[1];
    detail::require<T>(!x->value.shape.empty() && x->value.last_dim() == k, "matmul",
                       "inner dims differ: " + x->value.shape_str() + " x " + w->value.shape_str());
    std::int64_t rows = x->value.rows();
    std::vector<std::int64_t> out_shape(x->value.shape.begin(), x->value.shape.end() - 1);
    out_shape.push_back(n);
    Tensor<T> y = Tensor<T>::zeros(out_shape);
    const T* xd = x->value.data.data();
    const T* wd = w->value.data.data();
    T* yd = y.data.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = xd + r * k;
        T* yr = yd + r * n;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            T xv = xr[kk];
            if (xv == T(0)) {
                continue;
            }
            const T* wr = wd + kk * n;
            for (std::int64_t j = 0; j < n; ++j) {
                yr[j] += xv * wr[j];
            }
        }
    }
    return detail::make_node<T>("matmul", std::move(y), {x, w}, [rows, k, n](Node<T>& n_) {
        const T* gd = n_.grad.data.data();
        const T* xd2 = n_.inputs[0]->value.data.data();
        const T* wd2 = n_.inputs[1]->value.data.data();
        if (n_.inputs[0]->requires_grad) {
            T* dx = n_.inputs[0]->grad.data.data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* gr = gd + r * n;
                T* dxr = dx + r * k;
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    const T* wr = wd2 + kk * n;
                    T acc = T(0);
                    for (std::int64_t j = 0; j < n; ++j) {
                        acc += gr[j] * wr[j];
                    }
                    dxr[kk] += acc;
                }
            }
        }
        if (n_.inputs[1]->requires_grad) {
            T* dw = n_.inputs[1]->grad.data.data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* gr = gd + r * n;
                const T* xr = xd2 + r * k;
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    T xv = xr[kk];
                    if (xv == T(0)) {
                        continue;
                    }
                    T* dwr = dw + kk * n;
                    for (std::int64_t j = 0; j < n; ++j) {
                        dwr[j] += xv * gr[j];
                    }
                }
            }
        }
    });
}

// x: [..., d] plus a broadcast row vector v of length d.
template <class T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& v) {
    std::int64_t d = x->value.last_dim();
    detail::require<T>(v->value.numel() == d, "add_rowvec",
                       "vector length " + v->value.shape_str() + " vs rows of " + x->value.shape_str());
    std::int64_t rows = x->value.rows();
    Tensor<T> y = x->value;
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < d; ++j) {
            y[r * d + j] += v->value[j];
        }
    }
    return detail::make_node<T>("add_rowvec", std::move(y), {x, v}, [rows, d](Node<T>& n) {
        if (n.inputs[0]->requires_grad) {
            auto& g = n.inputs[0]->grad;
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                g[i] += n.grad[i];
            }
        }
        if (n.inputs[1]->requires_grad) {
            auto& g = n.inputs[1]->grad;
            for (std::int64_t r = 0; r < rows; ++r) {
                for (std::int64_t j = 0; j < d; ++j) {
                    g[j] += n.grad[r * d + j];
                }
            }
        }
    });
}

template <class T>
Var<T> sum(const Var<T>& x) {
    T acc = T(0);
    for (std::int64_t i = 0; i < x->value.numel(); ++i) {
        acc += x->value[i];
    }
    return detail::make_node<T>("sum", Tensor<T>::from({1}, {acc}), {x}, [](Node<T>& n) {
        auto& g = n.inputs[0]->grad;
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            g[i] += n.grad[0];
        }
    });
}

template <class T>
Var<T> mean(const Var<T>& x) {
    std::int64_t m = x->value.numel();
    detail::require<T>(m > 0, "mean", "empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(m));
}

// ---------------------------------------------------------------------------
// row assembly ops (sequence building)
// ---------------------------------------------------------------------------

// Inputs are [d] or [Li, d]; result is [sum Li, d].
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    detail::require<T>(!parts.empty(), "concat_rows", "no parts");
    std::int64_t d = parts[0]->value.last_dim();
    std::int64_t total = 0;
    for (const auto& p : parts) {
        detail::require<T>(p->value.last_dim() == d, "concat_rows", "ragged last dim");
        total += p->value.rows();
    }
    Tensor<T> y = Tensor<T>::zeros({total, d});
    std::int64_t at = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data.begin(), p->value.data.end(), y.data.begin() + at);
        at += p->value.numel();
    }
    return detail::make_node<T>("concat_rows", std::move(y), parts, [](Node<T>& n) {
        std::int64_t at2 = 0;
        for (auto& p : n.inputs) {
            std::int64_t m = p->value.numel();
            if (p->requires_grad) {
                for (std::int64_t i = 0; i < m; ++i) {
                    p->grad[i] += n.grad[at2 + i];
                }
            }
            at2 += m;
        }
    });
}

// x viewed as rows [R, d]; picks rows by flat index.
template <class T>
Var<T> gather_rows(const Var<T>& x, std::vector<std::int64_t> indices) {
    std::int64_t d = x->value.last_dim();
    std::int64_t rows = x->value.rows();
    for (auto i : indices) {
        detail::require<T>(i >= 0 && i < rows, "gather_rows", "row index out of range");
    }
    Tensor<T> y = Tensor<T>::zeros({static_cast<std::int64_t>(indices.size()), d});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        std::copy_n(x->value.data.begin() + indices[r] * d, d, y.data.begin() + static_cast<std::int64_t>(r) * d);
    }
    return detail::make_node<T>("gather_rows", std::move(y), {x},
                                [idx = std::move(indices), d](Node<T>& n) {
                                    auto& g = n.inputs[0]->grad;
                                    for (std::size_t r = 0; r < idx.size(); ++r) {
                                        for (std::int64_t j = 0; j < d; ++j) {
                                            g[idx[r] * d + j] += n.grad[static_cast<std::int64_t>(r) * d + j];
                                        }
                                    }
                                });
}

// Stacks per-sequence token matrices [Li, d] into [B, Lmax, d], zero padded.
template <class T>
Var<T> pad_stack(const std::vector<Var<T>>& seqs, std::int64_t l_max) {
    detail::require<T>(!seqs.empty(), "pad_stack", "no sequences");
    std::int64_t d = seqs[0]->value.last_dim();
    for (const auto& s : seqs) {
        detail::require<T>(s->value.shape.size() == 2 && s->value.last_dim() == d, "pad_stack",
                           "sequence must be [L, d]");
        detail::require<T>(s->value.shape[0] <= l_max, "pad_stack", "sequence longer than pad length");
    }
    auto b = static_cast<std::int64_t>(seqs.size());
    Tensor<T> y = Tensor<T>::zeros({b, l_max, d});
    for (std::int64_t s = 0; s < b; ++s) {
        const auto& v = seqs[static_cast<std::size_t>(s)]->value;
        std::copy(v.data.begin(), v.data.end(), y.data.begin() + s * l_max * d);
    }
    return detail::make_node<T>("pad_stack", std::move(y), seqs, [l_max, d](Node<T>& n) {
        for (std::size_t s = 0; s < n.inputs.size(); ++s) {
            auto& in = n.inputs[s];
            if (!in->requires_grad) {
                continue;
            }
            std::int64_t m = in->value.numel();
            std::int64_t base = static_cast<std::int64_t>(s) * l_max * d;
            for (std::int64_t i = 0; i < m; ++i) {
                in->grad[i] += n.grad[base + i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// normalization / softmax
// ---------------------------------------------------------------------------

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps) {
    std::int64_t d = x->value.last_dim();
    detail::require<T>(gamma->value.numel() == d && beta->value.numel() == d, "layer_norm",
                       "affine params must have length " + std::to_string(d));
    std::int64_t rows = x->value.rows();
    Tensor<T> y = Tensor<T>::zeros(x->value.shape);
    Tensor<T> xhat = Tensor<T>::zeros(x->value.shape);
    std::vector<T> inv_std(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = x->value.data.data() + r * d;
        T mu = T(0);
        for (std::int64_t j = 0; j < d; ++j) {
            mu += xr[j];
        }
        mu /= static_cast<T>(d);
        T var = T(0);
        for (std::int64_t j = 0; j < d; ++j) {
            T c = xr[j] - mu;
            var += c * c;
        }
        var /= static_cast<T>(d);
        T is = T(1) / std::sqrt(var + static_cast<T>(eps));
        inv_std[static_cast<std::size_t>(r)] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            T h = (xr[j] - mu) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = gamma->value[j] * h + beta->value[j];
        }
    }
    return detail::make_node<T>(
        "layer_norm", std::move(y), {x, gamma, beta},
        [rows, d, xh = std::move(xhat), istd = std::move(inv_std)](Node<T>& n) {
            const auto& gamma_v = n.inputs[1]->value;
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* gr = n.grad.data.data() + r * d;
                const T* hr = xh.data.data() + r * d;
                if (n.inputs[1]->requires_grad) {
                    auto& dg = n.inputs[1]->grad;
                    for (std::int64_t j = 0; j < d; ++j) {
                        dg[j] += gr[j] * hr[j];
                    }
                }
                if (n.inputs[2]->requires_grad) {
                    auto& db = n.inputs[2]->grad;
                    for (std::int64_t j = 0; j < d; ++j) {
                        db[j] += gr[j];
                    }
                }
                if (n.inputs[0]->requires_grad) {
                    T sum_dh = T(0);
                    T sum_dh_h = T(0);
                    for (std::int64_t j = 0; j < d; ++j) {
                        T dh = gr[j] * gamma_v[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    T inv_d = T(1) / static_cast<T>(d);
                    T* dx = n.inputs[0]->grad.data.data() + r * d;
                    T is = istd[static_cast<std::size_t>(r)];
                    for (std::int64_t j = 0; j < d; ++j) {
                        T dh = gr[j] * gamma_v[j];
                        dx[j] += is * (dh - sum_dh * inv_d - hr[j] * sum_dh_h * inv_d);
                    }
                }
            }
        });
}

template <class T>
Var<T> softmax_rows(const Var<T>& x) {
    std::int64_t d = x->value.last_dim();
    std::int64_t rows = x->value.rows();
    Tensor<T> y = Tensor<T>::zeros(x->value.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = x->value.data.data() + r * d;
        T* yr = y.data.data() + r * d;
        T mx = xr[0];
        for (std::int64_t j = 1; j < d; ++j) {
            mx = std::max(mx, xr[j]);
        }
        T z = T(0);
        for (std::int64_t j = 0; j < d; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            z += yr[j];
        }
        for (std::int64_t j = 0; j < d; ++j) {
            yr[j] /= z;
        }
    }
    return detail::make_node<T>("softmax", std::move(y), {x}, [rows, d](Node<T>& n) {
        auto& dx = n.inputs[0]->grad;
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* yr = n.value.data.data() + r * d;
            const T* gr = n.grad.data.data() + r * d;
            T dot = T(0);
            for (std::int64_t j = 0; j < d; ++j) {
                dot += gr[j] * yr[j];
            }
            for (std::int64_t j = 0; j < d; ++j) {
                dx[r * d + j] += yr[j] * (gr[j] - dot);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// scaled dot-product attention (multi-head, fused, key-padding mask)
// ---------------------------------------------------------------------------

// q,k,v: [B, L, d]; mask: [B, L] with 1 = real token, 0 = padding.
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Tensor<T>& mask, int heads) {
    const auto& qs = q->value.shape;
    detail::require<T>(qs.size() == 3, "attention", "q must be [B, L, d]");
    detail::require<T>(q->value.same_shape(k->value) && q->value.same_shape(v->value), "attention",
                       "q/k/v shapes differ");
    std::int64_t b = qs[0], l = qs[1], d = qs[2];
    detail::require<T>(heads > 0 && d % heads == 0, "attention", "d must divide by heads");
    detail::require<T>(mask.shape == std::vector<std::int64_t>({b, l}), "attention", "mask must be [B, L]");
    std::int64_t dk = d / heads;
    T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dk));
    const T neg_inf = T(-1e30);

    Tensor<T> y = Tensor<T>::zeros(qs);
    Tensor<T> probs = Tensor<T>::zeros({b, static_cast<std::int64_t>(heads), l, l});
    std::vector<T> srow(static_cast<std::size_t>(l));
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (int h = 0; h < heads; ++h) {
            std::int64_t off = h * dk;
            for (std::int64_t i = 0; i < l; ++i) {
                const T* qi = q->value.data.data() + (bi * l + i) * d + off;
                for (std::int64_t j = 0; j < l; ++j) {
                    if (mask[bi * l + j] == T(0)) {
                        srow[static_cast<std::size_t>(j)] = neg_inf;
                        continue;
                    }
                    const T* kj = k->value.data.data() + (bi * l + j) * d + off;
                    T acc = T(0);
                    for (std::int64_t c = 0; c < dk; ++c) {
                        acc += qi[c] * kj[c];
                    }
                    srow[static_cast<std::size_t>(j)] = acc * inv_sqrt;
                }
                T mx = srow[0];
                for (std::int64_t j = 1; j < l; ++j) {
                    mx = std::max(mx, srow[static_cast<std::size_t>(j)]);
                }
                T z = T(0);
                T* prow = probs.data.data() + ((bi * heads + h) * l + i) * l;
                for (std::int64_t j = 0; j < l; ++j) {
                    T e = std::exp(srow[static_cast<std::size_t>(j)] - mx);
                    prow[j] = e;
                    z += e;
                }
                T* yi = y.data.data() + (bi * l + i) * d + off;
                for (std::int64_t j = 0; j < l; ++j) {
                    prow[j] /= z;
                    if (prow[j] == T(0)) {
                        continue;
                    }
                    const T* vj = v->value.data.data() + (bi * l + j) * d + off;
                    for (std::int64_t c = 0; c < dk; ++c) {
                        yi[c] += prow[j] * vj[c];
                    }
                }
            }
        }
    }
    return detail::make_node<T>(
        "attention", std::move(y), {q, k, v},
        [b, l, d, heads, dk, inv_sqrt, p = std::move(probs)](Node<T>& n) {
            std::vector<T> dp(static_cast<std::size_t>(l));
            std::vector<T> ds(static_cast<std::size_t>(l));
            const auto& qv = n.inputs[0]->value;
            const auto& kv = n.inputs[1]->value;
            const auto& vv = n.inputs[2]->value;
            bool need_q = n.inputs[0]->requires_grad;
            bool need_k = n.inputs[1]->requires_grad;
            bool need_v = n.inputs[2]->requires_grad;
            for (std::int64_t bi = 0; bi < b; ++bi) {
                for (int h = 0; h < heads; ++h) {
                    std::int64_t off = h * dk;
                    for (std::int64_t i = 0; i < l; ++i) {
                        const T* go = n.grad.data.data() + (bi * l + i) * d + off;
                        const T* prow = p.data.data() + ((bi * heads + h) * l + i) * l;
                        // dV and dP
                        T dot = T(0);
                        for (std::int64_t j = 0; j < l; ++j) {
                            T pij = prow[j];
                            const T* vj = vv.data.data() + (bi * l + j) * d + off;
                            T acc = T(0);
                            for (std::int64_t c = 0; c < dk; ++c) {
                                acc += go[c] * vj[c];
                            }
                            dp[static_cast<std::size_t>(j)] = acc;
                            dot += acc * pij;
                            if (need_v && pij != T(0)) {
                                T* dvj = n.inputs[2]->grad.data.data() + (bi * l + j) * d + off;
                                for (std::int64_t c = 0; c < dk; ++c) {
                                    dvj[c] += pij * go[c];
                                }
                            }
                        }
                        for (std::int64_t j = 0; j < l; ++j) {
                            ds[static_cast<std::size_t>(j)] =
                                prow[j] * (dp[static_cast<std::size_t>(j)] - dot);
                        }
                        if (need_q) {
                            T* dqi = n.inputs[0]->grad.data.data() + (bi * l + i) * d + off;
                            for (std::int64_t j = 0; j < l; ++j) {
                                T s = ds[static_cast<std::size_t>(j)] * inv_sqrt;
                                if (s == T(0)) {
                                    continue;
                                }
                                const T* kj = kv.data.data() + (bi * l + j) * d + off;
                                for (std::int64_t c = 0; c < dk; ++c) {
                                    dqi[c] += s * kj[c];
                                }
                            }
                        }
                        if (need_k) {
                            const T* qi = qv.data.data() + (bi * l + i) * d + off;
                            for (std::int64_t j = 0; j < l; ++j) {
                                T s = ds[static_cast<std::size_t>(j)] * inv_sqrt;
                                if (s == T(0)) {
                                    continue;
                                }
                                T* dkj = n.inputs[1]->grad.data.data() + (bi * l + j) * d + off;
                                for (std::int64_t c = 0; c < dk; ++c) {
                                    dkj[c] += s * qi[c];
                                }
                            }
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// 3-D convolution stack ops (channel-last layout [T, H, W, C])
// ---------------------------------------------------------------------------

template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::array<int, 3> stride,
              std::array<int, 3> pad) {
    const auto& xs = x->value.shape;
    const auto& ws = w->value.shape;
    detail::require<T>(xs.size() == 4, "conv3d", "input must be [T, H, W, C], got " + x->value.shape_str());
    detail::require<T>(ws.size() == 5, "conv3d", "weight must be [kT, kH, kW, Cin, Cout]");
    detail::require<T>(ws[3] == xs[3], "conv3d",
                       "input channels differ: " + x->value.shape_str() + " vs " + w->value.shape_str());
    std::int64_t co = ws[4];
    detail::require<T>(bias->value.numel() == co, "conv3d", "bias length must equal out channels");
    std::array<std::int64_t, 3> in{xs[0], xs[1], xs[2]};
    std::array<std::int64_t, 3> kk{ws[0], ws[1], ws[2]};
    std::array<std::int64_t, 3> out{};
    for (int a = 0; a < 3; ++a) {
        detail::require<T>(stride[a] > 0, "conv3d", "stride must be positive");
        std::int64_t numer = in[a] + 2 * pad[a] - kk[a];
        detail::require<T>(numer >= 0, "conv3d", "kernel larger than padded input");
        out[a] = numer / stride[a] + 1;
    }
    std::int64_t ci = xs[3];
    Tensor<T> y = Tensor<T>::zeros({out[0], out[1], out[2], co});
    const T* xd = x->value.data.data();
    const T* wd = w->value.data.data();
    T* yd = y.data.data();
    for (std::int64_t to = 0; to < out[0]; ++to) {
        for (std::int64_t ho = 0; ho < out[1]; ++ho) {
            for (std::int64_t wo = 0; wo < out[2]; ++wo) {
                T* yrow = yd + ((to * out[1] + ho) * out[2] + wo) * co;
                for (std::int64_t c = 0; c < co; ++c) {
                    yrow[c] = bias->value[c];
                }
                for (std::int64_t kt = 0; kt < kk[0]; ++kt) {
                    std::int64_t ti = to * stride[0] + kt - pad[0];
                    if (ti < 0 || ti >= in[0]) {
                        continue;
                    }
                    for (std::int64_t kh = 0; kh < kk[1]; ++kh) {
                        std::int64_t hi = ho * stride[1] + kh - pad[1];
                        if (hi < 0 || hi >= in[1]) {
                            continue;
                        }
                        for (std::int64_t kw = 0; kw < kk[2]; ++kw) {
                            std::int64_t wi = wo * stride[2] + kw - pad[2];
                            if (wi < 0 || wi >= in[2]) {
                                continue;
                            }
                            const T* xrow = xd + ((ti * in[1] + hi) * in[2] + wi) * ci;
                            const T* wbase = wd + ((kt * kk[1] + kh) * kk[2] + kw) * ci * co;
                            for (std::int64_t c = 0; c < ci; ++c) {
                                T xv = xrow[c];
                                if (xv == T(0)) {
                                    continue;
                                }
                                const T* wrow = wbase + c * co;
                                for (std::int64_t oc = 0; oc < co; ++oc) {
                                    yrow[oc] += xv * wrow[oc];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return detail::make_node<T>(
        "conv3d", std::move(y), {x, w, bias}, [in, kk, out, ci, co, stride, pad](Node<T>& n) {
            const T* gd = n.grad.data.data();
            const T* xd2 = n.inputs[0]->value.data.data();
            const T* wd2 = n.inputs[1]->value.data.data();
            bool need_x = n.inputs[0]->requires_grad;
            bool need_w = n.inputs[1]->requires_grad;
            bool need_b = n.inputs[2]->requires_grad;
            T* dx = need_x ? n.inputs[0]->grad.data.data() : nullptr;
            T* dw = need_w ? n.inputs[1]->grad.data.data() : nullptr;
            for (std::int64_t to = 0; to < out[0]; ++to) {
                for (std::int64_t ho = 0; ho < out[1]; ++ho) {
                    for (std::int64_t wo = 0; wo < out[2]; ++wo) {
                        const T* grow = gd + ((to * out[1] + ho) * out[2] + wo) * co;
                        if (need_b) {
                            auto& db = n.inputs[2]->grad;
                            for (std::int64_t c = 0; c < co; ++c) {
                                db[c] += grow[c];
                            }
                        }
                        for (std::int64_t kt = 0; kt < kk[0]; ++kt) {
                            std::int64_t ti = to * stride[0] + kt - pad[0];
                            if (ti < 0 || ti >= in[0]) {
                                continue;
                            }
                            for (std::int64_t kh = 0; kh < kk[1]; ++kh) {
                                std::int64_t hi = ho * stride[1] + kh - pad[1];
                                if (hi < 0 || hi >= in[1]) {
                                    continue;
                                }
                                for (std::int64_t kw = 0; kw < kk[2]; ++kw) {
                                    std::int64_t wi = wo * stride[2] + kw - pad[2];
                                    if (wi < 0 || wi >= in[2]) {
                                        continue;
                                    }
                                    std::int64_t xoff = ((ti * in[1] + hi) * in[2] + wi) * ci;
                                    std::int64_t woff = ((kt * kk[1] + kh) * kk[2] + kw) * ci * co;
                                    for (std::int64_t c = 0; c < ci; ++c) {
                                        const T* wrow = wd2 + woff + c * co;
                                        T xv = xd2[xoff + c];
                                        if (need_x) {
                                            T acc = T(0);
                                            for (std::int64_t oc = 0; oc < co; ++oc) {
                                                acc += grow[oc] * wrow[oc];
                                            }
                                            dx[xoff + c] += acc;
                                        }
                                        if (need_w && xv != T(0)) {
                                            T* dwr = dw + woff + c * co;
                                            for (std::int64_t oc = 0; oc < co; ++oc) {
                                                dwr[oc] += xv * grow[oc];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

// Non-overlapping average pooling; window clamped to the extent per axis.
template <class T>
Var<T> avg_pool3d(const Var<T>& x, int window) {
    const auto& xs = x->value.shape;
    detail::require<T>(xs.size() == 4, "avg_pool3d", "input must be [T, H, W, C]");
    detail::require<T>(window >= 1, "avg_pool3d", "window must be >= 1");
    std::array<std::int64_t, 3> in{xs[0], xs[1], xs[2]};
    std::array<std::int64_t, 3> win{};
    std::array<std::int64_t, 3> out{};
    for (int a = 0; a < 3; ++a) {
        win[a] = std::min<std::int64_t>(window, in[a]);
        out[a] = in[a] / win[a];
    }
    std::int64_t c = xs[3];
    T inv = T(1) / static_cast<T>(win[0] * win[1] * win[2]);
    Tensor<T> y = Tensor<T>::zeros({out[0], out[1], out[2], c});
    for (std::int64_t to = 0; to < out[0]; ++to) {
        for (std::int64_t ho = 0; ho < out[1]; ++ho) {
            for (std::int64_t wo = 0; wo < out[2]; ++wo) {
                T* yrow = y.data.data() + ((to * out[1] + ho) * out[2] + wo) * c;
                for (std::int64_t kt = 0; kt < win[0]; ++kt) {
                    for (std::int64_t kh = 0; kh < win[1]; ++kh) {
                        for (std::int64_t kw = 0; kw < win[2]; ++kw) {
                            const T* xrow =
                                x->value.data.data() +
                                (((to * win[0] + kt) * in[1] + ho * win[1] + kh) * in[2] + wo * win[2] + kw) * c;
                            for (std::int64_t ch = 0; ch < c; ++ch) {
                                yrow[ch] += xrow[ch] * inv;
                            }
                        }
                    }
                }
            }
        }
    }
    return detail::make_node<T>("avg_pool3d", std::move(y), {x}, [in, win, out, c, inv](Node<T>& n) {
        T* dx = n.inputs[0]->grad.data.data();
        for (std::int64_t to = 0; to < out[0]; ++to) {
            for (std::int64_t ho = 0; ho < out[1]; ++ho) {
                for (std::int64_t wo = 0; wo < out[2]; ++wo) {
                    const T* grow = n.grad.data.data() + ((to * out[1] + ho) * out[2] + wo) * c;
                    for (std::int64_t kt = 0; kt < win[0]; ++kt) {
                        for (std::int64_t kh = 0; kh < win[1]; ++kh) {
                            for (std::int64_t kw = 0; kw < win[2]; ++kw) {
                                T* xrow = dx + (((to * win[0] + kt) * in[1] + ho * win[1] + kh) * in[2] +
                                                wo * win[2] + kw) *
                                                   c;
                                for (std::int64_t ch = 0; ch < c; ++ch) {
                                    xrow[ch] += grow[ch] * inv;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

// Mean over T, H, W -> [1, C].
template <class T>
Var<T> global_mean_thw(const Var<T>& x) {
    const auto& xs = x->value.shape;
    detail::require<T>(xs.size() == 4, "global_mean_thw", "input must be [T, H, W, C]");
    std::int64_t vox = xs[0] * xs[1] * xs[2];
    std::int64_t c = xs[3];
    detail::require<T>(vox > 0, "global_mean_thw", "empty volume");
    T inv = T(1) / static_cast<T>(vox);
    Tensor<T> y = Tensor<T>::zeros({1, c});
    for (std::int64_t v = 0; v < vox; ++v) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            y[ch] += x->value[v * c + ch] * inv;
        }
    }
    return detail::make_node<T>("global_mean_thw", std::move(y), {x}, [vox, c, inv](Node<T>& n) {
        auto& dx = n.inputs[0]->grad;
        for (std::int64_t v = 0; v < vox; ++v) {
            for (std::int64_t ch = 0; ch < c; ++ch) {
                dx[v * c + ch] += n.grad[ch] * inv;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

enum class Reduction { Mean, Sum };

namespace detail {
template <class T>
T reduction_scale(Reduction r, std::int64_t n) {
    return r == Reduction::Mean ? T(1) / static_cast<T>(n) : T(1);
}
}  // namespace detail

// z: [N, C] logits; per-row weighted negative log softmax probability.
template <class T>
Var<T> cross_entropy_logits(const Var<T>& z, const std::vector<int>& labels,
                            const std::vector<double>& class_weights, Reduction reduction) {
    std::int64_t c = z->value.last_dim();
    std::int64_t n = z->value.rows();
    detail::require<T>(static_cast<std::int64_t>(labels.size()) == n, "cross_entropy_logits",
                       "one label per row required");
    detail::require<T>(n > 0, "cross_entropy_logits", "empty batch");
    detail::require<T>(static_cast<std::int64_t>(class_weights.size()) == c, "cross_entropy_logits",
                       "one weight per class required");
    for (int y : labels) {
        detail::require<T>(y >= 0 && y < c, "cross_entropy_logits", "label out of range");
    }
    Tensor<T> probs = Tensor<T>::zeros(z->value.shape);
    T total = T(0);
    for (std::int64_t r = 0; r < n; ++r) {
        const T* zr = z->value.data.data() + r * c;
        T* pr = probs.data.data() + r * c;
        T mx = zr[0];
        for (std::int64_t j = 1; j < c; ++j) {
            mx = std::max(mx, zr[j]);
        }
        T zsum = T(0);
        for (std::int64_t j = 0; j < c; ++j) {
            pr[j] = std::exp(zr[j] - mx);
            zsum += pr[j];
        }
        T log_z = std::log(zsum) + mx;
        for (std::int64_t j = 0; j < c; ++j) {
            pr[j] /= zsum;
        }
        total += static_cast<T>(class_weights[static_cast<std::size_t>(labels[static_cast<std::size_t>(r)])]) *
                 (log_z - zr[labels[static_cast<std::size_t>(r)]]);
    }
    total *= detail::reduction_scale<T>(reduction, n);
    return detail::make_node<T>(
        "cross_entropy_logits", Tensor<T>::from({1}, {total}), {z},
        [n, c, labels, class_weights, reduction, p = std::move(probs)](Node<T>& node) {
            T g = node.grad[0] * detail::reduction_scale<T>(reduction, n);
            auto& dz = node.inputs[0]->grad;
            for (std::int64_t r = 0; r < n; ++r) {
                int y = labels[static_cast<std::size_t>(r)];
                T w = static_cast<T>(class_weights[static_cast<std::size_t>(y)]);
                const T* pr = p.data.data() + r * c;
                for (std::int64_t j = 0; j < c; ++j) {
                    T delta = (j == y) ? T(1) : T(0);
                    dz[r * c + j] += g * w * (pr[j] - delta);
                }
            }
        });
}

// p: [N, C] probabilities (rows sum to 1); clamps p at 1e-12 before log.
template <class T>
Var<T> cross_entropy_probs(const Var<T>& p, const std::vector<int>& labels,
                           const std::vector<double>& class_weights, Reduction reduction) {
    std::int64_t c = p->value.last_dim();
    std::int64_t n = p->value.rows();
    detail::require<T>(static_cast<std::int64_t>(labels.size()) == n, "cross_entropy_probs",
                       "one label per row required");
    detail::require<T>(n > 0, "cross_entropy_probs", "empty batch");
    detail::require<T>(static_cast<std::int64_t>(class_weights.size()) == c, "cross_entropy_probs",
                       "one weight per class required");
    const T clamp = T(1e-12);
    T total = T(0);
    for (std::int64_t r = 0; r < n; ++r) {
        int y = labels[static_cast<std::size_t>(r)];
        detail::require<T>(y >= 0 && y < c, "cross_entropy_probs", "label out of range");
        T py = std::max(p->value[r * c + y], clamp);
        total += static_cast<T>(class_weights[static_cast<std::size_t>(y)]) * (-std::log(py));
    }
    total *= detail::reduction_scale<T>(reduction, n);
    return detail::make_node<T>(
        "cross_entropy_probs", Tensor<T>::from({1}, {total}), {p},
        [n, c, labels, class_weights, reduction, clamp](Node<T>& node) {
            T g = node.grad[0] * detail::reduction_scale<T>(reduction, n);
            auto& dp = node.inputs[0]->grad;
            const auto& pv = node.inputs[0]->value;
            for (std::int64_t r = 0; r < n; ++r) {
                int y = labels[static_cast<std::size_t>(r)];
                T py = pv[r * c + y];
                if (py <= clamp) {
                    continue;
                }
                T w = static_cast<T>(class_weights[static_cast<std::size_t>(y)]);
                dp[r * c + y] += g * w * (-T(1) / py);
            }
        });
}

// z: [N] or [N, 1] logits; y in {0, 1} per row; numerically stable.
template <class T>
Var<T> bce_logits(const Var<T>& z, const std::vector<double>& targets, Reduction reduction) {
    std::int64_t n = z->value.numel();
    detail::require<T>(static_cast<std::int64_t>(targets.size()) == n, "bce_logits",
                       "one target per logit required");
    detail::require<T>(n > 0, "bce_logits", "empty batch");
    T total = T(0);
    for (std::int64_t i = 0; i < n; ++i) {
        T zi = z->value[i];
        auto yi = static_cast<T>(targets[static_cast<std::size_t>(i)]);
        T mx = std::max(zi, T(0));
        total += mx - zi * yi + std::log1p(std::exp(-std::abs(zi)));
    }
    total *= detail::reduction_scale<T>(reduction, n);
    return detail::make_node<T>("bce_logits", Tensor<T>::from({1}, {total}), {z},
                                [n, targets, reduction](Node<T>& node) {
                                    T g = node.grad[0] * detail::reduction_scale<T>(reduction, n);
                                    auto& dz = node.inputs[0]->grad;
                                    for (std::int64_t i = 0; i < n; ++i) {
                                        T s = stable_sigmoid(node.inputs[0]->value[i]);
                                        dz[i] += g * (s - static_cast<T>(targets[static_cast<std::size_t>(i)]));
                                    }
                                });
}

// p: probabilities in (0, 1); clamped at [1e-12, 1 - 1e-12].
template <class T>
Var<T> bce_probs(const Var<T>& p, const std::vector<double>& targets, Reduction reduction) {
    std::int64_t n = p->value.numel();
    detail::require<T>(static_cast<std::int64_t>(targets.size()) == n, "bce_probs",
                       "one target per probability required");
    detail::require<T>(n > 0, "bce_probs", "empty batch");
    const T lo = T(1e-12);
    const T hi = T(1) - T(1e-12);
    T total = T(0);
    for (std::int64_t i = 0; i < n; ++i) {
        T pi = std::clamp(p->value[i], lo, hi);
        auto yi = static_cast<T>(targets[static_cast<std::size_t>(i)]);
        total += -(yi * std::log(pi) + (T(1) - yi) * std::log(T(1) - pi));
    }
    total *= detail::reduction_scale<T>(reduction, n);
    return detail::make_node<T>("bce_probs", Tensor<T>::from({1}, {total}), {p},
                                [n, targets, reduction, lo, hi](Node<T>& node) {
                                    T g = node.grad[0] * detail::reduction_scale<T>(reduction, n);
                                    auto& dp = node.inputs[0]->grad;
                                    const auto& pv = node.inputs[0]->value;
                                    for (std::int64_t i = 0; i < n; ++i) {
                                        T pi = pv[i];
                                        if (pi <= lo || pi >= hi) {
                                            continue;
                                        }
                                        auto yi = static_cast<T>(targets[static_cast<std::size_t>(i)]);
                                        dp[i] += g * (pi - yi) / (pi * (T(1) - pi));
                                    }
                                });
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

// Central-difference check of d(loss)/d(point) against the analytic gradient.
// The builder must construct the loss graph from the supplied leaf; relative
// error denominator is max(|analytic|, |numeric|, 1e-8).
inline double finite_difference_check(
    const std::function<Var<double>(const Var<double>&)>& build_loss, const Tensor<double>& point,
    double step) {
    if (step <= 0.0) {
        throw ShapeError("finite_difference_check: step must be positive");
    }
    auto lf = leaf<double>(point, true, "fd_leaf");
    auto loss = build_loss(lf);
    auto pass = backward(loss);
    auto analytic = gradient_of(lf, pass);

    double worst = 0.0;
    Tensor<double> probe = point;
    for (std::int64_t i = 0; i < point.numel(); ++i) {
        double orig = probe[i];
        probe[i] = orig + step;
        double up = build_loss(constant(probe))->value[0];
        probe[i] = orig - step;
        double down = build_loss(constant(probe))->value[0];
        probe[i] = orig;
        double numeric = (up - down) / (2.0 * step);
        double a = analytic.grad[i];
        double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

}  // namespace gcv::ad
