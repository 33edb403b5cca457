#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "ce/tensor.hpp"

namespace ce {

// Reverse-mode tape over TensorT. Each op builds a node whose backprop closure
// accumulates into the parents' grad buffers. Under NoGradGuard ops propagate
// values only, which keeps long sampling loops cheap.

template <class S>
struct NodeT {
    TensorT<S> value;
    TensorT<S> grad;  // allocated lazily on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<NodeT<S>>> parents;
    std::function<void(NodeT<S>&)> backprop;

    TensorT<S>& grad_buf() {
        if (grad.empty()) grad = TensorT<S>::zeros(value.shape);
        return grad;
    }
};

template <class S>
struct GradModeT {
    static inline bool enabled = true;
};

struct NoGradGuard {
    bool prev_f, prev_d;
    NoGradGuard() {
        prev_f = GradModeT<float>::enabled;
        prev_d = GradModeT<double>::enabled;
        GradModeT<float>::enabled = false;
        GradModeT<double>::enabled = false;
    }
    ~NoGradGuard() {
        GradModeT<float>::enabled = prev_f;
        GradModeT<double>::enabled = prev_d;
    }
};

template <class S>
class VarT {
public:
    VarT() = default;
    explicit VarT(std::shared_ptr<NodeT<S>> n) : n_(std::move(n)) {}

    static VarT leaf(TensorT<S> value, bool requires_grad) {
        auto n = std::make_shared<NodeT<S>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        return VarT(n);
    }

    static VarT constant(TensorT<S> value) { return leaf(std::move(value), false); }

    const TensorT<S>& val() const { return n_->value; }
    TensorT<S>& mutable_val() { return n_->value; }
    const TensorT<S>& grad() const { return n_->grad; }
    TensorT<S>& grad_buf() { return n_->grad_buf(); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }
    void zero_grad() { n_->grad = TensorT<S>(); }
    std::shared_ptr<NodeT<S>>& node() { return n_; }
    const std::shared_ptr<NodeT<S>>& node() const { return n_; }
    bool defined() const { return n_ != nullptr; }

private:
    std::shared_ptr<NodeT<S>> n_;
};

namespace ag {

template <class S>
VarT<S> make_op(TensorT<S> value, std::vector<VarT<S>> parents,
                std::function<void(NodeT<S>&)> backprop) {
    auto n = std::make_shared<NodeT<S>>();
    n->value = std::move(value);
    if (GradModeT<S>::enabled) {
        bool need = false;
        for (auto& p : parents) need = need || p.requires_grad();
        if (need) {
            n->requires_grad = true;
            for (auto& p : parents) n->parents.push_back(p.node());
            n->backprop = std::move(backprop);
        }
    }
    return VarT<S>(n);
}

// Runs reverse accumulation from a scalar (or any) root. Iterative topological
// order so deep chains cannot overflow the stack.
template <class S>
void backward(VarT<S> root) {
    auto* r = root.node().get();
    if (!r->requires_grad) return;
    root.grad_buf().fill(S(1));

    std::vector<NodeT<S>*> order;
    std::unordered_set<NodeT<S>*> seen;
    std::vector<std::pair<NodeT<S>*, size_t>> stack;
    stack.push_back({r, 0});
    seen.insert(r);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            NodeT<S>* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // order is a post-order: parents before children; iterate in reverse.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT<S>* node = *it;
        if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
}

template <class S>
VarT<S> add(VarT<S> a, VarT<S> b) {
    check_arg(a.val().same_shape(b.val()), "add: shape mismatch");
    TensorT<S> out = a.val();
    out.add_(b.val());
    return make_op<S>(std::move(out), {a, b}, [](NodeT<S>& n) {
        for (int i = 0; i < 2; i++) {
            auto& p = *n.parents[i];
            if (p.requires_grad) p.grad_buf().add_(n.grad);
        }
    });
}

template <class S>
VarT<S> sub(VarT<S> a, VarT<S> b) {
    check_arg(a.val().same_shape(b.val()), "sub: shape mismatch");
    TensorT<S> out = a.val();
    for (size_t i = 0; i < out.data.size(); i++) out.data[i] -= b.val().data[i];
    return make_op<S>(std::move(out), {a, b}, [](NodeT<S>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) pa.grad_buf().add_(n.grad);
        if (pb.requires_grad) {
            auto& g = pb.grad_buf();
            for (size_t i = 0; i < g.data.size(); i++) g.data[i] -= n.grad.data[i];
        }
    });
}

template <class S>
VarT<S> mul(VarT<S> a, VarT<S> b) {
    check_arg(a.val().same_shape(b.val()), "mul: shape mismatch");
    TensorT<S> out = a.val();
    for (size_t i = 0; i < out.data.size(); i++) out.data[i] *= b.val().data[i];
    return make_op<S>(std::move(out), {a, b}, [](NodeT<S>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buf();
            for (size_t i = 0; i < g.data.size(); i++)
                g.data[i] += n.grad.data[i] * pb.value.data[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buf();
            for (size_t i = 0; i < g.data.size(); i++)
                g.data[i] += n.grad.data[i] * pa.value.data[i];
        }
    });
}

template <class S>
VarT<S> scale(VarT<S> a, S s) {
    TensorT<S> out = a.val();
    for (auto& v : out.data) v *= s;
    return make_op<S>(std::move(out), {a}, [s](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buf();
        for (size_t i = 0; i < g.data.size(); i++) g.data[i] += s * n.grad.data[i];
    });
}

// a + s * b
template <class S>
VarT<S> add_scaled(VarT<S> a, VarT<S> b, S s) {
    check_arg(a.val().same_shape(b.val()), "add_scaled: shape mismatch");
    TensorT<S> out = a.val();
    for (size_t i = 0; i < out.data.size(); i++) out.data[i] += s * b.val().data[i];
    return make_op<S>(std::move(out), {a, b}, [s](NodeT<S>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) pa.grad_buf().add_(n.grad);
        if (pb.requires_grad) {
            auto& g = pb.grad_buf();
            for (size_t i = 0; i < g.data.size(); i++) g.data[i] += s * n.grad.data[i];
        }
    });
}

template <class S>
VarT<S> reshape(VarT<S> a, std::vector<int> shp) {
    TensorT<S> out = a.val().reshaped(shp);
    return make_op<S>(std::move(out), {a}, [](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buf();
        for (size_t i = 0; i < g.data.size(); i++) g.data[i] += n.grad.data[i];
    });
}

template <class S>
VarT<S> transpose2d(VarT<S> a) {
    int r = a.val().rows(), c = a.val().cols();
    TensorT<S> out({c, r});
    for (int i = 0; i < r; i++)
        for (int j = 0; j < c; j++) out.at(j, i) = a.val().at(i, j);
    return make_op<S>(std::move(out), {a}, [r, c](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buf();
        for (int i = 0; i < r; i++)
            for (int j = 0; j < c; j++) g.at(i, j) += n.grad.at(j, i);
    });
}

// matmul with optional transposes: out = op(a) * op(b).
template <class S>
VarT<S> matmul(VarT<S> a, VarT<S> b, bool ta = false, bool tb = false) {
    TensorT<S> out = matmul_tensors(a.val(), ta, b.val(), tb);
    return make_op<S>(std::move(out), {a, b}, [ta, tb](NodeT<S>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        const TensorT<S>& A = pa.value;
        const TensorT<S>& B = pb.value;
        const TensorT<S>& G = n.grad;
        if (pa.requires_grad) {
            // dA for: C = op(A) op(B)
            if (!ta && !tb) gemm(G, false, B, true, pa.grad_buf(), S(1), S(1));
            else if (!ta && tb) gemm(G, false, B, false, pa.grad_buf(), S(1), S(1));
            else if (ta && !tb) gemm(B, false, G, true, pa.grad_buf(), S(1), S(1));
            else gemm(B, true, G, true, pa.grad_buf(), S(1), S(1));
        }
        if (pb.requires_grad) {
            if (!ta && !tb) gemm(A, true, G, false, pb.grad_buf(), S(1), S(1));
            else if (!ta && tb) gemm(G, true, A, false, pb.grad_buf(), S(1), S(1));
            else if (ta && !tb) gemm(A, false, G, false, pb.grad_buf(), S(1), S(1));
            else gemm(G, true, A, true, pb.grad_buf(), S(1), S(1));
        }
    });
}

// Adds a row vector b (1 x C or C) to every row of a (N x C).
template <class S>
VarT<S> add_rowvec(VarT<S> a, VarT<S> b) {
    int cols = a.val().cols();
    check_arg(static_cast<int>(b.val().numel()) == cols, "add_rowvec: size mismatch");
    TensorT<S> out = a.val();
    int rows = out.rows();
    for (int r = 0; r < rows; r++)
        for (int c = 0; c < cols; c++) out.at(r, c) += b.val().data[c];
    return make_op<S>(std::move(out), {a, b}, [rows, cols](NodeT<S>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) pa.grad_buf().add_(n.grad);
        if (pb.requires_grad) {
            auto& g = pb.grad_buf();
            for (int r = 0; r < rows; r++)
                for (int c = 0; c < cols; c++) g.data[c] += n.grad.at(r, c);
        }
    });
}

// Adds a per-channel bias b (numel C) to every spatial position of a CHW map.
template <class S>
VarT<S> add_chvec(VarT<S> a, VarT<S> b) {
    const TensorT<S>& av = a.val();
    int C = av.shape[0], H = av.shape[1], W = av.shape[2];
    check_arg(static_cast<int>(b.val().numel()) == C, "add_chvec: size mismatch");
    TensorT<S> out = av;
    long hw = static_cast<long>(H) * W;
    for (int c = 0; c < C; c++) {
        S bias = b.val().data[c];
        S* row = out.data.data() + static_cast<size_t>(c) * hw;
        for (long i = 0; i < hw; i++) row[i] += bias;
    }
    return make_op<S>(std::move(out), {a, b}, [C, hw](NodeT<S>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) pa.grad_buf().add_(n.grad);
        if (pb.requires_grad) {
            auto& g = pb.grad_buf();
            for (int c = 0; c < C; c++) {
                S s = 0;
                const S* row = n.grad.data.data() + static_cast<size_t>(c) * hw;
                for (long i = 0; i < hw; i++) s += row[i];
                g.data[c] += s;
            }
        }
    });
}

template <class S>
VarT<S> silu(VarT<S> a) {
    TensorT<S> out = a.val();
    for (auto& v : out.data) {
        S sg = S(1) / (S(1) + std::exp(-v));
        v = v * sg;
    }
    return make_op<S>(std::move(out), {a}, [](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buf();
        for (size_t i = 0; i < g.data.size(); i++) {
            S x = p.value.data[i];
            S sg = S(1) / (S(1) + std::exp(-x));
            g.data[i] += n.grad.data[i] * sg * (S(1) + x * (S(1) - sg));
        }
    });
}

// Row-wise softmax with max-subtraction; backward uses the saved output.
template <class S>
VarT<S> softmax_rows(VarT<S> a) {
    TensorT<S> out = a.val();
    int rows = out.rows(), cols = out.cols();
    for (int r = 0; r < rows; r++) {
        S* row = out.data.data() + static_cast<size_t>(r) * cols;
        S mx = row[0];
        for (int c = 1; c < cols; c++) mx = std::max(mx, row[c]);
        S sum = 0;
        for (int c = 0; c < cols; c++) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        S inv = S(1) / sum;
        for (int c = 0; c < cols; c++) row[c] *= inv;
    }
    return make_op<S>(std::move(out), {a}, [rows, cols](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buf();
        for (int r = 0; r < rows; r++) {
            const S* pr = n.value.data.data() + static_cast<size_t>(r) * cols;
            const S* gr = n.grad.data.data() + static_cast<size_t>(r) * cols;
            S dot = 0;
            for (int c = 0; c < cols; c++) dot += pr[c] * gr[c];
            S* go = g.data.data() + static_cast<size_t>(r) * cols;
            for (int c = 0; c < cols; c++) go[c] += pr[c] * (gr[c] - dot);
        }
    });
}

// GroupNorm over a CHW tensor with per-channel affine. gamma/beta have C elems.
template <class S>
VarT<S> group_norm(VarT<S> x, VarT<S> gamma, VarT<S> beta, int groups,
                   S eps = S(1e-5)) {
    const TensorT<S>& xv = x.val();
    int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    check_arg(C % groups == 0, "group_norm: channels not divisible by groups");
    int cpg = C / groups;
    long gsize = static_cast<long>(cpg) * H * W;
    TensorT<S> out({C, H, W});
    TensorT<S> xhat({C, H, W});
    std::vector<S> inv_std(groups);
    for (int g = 0; g < groups; g++) {
        const S* xd = xv.data.data() + static_cast<size_t>(g) * gsize;
        double mean = 0;
        for (long i = 0; i < gsize; i++) mean += xd[i];
        mean /= gsize;
        double var = 0;
        for (long i = 0; i < gsize; i++) {
            double d = xd[i] - mean;
            var += d * d;
        }
        var /= gsize;
        S istd = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        inv_std[g] = istd;
        S* xh = xhat.data.data() + static_cast<size_t>(g) * gsize;
        for (long i = 0; i < gsize; i++) xh[i] = (xd[i] - static_cast<S>(mean)) * istd;
    }
    long hw = static_cast<long>(H) * W;
    for (int c = 0; c < C; c++) {
        S gm = gamma.val().data[c], bt = beta.val().data[c];
        const S* xh = xhat.data.data() + static_cast<size_t>(c) * hw;
        S* o = out.data.data() + static_cast<size_t>(c) * hw;
        for (long i = 0; i < hw; i++) o[i] = gm * xh[i] + bt;
    }
    auto xhat_keep = std::make_shared<TensorT<S>>(std::move(xhat));
    auto istd_keep = std::make_shared<std::vector<S>>(std::move(inv_std));
    return make_op<S>(
        std::move(out), {x, gamma, beta},
        [groups, cpg, hw, gsize, xhat_keep, istd_keep](NodeT<S>& n) {
            auto& px = *n.parents[0];
            auto& pg = *n.parents[1];
            auto& pb = *n.parents[2];
            const TensorT<S>& xh = *xhat_keep;
            int C = groups * cpg;
            if (pg.requires_grad || pb.requires_grad) {
                for (int c = 0; c < C; c++) {
                    const S* gr = n.grad.data.data() + static_cast<size_t>(c) * hw;
                    const S* xr = xh.data.data() + static_cast<size_t>(c) * hw;
                    S dg = 0, db = 0;
                    for (long i = 0; i < hw; i++) {
                        dg += gr[i] * xr[i];
                        db += gr[i];
                    }
                    if (pg.requires_grad) pg.grad_buf().data[c] += dg;
                    if (pb.requires_grad) pb.grad_buf().data[c] += db;
                }
            }
            if (px.requires_grad) {
                auto& gx = px.grad_buf();
                const TensorT<S>& gamma_v = pg.value;
                for (int g = 0; g < groups; g++) {
                    // dxhat = dy * gamma(channel)
                    double sum_dxh = 0, sum_dxh_xh = 0;
                    const S* xr = xh.data.data() + static_cast<size_t>(g) * gsize;
                    std::vector<S> dxh(static_cast<size_t>(gsize));
                    for (int cc = 0; cc < cpg; cc++) {
                        int c = g * cpg + cc;
                        const S* gr = n.grad.data.data() + static_cast<size_t>(c) * hw;
                        S gm = gamma_v.data[c];
                        S* dst = dxh.data() + static_cast<size_t>(cc) * hw;
                        for (long i = 0; i < hw; i++) dst[i] = gr[i] * gm;
                    }
                    for (long i = 0; i < gsize; i++) {
                        sum_dxh += dxh[i];
                        sum_dxh_xh += static_cast<double>(dxh[i]) * xr[i];
                    }
                    S m1 = static_cast<S>(sum_dxh / gsize);
                    S m2 = static_cast<S>(sum_dxh_xh / gsize);
                    S istd = (*istd_keep)[g];
                    S* gx_p = gx.data.data() + static_cast<size_t>(g) * gsize;
                    for (long i = 0; i < gsize; i++)
                        gx_p[i] += istd * (dxh[i] - m1 - xr[i] * m2);
                }
            }
        });
}

// LayerNorm over the last dim of a 2-D tensor with per-feature affine.
template <class S>
VarT<S> layer_norm_rows(VarT<S> x, VarT<S> gamma, VarT<S> beta, S eps = S(1e-5)) {
    const TensorT<S>& xv = x.val();
    int R = xv.rows(), C = xv.cols();
    TensorT<S> out({R, C});
    TensorT<S> xhat({R, C});
    std::vector<S> inv_std(static_cast<size_t>(R));
    for (int r = 0; r < R; r++) {
        const S* xd = xv.data.data() + static_cast<size_t>(r) * C;
        double mean = 0;
        for (int c = 0; c < C; c++) mean += xd[c];
        mean /= C;
        double var = 0;
        for (int c = 0; c < C; c++) {
            double d = xd[c] - mean;
            var += d * d;
        }
        var /= C;
        S istd = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        inv_std[static_cast<size_t>(r)] = istd;
        S* xh = xhat.data.data() + static_cast<size_t>(r) * C;
        S* o = out.data.data() + static_cast<size_t>(r) * C;
        for (int c = 0; c < C; c++) {
            xh[c] = (xd[c] - static_cast<S>(mean)) * istd;
            o[c] = gamma.val().data[c] * xh[c] + beta.val().data[c];
        }
    }
    auto xhat_keep = std::make_shared<TensorT<S>>(std::move(xhat));
    auto istd_keep = std::make_shared<std::vector<S>>(std::move(inv_std));
    return make_op<S>(
        std::move(out), {x, gamma, beta}, [R, C, xhat_keep, istd_keep](NodeT<S>& n) {
            auto& px = *n.parents[0];
            auto& pg = *n.parents[1];
            auto& pb = *n.parents[2];
            const TensorT<S>& xh = *xhat_keep;
            for (int r = 0; r < R; r++) {
                const S* gr = n.grad.data.data() + static_cast<size_t>(r) * C;
                const S* xr = xh.data.data() + static_cast<size_t>(r) * C;
                if (pg.requires_grad || pb.requires_grad) {
                    for (int c = 0; c < C; c++) {
                        if (pg.requires_grad) pg.grad_buf().data[c] += gr[c] * xr[c];
                        if (pb.requires_grad) pb.grad_buf().data[c] += gr[c];
                    }
                }
                if (px.requires_grad) {
                    const TensorT<S>& gamma_v = pg.value;
                    double sum_dxh = 0, sum_dxh_xh = 0;
                    for (int c = 0; c < C; c++) {
                        double d = static_cast<double>(gr[c]) * gamma_v.data[c];
                        sum_dxh += d;
                        sum_dxh_xh += d * xr[c];
                    }
                    S m1 = static_cast<S>(sum_dxh / C);
                    S m2 = static_cast<S>(sum_dxh_xh / C);
                    S istd = (*istd_keep)[static_cast<size_t>(r)];
                    S* gx = px.grad_buf().data.data() + static_cast<size_t>(r) * C;
                    for (int c = 0; c < C; c++)
                        gx[c] += istd * (gr[c] * gamma_v.data[c] - m1 - xr[c] * m2);
                }
            }
        });
}

// 2-D convolution on CHW via im2col. w: (C_out, C_in, kh, kw), b: (C_out).
template <class S>
VarT<S> conv2d(VarT<S> x, VarT<S> w, VarT<S> b, int stride, int pad) {
    const TensorT<S>& xv = x.val();
    const TensorT<S>& wv = w.val();
    int C_in = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    int C_out = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3];
    check_arg(wv.shape[1] == C_in, "conv2d: channel mismatch");
    int ho = (H + 2 * pad - kh) / stride + 1;
    int wo = (W + 2 * pad - kw) / stride + 1;
    TensorT<S> col;
    im2col(xv, kh, kw, stride, pad, col);
    TensorT<S> wmat = wv.reshaped({C_out, C_in * kh * kw});
    TensorT<S> y({C_out, ho * wo});
    gemm(wmat, false, col, false, y);
    for (int c = 0; c < C_out; c++) {
        S bias = b.val().data[c];
        S* row = y.data.data() + static_cast<size_t>(c) * ho * wo;
        for (int i = 0; i < ho * wo; i++) row[i] += bias;
    }
    auto col_keep = std::make_shared<TensorT<S>>(std::move(col));
    TensorT<S> out = y.reshaped({C_out, ho, wo});
    return make_op<S>(
        std::move(out), {x, w, b},
        [C_in, H, W, C_out, kh, kw, stride, pad, ho, wo, col_keep](NodeT<S>& n) {
            auto& px = *n.parents[0];
            auto& pw = *n.parents[1];
            auto& pb = *n.parents[2];
            TensorT<S> gy = n.grad.reshaped({C_out, ho * wo});
            if (pb.requires_grad) {
                auto& gb = pb.grad_buf();
                for (int c = 0; c < C_out; c++) {
                    S s = 0;
                    const S* row = gy.data.data() + static_cast<size_t>(c) * ho * wo;
                    for (int i = 0; i < ho * wo; i++) s += row[i];
                    gb.data[c] += s;
                }
            }
            if (pw.requires_grad) {
                TensorT<S> gw = pw.grad_buf().reshaped({C_out, C_in * kh * kw});
                gemm(gy, false, *col_keep, true, gw, S(1), S(1));
                pw.grad_buf() = gw.reshaped({C_out, C_in, kh, kw});
            }
            if (px.requires_grad) {
                TensorT<S> wmat = pw.value.reshaped({C_out, C_in * kh * kw});
                TensorT<S> gcol({C_in * kh * kw, ho * wo});
                gemm(wmat, true, gy, false, gcol);
                TensorT<S> gx;
                col2im(gcol, C_in, H, W, kh, kw, stride, pad, gx);
                px.grad_buf().add_(gx);
            }
        });
}

template <class S>
VarT<S> upsample_nearest2x(VarT<S> x) {
    const TensorT<S>& xv = x.val();
    int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    TensorT<S> out({C, H * 2, W * 2});
    for (int c = 0; c < C; c++)
        for (int y = 0; y < H * 2; y++)
            for (int xx = 0; xx < W * 2; xx++)
                out.at(c, y, xx) = xv.at(c, y / 2, xx / 2);
    return make_op<S>(std::move(out), {x}, [C, H, W](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buf();
        for (int c = 0; c < C; c++)
            for (int y = 0; y < H * 2; y++)
                for (int xx = 0; xx < W * 2; xx++)
                    g.at(c, y / 2, xx / 2) += n.grad.at(c, y, xx);
    });
}

template <class S>
VarT<S> concat_ch(VarT<S> a, VarT<S> b) {
    const TensorT<S>& av = a.val();
    const TensorT<S>& bv = b.val();
    check_arg(av.shape[1] == bv.shape[1] && av.shape[2] == bv.shape[2],
              "concat_ch: spatial mismatch");
    int Ca = av.shape[0], Cb = bv.shape[0], H = av.shape[1], W = av.shape[2];
    TensorT<S> out({Ca + Cb, H, W});
    std::copy(av.data.begin(), av.data.end(), out.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.data.size());
    return make_op<S>(std::move(out), {a, b}, [Ca, Cb, H, W](NodeT<S>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        long na = static_cast<long>(Ca) * H * W;
        long nb = static_cast<long>(Cb) * H * W;
        if (pa.requires_grad) {
            auto& g = pa.grad_buf();
            for (long i = 0; i < na; i++) g.data[i] += n.grad.data[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buf();
            for (long i = 0; i < nb; i++) g.data[i] += n.grad.data[na + i];
        }
    });
}

// Gathers rows of an embedding table: ids (length L) -> L x d.
template <class S>
VarT<S> embedding_gather(VarT<S> table, std::vector<int> ids) {
    const TensorT<S>& tv = table.val();
    int d = tv.cols();
    int L = static_cast<int>(ids.size());
    TensorT<S> out({L, d});
    for (int i = 0; i < L; i++) {
        check_arg(ids[i] >= 0 && ids[i] < tv.rows(), "embedding_gather: id out of range");
        std::copy(tv.data.begin() + static_cast<size_t>(ids[i]) * d,
                  tv.data.begin() + static_cast<size_t>(ids[i] + 1) * d,
                  out.data.begin() + static_cast<size_t>(i) * d);
    }
    return make_op<S>(std::move(out), {table}, [ids, d, L](NodeT<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buf();
        for (int i = 0; i < L; i++) {
            S* dst = g.data.data() + static_cast<size_t>(ids[i]) * d;
            const S* src = n.grad.data.data() + static_cast<size_t>(i) * d;
            for (int c = 0; c < d; c++) dst[c] += src[c];
        }
    });
}

// Mean of squared differences against a constant target, reduced to a scalar.
template <class S>
VarT<S> mse_to(VarT<S> a, const TensorT<S>& target) {
    check_arg(a.val().same_shape(target), "mse_to: shape mismatch");
    long n = a.val().numel();
    double acc = 0;
    for (long i = 0; i < n; i++) {
        double d = static_cast<double>(a.val().data[i]) - target.data[i];
        acc += d * d;
    }
    TensorT<S> out({1});
    out.data[0] = static_cast<S>(acc / n);
    auto tgt = std::make_shared<TensorT<S>>(target);
    return make_op<S>(std::move(out), {a}, [tgt, n](NodeT<S>& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buf();
        S c = nd.grad.data[0] * S(2) / static_cast<S>(n);
        for (long i = 0; i < n; i++)
            g.data[i] += c * (p.value.data[i] - tgt->data[i]);
    });
}

template <class S>
VarT<S> mean_all(VarT<S> a) {
    long n = a.val().numel();
    double acc = 0;
    for (S v : a.val().data) acc += v;
    TensorT<S> out({1});
    out.data[0] = static_cast<S>(acc / n);
    return make_op<S>(std::move(out), {a}, [n](NodeT<S>& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buf();
        S c = nd.grad.data[0] / static_cast<S>(n);
        for (auto& v : g.data) v += c;
    });
}

// Mean cross entropy of row-wise softmax against integer targets.
template <class S>
VarT<S> cross_entropy_rows(VarT<S> logits, std::vector<int> targets) {
    const TensorT<S>& lv = logits.val();
    int R = lv.rows(), C = lv.cols();
    check_arg(static_cast<int>(targets.size()) == R, "cross_entropy: target count");
    TensorT<S> probs({R, C});
    double loss = 0;
    for (int r = 0; r < R; r++) {
        const S* row = lv.data.data() + static_cast<size_t>(r) * C;
        S mx = row[0];
        for (int c = 1; c < C; c++) mx = std::max(mx, row[c]);
        double sum = 0;
        S* pr = probs.data.data() + static_cast<size_t>(r) * C;
        for (int c = 0; c < C; c++) {
            pr[c] = std::exp(row[c] - mx);
            sum += pr[c];
        }
        for (int c = 0; c < C; c++) pr[c] = static_cast<S>(pr[c] / sum);
        loss -= std::log(std::max(static_cast<double>(pr[targets[r]]), 1e-30));
    }
    TensorT<S> out({1});
    out.data[0] = static_cast<S>(loss / R);
    auto probs_keep = std::make_shared<TensorT<S>>(std::move(probs));
    return make_op<S>(std::move(out), {logits}, [targets, R, C, probs_keep](NodeT<S>& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buf();
        S c0 = nd.grad.data[0] / static_cast<S>(R);
        for (int r = 0; r < R; r++) {
            const S* pr = probs_keep->data.data() + static_cast<size_t>(r) * C;
            S* gr = g.data.data() + static_cast<size_t>(r) * C;
            for (int c = 0; c < C; c++) gr[c] += c0 * pr[c];
            gr[targets[r]] -= c0;
        }
    });
}

// Row-wise L2 normalization: y_r = x_r / max(||x_r||, eps).
template <class S>
VarT<S> l2_normalize_rows(VarT<S> x, S eps = S(1e-12)) {
    const TensorT<S>& xv = x.val();
    int R = xv.rows(), C = xv.cols();
    TensorT<S> out({R, C});
    std::vector<S> inv_norm(static_cast<size_t>(R));
    for (int r = 0; r < R; r++) {
        const S* row = xv.data.data() + static_cast<size_t>(r) * C;
        double s = 0;
        for (int c = 0; c < C; c++) s += static_cast<double>(row[c]) * row[c];
        S inv = static_cast<S>(1.0 / std::max(std::sqrt(s), static_cast<double>(eps)));
        inv_norm[static_cast<size_t>(r)] = inv;
        S* o = out.data.data() + static_cast<size_t>(r) * C;
        for (int c = 0; c < C; c++) o[c] = row[c] * inv;
    }
    auto inv_keep = std::make_shared<std::vector<S>>(std::move(inv_norm));
    return make_op<S>(std::move(out), {x}, [R, C, inv_keep](NodeT<S>& nd) {
        auto& p = *nd.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buf();
        for (int r = 0; r < R; r++) {
            const S* y = nd.value.data.data() + static_cast<size_t>(r) * C;
            const S* gy = nd.grad.data.data() + static_cast<size_t>(r) * C;
            S dot = 0;
            for (int c = 0; c < C; c++) dot += y[c] * gy[c];
            S inv = (*inv_keep)[static_cast<size_t>(r)];
            S* gx = g.data.data() + static_cast<size_t>(r) * C;
            for (int c = 0; c < C; c++) gx[c] += inv * (gy[c] - y[c] * dot);
        }
    });
}

}  // namespace ag

template <class S>
VarT<S> operator+(VarT<S> a, VarT<S> b) { return ag::add(a, b); }
template <class S>
VarT<S> operator-(VarT<S> a, VarT<S> b) { return ag::sub(a, b); }
template <class S>
VarT<S> operator*(VarT<S> a, VarT<S> b) { return ag::mul(a, b); }

using Var = VarT<float>;

}  // namespace ce
