#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "ce/common.hpp"
#include "ce/rng.hpp"

namespace ce {

// Dense row-major tensor. Shapes used in this project are small (at most a few
// hundred thousand elements), so everything is a flat vector plus a shape.
template <class S>
struct TensorT {
    std::vector<int> shape;
    std::vector<S> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> shp) : shape(std::move(shp)) {
        data.assign(static_cast<size_t>(numel_of(shape)), S(0));
    }

    static long numel_of(const std::vector<int>& shp) {
        long n = 1;
        for (int d : shp) n *= d;
        return n;
    }

    static TensorT zeros(std::vector<int> shp) { return TensorT(std::move(shp)); }

    static TensorT full(std::vector<int> shp, S v) {
        TensorT t(std::move(shp));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static TensorT randn(std::vector<int> shp, Rng& rng, S stddev = S(1)) {
        TensorT t(std::move(shp));
        for (auto& v : t.data) v = static_cast<S>(rng.normal()) * stddev;
        return t;
    }

    static TensorT from(std::vector<int> shp, std::vector<S> values) {
        TensorT t;
        t.shape = std::move(shp);
        t.data = std::move(values);
        check_arg(static_cast<long>(t.data.size()) == numel_of(t.shape),
                  "tensor data size does not match shape");
        return t;
    }

    long numel() const { return static_cast<long>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    bool empty() const { return data.empty(); }

    // 2-D accessors (rows x cols).
    int rows() const { return shape[0]; }
    int cols() const { return shape[1]; }
    S& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    S at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    // 3-D accessors (channels x height x width).
    S& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    S at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }

    TensorT reshaped(std::vector<int> shp) const {
        check_arg(numel_of(shp) == numel(), "reshape changes element count");
        TensorT t = *this;
        t.shape = std::move(shp);
        return t;
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    void fill(S v) { std::fill(data.begin(), data.end(), v); }

    void add_(const TensorT& o) {
        for (size_t i = 0; i < data.size(); i++) data[i] += o.data[i];
    }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    S max_abs_diff(const TensorT& o) const {
        S m = 0;
        for (size_t i = 0; i < data.size(); i++)
            m = std::max(m, std::abs(data[i] - o.data[i]));
        return m;
    }

    template <class T2>
    TensorT<T2> cast() const {
        TensorT<T2> t;
        t.shape = shape;
        t.data.resize(data.size());
        for (size_t i = 0; i < data.size(); i++) t.data[i] = static_cast<T2>(data[i]);
        return t;
    }
};

using Tensor = TensorT<float>;

namespace detail {
template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;
}  // namespace detail

// C = alpha * op(A) * op(B) + beta * C, 2-D row-major operands.
template <class S>
void gemm(const TensorT<S>& a, bool trans_a, const TensorT<S>& b, bool trans_b,
          TensorT<S>& c, S alpha = S(1), S beta = S(0)) {
    int am = a.rows(), an = a.cols();
    int bm = b.rows(), bn = b.cols();
    int m = trans_a ? an : am;
    int k = trans_a ? am : an;
    int kb = trans_b ? bn : bm;
    int n = trans_b ? bm : bn;
    check_arg(k == kb, "gemm: inner dimensions differ");
    check_arg(c.rows() == m && c.cols() == n, "gemm: output shape mismatch");
    detail::ECMap<S> ma(a.data.data(), am, an);
    detail::ECMap<S> mb(b.data.data(), bm, bn);
    detail::EMap<S> mc(c.data.data(), m, n);
    if (beta == S(0)) mc.setZero();
    else if (beta != S(1)) mc *= beta;
    if (!trans_a && !trans_b) mc.noalias() += alpha * ma * mb;
    else if (!trans_a && trans_b) mc.noalias() += alpha * ma * mb.transpose();
    else if (trans_a && !trans_b) mc.noalias() += alpha * ma.transpose() * mb;
    else mc.noalias() += alpha * ma.transpose() * mb.transpose();
}

template <class S>
TensorT<S> matmul_tensors(const TensorT<S>& a, bool ta, const TensorT<S>& b, bool tb) {
    int m = ta ? a.cols() : a.rows();
    int n = tb ? b.rows() : b.cols();
    TensorT<S> c({m, n});
    gemm(a, ta, b, tb, c);
    return c;
}

// im2col for CHW input: output is (C*kh*kw) x (H_out*W_out).
template <class S>
void im2col(const TensorT<S>& x, int kh, int kw, int stride, int pad, TensorT<S>& col) {
    int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    int ho = (H + 2 * pad - kh) / stride + 1;
    int wo = (W + 2 * pad - kw) / stride + 1;
    col = TensorT<S>({C * kh * kw, ho * wo});
    S* out = col.data.data();
    const S* in = x.data.data();
    for (int c = 0; c < C; c++) {
        for (int ky = 0; ky < kh; ky++) {
            for (int kx = 0; kx < kw; kx++) {
                for (int oy = 0; oy < ho; oy++) {
                    int iy = oy * stride + ky - pad;
                    S* orow = out + static_cast<size_t>(oy) * wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(orow, orow + wo, S(0));
                        continue;
                    }
                    const S* irow = in + (static_cast<size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < wo; ox++) {
                        int ix = ox * stride + kx - pad;
                        orow[ox] = (ix < 0 || ix >= W) ? S(0) : irow[ix];
                    }
                }
                out += static_cast<size_t>(ho) * wo;
            }
        }
    }
}

// Scatter gradient columns back to the input image (inverse of im2col).
template <class S>
void col2im(const TensorT<S>& col, int C, int H, int W, int kh, int kw, int stride,
            int pad, TensorT<S>& x) {
    int ho = (H + 2 * pad - kh) / stride + 1;
    int wo = (W + 2 * pad - kw) / stride + 1;
    x = TensorT<S>({C, H, W});
    const S* in = col.data.data();
    S* out = x.data.data();
    for (int c = 0; c < C; c++) {
        for (int ky = 0; ky < kh; ky++) {
            for (int kx = 0; kx < kw; kx++) {
                for (int oy = 0; oy < ho; oy++) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) {
                        in += wo;
                        continue;
                    }
                    S* orow = out + (static_cast<size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < wo; ox++) {
                        int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) orow[ix] += in[ox];
                    }
                    in += wo;
                }
            }
        }
    }
}

}  // namespace ce
