#include "doctest.h"

#include <functional>

#include "ce/autograd.hpp"

using namespace ce;
using T = TensorT<double>;
using V = VarT<double>;

namespace {

// Central-difference check of d(loss)/d(input) for every element of every
// input. loss_fn must rebuild the graph from the current leaf values.
void fd_check(std::vector<V> inputs, const std::function<V()>& loss_fn,
              double h = 1e-6, double tol = 1e-5) {
    for (auto& in : inputs) in.zero_grad();
    V loss = loss_fn();
    REQUIRE(loss.val().numel() == 1);
    ag::backward(loss);
    for (auto& in : inputs) {
        T analytic = in.grad().empty() ? T::zeros(in.val().shape) : in.grad();
        for (size_t i = 0; i < in.val().data.size(); i++) {
            double saved = in.mutable_val().data[i];
            in.mutable_val().data[i] = saved + h;
            double up = loss_fn().val().data[0];
            in.mutable_val().data[i] = saved - h;
            double dn = loss_fn().val().data[0];
            in.mutable_val().data[i] = saved;
            double fd = (up - dn) / (2 * h);
            double got = analytic.data[i];
            double denom = std::max({std::abs(fd), std::abs(got), 1e-4});
            CHECK(std::abs(fd - got) / denom < tol);
        }
    }
}

V leaf(T t) { return V::leaf(std::move(t), true); }

}  // namespace

TEST_CASE("elementwise op gradients") {
    Rng rng(1);
    V a = leaf(T::randn({2, 3}, rng));
    V b = leaf(T::randn({2, 3}, rng));
    T tgt = T::randn({2, 3}, rng);
    fd_check({a, b}, [&] { return ag::mse_to(ag::add(a, b), tgt); });
    fd_check({a, b}, [&] { return ag::mse_to(ag::sub(a, b), tgt); });
    fd_check({a, b}, [&] { return ag::mse_to(ag::mul(a, b), tgt); });
    fd_check({a}, [&] { return ag::mse_to(ag::scale(a, 2.5), tgt); });
    fd_check({a, b}, [&] { return ag::mse_to(ag::add_scaled(a, b, -1.7), tgt); });
    fd_check({a}, [&] { return ag::mse_to(ag::silu(a), tgt); });
    fd_check({a}, [&] { return ag::mean_all(ag::reshape(a, {6})); });
    fd_check({a}, [&] { return ag::mse_to(ag::transpose2d(a), tgt.reshaped({3, 2})); });
}

TEST_CASE("matmul gradients, all transpose combinations") {
    Rng rng(2);
    V a = leaf(T::randn({2, 3}, rng));
    V b = leaf(T::randn({3, 4}, rng));
    V at = leaf(T::randn({3, 2}, rng));
    V bt = leaf(T::randn({4, 3}, rng));
    T tgt = T::randn({2, 4}, rng);
    fd_check({a, b}, [&] { return ag::mse_to(ag::matmul(a, b), tgt); });
    fd_check({at, b}, [&] { return ag::mse_to(ag::matmul(at, b, true, false), tgt); });
    fd_check({a, bt}, [&] { return ag::mse_to(ag::matmul(a, bt, false, true), tgt); });
    fd_check({at, bt}, [&] { return ag::mse_to(ag::matmul(at, bt, true, true), tgt); });
}

TEST_CASE("broadcast add gradients") {
    Rng rng(3);
    V a = leaf(T::randn({3, 4}, rng));
    V b = leaf(T::randn({4}, rng));
    T tgt = T::randn({3, 4}, rng);
    fd_check({a, b}, [&] { return ag::mse_to(ag::add_rowvec(a, b), tgt); });

    V x = leaf(T::randn({3, 2, 2}, rng));
    V c = leaf(T::randn({3}, rng));
    T tgt2 = T::randn({3, 2, 2}, rng);
    fd_check({x, c}, [&] { return ag::mse_to(ag::add_chvec(x, c), tgt2); });
}

TEST_CASE("softmax gradient") {
    Rng rng(4);
    V a = leaf(T::randn({2, 5}, rng));
    T tgt = T::randn({2, 5}, rng);
    fd_check({a}, [&] { return ag::mse_to(ag::softmax_rows(a), tgt); });
}

TEST_CASE("normalization gradients") {
    Rng rng(5);
    V x = leaf(T::randn({4, 3, 3}, rng));
    V g = leaf(T::randn({4}, rng));
    V b = leaf(T::randn({4}, rng));
    T tgt = T::randn({4, 3, 3}, rng);
    fd_check({x, g, b}, [&] { return ag::mse_to(ag::group_norm(x, g, b, 2), tgt); },
             1e-6, 1e-4);

    V x2 = leaf(T::randn({3, 5}, rng));
    V g2 = leaf(T::randn({5}, rng));
    V b2 = leaf(T::randn({5}, rng));
    T tgt2 = T::randn({3, 5}, rng);
    fd_check({x2, g2, b2}, [&] { return ag::mse_to(ag::layer_norm_rows(x2, g2, b2), tgt2); },
             1e-6, 1e-4);

    V x3 = leaf(T::randn({2, 4}, rng));
    T tgt3 = T::randn({2, 4}, rng);
    fd_check({x3}, [&] { return ag::mse_to(ag::l2_normalize_rows(x3), tgt3); });
}

TEST_CASE("conv2d gradients") {
    Rng rng(6);
    V x = leaf(T::randn({2, 4, 4}, rng));
    V w = leaf(T::randn({3, 2, 3, 3}, rng));
    V b = leaf(T::randn({3}, rng));
    T tgt = T::randn({3, 4, 4}, rng);
    fd_check({x, w, b}, [&] { return ag::mse_to(ag::conv2d(x, w, b, 1, 1), tgt); },
             1e-6, 1e-4);

    T tgt2 = T::randn({3, 2, 2}, rng);
    fd_check({x, w, b}, [&] { return ag::mse_to(ag::conv2d(x, w, b, 2, 1), tgt2); },
             1e-6, 1e-4);

    V w1 = leaf(T::randn({3, 2, 1, 1}, rng));
    T tgt3 = T::randn({3, 4, 4}, rng);
    fd_check({x, w1, b}, [&] { return ag::mse_to(ag::conv2d(x, w1, b, 1, 0), tgt3); },
             1e-6, 1e-4);
}

TEST_CASE("structural op gradients") {
    Rng rng(7);
    V x = leaf(T::randn({2, 2, 2}, rng));
    T tgt = T::randn({2, 4, 4}, rng);
    fd_check({x}, [&] { return ag::mse_to(ag::upsample_nearest2x(x), tgt); });

    V a = leaf(T::randn({2, 3, 3}, rng));
    V b = leaf(T::randn({1, 3, 3}, rng));
    T tgt2 = T::randn({3, 3, 3}, rng);
    fd_check({a, b}, [&] { return ag::mse_to(ag::concat_ch(a, b), tgt2); });

    V table = leaf(T::randn({5, 3}, rng));
    T tgt3 = T::randn({3, 3}, rng);
    // Repeated id 1 exercises the scatter-add.
    fd_check({table}, [&] { return ag::mse_to(ag::embedding_gather(table, {1, 3, 1}), tgt3); });
}

TEST_CASE("cross entropy gradient and value") {
    Rng rng(8);
    V logits = leaf(T::randn({3, 5}, rng));
    std::vector<int> tgts = {2, 0, 4};
    fd_check({logits}, [&] { return ag::cross_entropy_rows(logits, tgts); });

    // [TRIVIAL] uniform logits give loss log(C).
    V u = leaf(T::zeros({2, 4}));
    CHECK(ag::cross_entropy_rows(u, {0, 3}).val().data[0] ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("shared subexpression accumulates gradient once per path") {
    // y = x*x + x: dy/dx = 2x + 1.
    V x = leaf(T::from({3}, {0.5, -1.0, 2.0}));
    V y = ag::mean_all(ag::add(ag::mul(x, x), x));
    ag::backward(y);
    for (int i = 0; i < 3; i++)
        CHECK(x.grad().data[i] ==
              doctest::Approx((2 * x.val().data[i] + 1) / 3.0).epsilon(1e-12));

    fd_check({x}, [&] { return ag::mean_all(ag::add(ag::mul(x, x), x)); });
}

TEST_CASE("NoGradGuard suppresses the tape") {
    V x = leaf(T::from({2}, {1.0, 2.0}));
    {
        NoGradGuard ng;
        V y = ag::mean_all(ag::mul(x, x));
        CHECK_FALSE(y.requires_grad());
        ag::backward(y);  // no-op
        CHECK(x.grad().empty());
    }
    V y = ag::mean_all(ag::mul(x, x));
    CHECK(y.requires_grad());
}

TEST_CASE("grads accumulate across backward calls until zero_grad") {
    V x = leaf(T::from({1}, {3.0}));
    V y1 = ag::mean_all(ag::mul(x, x));
    ag::backward(y1);
    double g1 = x.grad().data[0];
    V y2 = ag::mean_all(ag::mul(x, x));
    ag::backward(y2);
    CHECK(x.grad().data[0] == doctest::Approx(2 * g1).epsilon(1e-12));
    x.zero_grad();
    CHECK(x.grad().empty());
}

TEST_CASE("constants never receive gradients") {
    V x = leaf(T::from({2}, {1.0, 2.0}));
    V c = V::constant(T::from({2}, {5.0, 6.0}));
    V y = ag::mean_all(ag::mul(x, c));
    ag::backward(y);
    CHECK(c.grad().empty());
    CHECK(x.grad().data[0] == doctest::Approx(2.5).epsilon(1e-12));
}
