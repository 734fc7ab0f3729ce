#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using namespace simattn;
using test_util::finite_diff;
using test_util::max_rel_err;
using test_util::random_vec;
using test_util::rel_err;

TEST_CASE("elementwise examples") {
    Tensor a({2}, {1.0, 0.6});
    Tensor b({2}, {0.4, 0.0});
    Tensor p = mul(a, b);
    CHECK(p[0] == Catch::Approx(0.4));
    CHECK(p[1] == 0.0);

    Tensor c = simattn::abs(Tensor({3}, {-2.0, 0.0, 3.0}));
    CHECK(c.data() == std::vector<double>{2.0, 0.0, 3.0});

    CHECK(sigmoid(Tensor::scalar(0.0)).item() == Catch::Approx(0.5));

    CHECK_THROWS_AS(add(Tensor({2}, {1, 2}), Tensor({3}, {1, 2, 3})), std::invalid_argument);
}

TEST_CASE("non-finite op output is an error") {
    Tensor big = Tensor::scalar(1e308);
    CHECK_THROWS_AS(scale(big, 1e10), std::runtime_error);
}

TEST_CASE("dot examples and gradient") {
    CHECK(dot(Tensor({2}, {1, 2}), Tensor({2}, {3, 4})).item() == Catch::Approx(11.0));
    CHECK(dot(Tensor({3}, {0.3, -1, 2}), Tensor::zeros({3})).item() == 0.0);
    CHECK_THROWS_AS(dot(Tensor({2}, {1, 2}), Tensor({3}, {1, 2, 3})), std::invalid_argument);

    Rng rng(7);
    auto av = random_vec(rng, 5);
    auto bv = random_vec(rng, 5);
    Tensor a({5}, av, true);
    Tensor b({5}, bv);
    GradientMap g = backward(dot(a, b));
    auto fd = finite_diff([&](const std::vector<double>& x) {
        double s = 0;
        for (int i = 0; i < 5; ++i) s += x[i] * bv[i];
        return s;
    }, av);
    CHECK(max_rel_err(g.at(a).data(), fd) < 1e-6);
}

TEST_CASE("conv2d examples") {
    Tensor x({1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor w({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor b({1}, {0.0});
    Tensor y = conv2d(x, w, b, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1});
    CHECK(y.item() == Catch::Approx(9.0));

    // identity kernel reproduces the input
    std::vector<double> idk(9, 0.0);
    idk[4] = 1.0;
    Tensor wid({1, 1, 3, 3}, idk);
    Rng rng(3);
    Tensor xr({1, 4, 4}, random_vec(rng, 16));
    Tensor yid = conv2d(xr, wid, Tensor(), 1, 1);
    CHECK(yid.data() == xr.data());

    CHECK_THROWS_AS(conv2d(Tensor({1, 2, 2}, {1, 2, 3, 4}), w, b, 1, 0), std::invalid_argument);
}

TEST_CASE("conv2d weight gradient matches finite differences") {
    Rng rng(11);
    auto xv = random_vec(rng, 2 * 6 * 6);
    auto wv = random_vec(rng, 3 * 2 * 3 * 3);
    auto bv = random_vec(rng, 3);
    Tensor x({2, 6, 6}, xv);
    Tensor w({3, 2, 3, 3}, wv, true);
    Tensor b({3}, bv, true);
    Tensor loss = sum_all(mul(conv2d(x, w, b, 2, 1), conv2d(x, w, b, 2, 1)));
    GradientMap g = backward(loss);
    auto f = [&](const std::vector<double>& p) {
        Tensor wt({3, 2, 3, 3}, p);
        Tensor y = conv2d(x, wt, b, 2, 1);
        return sum_all(mul(y, y)).item();
    };
    CHECK(max_rel_err(g.at(w).data(), finite_diff(f, wv)) < 1e-4);
}

TEST_CASE("pool examples") {
    Tensor plane({1, 2, 2}, {1, 2, 3, 4});
    CHECK(global_avg(plane)[0] == Catch::Approx(2.5));
    CHECK(maxpool2x2(plane).item() == Catch::Approx(4.0));
    CHECK_THROWS_AS(maxpool2x2(Tensor({1, 3, 3}, std::vector<double>(9, 0.0))),
                    std::invalid_argument);

    // all-equal plane: gradient routes to index (0,0) of the window
    Tensor eq({1, 2, 2}, std::vector<double>(4, 5.0), true);
    GradientMap g = backward(sum_all(maxpool2x2(eq)));
    CHECK(g.at(eq).data() == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("l2_distance examples and gradient") {
    Tensor o({2}, {0.0, 0.0});
    Tensor p({2}, {3.0, 4.0});
    CHECK(l2_distance(o, p).item() == Catch::Approx(5.0).margin(1e-6));
    CHECK(l2_distance(p, p).item() == Catch::Approx(1e-6).epsilon(0.01));

    Rng rng(23);
    auto av = random_vec(rng, 4);
    auto bv = random_vec(rng, 4);
    Tensor a({4}, av, true);
    GradientMap g = backward(l2_distance(a, Tensor({4}, bv)));
    auto fd = finite_diff([&](const std::vector<double>& x) {
        return l2_distance(Tensor({4}, x), Tensor({4}, bv)).item();
    }, av);
    CHECK(max_rel_err(g.at(a).data(), fd) < 1e-4);
}

TEST_CASE("backward power rule, first and second order") {
    Tensor x = Tensor::scalar(3.0, true);
    Tensor y = mul(x, x);
    GradientMap g = backward(y, true);
    Tensor gx = g.at(x);
    CHECK(gx.item() == Catch::Approx(6.0));
    GradientMap g2 = backward(gx, false);
    CHECK(g2.at(x).item() == Catch::Approx(2.0));
}

TEST_CASE("backward rejects non-scalar and non-graph outputs") {
    Tensor v({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(backward(v), std::invalid_argument);
    CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), std::invalid_argument);
}

TEST_CASE("grad-of-grad of relu(w.f) pipeline matches finite differences") {
    // FD applied to the analytic first-order gradient function
    Rng rng(31);
    auto wv = random_vec(rng, 4, 0.1, 1.0);
    auto fv = random_vec(rng, 4, 0.1, 1.0);
    auto first_grad = [&](const std::vector<double>& f0, int comp) {
        Tensor w({4}, wv);
        Tensor f({4}, f0, true);
        Tensor y = relu(dot(w, f));
        Tensor s = mul(y, y);  // nonlinear in f so second order is nonzero
        GradientMap g = backward(s, true);
        return g.at(f);
    };
    Tensor w({4}, wv);
    Tensor f({4}, fv, true);
    Tensor s = mul(relu(dot(w, f)), relu(dot(w, f)));
    GradientMap g = backward(s, true);
    Tensor gf = g.at(f);
    // second derivative of sum of first gradient
    GradientMap g2 = backward(sum_all(gf), false);
    auto fd = finite_diff([&](const std::vector<double>& f0) {
        return sum_all(first_grad(f0, 0)).item();
    }, fv);
    CHECK(max_rel_err(g2.at(f).data(), fd) < 1e-3);
}

TEST_CASE("per-op gradients agree with finite differences at random points") {
    Rng rng(47);
    auto check_unary = [&](const char* name, auto op, double lo, double hi) {
        INFO(name);
        for (int rep = 0; rep < 10; ++rep) {
            auto xv = random_vec(rng, 6, lo, hi);
            // skip points near kinks of abs/relu
            bool near_kink = false;
            for (double v : xv)
                if (std::fabs(v) < 1e-6) near_kink = true;
            if (near_kink) continue;
            Tensor x({6}, xv, true);
            Tensor y = sum_all(op(x));
            GradientMap g = backward(y);
            auto fd = finite_diff([&](const std::vector<double>& p) {
                return sum_all(op(Tensor({6}, p))).item();
            }, xv);
            CHECK(max_rel_err(g.at(x).data(), fd) < 1e-4);
        }
    };
    check_unary("abs", [](const Tensor& t) { return simattn::abs(t); }, -1, 1);
    check_unary("relu", [](const Tensor& t) { return relu(t); }, -1, 1);
    check_unary("sigmoid", [](const Tensor& t) { return sigmoid(t); }, -2, 2);
    check_unary("one_minus", [](const Tensor& t) { return one_minus(t); }, -1, 1);
    check_unary("recip", [](const Tensor& t) { return recip(t); }, 0.2, 2.0);
    check_unary("sqrt_eps", [](const Tensor& t) { return sqrt_eps(t, 1e-12); }, 0.1, 2.0);
    check_unary("square", [](const Tensor& t) { return mul(t, t); }, -1, 1);

    // pooling and upsampling paths
    for (int rep = 0; rep < 5; ++rep) {
        auto xv = random_vec(rng, 2 * 4 * 4);
        Tensor x({2, 4, 4}, xv, true);
        Tensor y = sum_all(mul(maxpool2x2(x), maxpool2x2(x)));
        GradientMap g = backward(y);
        auto fd = finite_diff([&](const std::vector<double>& p) {
            Tensor t({2, 4, 4}, p);
            return sum_all(mul(maxpool2x2(t), maxpool2x2(t))).item();
        }, xv);
        CHECK(max_rel_err(g.at(x).data(), fd) < 1e-4);

        Tensor xa({2, 4, 4}, xv, true);
        Tensor ya = sum_all(mul(avgpool2x2(xa), avgpool2x2(xa)));
        GradientMap ga = backward(ya);
        auto fda = finite_diff([&](const std::vector<double>& p) {
            Tensor t({2, 4, 4}, p);
            return sum_all(mul(avgpool2x2(t), avgpool2x2(t))).item();
        }, xv);
        CHECK(max_rel_err(ga.at(xa).data(), fda) < 1e-4);

        auto pv = random_vec(rng, 9);
        Tensor pm({3, 3}, pv, true);
        Tensor up = upsample_bilinear(pm, 7, 7);
        GradientMap gu = backward(sum_all(mul(up, up)));
        auto fdu = finite_diff([&](const std::vector<double>& p) {
            Tensor t({3, 3}, p);
            Tensor u = upsample_bilinear(t, 7, 7);
            return sum_all(mul(u, u)).item();
        }, pv);
        CHECK(max_rel_err(gu.at(pm).data(), fdu) < 1e-4);
    }

    // matvec / outer chain
    for (int rep = 0; rep < 5; ++rep) {
        auto wv = random_vec(rng, 12);
        auto vv = random_vec(rng, 4);
        Tensor w({3, 4}, wv, true);
        Tensor v({4}, vv, true);
        Tensor y = matvec(w, v);
        Tensor loss = sum_all(mul(y, y));
        GradientMap g = backward(loss);
        auto fdw = finite_diff([&](const std::vector<double>& p) {
            Tensor t({3, 4}, p);
            Tensor u = matvec(t, Tensor({4}, vv));
            return sum_all(mul(u, u)).item();
        }, wv);
        CHECK(max_rel_err(g.at(w).data(), fdw) < 1e-4);
        auto fdv = finite_diff([&](const std::vector<double>& p) {
            Tensor u = matvec(Tensor({3, 4}, wv), Tensor({4}, p));
            return sum_all(mul(u, u)).item();
        }, vv);
        CHECK(max_rel_err(g.at(v).data(), fdv) < 1e-4);
    }

    // channel combine ops
    for (int rep = 0; rep < 5; ++rep) {
        auto av = random_vec(rng, 3);
        auto Av = random_vec(rng, 3 * 2 * 2);
        Tensor alpha({3}, av, true);
        Tensor A({3, 2, 2}, Av, true);
        Tensor m = channel_weighted_sum(alpha, A);
        GradientMap g = backward(sum_all(mul(m, m)));
        auto fda = finite_diff([&](const std::vector<double>& p) {
            Tensor mm = channel_weighted_sum(Tensor({3}, p), Tensor({3, 2, 2}, Av));
            return sum_all(mul(mm, mm)).item();
        }, av);
        CHECK(max_rel_err(g.at(alpha).data(), fda) < 1e-4);
        auto fdA = finite_diff([&](const std::vector<double>& p) {
            Tensor mm = channel_weighted_sum(Tensor({3}, av), Tensor({3, 2, 2}, p));
            return sum_all(mul(mm, mm)).item();
        }, Av);
        CHECK(max_rel_err(g.at(A).data(), fdA) < 1e-4);
    }
}

TEST_CASE("linearity: grad of c*y equals c times grad of y") {
    Rng rng(5);
    auto xv = random_vec(rng, 6);
    Tensor x({6}, xv, true);
    Tensor y = sum_all(mul(sigmoid(x), x));
    GradientMap g1 = backward(y);
    Tensor x2({6}, xv, true);
    Tensor y2 = scale(sum_all(mul(sigmoid(x2), x2)), 4.0);
    GradientMap g2 = backward(y2);
    for (int i = 0; i < 6; ++i) CHECK(g2.at(x2)[i] == 4.0 * g1.at(x)[i]);
}

TEST_CASE("replay determinism: identical leaves give bit-identical outputs and gradients") {
    auto run = [](std::vector<double>& out_grad) {
        Rng rng(99);
        Tensor x({2, 8, 8}, test_util::random_vec(rng, 2 * 8 * 8), true);
        Tensor w({4, 2, 3, 3}, test_util::random_vec(rng, 4 * 2 * 9), true);
        Tensor b({4}, test_util::random_vec(rng, 4), true);
        Tensor y = maxpool2x2(relu(conv2d(x, w, b, 1, 1)));
        Tensor loss = sum_all(mul(y, y));
        GradientMap g = backward(loss);
        out_grad = g.at(w).data();
        return loss.item();
    };
    std::vector<double> g1, g2;
    double l1 = run(g1), l2 = run(g2);
    CHECK(l1 == l2);
    CHECK(g1 == g2);
}

TEST_CASE("gradient accumulates over shared subexpressions") {
    Tensor x = Tensor::scalar(2.0, true);
    Tensor y = add(mul(x, x), mul(x, x));  // 2x^2
    GradientMap g = backward(y);
    CHECK(g.at(x).item() == Catch::Approx(8.0));
}

TEST_CASE("detach cuts the graph") {
    Tensor x = Tensor::scalar(3.0, true);
    Tensor y = mul(x, x);
    Tensor z = mul(y.detach(), x);  // treated as 9*x
    GradientMap g = backward(z);
    CHECK(g.at(x).item() == Catch::Approx(9.0));
}
