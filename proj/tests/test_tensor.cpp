#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "qdyn/kernels.hpp"
#include "qdyn/tensor.hpp"
#include "helpers.hpp"

using namespace qdyn;
using ad::Tensor;

TEST_CASE("matmul against the identity returns the input") {
    ad::Tape tape;
    Tensor a = tape.leaf({2, 2}, {1, 2, 3, 4});
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor c = ad::matmul(a, eye);
    CHECK(c.data()[0] == 1.0);
    CHECK(c.data()[1] == 2.0);
    CHECK(c.data()[2] == 3.0);
    CHECK(c.data()[3] == 4.0);
}

TEST_CASE("leaky_relu matches its definition") {
    Tensor x({2}, {-1.0, 2.0});
    Tensor y = ad::leaky_relu(x, 0.01);
    CHECK(y.data()[0] == doctest::Approx(-0.01));
    CHECK(y.data()[1] == doctest::Approx(2.0));
}

TEST_CASE("shape mismatches raise structured errors naming the op and shapes") {
    Tensor a({2, 3}, std::vector<double>(6, 1.0));
    Tensor b({3, 3}, std::vector<double>(9, 1.0));
    CHECK_THROWS_WITH_AS(ad::add(a, b), doctest::Contains("add"), ShapeError);
    CHECK_THROWS_WITH_AS(ad::add(a, b), doctest::Contains("(2,3)"), ShapeError);
    CHECK_THROWS_WITH_AS(ad::add(a, b), doctest::Contains("(3,3)"), ShapeError);
    CHECK_THROWS_AS(ad::matmul(b, a), ShapeError);
    CHECK_THROWS_AS(ad::concat({a, b}, 1), ShapeError);
}

TEST_CASE("d/dx of x squared at 3 is 6") {
    ad::Tape tape;
    Tensor x = tape.leaf({1}, {3.0});
    Tensor y = ad::mul(x, x);
    ad::Gradients g = tape.backward(y);
    CHECK(g.grad(x).value() == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward of a constant graph gives an empty gradient map") {
    Tensor x({1}, {3.0});
    Tensor y = ad::mul(x, x);
    ad::Gradients g = ad::backward(y);
    CHECK(g.empty());
}

TEST_CASE("backward requires a scalar loss") {
    ad::Tape tape;
    Tensor x = tape.leaf({2}, {1.0, 2.0});
    Tensor y = ad::mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("gradients of unused parameters are zero") {
    ad::Tape tape;
    Tensor used = tape.leaf({1}, {2.0});
    Tensor unused = tape.leaf({3}, {1.0, 1.0, 1.0});
    ad::Gradients g = tape.backward(ad::mul(used, used));
    const Tensor gu = g.grad(unused);
    for (double v : gu.data()) CHECK(v == 0.0);
}

TEST_CASE("two-layer MLP mean-squared-error gradient matches finite differences") {
    auto rng = test::test_rng(11);
    const ad::Shape w1{5, 7}, b1{7}, w2{7, 3}, b2{3};
    const ad::Shape xin{4, 5};
    const auto xv = test::random_values(xin, rng);
    const auto tv = test::random_values({4, 3}, rng);

    auto build = [&](ad::Tape&, std::vector<Tensor>& leaves) {
        Tensor x(xin, xv);
        Tensor target({4, 3}, tv);
        Tensor h = ad::tanh(ad::add_bias(ad::matmul(x, leaves[0]), leaves[1]));
        Tensor out = ad::add_bias(ad::matmul(h, leaves[2]), leaves[3]);
        return ad::mean(ad::squared_difference(out, target));
    };
    const auto r = test::fd_gradient_check(
        build,
        {test::random_values(w1, rng), test::random_values(b1, rng),
         test::random_values(w2, rng), test::random_values(b2, rng)},
        {w1, b1, w2, b2});
    CHECK(r.checked > 0);
    CHECK(r.max_err < 1e-6);
}

TEST_CASE("causal dilated conv gradient matches finite differences on a 4x8 input") {
    auto rng = test::test_rng(12);
    const ad::Shape xs{1, 4, 8}, wsh{3, 4, 2}, bs{3};
    auto build = [&](ad::Tape&, std::vector<Tensor>& leaves) {
        return ad::sum(ad::conv1d_causal(leaves[0], leaves[1], leaves[2], 2));
    };
    const auto r = test::fd_gradient_check(
        build,
        {test::random_values(xs, rng), test::random_values(wsh, rng),
         test::random_values(bs, rng)},
        {xs, wsh, bs});
    CHECK(r.max_err < 1e-6);
}

TEST_CASE("every differentiable op passes randomized finite-difference checks") {
    auto rng = test::test_rng(13);
    int64_t total_trials = 0;
    double worst = 0.0;

    auto run = [&](const char* name,
                   const std::function<Tensor(ad::Tape&, std::vector<Tensor>&)>& build,
                   const std::vector<ad::Shape>& shapes, int trials, double lo = -1.0,
                   double hi = 1.0) {
        for (int t = 0; t < trials; ++t) {
            std::vector<std::vector<double>> inputs;
            for (const auto& s : shapes) inputs.push_back(test::random_values(s, rng, lo, hi));
            const auto r = test::fd_gradient_check(build, std::move(inputs), shapes);
            INFO(name);
            CHECK(r.max_err < 1e-5);
            worst = std::max(worst, r.max_err);
            ++total_trials;
        }
    };

    auto scalarize = [](Tensor t) { return ad::sum(t); };

    run("add", [&](ad::Tape&, std::vector<Tensor>& l) { return scalarize(ad::add(l[0], l[1])); },
        {{3, 4}, {3, 4}}, 5);
    run("sub", [&](ad::Tape&, std::vector<Tensor>& l) { return scalarize(ad::sub(l[0], l[1])); },
        {{3, 4}, {3, 4}}, 5);
    run("mul", [&](ad::Tape&, std::vector<Tensor>& l) { return scalarize(ad::mul(l[0], l[1])); },
        {{3, 4}, {3, 4}}, 5);
    run("squared_difference",
        [&](ad::Tape&, std::vector<Tensor>& l) {
            return scalarize(ad::squared_difference(l[0], l[1]));
        },
        {{3, 4}, {3, 4}}, 5);
    run("add_scalar",
        [&](ad::Tape&, std::vector<Tensor>& l) { return scalarize(ad::add_scalar(l[0], 0.7)); },
        {{2, 5}}, 4);
    run("mul_scalar",
        [&](ad::Tape&, std::vector<Tensor>& l) { return scalarize(ad::mul_scalar(l[0], -1.3)); },
        {{2, 5}}, 4);
    run("add_bias",
        [&](ad::Tape&, std::vector<Tensor>& l) { return scalarize(ad::add_bias(l[0], l[1])); },
        {{4, 3}, {3}}, 5);
    run("matmul",
        [&](ad::Tape&, std::vector<Tensor>& l) { return scalarize(ad::matmul(l[0], l[1])); },
        {{3, 4}, {4, 2}}, 5);
    run("concat",
        [&](ad::Tape&, std::vector<Tensor>& l) {
            return scalarize(ad::mul(ad::concat({l[0], l[1]}, 1), ad::concat({l[1], l[0]}, 1)));
        },
        {{2, 3}, {2, 3}}, 5);
    run("slice",
        [&](ad::Tape&, std::vector<Tensor>& l) {
            Tensor s = ad::slice(l[0], 1, 1, 2);
            return scalarize(ad::mul(s, s));
        },
        {{3, 4}}, 5);
    run("reshape",
        [&](ad::Tape&, std::vector<Tensor>& l) {
            Tensor r = ad::reshape(l[0], {4, 3});
            return scalarize(ad::mul(r, r));
        },
        {{3, 4}}, 4);
    run("swap_last_axes",
        [&](ad::Tape&, std::vector<Tensor>& l) {
            Tensor s = ad::swap_last_axes(l[0]);
            return scalarize(ad::mul(s, s));
        },
        {{2, 3, 4}}, 4);
    run("tanh", [&](ad::Tape&, std::vector<Tensor>& l) { return scalarize(ad::tanh(l[0])); },
        {{3, 3}}, 5);
    run("sigmoid",
        [&](ad::Tape&, std::vector<Tensor>& l) { return scalarize(ad::sigmoid(l[0])); },
        {{3, 3}}, 5);
    // keep inputs away from the kink so central differences stay valid
    run("leaky_relu_pos",
        [&](ad::Tape&, std::vector<Tensor>& l) {
            return scalarize(ad::leaky_relu(l[0], 0.01));
        },
        {{3, 3}}, 3, 0.1, 1.0);
    run("leaky_relu_neg",
        [&](ad::Tape&, std::vector<Tensor>& l) {
            return scalarize(ad::leaky_relu(l[0], 0.01));
        },
        {{3, 3}}, 3, -1.0, -0.1);
    run("sum", [&](ad::Tape&, std::vector<Tensor>& l) { return ad::sum(ad::mul(l[0], l[0])); },
        {{7}}, 3);
    run("mean", [&](ad::Tape&, std::vector<Tensor>& l) { return ad::mean(ad::mul(l[0], l[0])); },
        {{7}}, 3);
    run("conv1d_causal",
        [&](ad::Tape&, std::vector<Tensor>& l) {
            return scalarize(ad::conv1d_causal(l[0], l[1], l[2], 2));
        },
        {{2, 3, 7}, {2, 3, 3}, {2}}, 5);
    run("rows_normalize",
        [&](ad::Tape&, std::vector<Tensor>& l) {
            Tensor n = ad::rows_normalize(l[0]);
            return scalarize(ad::mul(n, ad::add_scalar(n, 0.5)));
        },
        {{4, 4}}, 5, 0.3, 1.0);
    run("quat_mul_rows",
        [&](ad::Tape&, std::vector<Tensor>& l) {
            return scalarize(ad::quat_mul_rows(l[0], l[1]));
        },
        {{3, 4}, {3, 4}}, 5);
    run("scale_rows",
        [&](ad::Tape&, std::vector<Tensor>& l) {
            Tensor s = ad::scale_rows(l[0], {1.0, -1.0, 2.0});
            return scalarize(ad::mul(s, s));
        },
        {{3, 4}}, 4);

    // batch norm, all three modes
    for (auto mode : {ad::BatchNormMode::Train, ad::BatchNormMode::FrozenBatch,
                      ad::BatchNormMode::Eval}) {
        std::vector<double> rm(3, 0.1), rv(3, 0.9);
        ad::BatchNormState state;
        state.running_mean = &rm;
        state.running_var = &rv;
        if (mode == ad::BatchNormMode::FrozenBatch) {
            state.cache_mean = {0.05, -0.1, 0.2};
            state.cache_var = {1.1, 0.8, 0.95};
        }
        run("batch_norm_1d",
            [&](ad::Tape&, std::vector<Tensor>& l) {
                return scalarize(
                    ad::mul(ad::batch_norm_1d(l[0], l[1], l[2], state, mode), l[0]));
            },
            {{4, 3, 5}, {3}, {3}}, 2);
    }

    CHECK(total_trials >= 100);
    MESSAGE("fd trials: ", total_trials, ", worst error: ", worst);
}

TEST_CASE("causal conv: outputs before a perturbed index are bit-identical") {
    auto rng = test::test_rng(14);
    for (int trial = 0; trial < 50; ++trial) {
        const int64_t b = 2, cin = 3, cout = 2, len = 12;
        const int64_t kern = 1 + (trial % 3), dil = 1 + (trial % 3);
        if (dil * (kern - 1) >= len) continue;
        auto x = test::random_values({b, cin, len}, rng);
        const auto w = test::random_values({cout, cin, kern}, rng);
        const auto bias = test::random_values({cout}, rng);

        std::vector<double> y0(static_cast<size_t>(b * cout * len));
        kernels::conv1d_causal(x.data(), w.data(), bias.data(), y0.data(), b, cin, cout, len,
                               kern, dil);

        std::uniform_int_distribution<int64_t> pick(0, len - 1);
        const int64_t tp = pick(rng);
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t c = 0; c < cin; ++c) x[(bi * cin + c) * len + tp] += 17.0;

        std::vector<double> y1(static_cast<size_t>(b * cout * len));
        kernels::conv1d_causal(x.data(), w.data(), bias.data(), y1.data(), b, cin, cout, len,
                               kern, dil);
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t c = 0; c < cout; ++c)
                for (int64_t t = 0; t < tp; ++t) {
                    const auto i = (bi * cout + c) * len + t;
                    CHECK(std::memcmp(&y0[i], &y1[i], sizeof(double)) == 0);
                }
    }
}

TEST_CASE("conv rejects dilation spans reaching the whole sequence") {
    Tensor x({1, 1, 4}, {1, 2, 3, 4});
    Tensor w({1, 1, 3}, {1, 1, 1});
    Tensor b({1}, {0.0});
    CHECK_THROWS_AS(ad::conv1d_causal(x, w, b, 2), ShapeError); // 2*(3-1) = 4 >= 4
    CHECK_NOTHROW(ad::conv1d_causal(x, w, b, 1));
}

TEST_CASE("two backward passes over identical tapes give bit-identical gradients") {
    auto build_and_grad = [](std::vector<double>& out) {
        auto rng = test::test_rng(15);
        ad::Tape tape;
        Tensor w = tape.leaf({6, 6}, test::random_values({6, 6}, rng));
        Tensor x({3, 6}, test::random_values({3, 6}, rng));
        Tensor y = ad::sum(ad::tanh(ad::matmul(x, w)));
        ad::Gradients g = tape.backward(y);
        const ad::Tensor gw = g.grad(w);
        out.assign(gw.data().begin(), gw.data().end());
    };
    std::vector<double> g1, g2;
    build_and_grad(g1);
    build_and_grad(g2);
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("batch norm maintains running statistics and a freezable cache") {
    auto rng = test::test_rng(16);
    std::vector<double> rm(2, 0.0), rv(2, 1.0);
    ad::BatchNormState state;
    state.running_mean = &rm;
    state.running_var = &rv;
    Tensor gamma({2}, {1.0, 1.0});
    Tensor beta({2}, {0.0, 0.0});

    const auto xv = test::random_values({8, 2}, rng, 1.0, 3.0);
    Tensor x({8, 2}, xv);
    ad::batch_norm_1d(x, gamma, beta, state, ad::BatchNormMode::Train);
    CHECK(rm[0] > 0.0); // moved toward the batch mean
    CHECK(state.cache_mean.size() == 2);

    // frozen mode normalizes with the cached statistics: same input gives the
    // same output as a second Train pass would, without moving running stats
    const auto rm_after = rm;
    Tensor y1 = ad::batch_norm_1d(x, gamma, beta, state, ad::BatchNormMode::FrozenBatch);
    CHECK(rm == rm_after);

    // eval uses running stats
    Tensor y2 = ad::batch_norm_1d(x, gamma, beta, state, ad::BatchNormMode::Eval);
    CHECK(y1.data()[0] != y2.data()[0]);
}

TEST_CASE("reductions reject empty tensors and ops reject cross-tape operands") {
    ad::Tape t1, t2;
    Tensor a = t1.leaf({2}, {1.0, 2.0});
    Tensor b = t2.leaf({2}, {3.0, 4.0});
    CHECK_THROWS_AS(ad::add(a, b), Error);
}
