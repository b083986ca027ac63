// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>

#include "forge/autodiff.hpp"
#include "forge/optim.hpp"
#include "test_helpers.hpp"

using namespace forge;

TEST_CASE("tensor invariants") {
    Tensor<float> t({2, 3});
    CHECK(t.size() == 6);
    CHECK_THROWS_AS(Tensor<float>({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor<float>({2}, {1.f, 2.f, 3.f}), ShapeError);
    CheckedModeGuard guard(true);
    CHECK_THROWS_AS(Tensor<float>({1}, {std::numeric_limits<float>::quiet_NaN()}), ShapeError);
}

TEST_CASE("matmul identity and hand arithmetic") {
    auto id2 = make_matrix<double>(2, 2, {1, 0, 0, 1});
    auto m = make_matrix<double>(2, 2, {3, -1, 2, 7});
    CHECK(matmul_val(id2, m).bitwise_equal(m));

    auto a = make_matrix<double>(2, 2, {1, 2, 3, 4});
    auto b = make_matrix<double>(2, 1, {1, 1});
    auto y = matmul_val(a, b);
    CHECK(y.at(0, 0) == doctest::Approx(3));
    CHECK(y.at(1, 0) == doctest::Approx(7));

    CHECK_THROWS_AS(matmul_val(a, make_matrix<double>(3, 1, {1, 1, 1})), ShapeError);
}

TEST_CASE("matmul gradients match finite differences") {
    Rng rng(42);
    ParamStore<double> store;
    store.add("a", test::rand_tensor({5, 7}, rng));
    store.add("b", test::rand_tensor({7, 3}, rng));
    const double err = test::gradcheck_max_rel_err(store, [](TapeCtx<double>& cx) {
        return sum(silu(matmul(cx.param("a"), cx.param("b"))));
    });
    CHECK(err < 1e-4);
}

TEST_CASE("conv1d identity kernel and hand arithmetic") {
    // K=1 kernel [1] passes the input through
    auto x = Tensor<double>({1, 4}, {1, 2, 3, 4});
    auto k1 = Tensor<double>({1, 1, 1}, {1});
    CHECK(conv1d_val(x, k1).bitwise_equal(x));

    // x=[1,2,3], kernel=[1,1,1] -> [3,6,5] with zero-padded borders
    auto x2 = Tensor<double>({1, 3}, {1, 2, 3});
    auto k3 = Tensor<double>({1, 1, 3}, {1, 1, 1});
    auto y = conv1d_val(x2, k3);
    CHECK(y[0] == doctest::Approx(3));
    CHECK(y[1] == doctest::Approx(6));
    CHECK(y[2] == doctest::Approx(5));

    auto keven = Tensor<double>({1, 1, 2}, {1, 1});
    CHECK_THROWS_AS(conv1d_val(x2, keven), ConfigError);
}

TEST_CASE("conv1d gradients match finite differences") {
    Rng rng(7);
    ParamStore<double> store;
    store.add("x", test::rand_tensor({3, 9}, rng));
    store.add("k", test::rand_tensor({4, 3, 5}, rng, 0.5));
    const double err = test::gradcheck_max_rel_err(store, [](TapeCtx<double>& cx) {
        return sum(silu(conv1d(cx.param("x"), cx.param("k"))));
    });
    CHECK(err < 1e-4);
}

TEST_CASE("silu and layer_norm basics") {
    auto zero = Tensor<double>({1}, {0.0});
    CHECK(silu_val(zero)[0] == 0.0);

    // constant vector normalizes to zeros before gain/bias (variance floored)
    auto constant = Tensor<double>({4}, {2.5, 2.5, 2.5, 2.5});
    auto gain = Tensor<double>::full({4}, 1.0);
    auto bias = Tensor<double>({4});
    auto normed = layer_norm_val(constant, gain, bias);
    for (Index i = 0; i < normed.size(); ++i) CHECK(normed[i] == doctest::Approx(0.0));
}

TEST_CASE("activation and layer_norm gradients match finite differences") {
    Rng rng(11);
    ParamStore<double> store;
    store.add("x", test::rand_tensor({3, 6}, rng));
    store.add("g", test::rand_tensor({6}, rng, 0.3));
    store.add("b", test::rand_tensor({6}, rng, 0.3));
    const double err = test::gradcheck_max_rel_err(store, [](TapeCtx<double>& cx) {
        auto y = layer_norm(cx.param("x"), cx.param("g"), cx.param("b"));
        return sum(mul(silu(y), y));
    });
    CHECK(err < 1e-4);
}

TEST_CASE("backward basics") {
    ParamStore<double> store;
    store.add("w", Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
    store.add("unused", Tensor<double>({2}, {1, 1}));

    Tape<double> tape;
    TapeCtx<double> cx(tape, store);
    auto w = cx.param("w");
    auto unused = cx.param("unused");
    (void)unused;
    auto loss = sum(w);
    auto grads = tape.backward(loss);

    // d(sum)/dW is all ones; a leaf detached from the loss gets zeros
    for (Index i = 0; i < grads.at("w").size(); ++i) CHECK(grads.at("w")[i] == 1.0);
    for (Index i = 0; i < grads.at("unused").size(); ++i) CHECK(grads.at("unused")[i] == 0.0);

    // non-scalar loss is a contract violation
    Tape<double> tape2;
    TapeCtx<double> cx2(tape2, store);
    auto w2 = cx2.param("w");
    CHECK_THROWS_AS(tape2.backward(w2), ContractError);
}

TEST_CASE("backward is bitwise deterministic") {
    Rng rng(3);
    ParamStore<double> store;
    store.add("x", test::rand_tensor({4, 4}, rng));
    store.add("k", test::rand_tensor({4, 4, 3}, rng));
    auto run = [&]() {
        Tape<double> tape;
        TapeCtx<double> cx(tape, store);
        auto y = conv1d(cx.param("x"), cx.param("k"));
        return tape.backward(sum(mul(y, y)));
    };
    auto g1 = run();
    auto g2 = run();
    for (const auto& [name, g] : g1) CHECK(g.bitwise_equal(g2.at(name)));
}

TEST_CASE("adam updates parameters deterministically") {
    ParamStore<float> store;
    store.add("p", Tensor<float>({2}, {1.f, -1.f}));
    GradMap<float> grads;
    grads.emplace("p", Tensor<float>({2}, {0.5f, -0.5f}));
    AdamConfig cfg;
    cfg.lr = 0.1;
    store.adam_step(grads, cfg);
    CHECK(store.value("p")[0] == doctest::Approx(0.9).epsilon(1e-4));
    CHECK(store.value("p")[1] == doctest::Approx(-0.9).epsilon(1e-4));
}
