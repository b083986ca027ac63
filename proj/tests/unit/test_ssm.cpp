// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "forge/ssm.hpp"
#include "test_helpers.hpp"

using namespace forge;

namespace {

template <class S>
ParamStore<S> small_ssm(const SsmDims& dims, std::uint64_t seed) {
    ParamStore<S> store;
    Rng rng(seed);
    init_ssm_params(store, dims, rng);
    return store;
}

}  // namespace

TEST_CASE("ssm_step zero case and decay limit") {
    SsmDims dims{4, 6, 3};
    auto store = small_ssm<float>(dims, 1);
    // zero biases for the degenerate check
    store.mutable_value(kSsmBIn) = Tensor<float>({dims.hidden_dim});
    store.mutable_value(kSsmBGate) = Tensor<float>({dims.hidden_dim});
    store.mutable_value(kSsmBOut) = Tensor<float>({dims.proto_dim});

    ValueCtx<float> cx(store);
    auto out = ssm_step(cx, dims, Tensor<float>({dims.input_dim}), Tensor<float>({dims.hidden_dim}));
    CHECK(out.hidden.vec().isZero());
    CHECK(out.proto.vec().isZero());

    // lambda -> 1: the state barely moves
    store.mutable_value(kSsmDecay) = Tensor<float>::full({dims.hidden_dim}, 20.0f);
    Rng rng(2);
    auto h_prev = Tensor<float>::randn({dims.hidden_dim}, rng);
    auto u = Tensor<float>::randn({dims.input_dim}, rng);
    auto out2 = ssm_step(cx, dims, u, h_prev);
    for (Index i = 0; i < h_prev.size(); ++i)
        CHECK(std::abs(out2.hidden[i] - h_prev[i]) < 1e-3f);
}

TEST_CASE("ssm gradients through a six-step chain match finite differences") {
    SsmDims dims{3, 4, 2};
    ParamStore<double> store;
    Rng rng(3);
    init_ssm_params(store, dims, rng);
    for (int j = 0; j < 6; ++j)
        store.add("u" + std::to_string(j), Tensor<double>::randn({dims.input_dim}, rng, 0.5));

    const double err = test::gradcheck_max_rel_err(store, [&](TapeCtx<double>& cx) {
        std::vector<Var<double>> inputs;
        for (int j = 0; j < 6; ++j) inputs.push_back(cx.param("u" + std::to_string(j)));
        auto scan = ssm_scan_inputs(cx, dims, inputs);
        return sum(mul(scan.protos.back(), scan.protos.back()));
    });
    CHECK(err < 1e-4);  // includes d(p_6)/d(u_1), five steps upstream
}

TEST_CASE("scan equals the sequential loop bitwise and is causal") {
    SsmDims dims{5, 8, 4};
    auto store = small_ssm<float>(dims, 4);
    Rng rng(5);
    std::vector<Tensor<float>> inputs;
    for (int j = 0; j < 7; ++j) inputs.push_back(Tensor<float>::randn({dims.input_dim}, rng));

    ValueCtx<float> cx(store);
    auto scan = ssm_scan_inputs(cx, dims, inputs);
    CHECK(scan.protos.size() == inputs.size());

    // manual loop oracle
    Tensor<float> hidden({dims.hidden_dim});
    for (std::size_t j = 0; j < inputs.size(); ++j) {
        auto step = ssm_step(cx, dims, inputs[j], hidden);
        hidden = step.hidden;
        CHECK(step.proto.bitwise_equal(scan.protos[j]));
    }
    CHECK(hidden.bitwise_equal(scan.final_hidden));

    // length-1 sequence is a single step
    auto single = ssm_scan_inputs(cx, dims, {inputs[0]});
    auto step0 = ssm_step(cx, dims, inputs[0], Tensor<float>({dims.hidden_dim}));
    CHECK(single.protos[0].bitwise_equal(step0.proto));

    // causality: perturbing u_{j+1} leaves p_1..p_j bitwise unchanged
    auto perturbed = inputs;
    perturbed[4].vec() += VecX<float>::Constant(dims.input_dim, 0.37f);
    auto scan2 = ssm_scan_inputs(cx, dims, perturbed);
    for (int j = 0; j < 4; ++j) CHECK(scan2.protos[(std::size_t)j].bitwise_equal(scan.protos[(std::size_t)j]));
    CHECK_FALSE(scan2.protos[4].bitwise_equal(scan.protos[4]));

    std::vector<Tensor<float>> empty;
    CHECK_THROWS_AS(ssm_scan_inputs(cx, dims, empty), ContractError);
}

TEST_CASE("stability: bounded inputs give bounded states over long sequences") {
    SsmDims dims{6, 16, 4};
    auto store = small_ssm<float>(dims, 6);
    store.mutable_value(kSsmBIn) = Tensor<float>({dims.hidden_dim});  // convex-combination bound
    const double bound = 2.0;
    const double w_inf = store.value(kSsmWIn).mat().cwiseAbs().rowwise().sum().maxCoeff();

    ValueCtx<float> cx(store);
    Rng rng(7);
    Tensor<float> hidden({dims.hidden_dim});
    double max_state = 0.0;
    for (int j = 0; j < 10000; ++j) {
        Tensor<float> u = Tensor<float>::uninitialized({dims.input_dim});
        for (Index i = 0; i < u.size(); ++i) u[i] = static_cast<float>(rng.uniform(-bound, bound));
        auto step = ssm_step(cx, dims, u, hidden);
        hidden = step.hidden;
        max_state = std::max(max_state, static_cast<double>(hidden.vec().cwiseAbs().maxCoeff()));
    }
    CHECK(max_state <= bound * w_inf + 1e-5);
}

TEST_CASE("gradients flow through at least one hundred steps") {
    SsmDims dims{4, 8, 3};
    ParamStore<double> store;
    Rng rng(8);
    init_ssm_params(store, dims, rng);

    Tape<double> tape;
    TapeCtx<double> cx(tape, store);
    std::vector<Var<double>> inputs;
    for (int j = 0; j < 120; ++j)
        inputs.push_back(cx.constant(Tensor<double>::randn({dims.input_dim}, rng, 0.5)));
    auto scan = ssm_scan_inputs(cx, dims, inputs);
    auto grads = tape.backward(sum(mul(scan.protos.back(), scan.protos.back())));
    CHECK(grads.at(kSsmWIn).vec().norm() > 0.0);
    CHECK(grads.at(kSsmDecay).vec().norm() > 0.0);
    CHECK(grads.at(kSsmWGate).vec().norm() > 0.0);
}
