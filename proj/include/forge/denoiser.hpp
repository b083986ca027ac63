// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "forge/optim.hpp"
#include "forge/tensor.hpp"

namespace forge {

// Conditional 1D-convolutional residual denoiser. The noisy token enters as a
// single-channel signal; the prototype and the global condition each add a
// learned per-position decode channel (so content can vary along the token)
// plus the prototype broadcast along the length as extra channels. The global
// condition and a sinusoidal time embedding steer every residual block
// through learned per-channel scale-and-shift.
struct DenoiserDims {
    int token_size = 64;
    int proto_dim = 32;
    int cond_dim = 128;
    int time_dim = 32;
    int channels = 64;
    int blocks = 4;
    int kernel = 3;

    int in_channels() const { return 3 + proto_dim; }
    int film_dim() const { return cond_dim + time_dim; }
};

inline std::string den_name(const std::string& leaf) { return "den/" + leaf; }
inline std::string den_block_name(int block, const std::string& leaf) {
    return "den/block" + std::to_string(block) + "/" + leaf;
}

template <class S>
Tensor<S> time_embedding(int t, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw ConfigError("time embedding dim must be even");
    Tensor<S> out({dim});
    const int pairs = dim / 2;
    for (int i = 0; i < pairs; ++i) {
        const double omega =
            std::pow(10000.0, -static_cast<double>(i) / std::max(1, pairs));
        out[2 * i] = static_cast<S>(std::sin(t * omega));
        out[2 * i + 1] = static_cast<S>(std::cos(t * omega));
    }
    return out;
}

template <class S>
void init_denoiser_params(ParamStore<S>& store, const DenoiserDims& dims, Rng& rng) {
    const auto conv_init = [&](int cout, int cin, int k) {
        return Tensor<S>::randn({cout, cin, k}, rng, std::sqrt(2.0 / (cin * k)));
    };
    store.add(den_name("proto_dec/w"),
              Tensor<S>::randn({dims.token_size, dims.proto_dim}, rng,
                               1.0 / std::sqrt(static_cast<double>(dims.proto_dim))));
    store.add(den_name("proto_dec/b"), Tensor<S>({dims.token_size}));
    store.add(den_name("cond_dec/w"),
              Tensor<S>::randn({dims.token_size, dims.cond_dim}, rng,
                               1.0 / std::sqrt(static_cast<double>(dims.cond_dim))));
    store.add(den_name("cond_dec/b"), Tensor<S>({dims.token_size}));
    store.add(den_name("in/w"), conv_init(dims.channels, dims.in_channels(), dims.kernel));
    store.add(den_name("in/b"), Tensor<S>({dims.channels}));
    for (int b = 0; b < dims.blocks; ++b) {
        store.add(den_block_name(b, "norm1/gain"), Tensor<S>::full({dims.token_size}, S(1)));
        store.add(den_block_name(b, "norm1/bias"), Tensor<S>({dims.token_size}));
        store.add(den_block_name(b, "film/w"), Tensor<S>({2 * dims.channels, dims.film_dim()}));
        store.add(den_block_name(b, "film/b"), Tensor<S>({2 * dims.channels}));
        store.add(den_block_name(b, "conv1/w"), conv_init(dims.channels, dims.channels, dims.kernel));
        store.add(den_block_name(b, "conv1/b"), Tensor<S>({dims.channels}));
        store.add(den_block_name(b, "norm2/gain"), Tensor<S>::full({dims.token_size}, S(1)));
        store.add(den_block_name(b, "norm2/bias"), Tensor<S>({dims.token_size}));
        store.add(den_block_name(b, "conv2/w"), conv_init(dims.channels, dims.channels, dims.kernel));
        store.add(den_block_name(b, "conv2/b"), Tensor<S>({dims.channels}));
    }
    // zero-initialized output head: the untrained net predicts zero noise
    store.add(den_name("out/w"), Tensor<S>({1, dims.channels, 1}));
    store.add(den_name("out/b"), Tensor<S>({1}));
}


// Predicted noise for one token. `u_t` is the noisy token [k], `proto` the
// prototype [P], `cond` the global condition [cond_dim]; t selects the time
// embedding. Differentiable w.r.t. every parameter plus proto and cond.
template <class Ctx>
typename Ctx::T denoiser_forward(Ctx& cx, const DenoiserDims& dims, const typename Ctx::T& u_t,
                                 const typename Ctx::T& proto, const typename Ctx::T& cond,
                                 int t) {
    using TensorT = std::decay_t<decltype(Ctx::value_of(u_t))>;
    using S = typename TensorT::Scalar;
    if (Ctx::value_of(u_t).size() != dims.token_size)
        throw ShapeError("denoiser token size mismatch");
    if (Ctx::value_of(proto).size() != dims.proto_dim)
        throw ShapeError("denoiser prototype size mismatch");
    if (Ctx::value_of(cond).size() != dims.cond_dim)
        throw ShapeError("denoiser condition size mismatch");

    auto signal = cx.reshape(u_t, {1, dims.token_size});
    auto proto_signal = cx.reshape(
        cx.add(cx.matvec(cx.param(den_name("proto_dec/w")), proto), cx.param(den_name("proto_dec/b"))),
        {1, dims.token_size});
    auto cond_signal = cx.reshape(
        cx.add(cx.matvec(cx.param(den_name("cond_dec/w")), cond), cx.param(den_name("cond_dec/b"))),
        {1, dims.token_size});
    auto proto_channels = cx.tile_cols(proto, dims.token_size);
    auto x = cx.concat_rows(cx.concat_rows(signal, proto_signal),
                            cx.concat_rows(cond_signal, proto_channels));
    x = cx.add_bias_channels(cx.conv1d(x, cx.param(den_name("in/w"))), cx.param(den_name("in/b")));

    auto film_input = cx.concat_vec(cond, cx.constant(time_embedding<S>(t, dims.time_dim)));
    for (int b = 0; b < dims.blocks; ++b) {
        auto film = cx.add(cx.matvec(cx.param(den_block_name(b, "film/w")), film_input),
                           cx.param(den_block_name(b, "film/b")));
        auto scale = cx.slice_vec(film, 0, dims.channels);
        auto shift = cx.slice_vec(film, dims.channels, dims.channels);
        auto h = cx.layer_norm(x, cx.param(den_block_name(b, "norm1/gain")),
                               cx.param(den_block_name(b, "norm1/bias")));
        h = cx.channel_scale_shift(h, scale, shift);
        h = cx.add_bias_channels(cx.conv1d(cx.silu(h), cx.param(den_block_name(b, "conv1/w"))),
                                 cx.param(den_block_name(b, "conv1/b")));
        h = cx.layer_norm(h, cx.param(den_block_name(b, "norm2/gain")),
                          cx.param(den_block_name(b, "norm2/bias")));
        h = cx.add_bias_channels(cx.conv1d(cx.silu(h), cx.param(den_block_name(b, "conv2/w"))),
                                 cx.param(den_block_name(b, "conv2/b")));
        x = cx.add(x, h);
    }
    auto out = cx.add_bias_channels(cx.conv1d(x, cx.param(den_name("out/w"))),
                                    cx.param(den_name("out/b")));
    return cx.reshape(out, {dims.token_size});
}

}  // namespace forge
