// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "forge/autodiff.hpp"
#include "forge/tensor.hpp"

namespace forge {

// Adam is the single optimizer used throughout the project.
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named trainable parameters with Adam moment state. Values persist across
// tapes; each training step copies them onto a fresh tape as leaves.
template <class S>
class ParamStore {
  public:
    struct Entry {
        Tensor<S> value;
        Tensor<S> m;
        Tensor<S> v;
    };

    void add(const std::string& name, Tensor<S> init) {
        if (entries_.count(name)) throw ContractError("parameter '" + name + "' already exists");
        Entry e;
        e.m = Tensor<S>(init.shape());
        e.v = Tensor<S>(init.shape());
        e.value = std::move(init);
        entries_.emplace(name, std::move(e));
    }

    bool has(const std::string& name) const { return entries_.count(name) > 0; }

    const Tensor<S>& value(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second.value;
    }

    Tensor<S>& mutable_value(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second.value;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [name, entry] : entries_) out.push_back(name);
        return out;
    }

    Index total_size() const {
        Index n = 0;
        for (const auto& [name, entry] : entries_) n += entry.value.size();
        return n;
    }

    std::int64_t step_count() const { return step_; }

    void adam_step(const GradMap<S>& grads, const AdamConfig& cfg) {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
        for (const auto& [name, grad] : grads) {
            auto it = entries_.find(name);
            if (it == entries_.end()) throw ContractError("gradient for unknown parameter '" + name + "'");
            Entry& e = it->second;
            if (!e.value.same_shape(grad))
                throw ShapeError("gradient shape mismatch for parameter '" + name + "'");
            for (Index i = 0; i < e.value.size(); ++i) {
                const double g = static_cast<double>(grad[i]);
                const double m = cfg.beta1 * static_cast<double>(e.m[i]) + (1.0 - cfg.beta1) * g;
                const double v = cfg.beta2 * static_cast<double>(e.v[i]) + (1.0 - cfg.beta2) * g * g;
                e.m[i] = static_cast<S>(m);
                e.v[i] = static_cast<S>(v);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                e.value[i] -= static_cast<S>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
            }
        }
    }

    template <class S2>
    ParamStore<S2> cast() const {
        ParamStore<S2> out;
        for (const auto& [name, entry] : entries_) out.add(name, entry.value.template cast<S2>());
        return out;
    }

  private:
    std::map<std::string, Entry> entries_;
    std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Forward contexts. Network code is written once against a context and runs
// either on the tape (training) or directly on values (inference). Both paths
// call the same kernels, so they produce bitwise-identical outputs.
// ---------------------------------------------------------------------------

template <class S>
struct TapeCtx {
    using T = Var<S>;
    static constexpr bool recording = true;

    Tape<S>* tape;
    const ParamStore<S>* store;
    std::map<std::string, Var<S>> bound;

    TapeCtx(Tape<S>& t, const ParamStore<S>& s) : tape(&t), store(&s) {}

    T param(const std::string& name) {
        auto it = bound.find(name);
        if (it != bound.end()) return it->second;
        Var<S> v = tape->leaf(store->value(name), name, true);
        bound.emplace(name, v);
        return v;
    }

    T constant(Tensor<S> t) { return tape->constant(std::move(t)); }

    T matmul(const T& a, const T& b) { return forge::matmul(a, b); }
    T matvec(const T& w, const T& v) { return forge::matvec(w, v); }
    T conv1d(const T& x, const T& k) { return forge::conv1d(x, k); }
    T sigmoid(const T& x) { return forge::sigmoid(x); }
    T silu(const T& x) { return forge::silu(x); }
    T layer_norm(const T& x, const T& g, const T& b) { return forge::layer_norm(x, g, b); }
    T add(const T& a, const T& b) { return forge::add(a, b); }
    T sub(const T& a, const T& b) { return forge::sub(a, b); }
    T mul(const T& a, const T& b) { return forge::mul(a, b); }
    T affine(const T& x, S scale, S shift) { return forge::affine(x, scale, shift); }
    T one_minus(const T& x) { return forge::one_minus(x); }
    T channel_scale_shift(const T& x, const T& s, const T& t) {
        return forge::channel_scale_shift(x, s, t);
    }
    T tile_cols(const T& v, int cols) { return forge::tile_cols(v, cols); }
    T concat_rows(const T& a, const T& b) { return forge::concat_rows(a, b); }
    T concat_vec(const T& a, const T& b) { return forge::concat_vec(a, b); }
    T reshape(const T& x, std::vector<int> shape) { return forge::reshape(x, std::move(shape)); }
    T transpose(const T& x) { return forge::transpose(x); }
    T slice_vec(const T& v, int begin, int len) { return forge::slice_vec(v, begin, len); }
    T add_bias_channels(const T& x, const T& b) { return forge::add_bias_channels(x, b); }
    T add_bias_rows(const T& x, const T& b) { return forge::add_bias_rows(x, b); }
    T sum(const T& x) { return forge::sum(x); }

    static const Tensor<S>& value_of(const T& v) { return v.value(); }
};

template <class S>
struct ValueCtx {
    using T = Tensor<S>;
    static constexpr bool recording = false;

    const ParamStore<S>* store;

    explicit ValueCtx(const ParamStore<S>& s) : store(&s) {}

    const T& param(const std::string& name) { return store->value(name); }
    T constant(Tensor<S> t) { return t; }

    T matmul(const T& a, const T& b) { return matmul_val(a, b); }
    T matvec(const T& w, const T& v) { return matvec_val(w, v); }
    T conv1d(const T& x, const T& k) { return conv1d_val(x, k); }
    T sigmoid(const T& x) { return sigmoid_val(x); }
    T silu(const T& x) { return silu_val(x); }
    T layer_norm(const T& x, const T& g, const T& b) { return layer_norm_val(x, g, b); }
    T add(const T& a, const T& b) { return add_val(a, b); }
    T sub(const T& a, const T& b) { return sub_val(a, b); }
    T mul(const T& a, const T& b) { return mul_val(a, b); }
    T affine(const T& x, S scale, S shift) { return affine_val(x, scale, shift); }
    T one_minus(const T& x) { return affine_val(x, S(-1), S(1)); }
    T channel_scale_shift(const T& x, const T& s, const T& t) {
        return channel_scale_shift_val(x, s, t);
    }
    T tile_cols(const T& v, int cols) { return tile_cols_val(v, cols); }
    T concat_rows(const T& a, const T& b) { return concat_rows_val(a, b); }
    T concat_vec(const T& a, const T& b) { return concat_vec_val(a, b); }
    T reshape(const T& x, std::vector<int> shape) { return reshape_val(x, std::move(shape)); }
    T transpose(const T& x) { return transpose_val(x); }
    T slice_vec(const T& v, int begin, int len) { return slice_vec_val(v, begin, len); }
    T add_bias_channels(const T& x, const T& b) { return add_bias_channels_val(x, b); }
    T add_bias_rows(const T& x, const T& b) { return add_bias_rows_val(x, b); }
    T sum(const T& x) { return sum_val(x); }

    static const Tensor<S>& value_of(const T& v) { return v; }
};

}  // namespace forge
