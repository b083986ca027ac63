// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "forge/lora.hpp"
#include "forge/tensor.hpp"

namespace forge {

// Reference token size for full-scale models; toy adapters use far smaller
// tokens (desk default 64) so sequences stay long enough to be interesting.
inline constexpr int kFullScaleTokenSize = 8196;
inline constexpr double kNormStdFloor = 1e-8;

struct LayerTokenInfo {
    std::string layer_id;
    int d_out = 0;
    int rank = 0;
    int d_in = 0;
    int element_count = 0;  // d_out*rank + rank*d_in (B then A, row-major)
    int token_span = 0;     // ceil(element_count / token_size)
    int pad_len = 0;        // zeros appended to the layer's last token
    double mean = 0.0;      // stats of this layer unit, stored for inversion
    double stdev = 1.0;
};

struct TokenLayout {
    int token_size = 0;
    int position_dim = 0;
    std::vector<LayerTokenInfo> layers;

    int total_tokens() const {
        int n = 0;
        for (const auto& l : layers) n += l.token_span;
        return n;
    }

    // layout structure (not stats) must match for sequences to be comparable
    bool structure_equal(const TokenLayout& o) const {
        if (token_size != o.token_size || position_dim != o.position_dim ||
            layers.size() != o.layers.size())
            return false;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& a = layers[i];
            const auto& b = o.layers[i];
            if (a.layer_id != b.layer_id || a.d_out != b.d_out || a.rank != b.rank ||
                a.d_in != b.d_in || a.element_count != b.element_count ||
                a.token_span != b.token_span || a.pad_len != b.pad_len)
                return false;
        }
        return true;
    }
};

// Fixed-size weight tokens plus their positional annotations and pad mask.
// Padded slots are exactly zero; mask holds 1 for real elements, 0 for pads.
template <class S>
struct TokenSequence {
    Tensor<S> tokens;     // [T, k]
    Tensor<S> positions;  // [T, position_dim]
    Tensor<S> mask;       // [T, k]
    TokenLayout layout;

    int count() const { return tokens.extent(0); }
};

// Interleaved sin/cos annotation of (layer_index, offset): even/odd slots are
// sine/cosine pairs whose pair index alternates between the two coordinates.
template <class S>
Tensor<S> positional_annotation(int layer_index, int offset, int dim) {
    if (dim <= 0 || dim % 2 != 0)
        throw ConfigError("positional annotation dim must be even and positive");
    Tensor<S> out({dim});
    const int pairs = dim / 2;
    const int bands = (pairs + 1) / 2;
    for (int i = 0; i < pairs; ++i) {
        const double target = (i % 2 == 0) ? layer_index : offset;
        const int band = i / 2;
        const double omega = std::pow(10000.0, -static_cast<double>(band) /
                                                   std::max(1.0, static_cast<double>(bands)));
        out[2 * i] = static_cast<S>(std::sin(target * omega));
        out[2 * i + 1] = static_cast<S>(std::cos(target * omega));
    }
    return out;
}

// Flattens each factor pair (B row-major, then A row-major), standardizes per
// layer unit, slices into tokens of size k, zero-pads the final token, and
// attaches positional annotations.
template <class S>
TokenSequence<S> tokenize(const LoraAdapter<S>& adapter, int token_size, int position_dim) {
    if (token_size < 1) throw ConfigError("token size must be >= 1");
    if (adapter.factors.empty()) throw StructuralError("cannot tokenize an empty adapter");
    adapter.validate();

    TokenSequence<S> seq;
    seq.layout.token_size = token_size;
    seq.layout.position_dim = position_dim;

    std::vector<std::vector<double>> units;
    for (const auto& f : adapter.factors) {
        LayerTokenInfo info;
        info.layer_id = f.layer_id;
        info.d_out = f.d_out();
        info.rank = f.rank;
        info.d_in = f.d_in();
        info.element_count = static_cast<int>(f.B.size() + f.A.size());
        info.token_span = (info.element_count + token_size - 1) / token_size;
        info.pad_len = info.token_span * token_size - info.element_count;

        std::vector<double> unit;
        unit.reserve(static_cast<std::size_t>(info.element_count));
        for (Index i = 0; i < f.B.size(); ++i) unit.push_back(static_cast<double>(f.B[i]));
        for (Index i = 0; i < f.A.size(); ++i) unit.push_back(static_cast<double>(f.A[i]));

        double mean = 0.0;
        for (double v : unit) mean += v;
        mean /= static_cast<double>(unit.size());
        double var = 0.0;
        for (double v : unit) var += (v - mean) * (v - mean);
        var /= static_cast<double>(unit.size());
        info.mean = mean;
        info.stdev = std::max(std::sqrt(var), kNormStdFloor);

        for (double& v : unit) v = (v - mean) / info.stdev;
        units.push_back(std::move(unit));
        seq.layout.layers.push_back(std::move(info));
    }

    const int total = seq.layout.total_tokens();
    seq.tokens = Tensor<S>({total, token_size});
    seq.positions = Tensor<S>({total, position_dim});
    seq.mask = Tensor<S>({total, token_size});

    int token_row = 0;
    for (std::size_t l = 0; l < units.size(); ++l) {
        const auto& info = seq.layout.layers[l];
        const auto& unit = units[l];
        for (int t = 0; t < info.token_span; ++t, ++token_row) {
            const int begin = t * token_size;
            for (int i = 0; i < token_size; ++i) {
                const int src = begin + i;
                if (src < info.element_count) {
                    seq.tokens.at(token_row, i) = static_cast<S>(unit[static_cast<std::size_t>(src)]);
                    seq.mask.at(token_row, i) = S(1);
                }
            }
            const Tensor<S> pos = positional_annotation<S>(static_cast<int>(l), t, position_dim);
            for (int d = 0; d < position_dim; ++d) seq.positions.at(token_row, d) = pos[d];
        }
    }
    return seq;
}

// Inverse of tokenize: strips padding, de-standardizes with the stored stats,
// and reshapes back into factors. In checked mode, nonzero padding rejects.
template <class S>
LoraAdapter<S> detokenize(const TokenSequence<S>& seq) {
    const TokenLayout& layout = seq.layout;
    if (layout.layers.empty()) throw StructuralError("token layout has no layers");
    if (seq.tokens.rank() != 2 || seq.tokens.extent(0) != layout.total_tokens() ||
        seq.tokens.extent(1) != layout.token_size)
        throw StructuralError("token tensor does not match layout");

    LoraAdapter<S> adapter;
    adapter.rank = layout.layers.front().rank;
    adapter.provenance = Provenance::generated();

    int token_row = 0;
    for (const auto& info : layout.layers) {
        if (info.element_count != info.d_out * info.rank + info.rank * info.d_in)
            throw StructuralError("layout element count disagrees with factor shapes for layer " +
                                  info.layer_id);
        std::vector<double> unit(static_cast<std::size_t>(info.element_count));
        for (int t = 0; t < info.token_span; ++t, ++token_row) {
            const int begin = t * layout.token_size;
            for (int i = 0; i < layout.token_size; ++i) {
                const int dst = begin + i;
                if (dst < info.element_count) {
                    unit[static_cast<std::size_t>(dst)] =
                        static_cast<double>(seq.tokens.at(token_row, i));
                } else if (checked_mode() && seq.tokens.at(token_row, i) != S(0)) {
                    throw StructuralError("nonzero padding in token " + std::to_string(token_row) +
                                          " of layer " + info.layer_id);
                }
            }
        }
        LoraFactor<S> f;
        f.layer_id = info.layer_id;
        f.rank = info.rank;
        f.B = Tensor<S>::uninitialized({info.d_out, info.rank});
        f.A = Tensor<S>::uninitialized({info.rank, info.d_in});
        std::size_t cursor = 0;
        for (Index i = 0; i < f.B.size(); ++i, ++cursor)
            f.B[i] = static_cast<S>(unit[cursor] * info.stdev + info.mean);
        for (Index i = 0; i < f.A.size(); ++i, ++cursor)
            f.A[i] = static_cast<S>(unit[cursor] * info.stdev + info.mean);
        f.validate();
        adapter.factors.push_back(std::move(f));
    }
    adapter.validate();
    return adapter;
}

}  // namespace forge
