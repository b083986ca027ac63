// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "forge/common.hpp"
#include "forge/rng.hpp"

namespace forge {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using MatMap = Eigen::Map<MatX<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const MatX<S>>;
template <class S>
using VecMap = Eigen::Map<VecX<S>>;
template <class S>
using ConstVecMap = Eigen::Map<const VecX<S>>;

using Index = Eigen::Index;

inline Index shape_size(const std::vector<int>& shape) {
    Index n = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive");
        n *= e;
    }
    return n;
}

inline std::string shape_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major tensor of rank 0..3 backed by Eigen storage. Values are
// immutable by convention once handed to the graph; ops return fresh tensors.
template <class S>
class Tensor {
  public:
    using Scalar = S;

    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_ = VecX<S>::Zero(shape_size(shape_));
    }

    Tensor(std::vector<int> shape, std::vector<S> values) : shape_(std::move(shape)) {
        const Index n = shape_size(shape_);
        if (static_cast<Index>(values.size()) != n)
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_string(shape_));
        data_ = ConstVecMap<S>(values.data(), n);
        validate_finite();
    }

    static Tensor uninitialized(std::vector<int> shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_.resize(shape_size(t.shape_));
        return t;
    }

    static Tensor full(std::vector<int> shape, S v) {
        Tensor t = uninitialized(std::move(shape));
        t.data_.setConstant(v);
        return t;
    }

    static Tensor scalar(S v) { return full({1}, v); }

    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
        Tensor t = uninitialized(std::move(shape));
        for (Index i = 0; i < t.size(); ++i) t.data_[i] = static_cast<S>(stddev * rng.normal());
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    Index size() const { return data_.size(); }
    int extent(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

    int rows() const { return rank() >= 1 ? shape_[0] : 1; }
    int cols() const {
        if (rank() == 2) return shape_[1];
        if (rank() <= 1) return 1;
        throw ShapeError("cols() requires rank <= 2, got shape " + shape_string(shape_));
    }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }

    S& operator[](Index i) { return data_[i]; }
    S operator[](Index i) const { return data_[i]; }

    S& at(int i, int j) { return data_[static_cast<Index>(i) * cols() + j]; }
    S at(int i, int j) const { return data_[static_cast<Index>(i) * cols() + j]; }

    S& at3(int i, int j, int k) {
        return data_[(static_cast<Index>(i) * shape_[1] + j) * shape_[2] + k];
    }
    S at3(int i, int j, int k) const {
        return data_[(static_cast<Index>(i) * shape_[1] + j) * shape_[2] + k];
    }

    // Rank-2 matrix view; rank-3 tensors expose a (d0, d1*d2) view.
    MatMap<S> mat() {
        return MatMap<S>(data_.data(), rows(), size() / std::max<Index>(rows(), 1));
    }
    ConstMatMap<S> mat() const {
        return ConstMatMap<S>(data_.data(), rows(), size() / std::max<Index>(rows(), 1));
    }

    VecMap<S> vec() { return VecMap<S>(data_.data(), size()); }
    ConstVecMap<S> vec() const { return ConstVecMap<S>(data_.data(), size()); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool bitwise_equal(const Tensor& o) const {
        if (shape_ != o.shape_) return false;
        return std::memcmp(data_.data(), o.data_.data(), sizeof(S) * static_cast<std::size_t>(size())) == 0;
    }

    template <class S2>
    Tensor<S2> cast() const {
        Tensor<S2> out = Tensor<S2>::uninitialized(shape_);
        for (Index i = 0; i < size(); ++i) out[i] = static_cast<S2>(data_[i]);
        return out;
    }

    void validate_finite() const {
        if (!checked_mode()) return;
        for (Index i = 0; i < size(); ++i)
            if (!std::isfinite(static_cast<double>(data_[i])))
                throw ShapeError("non-finite tensor entry at flat index " + std::to_string(i));
    }

  private:
    std::vector<int> shape_;
    VecX<S> data_;
};

template <class S>
Tensor<S> make_matrix(int rows, int cols, std::initializer_list<S> values) {
    return Tensor<S>({rows, cols}, std::vector<S>(values));
}

template <class S>
Tensor<S> make_vector(std::initializer_list<S> values) {
    std::vector<S> v(values);
    return Tensor<S>({static_cast<int>(v.size())}, std::move(v));
}

// ---------------------------------------------------------------------------
// Value-level kernels. The autodiff ops and the inference paths call the same
// functions, which keeps the two bitwise identical.
// ---------------------------------------------------------------------------

template <class S>
void require_rank(const Tensor<S>& t, int rank, const char* what) {
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
}

template <class S>
Tensor<S> matmul_val(const Tensor<S>& a, const Tensor<S>& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    if (a.extent(1) != b.extent(0))
        throw ShapeError("matmul inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
    Tensor<S> y = Tensor<S>::uninitialized({a.extent(0), b.extent(1)});
    y.mat().noalias() = a.mat() * b.mat();
    return y;
}

template <class S>
Tensor<S> matvec_val(const Tensor<S>& w, const Tensor<S>& v) {
    require_rank(w, 2, "matvec lhs");
    if (v.rank() != 1 || w.extent(1) != v.extent(0))
        throw ShapeError("matvec shapes incompatible: " + shape_string(w.shape()) + " x " +
                         shape_string(v.shape()));
    Tensor<S> y = Tensor<S>::uninitialized({w.extent(0)});
    y.vec().noalias() = w.mat() * v.vec();
    return y;
}

// x: [C_in, L]; result: [C_in*K, L] where row ci*K+kk holds x[ci, l+kk-pad].
template <class S>
Tensor<S> im2col_1d(const Tensor<S>& x, int kernel) {
    const int cin = x.extent(0);
    const int len = x.extent(1);
    const int pad = kernel / 2;
    Tensor<S> cols({cin * kernel, len});
    for (int ci = 0; ci < cin; ++ci) {
        for (int kk = 0; kk < kernel; ++kk) {
            const int row = ci * kernel + kk;
            for (int l = 0; l < len; ++l) {
                const int src = l + kk - pad;
                if (src >= 0 && src < len) cols.at(row, l) = x.at(ci, src);
            }
        }
    }
    return cols;
}

template <class S>
Tensor<S> col2im_1d_add(const Tensor<S>& cols, int cin, int len, int kernel) {
    const int pad = kernel / 2;
    Tensor<S> x({cin, len});
    for (int ci = 0; ci < cin; ++ci) {
        for (int kk = 0; kk < kernel; ++kk) {
            const int row = ci * kernel + kk;
            for (int l = 0; l < len; ++l) {
                const int dst = l + kk - pad;
                if (dst >= 0 && dst < len) x.at(ci, dst) += cols.at(row, l);
            }
        }
    }
    return x;
}

// Same-length 1D convolution with zero-padded borders.
// x: [C_in, L]; kernels: [C_out, C_in, K] with K odd; result: [C_out, L].
template <class S>
Tensor<S> conv1d_val(const Tensor<S>& x, const Tensor<S>& kernels) {
    require_rank(x, 2, "conv1d input");
    require_rank(kernels, 3, "conv1d kernels");
    const int kernel = kernels.extent(2);
    if (kernel % 2 == 0) throw ConfigError("conv1d kernel width must be odd");
    if (kernels.extent(1) != x.extent(0))
        throw ShapeError("conv1d channel mismatch: input " + shape_string(x.shape()) +
                         ", kernels " + shape_string(kernels.shape()));
    const int cout = kernels.extent(0);
    const int len = x.extent(1);
    const Tensor<S> cols = im2col_1d(x, kernel);
    Tensor<S> y = Tensor<S>::uninitialized({cout, len});
    // kernels flattened row-major is exactly [C_out, C_in*K]
    ConstMatMap<S> wf(kernels.data(), cout, kernels.extent(1) * kernel);
    y.mat().noalias() = wf * cols.mat();
    return y;
}

template <class S>
Tensor<S> sigmoid_val(const Tensor<S>& x) {
    Tensor<S> y = Tensor<S>::uninitialized(x.shape());
    for (Index i = 0; i < x.size(); ++i) y[i] = S(1) / (S(1) + std::exp(-x[i]));
    return y;
}

template <class S>
Tensor<S> silu_val(const Tensor<S>& x) {
    Tensor<S> y = Tensor<S>::uninitialized(x.shape());
    for (Index i = 0; i < x.size(); ++i) y[i] = x[i] / (S(1) + std::exp(-x[i]));
    return y;
}

inline constexpr double kLayerNormEps = 1e-5;

template <class S>
struct LayerNormCache {
    Tensor<S> normalized;  // x-hat, before gain/bias
    VecX<S> inv_std;       // one per row
};

// Normalization over the last axis; x is treated as [R, n] with n = last extent.
template <class S>
Tensor<S> layer_norm_val(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                         LayerNormCache<S>* cache = nullptr) {
    if (x.rank() < 1 || x.rank() > 2) throw ShapeError("layer_norm expects rank 1 or 2");
    const int n = x.shape().back();
    if (gain.rank() != 1 || gain.extent(0) != n || bias.rank() != 1 || bias.extent(0) != n)
        throw ShapeError("layer_norm gain/bias must match last axis extent " + std::to_string(n));
    const int rows = static_cast<int>(x.size()) / n;
    Tensor<S> y = Tensor<S>::uninitialized(x.shape());
    if (cache) {
        cache->normalized = Tensor<S>::uninitialized(x.shape());
        cache->inv_std.resize(rows);
    }
    for (int r = 0; r < rows; ++r) {
        ConstVecMap<S> row(x.data() + static_cast<Index>(r) * n, n);
        VecMap<S> out(y.data() + static_cast<Index>(r) * n, n);
        const S mean = row.mean();
        const S var = (row.array() - mean).square().sum() / S(n);
        const S inv_std = S(1) / std::sqrt(var + S(kLayerNormEps));
        out = (row.array() - mean) * inv_std * gain.vec().array() + bias.vec().array();
        if (cache) {
            VecMap<S> nrm(cache->normalized.data() + static_cast<Index>(r) * n, n);
            nrm = (row.array() - mean) * inv_std;
            cache->inv_std[r] = inv_std;
        }
    }
    return y;
}

template <class S>
Tensor<S> add_val(const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b))
        throw ShapeError("add shape mismatch: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    Tensor<S> y = Tensor<S>::uninitialized(a.shape());
    y.vec() = a.vec() + b.vec();
    return y;
}

template <class S>
Tensor<S> sub_val(const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) throw ShapeError("sub shape mismatch");
    Tensor<S> y = Tensor<S>::uninitialized(a.shape());
    y.vec() = a.vec() - b.vec();
    return y;
}

template <class S>
Tensor<S> mul_val(const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) throw ShapeError("mul shape mismatch");
    Tensor<S> y = Tensor<S>::uninitialized(a.shape());
    y.vec() = a.vec().cwiseProduct(b.vec());
    return y;
}

template <class S>
Tensor<S> affine_val(const Tensor<S>& x, S scale, S shift) {
    Tensor<S> y = Tensor<S>::uninitialized(x.shape());
    y.vec() = x.vec() * scale + VecX<S>::Constant(x.size(), shift);
    return y;
}

// y[i, :] = x[i, :] * (1 + s[i]) + t[i]; per-channel conditioning of a [C, L] map.
template <class S>
Tensor<S> channel_scale_shift_val(const Tensor<S>& x, const Tensor<S>& s, const Tensor<S>& t) {
    require_rank(x, 2, "channel_scale_shift input");
    if (s.rank() != 1 || t.rank() != 1 || s.extent(0) != x.extent(0) || t.extent(0) != x.extent(0))
        throw ShapeError("channel_scale_shift scale/shift must have one entry per channel");
    Tensor<S> y = Tensor<S>::uninitialized(x.shape());
    for (int c = 0; c < x.extent(0); ++c)
        y.mat().row(c) = x.mat().row(c) * (S(1) + s[c]) + MatX<S>::Constant(1, x.extent(1), t[c]);
    return y;
}

template <class S>
Tensor<S> tile_cols_val(const Tensor<S>& v, int cols) {
    require_rank(v, 1, "tile_cols input");
    Tensor<S> y = Tensor<S>::uninitialized({v.extent(0), cols});
    y.mat() = v.vec() * MatX<S>::Ones(1, cols);
    return y;
}

template <class S>
Tensor<S> concat_rows_val(const Tensor<S>& a, const Tensor<S>& b) {
    require_rank(a, 2, "concat_rows lhs");
    require_rank(b, 2, "concat_rows rhs");
    if (a.extent(1) != b.extent(1)) throw ShapeError("concat_rows column mismatch");
    Tensor<S> y = Tensor<S>::uninitialized({a.extent(0) + b.extent(0), a.extent(1)});
    y.mat().topRows(a.extent(0)) = a.mat();
    y.mat().bottomRows(b.extent(0)) = b.mat();
    return y;
}

template <class S>
Tensor<S> concat_vec_val(const Tensor<S>& a, const Tensor<S>& b) {
    require_rank(a, 1, "concat_vec lhs");
    require_rank(b, 1, "concat_vec rhs");
    Tensor<S> y = Tensor<S>::uninitialized({a.extent(0) + b.extent(0)});
    y.vec().head(a.extent(0)) = a.vec();
    y.vec().tail(b.extent(0)) = b.vec();
    return y;
}

template <class S>
Tensor<S> sum_val(const Tensor<S>& x) {
    return Tensor<S>::scalar(x.vec().sum());
}

template <class S>
Tensor<S> transpose_val(const Tensor<S>& x) {
    require_rank(x, 2, "transpose input");
    Tensor<S> y = Tensor<S>::uninitialized({x.extent(1), x.extent(0)});
    y.mat() = x.mat().transpose();
    return y;
}

template <class S>
Tensor<S> reshape_val(const Tensor<S>& x, std::vector<int> shape) {
    if (shape_size(shape) != x.size())
        throw ShapeError("reshape size mismatch: " + shape_string(x.shape()) + " -> " +
                         shape_string(shape));
    Tensor<S> y = Tensor<S>::uninitialized(std::move(shape));
    y.vec() = x.vec();
    return y;
}

template <class S>
Tensor<S> slice_vec_val(const Tensor<S>& v, int begin, int len) {
    require_rank(v, 1, "slice_vec input");
    if (begin < 0 || len < 1 || begin + len > v.extent(0))
        throw ShapeError("slice_vec range out of bounds");
    Tensor<S> y = Tensor<S>::uninitialized({len});
    y.vec() = v.vec().segment(begin, len);
    return y;
}

// Per-channel bias add on a [C, L] map: y[c, :] = x[c, :] + b[c].
template <class S>
Tensor<S> add_bias_channels_val(const Tensor<S>& x, const Tensor<S>& b) {
    require_rank(x, 2, "add_bias_channels input");
    if (b.rank() != 1 || b.extent(0) != x.extent(0))
        throw ShapeError("add_bias_channels bias must have one entry per channel");
    Tensor<S> y = Tensor<S>::uninitialized(x.shape());
    y.mat() = x.mat().colwise() + b.vec();
    return y;
}

// Row-broadcast bias add: x [N, d] + b [d] per row.
template <class S>
Tensor<S> add_bias_rows_val(const Tensor<S>& x, const Tensor<S>& b) {
    require_rank(x, 2, "add_bias_rows input");
    if (b.rank() != 1 || b.extent(0) != x.extent(1))
        throw ShapeError("add_bias_rows bias extent mismatch");
    Tensor<S> y = Tensor<S>::uninitialized(x.shape());
    y.mat() = x.mat().rowwise() + b.vec().transpose();
    return y;
}

}  // namespace forge
