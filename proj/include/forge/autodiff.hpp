// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "forge/tensor.hpp"

namespace forge {

template <class S>
class Tape;

template <class S>
struct Var {
    Tape<S>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor<S>& value() const;
};

template <class S>
using GradMap = std::map<std::string, Tensor<S>>;

// Dynamic reverse-mode tape. Nodes are appended in evaluation order, which is
// already a topological order, so backward is a single reverse sweep. Gradient
// buffers are allocated lazily; accumulation order is fixed by construction,
// making backward bitwise deterministic for identical graphs.
template <class S>
class Tape {
  public:
    Var<S> constant(Tensor<S> v) { return add_node(std::move(v), {}, false); }

    Var<S> leaf(Tensor<S> v, std::string name, bool trainable = true) {
        if (trainable) {
            if (name.empty()) throw ContractError("trainable leaf requires a name");
            if (leaf_ids_.count(name))
                throw ContractError("duplicate trainable leaf '" + name + "'");
        }
        Var<S> var = add_node(std::move(v), std::move(name), trainable);
        if (trainable) leaf_ids_[nodes_[static_cast<std::size_t>(var.id)].name] = var.id;
        return var;
    }

    template <class Fn>
    Var<S> record(Tensor<S> value, Fn&& backward) {
        Var<S> var = add_node(std::move(value), {}, false);
        nodes_[static_cast<std::size_t>(var.id)].backward = std::forward<Fn>(backward);
        return var;
    }

    const Tensor<S>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() > 0; }

    const Tensor<S>& grad(int id) const {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.size() == 0) throw ContractError("gradient not populated; run backward first");
        return n.grad;
    }

    // Adds g into the gradient slot of node id, allocating zeros on first touch.
    void accumulate(int id, const Tensor<S>& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.value.same_shape(g))
            throw ShapeError("gradient shape mismatch for node " + std::to_string(id));
        if (n.grad.size() == 0) n.grad = Tensor<S>(n.value.shape());
        n.grad.vec() += g.vec();
    }

    // Reverse sweep from a scalar loss. Returns gradients for every trainable
    // leaf on the tape; leaves unreachable from the loss report zeros.
    GradMap<S> backward(Var<S> loss) {
        if (!loss.valid() || loss.tape != this) throw ContractError("loss is not on this tape");
        const Tensor<S>& lv = value(loss.id);
        if (lv.size() != 1)
            throw ContractError("backward requires a scalar loss, got shape " +
                                shape_string(lv.shape()));
        accumulate(loss.id, Tensor<S>::full(lv.shape(), S(1)));
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.backward && n.grad.size() > 0) n.backward(*this, id);
        }
        GradMap<S> grads;
        for (const auto& [name, id] : leaf_ids_) {
            const Node& n = nodes_[static_cast<std::size_t>(id)];
            grads.emplace(name, n.grad.size() > 0 ? n.grad : Tensor<S>(n.value.shape()));
        }
        return grads;
    }

    std::size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor<S> value;
        Tensor<S> grad;  // empty until touched
        std::function<void(Tape&, int)> backward;
        std::string name;
        bool trainable = false;
    };

    Var<S> add_node(Tensor<S> v, std::string name, bool trainable) {
        Node node;
        node.value = std::move(v);
        node.name = std::move(name);
        node.trainable = trainable;
        nodes_.push_back(std::move(node));
        return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
    std::map<std::string, int> leaf_ids_;
};

template <class S>
const Tensor<S>& Var<S>::value() const {
    return tape->value(id);
}

namespace detail {
template <class S>
Tape<S>& same_tape(Var<S> a, Var<S> b) {
    if (!a.valid() || !b.valid() || a.tape != b.tape)
        throw ContractError("operands must live on the same tape");
    return *a.tape;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable ops. Forward values come from the shared kernels in
// tensor.hpp; each op registers a closure that scatters the output gradient.
// ---------------------------------------------------------------------------

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
    Tape<S>& tape = detail::same_tape(a, b);
    Tensor<S> y = matmul_val(a.value(), b.value());
    return tape.record(std::move(y), [aid = a.id, bid = b.id](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        const Tensor<S>& av = tp.value(aid);
        const Tensor<S>& bv = tp.value(bid);
        Tensor<S> ga = Tensor<S>::uninitialized(av.shape());
        ga.mat().noalias() = gy.mat() * bv.mat().transpose();
        tp.accumulate(aid, ga);
        Tensor<S> gb = Tensor<S>::uninitialized(bv.shape());
        gb.mat().noalias() = av.mat().transpose() * gy.mat();
        tp.accumulate(bid, gb);
    });
}

template <class S>
Var<S> matvec(Var<S> w, Var<S> v) {
    Tape<S>& tape = detail::same_tape(w, v);
    Tensor<S> y = matvec_val(w.value(), v.value());
    return tape.record(std::move(y), [wid = w.id, vid = v.id](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        const Tensor<S>& wv = tp.value(wid);
        const Tensor<S>& vv = tp.value(vid);
        Tensor<S> gw = Tensor<S>::uninitialized(wv.shape());
        gw.mat().noalias() = gy.vec() * vv.vec().transpose();
        tp.accumulate(wid, gw);
        Tensor<S> gv = Tensor<S>::uninitialized(vv.shape());
        gv.vec().noalias() = wv.mat().transpose() * gy.vec();
        tp.accumulate(vid, gv);
    });
}

template <class S>
Var<S> conv1d(Var<S> x, Var<S> kernels) {
    Tape<S>& tape = detail::same_tape(x, kernels);
    Tensor<S> y = conv1d_val(x.value(), kernels.value());
    const int kernel = kernels.value().extent(2);
    return tape.record(std::move(y), [xid = x.id, kid = kernels.id, kernel](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        const Tensor<S>& xv = tp.value(xid);
        const Tensor<S>& kv = tp.value(kid);
        const int cin = xv.extent(0);
        const int len = xv.extent(1);
        const int cout = kv.extent(0);
        const Tensor<S> cols = im2col_1d(xv, kernel);
        Tensor<S> gk = Tensor<S>::uninitialized(kv.shape());
        MatMap<S> gkf(gk.data(), cout, cin * kernel);
        gkf.noalias() = gy.mat() * cols.mat().transpose();
        tp.accumulate(kid, gk);
        Tensor<S> gcols = Tensor<S>::uninitialized(cols.shape());
        ConstMatMap<S> wf(kv.data(), cout, cin * kernel);
        gcols.mat().noalias() = wf.transpose() * gy.mat();
        tp.accumulate(xid, col2im_1d_add(gcols, cin, len, kernel));
    });
}

template <class S>
Var<S> sigmoid(Var<S> x) {
    Tensor<S> y = sigmoid_val(x.value());
    return x.tape->record(std::move(y), [xid = x.id](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        const Tensor<S>& yv = tp.value(self);
        Tensor<S> gx = Tensor<S>::uninitialized(yv.shape());
        gx.vec() = gy.vec().array() * yv.vec().array() * (S(1) - yv.vec().array());
        tp.accumulate(xid, gx);
    });
}

template <class S>
Var<S> silu(Var<S> x) {
    Tensor<S> y = silu_val(x.value());
    return x.tape->record(std::move(y), [xid = x.id](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        const Tensor<S>& xv = tp.value(xid);
        Tensor<S> gx = Tensor<S>::uninitialized(xv.shape());
        for (Index i = 0; i < xv.size(); ++i) {
            const S sig = S(1) / (S(1) + std::exp(-xv[i]));
            gx[i] = gy[i] * sig * (S(1) + xv[i] * (S(1) - sig));
        }
        tp.accumulate(xid, gx);
    });
}

template <class S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias) {
    Tape<S>& tape = detail::same_tape(x, gain);
    detail::same_tape(gain, bias);
    auto cache = std::make_shared<LayerNormCache<S>>();
    Tensor<S> y = layer_norm_val(x.value(), gain.value(), bias.value(), cache.get());
    return tape.record(std::move(y), [xid = x.id, gid = gain.id, bid = bias.id,
                                      cache](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        const Tensor<S>& xv = tp.value(xid);
        const Tensor<S>& gv = tp.value(gid);
        const int n = xv.shape().back();
        const int rows = static_cast<int>(xv.size()) / n;
        Tensor<S> gx = Tensor<S>::uninitialized(xv.shape());
        Tensor<S> ggain({n});
        Tensor<S> gbias({n});
        for (int r = 0; r < rows; ++r) {
            ConstVecMap<S> gyr(gy.data() + static_cast<Index>(r) * n, n);
            ConstVecMap<S> xhat(cache->normalized.data() + static_cast<Index>(r) * n, n);
            VecMap<S> gxr(gx.data() + static_cast<Index>(r) * n, n);
            ggain.vec() += gyr.cwiseProduct(xhat);
            gbias.vec() += gyr;
            // d/dx of (x - mu) * inv_std * gain + bias
            VecX<S> gh = gyr.cwiseProduct(gv.vec());
            const S mean_gh = gh.mean();
            const S mean_ghx = gh.cwiseProduct(xhat).mean();
            gxr = (gh.array() - mean_gh - xhat.array() * mean_ghx) * cache->inv_std[r];
        }
        tp.accumulate(xid, gx);
        tp.accumulate(gid, ggain);
        tp.accumulate(bid, gbias);
    });
}

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
    Tape<S>& tape = detail::same_tape(a, b);
    Tensor<S> y = add_val(a.value(), b.value());
    return tape.record(std::move(y), [aid = a.id, bid = b.id](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        tp.accumulate(aid, gy);
        tp.accumulate(bid, gy);
    });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
    Tape<S>& tape = detail::same_tape(a, b);
    Tensor<S> y = sub_val(a.value(), b.value());
    return tape.record(std::move(y), [aid = a.id, bid = b.id](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        tp.accumulate(aid, gy);
        Tensor<S> gb = Tensor<S>::uninitialized(gy.shape());
        gb.vec() = -gy.vec();
        tp.accumulate(bid, gb);
    });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
    Tape<S>& tape = detail::same_tape(a, b);
    Tensor<S> y = mul_val(a.value(), b.value());
    return tape.record(std::move(y), [aid = a.id, bid = b.id](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        tp.accumulate(aid, mul_val(gy, tp.value(bid)));
        tp.accumulate(bid, mul_val(gy, tp.value(aid)));
    });
}

template <class S>
Var<S> affine(Var<S> x, S scale, S shift) {
    Tensor<S> y = affine_val(x.value(), scale, shift);
    return x.tape->record(std::move(y), [xid = x.id, scale](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        Tensor<S> gx = Tensor<S>::uninitialized(gy.shape());
        gx.vec() = gy.vec() * scale;
        tp.accumulate(xid, gx);
    });
}

template <class S>
Var<S> one_minus(Var<S> x) {
    return affine(x, S(-1), S(1));
}

template <class S>
Var<S> channel_scale_shift(Var<S> x, Var<S> s, Var<S> t) {
    Tape<S>& tape = detail::same_tape(x, s);
    detail::same_tape(s, t);
    Tensor<S> y = channel_scale_shift_val(x.value(), s.value(), t.value());
    return tape.record(std::move(y), [xid = x.id, sid = s.id, tid = t.id](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        const Tensor<S>& xv = tp.value(xid);
        const Tensor<S>& sv = tp.value(sid);
        const int channels = xv.extent(0);
        Tensor<S> gx = Tensor<S>::uninitialized(xv.shape());
        Tensor<S> gs({channels});
        Tensor<S> gt({channels});
        for (int c = 0; c < channels; ++c) {
            gx.mat().row(c) = gy.mat().row(c) * (S(1) + sv[c]);
            gs[c] = gy.mat().row(c).cwiseProduct(xv.mat().row(c)).sum();
            gt[c] = gy.mat().row(c).sum();
        }
        tp.accumulate(xid, gx);
        tp.accumulate(sid, gs);
        tp.accumulate(tid, gt);
    });
}

template <class S>
Var<S> tile_cols(Var<S> v, int cols) {
    Tensor<S> y = tile_cols_val(v.value(), cols);
    return v.tape->record(std::move(y), [vid = v.id](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        Tensor<S> gv({gy.extent(0)});
        gv.vec() = gy.mat().rowwise().sum();
        tp.accumulate(vid, gv);
    });
}

template <class S>
Var<S> concat_rows(Var<S> a, Var<S> b) {
    Tape<S>& tape = detail::same_tape(a, b);
    Tensor<S> y = concat_rows_val(a.value(), b.value());
    const int a_rows = a.value().extent(0);
    return tape.record(std::move(y), [aid = a.id, bid = b.id, a_rows](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        const Tensor<S>& av = tp.value(aid);
        const Tensor<S>& bv = tp.value(bid);
        Tensor<S> ga = Tensor<S>::uninitialized(av.shape());
        ga.mat() = gy.mat().topRows(a_rows);
        tp.accumulate(aid, ga);
        Tensor<S> gb = Tensor<S>::uninitialized(bv.shape());
        gb.mat() = gy.mat().bottomRows(bv.extent(0));
        tp.accumulate(bid, gb);
    });
}

template <class S>
Var<S> concat_vec(Var<S> a, Var<S> b) {
    Tape<S>& tape = detail::same_tape(a, b);
    Tensor<S> y = concat_vec_val(a.value(), b.value());
    const int a_len = a.value().extent(0);
    return tape.record(std::move(y), [aid = a.id, bid = b.id, a_len](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        Tensor<S> ga({a_len});
        ga.vec() = gy.vec().head(a_len);
        tp.accumulate(aid, ga);
        const int b_len = static_cast<int>(gy.size()) - a_len;
        Tensor<S> gb({b_len});
        gb.vec() = gy.vec().tail(b_len);
        tp.accumulate(bid, gb);
    });
}

template <class S>
Var<S> reshape(Var<S> x, std::vector<int> shape) {
    Tensor<S> y = reshape_val(x.value(), std::move(shape));
    return x.tape->record(std::move(y), [xid = x.id](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        tp.accumulate(xid, reshape_val(gy, tp.value(xid).shape()));
    });
}

template <class S>
Var<S> slice_vec(Var<S> v, int begin, int len) {
    Tensor<S> y = slice_vec_val(v.value(), begin, len);
    return v.tape->record(std::move(y), [vid = v.id, begin, len](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        Tensor<S> gv(tp.value(vid).shape());
        gv.vec().segment(begin, len) = gy.vec();
        tp.accumulate(vid, gv);
    });
}

template <class S>
Var<S> add_bias_channels(Var<S> x, Var<S> b) {
    Tape<S>& tape = detail::same_tape(x, b);
    Tensor<S> y = add_bias_channels_val(x.value(), b.value());
    return tape.record(std::move(y), [xid = x.id, bid = b.id](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        tp.accumulate(xid, gy);
        Tensor<S> gb({gy.extent(0)});
        gb.vec() = gy.mat().rowwise().sum();
        tp.accumulate(bid, gb);
    });
}

template <class S>
Var<S> transpose(Var<S> x) {
    Tensor<S> y = transpose_val(x.value());
    return x.tape->record(std::move(y), [xid = x.id](Tape<S>& tp, int self) {
        tp.accumulate(xid, transpose_val(tp.grad(self)));
    });
}

template <class S>
Var<S> add_bias_rows(Var<S> x, Var<S> b) {
    Tape<S>& tape = detail::same_tape(x, b);
    Tensor<S> y = add_bias_rows_val(x.value(), b.value());
    return tape.record(std::move(y), [xid = x.id, bid = b.id](Tape<S>& tp, int self) {
        const Tensor<S>& gy = tp.grad(self);
        tp.accumulate(xid, gy);
        Tensor<S> gb({gy.extent(1)});
        gb.vec() = gy.mat().colwise().sum();
        tp.accumulate(bid, gb);
    });
}

template <class S>
Var<S> sum(Var<S> x) {
    Tensor<S> y = sum_val(x.value());
    return x.tape->record(std::move(y), [xid = x.id](Tape<S>& tp, int self) {
        const S g = tp.grad(self)[0];
        tp.accumulate(xid, Tensor<S>::full(tp.value(xid).shape(), g));
    });
}

template <class S>
Var<S> mean(Var<S> x) {
    const S inv = S(1) / static_cast<S>(x.value().size());
    return affine(sum(x), inv, S(0));
}

// Masked squared error normalized by the number of unmasked elements:
// sum(mask * (pred - target)^2) / nnz(mask). target and mask are constants.
template <class S>
Var<S> mse_masked(Var<S> pred, const Tensor<S>& target, const Tensor<S>& mask) {
    const Tensor<S>& pv = pred.value();
    if (!pv.same_shape(target) || !pv.same_shape(mask))
        throw ShapeError("mse_masked operands must share one shape");
    S nnz = mask.vec().sum();
    if (nnz <= S(0)) throw ContractError("mse_masked requires at least one unmasked element");
    Tensor<S> diff = sub_val(pv, target);
    Tensor<S> y = Tensor<S>::scalar(diff.vec().cwiseProduct(mask.vec()).cwiseProduct(diff.vec()).sum() / nnz);
    auto shared_diff = std::make_shared<Tensor<S>>(std::move(diff));
    auto shared_mask = std::make_shared<Tensor<S>>(mask);
    return pred.tape->record(std::move(y), [pid = pred.id, shared_diff, shared_mask,
                                            nnz](Tape<S>& tp, int self) {
        const S g = tp.grad(self)[0];
        Tensor<S> gp = Tensor<S>::uninitialized(shared_diff->shape());
        gp.vec() = shared_diff->vec().cwiseProduct(shared_mask->vec()) * (S(2) * g / nnz);
        tp.accumulate(pid, gp);
    });
}

// Mean softmax cross-entropy over rows of logits [N, C] with integer labels.
template <class S>
Var<S> cross_entropy_logits(Var<S> logits, const std::vector<int>& labels) {
    const Tensor<S>& z = logits.value();
    require_rank(z, 2, "cross_entropy logits");
    const int n = z.extent(0);
    const int classes = z.extent(1);
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("cross_entropy labels length mismatch");
    auto probs = std::make_shared<Tensor<S>>(Tensor<S>::uninitialized(z.shape()));
    S loss = S(0);
    for (int i = 0; i < n; ++i) {
        ConstVecMap<S> row(z.data() + static_cast<Index>(i) * classes, classes);
        const S zmax = row.maxCoeff();
        VecX<S> e = (row.array() - zmax).exp();
        const S denom = e.sum();
        VecMap<S> p(probs->data() + static_cast<Index>(i) * classes, classes);
        p = e / denom;
        const int y = labels[i];
        if (y < 0 || y >= classes) throw ContractError("label out of range");
        loss += std::log(denom) + zmax - row[y];
    }
    loss /= static_cast<S>(n);
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    return logits.tape->record(Tensor<S>::scalar(loss), [lid = logits.id, probs, labels_copy,
                                                         n, classes](Tape<S>& tp, int self) {
        const S g = tp.grad(self)[0] / static_cast<S>(n);
        Tensor<S> gz = *probs;
        for (int i = 0; i < n; ++i) gz.at(i, (*labels_copy)[static_cast<std::size_t>(i)]) -= S(1);
        gz.vec() *= g;
        tp.accumulate(lid, gz);
    });
}

}  // namespace forge
