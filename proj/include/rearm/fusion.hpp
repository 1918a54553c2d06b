#pragma once

#include "rearm/common.hpp"

#include <array>
#include <utility>

namespace rearm {

// ---------------------------------------------------------------------------
// modality projection

template <typename Scalar>
struct Projection {
    Matrix<Scalar> weight;  ///< d x d_m
    Matrix<Scalar> bias;    ///< 1 x d
};

/// Row-wise affine map x -> W x + b into the ID embedding width.
template <typename Scalar>
Matrix<Scalar> project_modality(const Matrix<Scalar>& raw, const Projection<Scalar>& p) {
    if (raw.cols() != p.weight.cols() || p.bias.cols() != p.weight.rows())
        throw DataError("projection: feature width " + std::to_string(raw.cols()) + " does not match weight " +
                        std::to_string(p.weight.rows()) + "x" + std::to_string(p.weight.cols()));
    Matrix<Scalar> out = raw * p.weight.transpose();
    out.rowwise() += p.bias.row(0);
    return out;
}

/// Accumulates parameter gradients of project_modality; raw features are constants.
template <typename Scalar>
void project_backward(const Matrix<Scalar>& raw, const Matrix<Scalar>& grad_out, Projection<Scalar>& grad) {
    grad.weight.noalias() += grad_out.transpose() * raw;
    grad.bias += grad_out.colwise().sum();
}

// ---------------------------------------------------------------------------
// layer norm (no learned affine)

inline constexpr double kLayerNormEps = 1e-6;

template <typename Scalar>
struct LayerNormCache {
    Matrix<Scalar> out;
    Vector<Scalar> inv_std;
};

template <typename Scalar>
LayerNormCache<Scalar> layer_norm(const Matrix<Scalar>& x) {
    LayerNormCache<Scalar> c;
    c.out.resize(x.rows(), x.cols());
    c.inv_std.resize(x.rows());
    const auto d = static_cast<Scalar>(x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        const Scalar mean = x.row(r).sum() / d;
        const Scalar var = (x.row(r).array() - mean).square().sum() / d;
        const Scalar inv = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
        c.inv_std(r) = inv;
        c.out.row(r) = (x.row(r).array() - mean) * inv;
    }
    return c;
}

template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const LayerNormCache<Scalar>& c, const Matrix<Scalar>& grad_out) {
    Matrix<Scalar> dx(grad_out.rows(), grad_out.cols());
    const auto d = static_cast<Scalar>(grad_out.cols());
    for (Index r = 0; r < grad_out.rows(); ++r) {
        const Scalar mean_g = grad_out.row(r).sum() / d;
        const Scalar mean_gy = grad_out.row(r).dot(c.out.row(r)) / d;
        dx.row(r) = c.inv_std(r) * (grad_out.row(r).array() - mean_g - c.out.row(r).array() * mean_gy);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// channel attention

/// Axis along which the d x d score matrix is normalised. Columns is the
/// default: each output channel is a convex combination of input channels.
enum class SoftmaxAxis { columns, rows };

template <typename Scalar>
Matrix<Scalar> softmax_axis(const Matrix<Scalar>& s, SoftmaxAxis axis) {
    Matrix<Scalar> a(s.rows(), s.cols());
    if (axis == SoftmaxAxis::columns) {
        for (Index j = 0; j < s.cols(); ++j) {
            const Scalar mx = s.col(j).maxCoeff();
            a.col(j) = (s.col(j).array() - mx).exp();
            a.col(j) /= a.col(j).sum();
        }
    } else {
        for (Index i = 0; i < s.rows(); ++i) {
            const Scalar mx = s.row(i).maxCoeff();
            a.row(i) = (s.row(i).array() - mx).exp();
            a.row(i) /= a.row(i).sum();
        }
    }
    return a;
}

template <typename Scalar>
Matrix<Scalar> softmax_axis_backward(const Matrix<Scalar>& a, const Matrix<Scalar>& grad_a, SoftmaxAxis axis) {
    Matrix<Scalar> ds(a.rows(), a.cols());
    if (axis == SoftmaxAxis::columns) {
        for (Index j = 0; j < a.cols(); ++j)
            ds.col(j) = a.col(j).array() * (grad_a.col(j).array() - a.col(j).dot(grad_a.col(j)));
    } else {
        for (Index i = 0; i < a.rows(); ++i)
            ds.row(i) = a.row(i).array() * (grad_a.row(i).array() - a.row(i).dot(grad_a.row(i)));
    }
    return ds;
}

template <typename Scalar>
struct AttentionWeights {
    Matrix<Scalar> query;  ///< d x d
    Matrix<Scalar> key;
    Matrix<Scalar> value;
};

/// Separate self and cross parameter sets per modality (0 visual, 1 textual).
template <typename Scalar>
struct AttentionParams {
    std::array<AttentionWeights<Scalar>, 2> self;
    std::array<AttentionWeights<Scalar>, 2> cross;
};

struct AttentionConfig {
    double dropout = 0.0;
    SoftmaxAxis axis = SoftmaxAxis::columns;
    bool training = false;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
};

/// Intermediates of attended = (X_kv W_V) softmax((X_q W_Q)^T (X_kv W_K) / sqrt(d)).
template <typename Scalar>
struct AttendCache {
    Matrix<Scalar> q, k, v;
    Matrix<Scalar> attn;  ///< d x d
    Matrix<Scalar> out;
};

template <typename Scalar>
AttendCache<Scalar> attend(const Matrix<Scalar>& xq, const Matrix<Scalar>& xkv, const Matrix<Scalar>& wq,
                           const Matrix<Scalar>& wk, const Matrix<Scalar>& wv, SoftmaxAxis axis) {
    if (xq.rows() != xkv.rows() || xq.cols() != xkv.cols()) throw DataError("attention: input shapes differ");
    if (wq.rows() != xq.cols() || wk.rows() != xkv.cols() || wv.rows() != xkv.cols())
        throw DataError("attention: weight shape does not match input width");
    AttendCache<Scalar> c;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(xq.cols()));
    c.q = xq * wq;
    c.k = xkv * wk;
    c.v = xkv * wv;
    const Matrix<Scalar> scores = (c.q.transpose() * c.k) * scale;
    c.attn = softmax_axis(scores, axis);
    c.out = c.v * c.attn;
    return c;
}

template <typename Scalar>
void attend_backward(const AttendCache<Scalar>& c, const Matrix<Scalar>& xq, const Matrix<Scalar>& xkv,
                     const Matrix<Scalar>& wq, const Matrix<Scalar>& wk, const Matrix<Scalar>& wv,
                     const Matrix<Scalar>& grad_out, SoftmaxAxis axis, Matrix<Scalar>& dxq, Matrix<Scalar>& dxkv,
                     Matrix<Scalar>& dwq, Matrix<Scalar>& dwk, Matrix<Scalar>& dwv) {
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(xq.cols()));
    const Matrix<Scalar> dv = grad_out * c.attn.transpose();
    const Matrix<Scalar> da = c.v.transpose() * grad_out;
    const Matrix<Scalar> ds = softmax_axis_backward(c.attn, da, axis) * scale;
    const Matrix<Scalar> dq = c.k * ds.transpose();
    const Matrix<Scalar> dk = c.q * ds;
    dwq.noalias() += xq.transpose() * dq;
    dwk.noalias() += xkv.transpose() * dk;
    dwv.noalias() += xkv.transpose() * dv;
    dxq.noalias() += dq * wq.transpose();
    dxkv.noalias() += dk * wk.transpose();
    dxkv.noalias() += dv * wv.transpose();
}

/// Inverted-dropout multiplier (0 or 1/(1-rate)) drawn from a seeded counter.
template <typename Scalar>
Matrix<Scalar> dropout_mask(Index rows, Index cols, const AttentionConfig& cfg, std::uint64_t stream) {
    Matrix<Scalar> m(rows, cols);
    if (!cfg.training || cfg.dropout <= 0) {
        m.setOnes();
        return m;
    }
    const auto keep = static_cast<Scalar>(1.0 / (1.0 - cfg.dropout));
    const std::uint64_t s = stream + 8 * cfg.step;
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c)
            m(r, c) = counter_uniform(cfg.seed, s, static_cast<std::uint64_t>(r * cols + c)) < cfg.dropout ? Scalar(0) : keep;
    return m;
}

/// One residual attention stage: out = layer_norm(x + dropout(attended)).
template <typename Scalar>
struct AttentionStage {
    AttendCache<Scalar> attn;
    Matrix<Scalar> mask;
    LayerNormCache<Scalar> norm;
    const Matrix<Scalar>& out() const { return norm.out; }
};

template <typename Scalar>
AttentionStage<Scalar> attention_stage(const Matrix<Scalar>& xq, const Matrix<Scalar>& xkv, const Matrix<Scalar>& wq,
                                       const Matrix<Scalar>& wk, const Matrix<Scalar>& wv, const AttentionConfig& cfg,
                                       std::uint64_t stream) {
    AttentionStage<Scalar> st;
    st.attn = attend(xq, xkv, wq, wk, wv, cfg.axis);
    st.mask = dropout_mask<Scalar>(xkv.rows(), xkv.cols(), cfg, stream);
    st.norm = layer_norm<Scalar>(xkv + st.attn.out.cwiseProduct(st.mask));
    return st;
}

template <typename Scalar>
Matrix<Scalar> self_attention_block(const Matrix<Scalar>& x, const AttentionWeights<Scalar>& w,
                                    const AttentionConfig& cfg, std::uint64_t stream = 0) {
    return attention_stage(x, x, w.query, w.key, w.value, cfg, stream).out();
}

/// Visual attended values use the textual query; textual ones the visual query.
template <typename Scalar>
std::pair<Matrix<Scalar>, Matrix<Scalar>> cross_attention_block(const Matrix<Scalar>& xv, const Matrix<Scalar>& xt,
                                                                 const AttentionWeights<Scalar>& wv_set,
                                                                 const AttentionWeights<Scalar>& wt_set,
                                                                 const AttentionConfig& cfg) {
    if (xv.rows() != xt.rows() || xv.cols() != xt.cols()) throw DataError("cross attention: modality shapes differ");
    auto v = attention_stage(xt, xv, wt_set.query, wv_set.key, wv_set.value, cfg, 2);
    auto t = attention_stage(xv, xt, wv_set.query, wt_set.key, wt_set.value, cfg, 3);
    return {v.out(), t.out()};
}

/// Self then cross attention over the item visual/textual features, with the
/// intermediates needed for backward.
template <typename Scalar>
struct ItemAttentionCache {
    std::array<AttentionStage<Scalar>, 2> self;
    std::array<AttentionStage<Scalar>, 2> cross;
    const Matrix<Scalar>& hs(int m) const { return self[static_cast<std::size_t>(m)].out(); }
    const Matrix<Scalar>& out(int m) const { return cross[static_cast<std::size_t>(m)].out(); }
};

template <typename Scalar>
ItemAttentionCache<Scalar> item_attention_forward(const Matrix<Scalar>& xv, const Matrix<Scalar>& xt,
                                                  const AttentionParams<Scalar>& p, const AttentionConfig& cfg) {
    if (xv.rows() != xt.rows() || xv.cols() != xt.cols()) throw DataError("item attention: modality shapes differ");
    ItemAttentionCache<Scalar> c;
    c.self[0] = attention_stage(xv, xv, p.self[0].query, p.self[0].key, p.self[0].value, cfg, 0);
    c.self[1] = attention_stage(xt, xt, p.self[1].query, p.self[1].key, p.self[1].value, cfg, 1);
    const auto& hv = c.hs(0);
    const auto& ht = c.hs(1);
    c.cross[0] = attention_stage(ht, hv, p.cross[1].query, p.cross[0].key, p.cross[0].value, cfg, 2);
    c.cross[1] = attention_stage(hv, ht, p.cross[0].query, p.cross[1].key, p.cross[1].value, cfg, 3);
    return c;
}

/// Returns gradients w.r.t. the two inputs and accumulates parameter gradients.
template <typename Scalar>
std::pair<Matrix<Scalar>, Matrix<Scalar>> item_attention_backward(const ItemAttentionCache<Scalar>& c,
                                                                  const Matrix<Scalar>& xv, const Matrix<Scalar>& xt,
                                                                  const AttentionParams<Scalar>& p,
                                                                  const Matrix<Scalar>& grad_v,
                                                                  const Matrix<Scalar>& grad_t, SoftmaxAxis axis,
                                                                  AttentionParams<Scalar>& grad) {
    const auto& hv = c.hs(0);
    const auto& ht = c.hs(1);
    Matrix<Scalar> dhv = Matrix<Scalar>::Zero(hv.rows(), hv.cols());
    Matrix<Scalar> dht = Matrix<Scalar>::Zero(ht.rows(), ht.cols());

    // cross stage: out_m = LN(h_m + mask * attended_m)
    {
        const Matrix<Scalar> dpre = layer_norm_backward(c.cross[0].norm, grad_v);
        dhv += dpre;
        attend_backward<Scalar>(c.cross[0].attn, ht, hv, p.cross[1].query, p.cross[0].key, p.cross[0].value,
                                dpre.cwiseProduct(c.cross[0].mask), axis, dht, dhv, grad.cross[1].query,
                                grad.cross[0].key, grad.cross[0].value);
    }
    {
        const Matrix<Scalar> dpre = layer_norm_backward(c.cross[1].norm, grad_t);
        dht += dpre;
        attend_backward<Scalar>(c.cross[1].attn, hv, ht, p.cross[0].query, p.cross[1].key, p.cross[1].value,
                                dpre.cwiseProduct(c.cross[1].mask), axis, dhv, dht, grad.cross[0].query,
                                grad.cross[1].key, grad.cross[1].value);
    }

    std::array<Matrix<Scalar>, 2> dx;
    const std::array<const Matrix<Scalar>*, 2> xs{&xv, &xt};
    const std::array<const Matrix<Scalar>*, 2> dh{&dhv, &dht};
    for (std::size_t m = 0; m < 2; ++m) {
        const Matrix<Scalar> dpre = layer_norm_backward(c.self[m].norm, *dh[m]);
        dx[m] = dpre;
        Matrix<Scalar> dq = Matrix<Scalar>::Zero(dpre.rows(), dpre.cols());
        attend_backward<Scalar>(c.self[m].attn, *xs[m], *xs[m], p.self[m].query, p.self[m].key, p.self[m].value,
                                dpre.cwiseProduct(c.self[m].mask), axis, dq, dx[m], grad.self[m].query,
                                grad.self[m].key, grad.self[m].value);
        dx[m] += dq;
    }
    return {std::move(dx[0]), std::move(dx[1])};
}

}  // namespace rearm
