#pragma once

#include "rearm/common.hpp"

namespace rearm {

template <typename Scalar>
Scalar prelu(Scalar x, Scalar slope) {
    return x > 0 ? x : slope * x;
}

template <typename Scalar>
Matrix<Scalar> prelu(const Matrix<Scalar>& x, Scalar slope) {
    return x.unaryExpr([slope](Scalar v) { return prelu(v, slope); });
}

/// Returns dL/dx and adds dL/dslope to `grad_slope`.
template <typename Scalar>
Matrix<Scalar> prelu_backward(const Matrix<Scalar>& x, Scalar slope, const Matrix<Scalar>& grad_out, Scalar& grad_slope) {
    Matrix<Scalar> dx(x.rows(), x.cols());
    Scalar ds = 0;
    for (Index r = 0; r < x.rows(); ++r)
        for (Index c = 0; c < x.cols(); ++c) {
            const Scalar g = grad_out(r, c);
            if (x(r, c) > 0) {
                dx(r, c) = g;
            } else {
                dx(r, c) = slope * g;
                ds += g * x(r, c);
            }
        }
    grad_slope += ds;
    return dx;
}

// ---------------------------------------------------------------------------
// contrastive alignment

template <typename Scalar>
struct LossWithGrad {
    Scalar loss = 0;
    Matrix<Scalar> grad_a;
    Matrix<Scalar> grad_b;
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> unit_rows(const Matrix<Scalar>& x, Vector<Scalar>& norms) {
    norms.resize(x.rows());
    Matrix<Scalar> u(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        norms(r) = x.row(r).norm();
        if (norms(r) > 0) u.row(r) = x.row(r) / norms(r);
        else u.row(r).setZero();
    }
    return u;
}

template <typename Scalar>
Matrix<Scalar> unit_rows_backward(const Matrix<Scalar>& unit, const Vector<Scalar>& norms, const Matrix<Scalar>& grad_unit) {
    Matrix<Scalar> dx = Matrix<Scalar>::Zero(unit.rows(), unit.cols());
    for (Index r = 0; r < unit.rows(); ++r) {
        if (norms(r) <= 0) continue;
        dx.row(r) = (grad_unit.row(r) - unit.row(r) * unit.row(r).dot(grad_unit.row(r))) / norms(r);
    }
    return dx;
}

}  // namespace detail

/// In-batch InfoNCE over cosine similarities, averaged over the B rows.
/// Zero-norm rows have similarity 0 to everything.
template <typename Scalar>
LossWithGrad<Scalar> infonce(const Matrix<Scalar>& v, const Matrix<Scalar>& t, double tau) {
    if (!(tau > 0)) throw ConfigError("InfoNCE temperature must be > 0");
    if (v.rows() != t.rows() || v.cols() != t.cols()) throw DataError("InfoNCE: view shapes differ");
    if (v.rows() == 0) throw DataError("InfoNCE: empty batch");
    const Index b = v.rows();
    Vector<Scalar> nv, nt;
    const Matrix<Scalar> uv = detail::unit_rows(v, nv);
    const Matrix<Scalar> ut = detail::unit_rows(t, nt);
    const Scalar inv_tau = static_cast<Scalar>(1.0 / tau);
    const Matrix<Scalar> logits = (uv * ut.transpose()) * inv_tau;

    LossWithGrad<Scalar> out;
    Matrix<Scalar> dlogits(b, b);
    Scalar total = 0;
    for (Index r = 0; r < b; ++r) {
        const Scalar mx = logits.row(r).maxCoeff();
        const auto e = (logits.row(r).array() - mx).exp();
        const Scalar z = e.sum();
        total += -(logits(r, r) - mx - std::log(z));
        dlogits.row(r) = e / z;
        dlogits(r, r) -= 1;
    }
    const Scalar inv_b = Scalar(1) / static_cast<Scalar>(b);
    out.loss = total * inv_b;
    dlogits *= inv_b * inv_tau;
    out.grad_a = detail::unit_rows_backward(uv, nv, Matrix<Scalar>(dlogits * ut));
    out.grad_b = detail::unit_rows_backward(ut, nt, Matrix<Scalar>(dlogits.transpose() * uv));
    return out;
}

template <typename Scalar>
Scalar infonce_loss(const Matrix<Scalar>& v, const Matrix<Scalar>& t, double tau) {
    return infonce(v, t, tau).loss;
}

// ---------------------------------------------------------------------------
// orthogonal constraint

/// Mean over rows of the squared paired dot product (V_b . T_b)^2.
template <typename Scalar>
LossWithGrad<Scalar> orthogonal(const Matrix<Scalar>& v, const Matrix<Scalar>& t) {
    if (v.rows() != t.rows() || v.cols() != t.cols()) throw DataError("orthogonal loss: view shapes differ");
    LossWithGrad<Scalar> out;
    out.grad_a.resize(v.rows(), v.cols());
    out.grad_b.resize(t.rows(), t.cols());
    if (v.rows() == 0) return out;
    const Scalar inv_b = Scalar(1) / static_cast<Scalar>(v.rows());
    for (Index r = 0; r < v.rows(); ++r) {
        const Scalar dot = v.row(r).dot(t.row(r));
        out.loss += dot * dot;
        out.grad_a.row(r) = 2 * dot * inv_b * t.row(r);
        out.grad_b.row(r) = 2 * dot * inv_b * v.row(r);
    }
    out.loss *= inv_b;
    return out;
}

template <typename Scalar>
Scalar orthogonal_loss(const Matrix<Scalar>& v, const Matrix<Scalar>& t) {
    return orthogonal(v, t).loss;
}

// ---------------------------------------------------------------------------
// modal-shared meta-network

template <typename Scalar>
struct DenseLayer {
    Matrix<Scalar> weight;  ///< out x in
    Matrix<Scalar> bias;    ///< 1 x out

    Matrix<Scalar> forward(const Matrix<Scalar>& x) const {
        Matrix<Scalar> y = x * weight.transpose();
        y.rowwise() += bias.row(0);
        return y;
    }
    /// Returns dL/dx; accumulates into `grad`.
    Matrix<Scalar> backward(const Matrix<Scalar>& x, const Matrix<Scalar>& grad_out, DenseLayer& grad) const {
        grad.weight.noalias() += grad_out.transpose() * x;
        grad.bias += grad_out.colwise().sum();
        return grad_out * weight;
    }
};

/// Two affine layers with a PReLU between them.
template <typename Scalar>
struct MetaLearner {
    DenseLayer<Scalar> hidden;
    Matrix<Scalar> slope;  ///< 1 x 1
    DenseLayer<Scalar> output;
};

template <typename Scalar>
struct MetaNetParams {
    Matrix<Scalar> share_weight;  ///< d x 2d
    Matrix<Scalar> share_bias;    ///< 1 x d
    MetaLearner<Scalar> g1;       ///< emits d x k
    MetaLearner<Scalar> g2;       ///< emits k x d
    Matrix<Scalar> out_slope;     ///< 1 x 1, PReLU on the transferred feature
    Index rank = 0;

    Index dim() const { return share_weight.rows(); }
};

template <typename Scalar>
struct MetaSharedCache {
    Matrix<Scalar> joint;  ///< v || t
    Matrix<Scalar> shared;
    Matrix<Scalar> h1_pre, h1, o1;
    Matrix<Scalar> h2_pre, h2, o2;
    Matrix<Scalar> low;          ///< W2 id, n x k
    Matrix<Scalar> transferred;  ///< W1 W2 id, n x d
    Matrix<Scalar> out;
};

/// Per row: shared = W_share (v||t) + b; W1 = g1(shared) as d x k,
/// W2 = g2(shared) as k x d (row-major); out = PReLU(W1 W2 id) + id.
template <typename Scalar>
MetaSharedCache<Scalar> meta_shared_forward(const Matrix<Scalar>& v, const Matrix<Scalar>& t, const Matrix<Scalar>& id,
                                            const MetaNetParams<Scalar>& p) {
    const Index d = p.dim();
    const Index k = p.rank;
    if (k < 1 || k >= d) throw ConfigError("meta-network rank must satisfy 1 <= k < d");
    if (v.rows() != t.rows() || v.rows() != id.rows() || v.cols() != d || t.cols() != d || id.cols() != d)
        throw DataError("meta-network: input shapes disagree");
    MetaSharedCache<Scalar> c;
    const Index n = v.rows();
    c.joint.resize(n, 2 * d);
    c.joint << v, t;
    c.shared = c.joint * p.share_weight.transpose();
    c.shared.rowwise() += p.share_bias.row(0);
    c.h1_pre = p.g1.hidden.forward(c.shared);
    c.h1 = prelu(c.h1_pre, p.g1.slope(0, 0));
    c.o1 = p.g1.output.forward(c.h1);
    c.h2_pre = p.g2.hidden.forward(c.shared);
    c.h2 = prelu(c.h2_pre, p.g2.slope(0, 0));
    c.o2 = p.g2.output.forward(c.h2);
    c.low.resize(n, k);
    c.transferred.resize(n, d);
    for (Index r = 0; r < n; ++r) {
        const Eigen::Map<const Matrix<Scalar>> w1(c.o1.row(r).data(), d, k);
        const Eigen::Map<const Matrix<Scalar>> w2(c.o2.row(r).data(), k, d);
        c.low.row(r) = (w2 * id.row(r).transpose()).transpose();
        c.transferred.row(r) = (w1 * c.low.row(r).transpose()).transpose();
    }
    c.out = prelu(c.transferred, p.out_slope(0, 0)) + id;
    return c;
}

template <typename Scalar>
Matrix<Scalar> meta_shared(const Matrix<Scalar>& v, const Matrix<Scalar>& t, const Matrix<Scalar>& id,
                           const MetaNetParams<Scalar>& p) {
    return meta_shared_forward(v, t, id, p).out;
}

template <typename Scalar>
struct MetaSharedGrads {
    Matrix<Scalar> v, t, id;
};

template <typename Scalar>
MetaSharedGrads<Scalar> meta_shared_backward(const MetaSharedCache<Scalar>& c, const Matrix<Scalar>& id,
                                             const MetaNetParams<Scalar>& p, const Matrix<Scalar>& grad_out,
                                             MetaNetParams<Scalar>& grad) {
    const Index d = p.dim();
    const Index k = p.rank;
    const Index n = grad_out.rows();
    MetaSharedGrads<Scalar> g;
    g.id = grad_out;
    const Matrix<Scalar> dtr = prelu_backward(c.transferred, p.out_slope(0, 0), grad_out, grad.out_slope(0, 0));

    Matrix<Scalar> do1(n, d * k), do2(n, k * d);
    for (Index r = 0; r < n; ++r) {
        const Eigen::Map<const Matrix<Scalar>> w1(c.o1.row(r).data(), d, k);
        const Eigen::Map<const Matrix<Scalar>> w2(c.o2.row(r).data(), k, d);
        const Vector<Scalar> dt = dtr.row(r).transpose();
        const Vector<Scalar> low = c.low.row(r).transpose();
        Eigen::Map<Matrix<Scalar>> dw1(do1.row(r).data(), d, k);
        dw1 = dt * low.transpose();
        const Vector<Scalar> dlow = w1.transpose() * dt;
        Eigen::Map<Matrix<Scalar>> dw2(do2.row(r).data(), k, d);
        dw2 = dlow * id.row(r);
        g.id.row(r) += (w2.transpose() * dlow).transpose();
    }

    Matrix<Scalar> dshared = Matrix<Scalar>::Zero(n, d);
    {
        const Matrix<Scalar> dh = p.g1.output.backward(c.h1, do1, grad.g1.output);
        const Matrix<Scalar> dpre = prelu_backward(c.h1_pre, p.g1.slope(0, 0), dh, grad.g1.slope(0, 0));
        dshared += p.g1.hidden.backward(c.shared, dpre, grad.g1.hidden);
    }
    {
        const Matrix<Scalar> dh = p.g2.output.backward(c.h2, do2, grad.g2.output);
        const Matrix<Scalar> dpre = prelu_backward(c.h2_pre, p.g2.slope(0, 0), dh, grad.g2.slope(0, 0));
        dshared += p.g2.hidden.backward(c.shared, dpre, grad.g2.hidden);
    }
    grad.share_weight.noalias() += dshared.transpose() * c.joint;
    grad.share_bias += dshared.colwise().sum();
    const Matrix<Scalar> djoint = dshared * p.share_weight;
    g.v = djoint.leftCols(d);
    g.t = djoint.rightCols(d);
    return g;
}

// ---------------------------------------------------------------------------
// modal-unique fusion

/// (PReLU(v) + id) || (PReLU(t) + id).
template <typename Scalar>
Matrix<Scalar> fuse_unique(const Matrix<Scalar>& v, const Matrix<Scalar>& t, const Matrix<Scalar>& id, Scalar slope) {
    if (v.rows() != t.rows() || v.rows() != id.rows() || v.cols() != id.cols() || t.cols() != id.cols())
        throw DataError("unique fusion: input shapes disagree");
    Matrix<Scalar> out(v.rows(), 2 * v.cols());
    out << prelu(v, slope) + id, prelu(t, slope) + id;
    return out;
}

template <typename Scalar>
MetaSharedGrads<Scalar> fuse_unique_backward(const Matrix<Scalar>& v, const Matrix<Scalar>& t, Scalar slope,
                                             const Matrix<Scalar>& grad_out, Scalar& grad_slope) {
    const Index d = v.cols();
    MetaSharedGrads<Scalar> g;
    const Matrix<Scalar> gv = grad_out.leftCols(d);
    const Matrix<Scalar> gt = grad_out.rightCols(d);
    g.v = prelu_backward(v, slope, gv, grad_slope);
    g.t = prelu_backward(t, slope, gt, grad_slope);
    g.id = gv + gt;
    return g;
}

}  // namespace rearm
