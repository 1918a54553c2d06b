#pragma once

#include "rearm/eval.hpp"

#include <chrono>
#include <set>

namespace rearm {

struct Triplet {
    Index user = 0;
    Index pos = 0;
    Index neg = 0;
    bool operator==(const Triplet&) const = default;
};

/// Uniform train pairs, each with a uniform negative outside the user's train items.
inline std::vector<Triplet> sample_triplets(const InteractionDataset& ds, Index batch_size, std::mt19937_64& rng) {
    if (ds.train.empty()) throw DataError("cannot sample from an empty train split");
    std::vector<Triplet> out;
    out.reserve(static_cast<std::size_t>(batch_size));
    for (Index b = 0; b < batch_size; ++b) {
        const auto& p = ds.train[detail::bounded(rng, ds.train.size())];
        const auto& owned = ds.train_adjacency[static_cast<std::size_t>(p.user)];
        if (static_cast<Index>(owned.size()) >= ds.n_items)
            throw DataError("user " + std::to_string(p.user) + " interacted with every item; no negative exists");
        Index neg;
        do neg = static_cast<Index>(detail::bounded(rng, static_cast<std::uint64_t>(ds.n_items)));
        while (std::binary_search(owned.begin(), owned.end(), neg));
        out.push_back({p.user, p.item, neg});
    }
    return out;
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// Mean of -ln sigmoid(pos - neg).
template <typename Scalar>
Scalar bpr_loss(std::span<const Scalar> pos, std::span<const Scalar> neg) {
    if (pos.size() != neg.size()) throw DataError("bpr_loss: score lengths differ");
    if (pos.empty()) return 0;
    double s = 0;
    for (std::size_t b = 0; b < pos.size(); ++b) s += softplus(-(static_cast<double>(pos[b]) - static_cast<double>(neg[b])));
    return static_cast<Scalar>(s / static_cast<double>(pos.size()));
}

struct LossWeights {
    double lambda_cl = 0;
    double lambda_ort = 0;
    double lambda_p = 0;
};

/// bpr + λ_cl·cl + λ_ort·ort + λ_p·‖Θ‖² / batch.
inline double total_loss(double bpr, double cl, double ort, double param_sq_norm, const LossWeights& w, Index batch) {
    if (w.lambda_cl < 0 || w.lambda_ort < 0 || w.lambda_p < 0) throw ConfigError("loss weights must be non-negative");
    return bpr + w.lambda_cl * cl + w.lambda_ort * ort + w.lambda_p * param_sq_norm / static_cast<double>(batch);
}

struct LossBreakdown {
    double total = 0;
    double bpr = 0;
    double cl = 0;   ///< user + item InfoNCE
    double ort = 0;  ///< user + item orthogonal loss
    double reg = 0;  ///< already weighted by λ_p / batch
};

namespace detail {

inline std::vector<Index> unique_sorted(std::vector<Index> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

inline Index position(const std::vector<Index>& sorted, Index v) {
    return static_cast<Index>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
}

}  // namespace detail

/// Joint objective on one batch; accumulates dL/dΘ into `grad` when given.
/// Contrastive and orthogonal terms run over the batch's distinct users and
/// distinct positive items.
template <typename Scalar>
LossBreakdown loss_and_grad(const ModelContext<Scalar>& ctx, const ModelParams<Scalar>& p,
                            const std::vector<Triplet>& batch, std::uint64_t step, ModelParams<Scalar>* grad) {
    if (batch.empty()) throw DataError("empty batch");
    const auto& hp = ctx.hp;
    std::vector<Index> users, items, pos_items;
    for (const auto& t : batch) {
        users.push_back(t.user);
        items.push_back(t.pos);
        items.push_back(t.neg);
        pos_items.push_back(t.pos);
    }
    users = detail::unique_sorted(std::move(users));
    items = detail::unique_sorted(std::move(items));
    pos_items = detail::unique_sorted(std::move(pos_items));

    const auto cache = forward(ctx, p, Mode::train, users, items, step);
    const auto B = static_cast<Index>(batch.size());
    const Index w = cache.user.star.cols();

    // BPR on inner products of the final representations
    std::vector<Scalar> pos(batch.size()), neg(batch.size());
    Matrix<Scalar> d_user_star = Matrix<Scalar>::Zero(cache.user.star.rows(), w);
    Matrix<Scalar> d_item_star = Matrix<Scalar>::Zero(cache.item.star.rows(), w);
    LossBreakdown out;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Index ru = detail::position(users, batch[b].user);
        const Index rp = detail::position(items, batch[b].pos);
        const Index rn = detail::position(items, batch[b].neg);
        pos[b] = predict(cache.user.star.row(ru), cache.item.star.row(rp));
        neg[b] = predict(cache.user.star.row(ru), cache.item.star.row(rn));
        const double x = static_cast<double>(pos[b]) - static_cast<double>(neg[b]);
        const auto dx = static_cast<Scalar>(-sigmoid(-x) / static_cast<double>(B));
        d_user_star.row(ru) += dx * (cache.item.star.row(rp) - cache.item.star.row(rn));
        d_item_star.row(rp) += dx * cache.user.star.row(ru);
        d_item_star.row(rn) -= dx * cache.user.star.row(ru);
    }
    out.bpr = bpr_loss<Scalar>(pos, neg);

    // contrastive + orthogonal terms on gathered post-propagation views
    std::vector<Index> pos_rows;
    for (Index i : pos_items) pos_rows.push_back(detail::position(items, i));
    const Matrix<Scalar> iv = detail::gather_rows(cache.item.bar_rows[kVisual], pos_rows);
    const Matrix<Scalar> it = detail::gather_rows(cache.item.bar_rows[kTextual], pos_rows);
    const auto& uv = cache.user.bar_rows[kVisual];
    const auto& ut = cache.user.bar_rows[kTextual];

    const auto cl_u = infonce(uv, ut, hp.tau);
    const auto cl_i = infonce(iv, it, hp.tau);
    const auto ort_u = orthogonal(uv, ut);
    const auto ort_i = orthogonal(iv, it);
    out.cl = static_cast<double>(cl_u.loss + cl_i.loss);
    out.ort = static_cast<double>(ort_u.loss + ort_i.loss);
    const double sq = p.squared_norm();
    out.reg = hp.lambda_p * sq / static_cast<double>(B);
    out.total = total_loss(out.bpr, out.cl, out.ort, sq, {hp.lambda_cl, hp.lambda_ort, hp.lambda_p}, B);

    if (!std::isfinite(out.total)) {
        const auto bad = first_non_finite(cache);
        throw NumericError("non-finite loss at step " + std::to_string(step) +
                           (bad ? "; first non-finite tensor: " + *bad : "; forward tensors finite, loss term overflowed"));
    }
    if (!grad) return out;

    FinalGrads<Scalar> fg;
    fg.user_star = std::move(d_user_star);
    fg.item_star = std::move(d_item_star);
    const auto lcl = static_cast<Scalar>(hp.lambda_cl);
    const auto lort = static_cast<Scalar>(hp.lambda_ort);
    fg.user_bar_rows[kVisual] = lcl * cl_u.grad_a + lort * ort_u.grad_a;
    fg.user_bar_rows[kTextual] = lcl * cl_u.grad_b + lort * ort_u.grad_b;
    fg.item_bar_rows[kVisual] = Matrix<Scalar>::Zero(static_cast<Index>(items.size()), hp.dim);
    fg.item_bar_rows[kTextual] = Matrix<Scalar>::Zero(static_cast<Index>(items.size()), hp.dim);
    const Matrix<Scalar> giv = lcl * cl_i.grad_a + lort * ort_i.grad_a;
    const Matrix<Scalar> git = lcl * cl_i.grad_b + lort * ort_i.grad_b;
    detail::scatter_add_rows(fg.item_bar_rows[kVisual], giv, pos_rows);
    detail::scatter_add_rows(fg.item_bar_rows[kTextual], git, pos_rows);

    backward(ctx, p, cache, fg, *grad);

    const auto reg_scale = static_cast<Scalar>(2.0 * hp.lambda_p / static_cast<double>(B));
    auto gt = grad->tensors();
    auto pt = p.tensors();
    for (std::size_t k = 0; k < gt.size(); ++k) *gt[k] += reg_scale * *pt[k];
    return out;
}

// ---------------------------------------------------------------------------
// optimiser

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
    ModelParams<Scalar> m, v;
    Index t = 0;

    explicit AdamState(const ModelParams<Scalar>& like) : m(like.zeros_like()), v(like.zeros_like()) {}
};

template <typename Scalar>
void adam_update(ModelParams<Scalar>& p, const ModelParams<Scalar>& g, AdamState<Scalar>& s, double lr,
                 const AdamConfig& cfg = {}) {
    ++s.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
    auto pt = p.tensors();
    auto gt = g.tensors();
    auto mt = s.m.tensors();
    auto vt = s.v.tensors();
    const auto b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
    for (std::size_t k = 0; k < pt.size(); ++k) {
        mt[k]->array() = b1 * mt[k]->array() + (1 - b1) * gt[k]->array();
        vt[k]->array() = b2 * vt[k]->array() + (1 - b2) * gt[k]->array().square();
        if (lr == 0) continue;
        pt[k]->array() -= static_cast<Scalar>(lr) * (mt[k]->array() / static_cast<Scalar>(c1)) /
                          ((vt[k]->array() / static_cast<Scalar>(c2)).sqrt() + static_cast<Scalar>(cfg.eps));
    }
}

struct StepResult {
    LossBreakdown loss;
    double grad_norm = 0;
};

/// Owns the parameters, optimiser state and step counter of one run.
template <typename Scalar>
class Trainer {
public:
    Trainer(ModelContext<Scalar> ctx, ModelParams<Scalar> params)
        : ctx_(std::move(ctx)), params_(std::move(params)), grad_(params_.zeros_like()), adam_(params_),
          rng_(splitmix64(ctx_.hp.seed ^ 0x5eed5eedULL)) {}

    StepResult train_step(const std::vector<Triplet>& batch) {
        for (auto* t : grad_.tensors()) t->setZero();
        StepResult r;
        r.loss = loss_and_grad(ctx_, params_, batch, step_, &grad_);
        r.grad_norm = std::sqrt(grad_.squared_norm());
        adam_update(params_, grad_, adam_, ctx_.hp.learning_rate);
        if (auto bad = first_non_finite(params_))
            throw NumericError("parameter tensor '" + *bad + "' became non-finite at step " + std::to_string(step_));
        ++step_;
        return r;
    }

    std::vector<Triplet> sample(Index n) { return sample_triplets(*ctx_.data, n, rng_); }

    const ModelContext<Scalar>& context() const { return ctx_; }
    const ModelParams<Scalar>& params() const { return params_; }
    ModelParams<Scalar>& params() { return params_; }
    std::uint64_t step() const { return step_; }

private:
    ModelContext<Scalar> ctx_;
    ModelParams<Scalar> params_;
    ModelParams<Scalar> grad_;
    AdamState<Scalar> adam_;
    std::mt19937_64 rng_;
    std::uint64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// early stopping and fit

/// Stops after `patience` consecutive epochs without a strict improvement.
class EarlyStopping {
public:
    explicit EarlyStopping(Index patience) : patience_(patience) { require(patience > 0, "patience must be > 0"); }

    /// Returns true when this epoch is the new best.
    bool observe(double metric) {
        ++epoch_;
        if (epoch_ == 1 || metric > best_) {
            best_ = metric;
            best_epoch_ = epoch_;
            stale_ = 0;
            return true;
        }
        ++stale_;
        return false;
    }
    bool should_stop() const { return stale_ >= patience_; }
    Index best_epoch() const { return best_epoch_; }
    double best() const { return best_; }

private:
    Index patience_;
    Index epoch_ = 0;
    Index best_epoch_ = 0;
    Index stale_ = 0;
    double best_ = 0;
};

struct EpochRecord {
    Index epoch = 0;
    double loss = 0, bpr = 0, cl = 0, ort = 0;
    double lambda_ort = 0;
    double val_recall20 = 0, val_ndcg20 = 0;
    double seconds = 0;

    nlohmann::json to_json() const {
        return {{"epoch", epoch},   {"loss", loss},           {"bpr", bpr},
                {"cl", cl},         {"ort", ort},             {"lambda_ort", lambda_ort},
                {"val_recall20", val_recall20}, {"val_ndcg20", val_ndcg20}, {"seconds", seconds}};
    }
};

struct FitOptions {
    bool record_time = false;  ///< wall-clock seconds in history; off keeps history byte-stable
    std::function<void(const EpochRecord&)> on_epoch;
    /// Overrides validation R@20/NDCG@20 (used to script stopping behaviour in tests).
    std::function<std::pair<double, double>(Index epoch)> validation_override;
};

template <typename Scalar>
struct FitResult {
    ModelParams<Scalar> best;
    std::vector<EpochRecord> history;
    Index best_epoch = 0;
};

/// Trains up to hp.epochs, validating R@20 after every epoch, and returns the
/// parameters of the best validation epoch.
template <typename Scalar>
FitResult<Scalar> fit(const ModelContext<Scalar>& ctx, ModelParams<Scalar> init, const FitOptions& opt = {}) {
    ctx.hp.validate();
    Trainer<Scalar> trainer(ctx, std::move(init));
    EarlyStopping stopper(ctx.hp.patience);
    FitResult<Scalar> res{trainer.params(), {}, 0};
    auto ks = ctx.hp.eval_topk;
    if (std::find(ks.begin(), ks.end(), Index{20}) == ks.end()) ks.push_back(20);

    const auto n_train = static_cast<Index>(ctx.data->train.size());
    const Index per_epoch = (n_train + ctx.hp.batch_size - 1) / ctx.hp.batch_size;
    for (Index epoch = 1; epoch <= ctx.hp.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lambda_ort = ctx.hp.lambda_ort;
        Index remaining = n_train;
        for (Index b = 0; b < per_epoch; ++b) {
            const Index sz = std::min(ctx.hp.batch_size, remaining);
            remaining -= sz;
            const auto r = trainer.train_step(trainer.sample(sz));
            rec.loss += r.loss.total;
            rec.bpr += r.loss.bpr;
            rec.cl += r.loss.cl;
            rec.ort += r.loss.ort;
        }
        const auto inv = 1.0 / static_cast<double>(std::max<Index>(per_epoch, 1));
        rec.loss *= inv;
        rec.bpr *= inv;
        rec.cl *= inv;
        rec.ort *= inv;

        if (opt.validation_override) {
            std::tie(rec.val_recall20, rec.val_ndcg20) = opt.validation_override(epoch);
        } else {
            const auto reps = final_representations(trainer.context(), trainer.params());
            const auto rep = evaluate_representations(*ctx.data, reps.users, reps.items, Split::val, ks);
            rec.val_recall20 = rep.at(20).recall;
            rec.val_ndcg20 = rep.at(20).ndcg;
        }
        if (opt.record_time)
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.history.push_back(rec);
        if (opt.on_epoch) opt.on_epoch(rec);
        if (stopper.observe(rec.val_recall20)) {
            res.best = trainer.params();
            res.best_epoch = epoch;
        }
        if (stopper.should_stop()) break;
    }
    return res;
}

}  // namespace rearm
