#pragma once

#include "rearm/fusion.hpp"
#include "rearm/graph.hpp"
#include "rearm/hetero.hpp"
#include "rearm/refine.hpp"

#include <functional>
#include <optional>

namespace rearm {

// ---------------------------------------------------------------------------
// configuration

/// Component switches used by the ablation study. `wo_ref` is not a separate
/// switch: it is exactly wo_meta together with wo_ort.
struct Ablation {
    bool wo_uu = false;
    bool wo_ii = false;
    bool wo_co = false;
    bool wo_sim = false;
    bool wo_hom = false;
    bool wo_meta = false;
    bool wo_ort = false;

    static const std::vector<std::string>& variant_names() {
        static const std::vector<std::string> names{"wo_uu",  "wo_ii",   "wo_co",  "wo_sim", "wo_hom",
                                                    "wo_meta", "wo_ort", "wo_ref", "full"};
        return names;
    }

    void set(const std::string& flag) {
        if (flag == "wo_uu") wo_uu = true;
        else if (flag == "wo_ii") wo_ii = true;
        else if (flag == "wo_co") wo_co = true;
        else if (flag == "wo_sim") wo_sim = true;
        else if (flag == "wo_hom") wo_hom = true;
        else if (flag == "wo_meta") wo_meta = true;
        else if (flag == "wo_ort") wo_ort = true;
        else if (flag == "wo_ref") wo_meta = wo_ort = true;
        else if (flag == "full" || flag.empty()) {}
        else throw ConfigError("unknown ablation flag: " + flag);
    }

    static Ablation parse(const std::vector<std::string>& flags) {
        Ablation a;
        for (const auto& f : flags) a.set(f);
        if (a.wo_co && a.wo_sim) throw ConfigError("wo_co and wo_sim are mutually exclusive");
        return a;
    }

    bool skip_user_homograph() const { return wo_hom || wo_uu; }
    bool skip_item_homograph() const { return wo_hom || wo_ii; }

    std::vector<std::string> flags() const {
        std::vector<std::string> out;
        if (wo_uu) out.push_back("wo_uu");
        if (wo_ii) out.push_back("wo_ii");
        if (wo_co) out.push_back("wo_co");
        if (wo_sim) out.push_back("wo_sim");
        if (wo_hom) out.push_back("wo_hom");
        if (wo_meta) out.push_back("wo_meta");
        if (wo_ort) out.push_back("wo_ort");
        return out;
    }
};

struct HyperParams {
    Index dim = 64;
    Index batch_size = 2048;
    double learning_rate = 1e-3;
    Index gcn_layers = 4;
    HomographConfig homograph;
    double tau = 0.2;
    double lambda_cl = 0.01;
    double lambda_ort = 0.01;
    double lambda_p = 1e-4;
    Index rank = 4;
    double dropout = 0.1;
    SoftmaxAxis softmax_axis = SoftmaxAxis::columns;
    Index epochs = 2000;
    Index patience = 20;
    std::vector<Index> eval_topk{10, 20};
    std::uint64_t seed = 2024;

    void validate() const {
        require(dim > 0, "d must be > 0");
        require(batch_size > 0, "batch_size must be > 0");
        require(patience > 0, "patience must be > 0");
        require(epochs >= 0, "epochs must be >= 0");
        require(learning_rate >= 0, "learning rate must be >= 0");
        require(gcn_layers >= 0 && gcn_layers <= 10, "GCN layers must lie in [0,10]");
        require(homograph.layers >= 0 && homograph.layers <= 4, "homograph layers must lie in [0,4]");
        require(tau > 0, "tau must be > 0");
        require(lambda_cl >= 0 && lambda_ort >= 0 && lambda_p >= 0, "loss weights must be non-negative");
        require(rank >= 1 && rank < dim, "rank k must satisfy 1 <= k < d");
        require(dropout >= 0 && dropout < 1, "dropout must lie in [0,1)");
        require(!eval_topk.empty(), "eval_topk must not be empty");
        for (Index k : eval_topk) require(k > 0, "eval K must be > 0");
        homograph.validate();
    }

    /// Applies the graph-level and loss-level parts of an ablation.
    HyperParams with(const Ablation& a) const {
        HyperParams h = *this;
        if (a.wo_co) h.homograph.alpha_co_user = h.homograph.alpha_co_item = 0.0;
        if (a.wo_sim) h.homograph.alpha_co_user = h.homograph.alpha_co_item = 1.0;
        if (a.wo_ort) h.lambda_ort = 0.0;
        return h;
    }
};

// ---------------------------------------------------------------------------
// inputs prepared before training

template <typename Scalar>
struct FeatureSet {
    std::array<ModalFeatures<Scalar>, 2> modal;  ///< visual, textual

    template <typename To>
    FeatureSet<To> cast() const {
        FeatureSet<To> f;
        for (std::size_t m = 0; m < 2; ++m) {
            f.modal[m].modality = modal[m].modality;
            f.modal[m].item_matrix = modal[m].item_matrix.template cast<To>();
            f.modal[m].user_matrix = modal[m].user_matrix.template cast<To>();
        }
        return f;
    }
};

template <typename Scalar>
FeatureSet<Scalar> make_feature_set(const InteractionDataset& ds, Matrix<Scalar> visual, Matrix<Scalar> textual) {
    FeatureSet<Scalar> f;
    f.modal[0] = make_modal_features(ds, Modality::visual, std::move(visual));
    f.modal[1] = make_modal_features(ds, Modality::textual, std::move(textual));
    return f;
}

/// Homogeneous and bipartite graphs; built once before training.
struct GraphSet {
    SparseGraph user_co, user_sem, item_co, item_sem;
    SparseGraph user_fused, item_fused;
    BipartiteGraph bipartite;
    HomographOperator user_op, item_op;

    void finalize() {
        user_op = HomographOperator(user_fused);
        item_op = HomographOperator(item_fused);
    }
};

/// Per-modality semantic graphs fused with the modal importance weights.
template <typename Scalar>
SparseGraph build_fused_semantic(const std::array<const Matrix<Scalar>*, 2>& feats, Index top_k,
                                 const std::vector<double>& alphas) {
    std::vector<SparseGraph> per;
    for (const auto* f : feats) per.push_back(build_semantic_graph(*f, top_k));
    return fuse_semantic_graphs(per, alphas);
}

template <typename Scalar>
GraphSet build_graph_set(const InteractionDataset& ds, const FeatureSet<Scalar>& f, const HomographConfig& cfg) {
    cfg.validate();
    GraphSet g;
    g.item_co = build_cooccurrence_graph(ds, Side::item, cfg.top_k_co);
    g.user_co = build_cooccurrence_graph(ds, Side::user, cfg.top_k_co);
    g.item_sem = build_fused_semantic<Scalar>({&f.modal[0].item_matrix, &f.modal[1].item_matrix}, cfg.top_k_sem,
                                              cfg.alpha_modal_item);
    g.user_sem = build_fused_semantic<Scalar>({&f.modal[0].user_matrix, &f.modal[1].user_matrix}, cfg.top_k_sem,
                                              cfg.alpha_modal_user);
    g.item_fused = fuse_homograph(g.item_co, g.item_sem, cfg.alpha_co_item);
    g.user_fused = fuse_homograph(g.user_co, g.user_sem, cfg.alpha_co_user);
    g.bipartite = build_bipartite(ds);
    g.finalize();
    return g;
}

// ---------------------------------------------------------------------------
// parameters

/// Every trainable tensor Θ. Tensors are visited in a fixed manifest order,
/// which is also the checkpoint order.
template <typename Scalar>
struct ModelParams {
    Matrix<Scalar> user_id;                     ///< N x d
    Matrix<Scalar> item_id;                     ///< M x d
    std::array<Projection<Scalar>, 2> project;  ///< shared by user preferences and item features
    AttentionParams<Scalar> attention;
    std::array<MetaNetParams<Scalar>, 2> meta;  ///< user, item
    std::array<Matrix<Scalar>, 2> unique_slope; ///< user, item; 1 x 1

    template <typename Self, typename Fn>
    static void visit_impl(Self& self, Fn&& fn) {
        static constexpr const char* mod[] = {"visual", "textual"};
        static constexpr const char* side[] = {"user", "item"};
        fn("user_id", self.user_id);
        fn("item_id", self.item_id);
        for (int m = 0; m < 2; ++m) {
            fn(std::string("project.") + mod[m] + ".weight", self.project[m].weight);
            fn(std::string("project.") + mod[m] + ".bias", self.project[m].bias);
        }
        for (int m = 0; m < 2; ++m) {
            for (int b = 0; b < 2; ++b) {
                auto& w = b == 0 ? self.attention.self[m] : self.attention.cross[m];
                const std::string pre = std::string("attention.") + (b == 0 ? "self." : "cross.") + mod[m];
                fn(pre + ".query", w.query);
                fn(pre + ".key", w.key);
                fn(pre + ".value", w.value);
            }
        }
        for (int s = 0; s < 2; ++s) {
            auto& p = self.meta[s];
            const std::string pre = std::string("meta.") + side[s];
            fn(pre + ".share.weight", p.share_weight);
            fn(pre + ".share.bias", p.share_bias);
            for (int g = 0; g < 2; ++g) {
                auto& l = g == 0 ? p.g1 : p.g2;
                const std::string gp = pre + (g == 0 ? ".g1" : ".g2");
                fn(gp + ".hidden.weight", l.hidden.weight);
                fn(gp + ".hidden.bias", l.hidden.bias);
                fn(gp + ".slope", l.slope);
                fn(gp + ".output.weight", l.output.weight);
                fn(gp + ".output.bias", l.output.bias);
            }
            fn(pre + ".out_slope", p.out_slope);
        }
        fn("unique.user.slope", self.unique_slope[0]);
        fn("unique.item.slope", self.unique_slope[1]);
    }

    template <typename Fn>
    void visit(Fn&& fn) {
        visit_impl(*this, std::forward<Fn>(fn));
    }
    template <typename Fn>
    void visit(Fn&& fn) const {
        visit_impl(*this, std::forward<Fn>(fn));
    }

    std::vector<Matrix<Scalar>*> tensors() {
        std::vector<Matrix<Scalar>*> out;
        visit([&](const std::string&, Matrix<Scalar>& m) { out.push_back(&m); });
        return out;
    }
    std::vector<const Matrix<Scalar>*> tensors() const {
        std::vector<const Matrix<Scalar>*> out;
        visit([&](const std::string&, const Matrix<Scalar>& m) { out.push_back(&m); });
        return out;
    }
    std::vector<std::string> names() const {
        std::vector<std::string> out;
        visit([&](const std::string& n, const Matrix<Scalar>&) { out.push_back(n); });
        return out;
    }

    Index rank() const { return meta[0].rank; }

    ModelParams zeros_like() const {
        ModelParams z = *this;
        for (auto* t : z.tensors()) t->setZero();
        return z;
    }

    template <typename To>
    ModelParams<To> cast() const {
        ModelParams<To> out;
        auto dst = out.tensors();
        auto src = tensors();
        for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<To>();
        out.meta[0].rank = meta[0].rank;
        out.meta[1].rank = meta[1].rank;
        return out;
    }

    double squared_norm() const {
        double s = 0;
        for (const auto* t : tensors()) s += static_cast<double>(t->squaredNorm());
        return s;
    }

    bool operator==(const ModelParams& o) const {
        auto a = tensors();
        auto b = o.tensors();
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() || *a[i] != *b[i]) return false;
        return rank() == o.rank();
    }
};

namespace detail {

/// Deterministic uniform(-a, a) fill independent of std distribution internals.
template <typename Scalar>
void fill_uniform(Matrix<Scalar>& m, double bound, std::mt19937_64& rng) {
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            m(r, c) = static_cast<Scalar>((2 * u - 1) * bound);
        }
}

template <typename Scalar>
Matrix<Scalar> xavier(Index rows, Index cols, std::mt19937_64& rng) {
    Matrix<Scalar> m(rows, cols);
    fill_uniform(m, std::sqrt(6.0 / static_cast<double>(rows + cols)), rng);
    return m;
}

template <typename Scalar>
Matrix<Scalar> constant(Index rows, Index cols, double v) {
    return Matrix<Scalar>::Constant(rows, cols, static_cast<Scalar>(v));
}

}  // namespace detail

inline constexpr double kPreluInit = 0.25;

/// Xavier-uniform matrices and embeddings, zero biases, PReLU slopes 0.25.
template <typename Scalar>
ModelParams<Scalar> init_params(Index n_users, Index n_items, std::array<Index, 2> modal_dims, const HyperParams& hp) {
    hp.validate();
    const Index d = hp.dim;
    const Index k = hp.rank;
    const Index h = d;
    std::mt19937_64 rng(hp.seed);
    ModelParams<Scalar> p;
    p.user_id = detail::xavier<Scalar>(n_users, d, rng);
    p.item_id = detail::xavier<Scalar>(n_items, d, rng);
    for (std::size_t m = 0; m < 2; ++m) {
        p.project[m].weight = detail::xavier<Scalar>(d, modal_dims[m], rng);
        p.project[m].bias = Matrix<Scalar>::Zero(1, d);
    }
    for (std::size_t m = 0; m < 2; ++m)
        for (auto* w : {&p.attention.self[m], &p.attention.cross[m]}) {
            w->query = detail::xavier<Scalar>(d, d, rng);
            w->key = detail::xavier<Scalar>(d, d, rng);
            w->value = detail::xavier<Scalar>(d, d, rng);
        }
    for (auto& mp : p.meta) {
        mp.rank = k;
        mp.share_weight = detail::xavier<Scalar>(d, 2 * d, rng);
        mp.share_bias = Matrix<Scalar>::Zero(1, d);
        for (auto* g : {&mp.g1, &mp.g2}) {
            g->hidden.weight = detail::xavier<Scalar>(h, d, rng);
            g->hidden.bias = Matrix<Scalar>::Zero(1, h);
            g->slope = detail::constant<Scalar>(1, 1, kPreluInit);
            g->output.weight = detail::xavier<Scalar>(d * k, h, rng);
            g->output.bias = Matrix<Scalar>::Zero(1, d * k);
        }
        mp.out_slope = detail::constant<Scalar>(1, 1, kPreluInit);
    }
    for (auto& s : p.unique_slope) s = detail::constant<Scalar>(1, 1, kPreluInit);
    return p;
}

// ---------------------------------------------------------------------------
// forward

/// Inputs shared by every forward call.
template <typename Scalar>
struct ModelContext {
    const InteractionDataset* data = nullptr;
    const GraphSet* graphs = nullptr;
    const FeatureSet<Scalar>* features = nullptr;
    HyperParams hp;
    Ablation ablation;
};

enum class Mode { train, eval };

/// Channel order for the three propagated views.
enum Channel : int { kId = 0, kVisual = 1, kTextual = 2 };

template <typename Scalar>
struct SideFinal {
    std::vector<Index> rows;  ///< node indices the final representations are computed for
    std::optional<MetaSharedCache<Scalar>> meta;
    Matrix<Scalar> share;     ///< rows x d
    Matrix<Scalar> unique;    ///< rows x 2d
    Matrix<Scalar> star;      ///< rows x 3d: share || unique
    std::array<Matrix<Scalar>, 3> bar_rows;  ///< gathered post-propagation id / visual / textual
};

/// Every intermediate of one forward pass.
template <typename Scalar>
struct ForwardCache {
    std::array<Matrix<Scalar>, 2> item_proj, user_proj;
    std::array<Matrix<Scalar>, 3> item_hom, user_hom;  ///< id, visual, textual after homograph
    std::optional<ItemAttentionCache<Scalar>> attention;
    std::array<Matrix<Scalar>, 3> item_bar, user_bar;  ///< after bipartite propagation
    SideFinal<Scalar> user, item;
    AttentionConfig attention_cfg;

    const Matrix<Scalar>& item_hsc(int m) const { return attention->out(m); }
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> gather_rows(const Matrix<Scalar>& m, const std::vector<Index>& rows) {
    Matrix<Scalar> out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
    return out;
}

template <typename Scalar>
void scatter_add_rows(Matrix<Scalar>& dst, const Matrix<Scalar>& src, const std::vector<Index>& rows) {
    for (std::size_t r = 0; r < rows.size(); ++r) dst.row(rows[r]) += src.row(static_cast<Index>(r));
}

template <typename Scalar>
std::array<Matrix<Scalar>, 3> homograph_forward(const HomographOperator& op, const Matrix<Scalar>& id,
                                                const Matrix<Scalar>& v, const Matrix<Scalar>& t, Index layers,
                                                bool skip) {
    if (skip || layers == 0) return {id, v, t};
    const Index d = id.cols();
    Matrix<Scalar> h0(id.rows(), 3 * d);
    h0 << id, v, t;
    const Matrix<Scalar> h = op.apply(h0, layers);
    return {h.leftCols(d), h.middleCols(d, d), h.rightCols(d)};
}

template <typename Scalar>
std::array<Matrix<Scalar>, 3> homograph_backward(const HomographOperator& op, const std::array<Matrix<Scalar>, 3>& grad,
                                                 Index layers, bool skip) {
    if (skip || layers == 0) return grad;
    const Index d = grad[0].cols();
    Matrix<Scalar> g(grad[0].rows(), 3 * d);
    g << grad[0], grad[1], grad[2];
    const Matrix<Scalar> h = op.apply_adjoint(g, layers);
    return {h.leftCols(d), h.middleCols(d, d), h.rightCols(d)};
}

}  // namespace detail

template <typename Scalar>
void compute_side_final(SideFinal<Scalar>& s, const std::array<Matrix<Scalar>, 3>& bar, const MetaNetParams<Scalar>& meta,
                        Scalar unique_slope, bool wo_meta) {
    for (int c = 0; c < 3; ++c) s.bar_rows[c] = detail::gather_rows(bar[c], s.rows);
    const auto& id = s.bar_rows[kId];
    if (wo_meta) {
        s.meta.reset();
        s.share = id;
    } else {
        s.meta = meta_shared_forward(s.bar_rows[kVisual], s.bar_rows[kTextual], id, meta);
        s.share = s.meta->out;
    }
    s.unique = fuse_unique(s.bar_rows[kVisual], s.bar_rows[kTextual], id, unique_slope);
    s.star.resize(id.rows(), 3 * id.cols());
    s.star << s.share, s.unique;
}

inline std::vector<Index> all_rows(Index n) {
    std::vector<Index> r(static_cast<std::size_t>(n));
    std::iota(r.begin(), r.end(), Index{0});
    return r;
}

/// Runs the pipeline: projection -> homograph -> item attention -> bipartite
/// propagation -> refine, computing final representations for the requested
/// rows (all rows when empty optionals are passed).
template <typename Scalar>
ForwardCache<Scalar> forward(const ModelContext<Scalar>& ctx, const ModelParams<Scalar>& p, Mode mode,
                             std::optional<std::vector<Index>> user_rows = std::nullopt,
                             std::optional<std::vector<Index>> item_rows = std::nullopt, std::uint64_t step = 0) {
    const auto& hp = ctx.hp;
    const auto& ab = ctx.ablation;
    const auto& g = *ctx.graphs;
    const auto& f = *ctx.features;
    const Index d = hp.dim;
    auto stage = [](bool ok, const char* name) {
        if (!ok) throw DataError(std::string("forward: inconsistent shapes at stage '") + name + "'");
    };
    stage(p.user_id.rows() == ctx.data->n_users && p.item_id.rows() == ctx.data->n_items && p.user_id.cols() == d &&
              p.item_id.cols() == d,
          "embeddings");
    stage(g.user_op.n() == ctx.data->n_users && g.item_op.n() == ctx.data->n_items &&
              g.bipartite.n_users == ctx.data->n_users && g.bipartite.n_items == ctx.data->n_items,
          "graphs");

    ForwardCache<Scalar> c;
    for (std::size_t m = 0; m < 2; ++m) {
        stage(f.modal[m].item_matrix.rows() == ctx.data->n_items && f.modal[m].user_matrix.rows() == ctx.data->n_users,
              "features");
        c.item_proj[m] = project_modality(f.modal[m].item_matrix, p.project[m]);
        c.user_proj[m] = project_modality(f.modal[m].user_matrix, p.project[m]);
    }

    c.item_hom = detail::homograph_forward(g.item_op, p.item_id, c.item_proj[0], c.item_proj[1], hp.homograph.layers,
                                           ab.skip_item_homograph());
    c.user_hom = detail::homograph_forward(g.user_op, p.user_id, c.user_proj[0], c.user_proj[1], hp.homograph.layers,
                                           ab.skip_user_homograph());

    c.attention_cfg = {hp.dropout, hp.softmax_axis, mode == Mode::train, hp.seed, step};
    c.attention = item_attention_forward(c.item_hom[kVisual], c.item_hom[kTextual], p.attention, c.attention_cfg);

    const std::array<const Matrix<Scalar>*, 3> item_in{&c.item_hom[kId], &c.item_hsc(0), &c.item_hsc(1)};
    for (int ch = 0; ch < 3; ++ch) {
        auto out = propagate_bipartite(g.bipartite, c.user_hom[ch], *item_in[ch], hp.gcn_layers);
        c.user_bar[ch] = std::move(out.users);
        c.item_bar[ch] = std::move(out.items);
    }

    c.user.rows = user_rows ? std::move(*user_rows) : all_rows(ctx.data->n_users);
    c.item.rows = item_rows ? std::move(*item_rows) : all_rows(ctx.data->n_items);
    compute_side_final(c.user, c.user_bar, p.meta[0], p.unique_slope[0](0, 0), ab.wo_meta);
    compute_side_final(c.item, c.item_bar, p.meta[1], p.unique_slope[1](0, 0), ab.wo_meta);
    return c;
}

/// Names the first non-finite intermediate, if any.
template <typename Scalar>
std::optional<std::string> first_non_finite(const ForwardCache<Scalar>& c) {
    static constexpr const char* ch[] = {"id", "visual", "textual"};
    for (int m = 0; m < 2; ++m) {
        if (!c.item_proj[m].allFinite()) return std::string("item projection ") + ch[m + 1];
        if (!c.user_proj[m].allFinite()) return std::string("user projection ") + ch[m + 1];
    }
    for (int i = 0; i < 3; ++i) {
        if (!c.item_hom[i].allFinite()) return std::string("item homograph ") + ch[i];
        if (!c.user_hom[i].allFinite()) return std::string("user homograph ") + ch[i];
    }
    for (int m = 0; m < 2; ++m)
        if (!c.item_hsc(m).allFinite()) return std::string("item attention ") + ch[m + 1];
    for (int i = 0; i < 3; ++i) {
        if (!c.item_bar[i].allFinite()) return std::string("item bipartite ") + ch[i];
        if (!c.user_bar[i].allFinite()) return std::string("user bipartite ") + ch[i];
    }
    if (!c.user.star.allFinite()) return std::string("user final representation");
    if (!c.item.star.allFinite()) return std::string("item final representation");
    return std::nullopt;
}

template <typename Scalar>
std::optional<std::string> first_non_finite(const ModelParams<Scalar>& p) {
    std::optional<std::string> bad;
    p.visit([&](const std::string& name, const Matrix<Scalar>& m) {
        if (!bad && !m.allFinite()) bad = name;
    });
    return bad;
}

// ---------------------------------------------------------------------------
// backward

/// Gradients w.r.t. the final representations and the post-propagation views.
template <typename Scalar>
struct FinalGrads {
    Matrix<Scalar> user_star, item_star;                ///< rows x 3d, aligned with SideFinal::rows
    std::array<Matrix<Scalar>, 3> user_bar_rows, item_bar_rows;  ///< direct loss terms on gathered rows (may be empty)
};

namespace detail {

template <typename Scalar>
void side_backward(const SideFinal<Scalar>& s, const Matrix<Scalar>& grad_star,
                   const std::array<Matrix<Scalar>, 3>& extra, const MetaNetParams<Scalar>& meta, Scalar unique_slope,
                   MetaNetParams<Scalar>& grad_meta, Scalar& grad_unique_slope, std::array<Matrix<Scalar>, 3>& grad_bar) {
    const Index d = s.share.cols();
    const Index n = static_cast<Index>(s.rows.size());
    std::array<Matrix<Scalar>, 3> g;
    for (int c = 0; c < 3; ++c) {
        g[c] = Matrix<Scalar>::Zero(n, d);
        if (extra[c].size() > 0) g[c] += extra[c];
    }
    if (grad_star.size() > 0) {
        const Matrix<Scalar> gshare = grad_star.leftCols(d);
        const Matrix<Scalar> guni = grad_star.rightCols(2 * d);
        if (s.meta) {
            auto mg = meta_shared_backward(*s.meta, s.bar_rows[kId], meta, gshare, grad_meta);
            g[kVisual] += mg.v;
            g[kTextual] += mg.t;
            g[kId] += mg.id;
        } else {
            g[kId] += gshare;
        }
        auto ug = fuse_unique_backward(s.bar_rows[kVisual], s.bar_rows[kTextual], unique_slope, guni, grad_unique_slope);
        g[kVisual] += ug.v;
        g[kTextual] += ug.t;
        g[kId] += ug.id;
    }
    for (int c = 0; c < 3; ++c) scatter_add_rows(grad_bar[c], g[c], s.rows);
}

}  // namespace detail

/// Back-propagates from the final representations to every parameter,
/// accumulating into `grad`.
template <typename Scalar>
void backward(const ModelContext<Scalar>& ctx, const ModelParams<Scalar>& p, const ForwardCache<Scalar>& c,
              const FinalGrads<Scalar>& fg, ModelParams<Scalar>& grad) {
    const auto& hp = ctx.hp;
    const auto& ab = ctx.ablation;
    const auto& g = *ctx.graphs;
    const auto& f = *ctx.features;
    const Index d = hp.dim;
    const Index n_users = ctx.data->n_users;
    const Index n_items = ctx.data->n_items;

    std::array<Matrix<Scalar>, 3> d_user_bar, d_item_bar;
    for (int ch = 0; ch < 3; ++ch) {
        d_user_bar[ch] = Matrix<Scalar>::Zero(n_users, d);
        d_item_bar[ch] = Matrix<Scalar>::Zero(n_items, d);
    }
    detail::side_backward(c.user, fg.user_star, fg.user_bar_rows, p.meta[0], p.unique_slope[0](0, 0), grad.meta[0],
                          grad.unique_slope[0](0, 0), d_user_bar);
    detail::side_backward(c.item, fg.item_star, fg.item_bar_rows, p.meta[1], p.unique_slope[1](0, 0), grad.meta[1],
                          grad.unique_slope[1](0, 0), d_item_bar);

    // bipartite propagation is self-adjoint
    std::array<Matrix<Scalar>, 3> d_user_hom, d_item_in;
    for (int ch = 0; ch < 3; ++ch) {
        auto back = propagate_bipartite(g.bipartite, d_user_bar[ch], d_item_bar[ch], hp.gcn_layers);
        d_user_hom[ch] = std::move(back.users);
        d_item_in[ch] = std::move(back.items);
    }

    std::array<Matrix<Scalar>, 3> d_item_hom;
    d_item_hom[kId] = d_item_in[kId];
    auto [dv, dt] = item_attention_backward(*c.attention, c.item_hom[kVisual], c.item_hom[kTextual], p.attention,
                                            d_item_in[kVisual], d_item_in[kTextual], hp.softmax_axis, grad.attention);
    d_item_hom[kVisual] = std::move(dv);
    d_item_hom[kTextual] = std::move(dt);

    const auto d_item0 = detail::homograph_backward(g.item_op, d_item_hom, hp.homograph.layers, ab.skip_item_homograph());
    const auto d_user0 = detail::homograph_backward(g.user_op, d_user_hom, hp.homograph.layers, ab.skip_user_homograph());

    grad.item_id += d_item0[kId];
    grad.user_id += d_user0[kId];
    for (std::size_t m = 0; m < 2; ++m) {
        project_backward(f.modal[m].item_matrix, d_item0[m + 1], grad.project[m]);
        project_backward(f.modal[m].user_matrix, d_user0[m + 1], grad.project[m]);
    }
}

/// Inner-product preference score.
template <typename Derived1, typename Derived2>
auto predict(const Eigen::MatrixBase<Derived1>& u_star, const Eigen::MatrixBase<Derived2>& i_star) {
    if (u_star.size() != i_star.size()) throw DataError("predict: representation widths differ");
    using Scalar = typename Derived1::Scalar;
    double acc = 0;
    for (Index k = 0; k < u_star.size(); ++k)
        acc += static_cast<double>(u_star(k)) * static_cast<double>(i_star(k));
    return static_cast<Scalar>(acc);
}

}  // namespace rearm
