#pragma once

#include "rearm/dataset.hpp"

#include <tuple>

namespace rearm {

enum class GraphKind : std::uint8_t { cooccurrence, semantic, fused, bipartite };

enum class Side { user, item };

/// Weighted CSR adjacency over n nodes. Columns are strictly increasing within
/// each row; weights are finite and non-negative.
struct SparseGraph {
    GraphKind kind = GraphKind::fused;
    Index n = 0;
    std::vector<Index> row_ptr{0};
    std::vector<Index> col_idx;
    std::vector<float> weights;

    using Entry = std::pair<Index, double>;

    static SparseGraph empty(Index n, GraphKind kind) {
        SparseGraph g;
        g.kind = kind;
        g.n = n;
        g.row_ptr.assign(static_cast<std::size_t>(n) + 1, 0);
        return g;
    }

    /// Rows must already be sorted by column.
    static SparseGraph from_rows(Index n, GraphKind kind, const std::vector<std::vector<Entry>>& rows) {
        SparseGraph g;
        g.kind = kind;
        g.n = n;
        g.row_ptr.assign(1, 0);
        g.row_ptr.reserve(static_cast<std::size_t>(n) + 1);
        for (const auto& row : rows) {
            for (const auto& [c, w] : row) {
                g.col_idx.push_back(c);
                g.weights.push_back(static_cast<float>(w));
            }
            g.row_ptr.push_back(static_cast<Index>(g.col_idx.size()));
        }
        return g;
    }

    Index nnz() const noexcept { return static_cast<Index>(col_idx.size()); }
    Index row_begin(Index r) const { return row_ptr[static_cast<std::size_t>(r)]; }
    Index row_end(Index r) const { return row_ptr[static_cast<std::size_t>(r) + 1]; }
    Index degree(Index r) const { return row_end(r) - row_begin(r); }

    std::span<const Index> cols(Index r) const {
        return {col_idx.data() + row_begin(r), static_cast<std::size_t>(degree(r))};
    }
    std::span<const float> vals(Index r) const {
        return {weights.data() + row_begin(r), static_cast<std::size_t>(degree(r))};
    }

    double weight(Index r, Index c) const {
        auto cs = cols(r);
        auto it = std::lower_bound(cs.begin(), cs.end(), c);
        if (it == cs.end() || *it != c) return 0.0;
        return vals(r)[static_cast<std::size_t>(it - cs.begin())];
    }

    std::vector<Entry> row_entries(Index r) const {
        std::vector<Entry> out;
        out.reserve(static_cast<std::size_t>(degree(r)));
        for (Index e = row_begin(r); e < row_end(r); ++e)
            out.emplace_back(col_idx[static_cast<std::size_t>(e)], weights[static_cast<std::size_t>(e)]);
        return out;
    }

    MatrixD to_dense() const {
        MatrixD d = MatrixD::Zero(n, n);
        for (Index r = 0; r < n; ++r)
            for (Index e = row_begin(r); e < row_end(r); ++e)
                d(r, col_idx[static_cast<std::size_t>(e)]) = weights[static_cast<std::size_t>(e)];
        return d;
    }

    SparseGraph transpose() const {
        std::vector<std::vector<Entry>> rows(static_cast<std::size_t>(n));
        for (Index r = 0; r < n; ++r)
            for (Index e = row_begin(r); e < row_end(r); ++e)
                rows[static_cast<std::size_t>(col_idx[static_cast<std::size_t>(e)])].emplace_back(
                    r, weights[static_cast<std::size_t>(e)]);
        return from_rows(n, kind, rows);
    }

    /// Throws DataError when a structural invariant is violated.
    void validate() const {
        if (row_ptr.size() != static_cast<std::size_t>(n) + 1 || row_ptr.front() != 0 ||
            row_ptr.back() != nnz() || weights.size() != col_idx.size())
            throw DataError("graph: inconsistent CSR arrays");
        for (Index r = 0; r < n; ++r) {
            if (row_end(r) < row_begin(r)) throw DataError("graph: decreasing row_ptr");
            for (Index e = row_begin(r); e < row_end(r); ++e) {
                const Index c = col_idx[static_cast<std::size_t>(e)];
                if (c < 0 || c >= n) throw DataError("graph: column out of range");
                if (e > row_begin(r) && col_idx[static_cast<std::size_t>(e) - 1] >= c)
                    throw DataError("graph: columns not strictly increasing");
                const float w = weights[static_cast<std::size_t>(e)];
                if (!std::isfinite(w) || w < 0) throw DataError("graph: invalid weight");
            }
        }
    }

    bool operator==(const SparseGraph&) const = default;
};

struct HomographConfig {
    Index top_k_co = 10;
    Index top_k_sem = 10;
    std::vector<double> alpha_modal_user{0.5, 0.5};
    std::vector<double> alpha_modal_item{0.5, 0.5};
    double alpha_co_user = 0.5;
    double alpha_co_item = 0.5;
    Index layers = 1;

    void validate() const {
        require(top_k_co >= 1 && top_k_sem >= 1, "top_k must be >= 1");
        for (const auto* a : {&alpha_modal_user, &alpha_modal_item}) {
            double s = 0;
            for (double v : *a) {
                require(v >= 0, "modal importance coefficients must be non-negative");
                s += v;
            }
            require(std::abs(s - 1.0) <= 1e-9, "modal importance coefficients must sum to 1");
        }
        require(alpha_co_user >= 0 && alpha_co_user <= 1 && alpha_co_item >= 0 && alpha_co_item <= 1,
                "co-occurrence factor must lie in [0,1]");
        require(layers >= 0, "homograph layers must be >= 0");
    }
};

namespace detail {

struct Candidate {
    double score;
    Index node;
};

/// Highest score first; ties to the smaller node index.
inline void keep_top_k(std::vector<Candidate>& c, Index k) {
    auto better = [](const Candidate& a, const Candidate& b) {
        return a.score > b.score || (a.score == b.score && a.node < b.node);
    };
    if (static_cast<Index>(c.size()) > k) {
        std::partial_sort(c.begin(), c.begin() + k, c.end(), better);
        c.resize(static_cast<std::size_t>(k));
    } else {
        std::sort(c.begin(), c.end(), better);
    }
}

inline std::vector<SparseGraph::Entry> sorted_entries(const std::vector<Candidate>& c) {
    std::vector<SparseGraph::Entry> out;
    out.reserve(c.size());
    for (const auto& x : c) out.emplace_back(x.node, x.score);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

/// Raw co-interaction counts over train pairs for one node (no top-k, no
/// softmax). `own` maps a node to its counterparts, `other` maps back.
inline std::vector<std::pair<Index, Index>> cooccurrence_counts(Index node, const std::vector<std::vector<Index>>& own,
                                                                 const std::vector<std::vector<Index>>& other,
                                                                 std::vector<Index>& scratch) {
    std::vector<Index> touched;
    for (Index mid : own[static_cast<std::size_t>(node)])
        for (Index nb : other[static_cast<std::size_t>(mid)]) {
            if (nb == node) continue;
            if (scratch[static_cast<std::size_t>(nb)]++ == 0) touched.push_back(nb);
        }
    std::vector<std::pair<Index, Index>> out;
    out.reserve(touched.size());
    for (Index nb : touched) {
        out.emplace_back(nb, scratch[static_cast<std::size_t>(nb)]);
        scratch[static_cast<std::size_t>(nb)] = 0;
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Top-k co-occurrence neighbours per node with a row softmax over the
/// retained counts.
inline SparseGraph build_cooccurrence_graph(const InteractionDataset& ds, Side side, Index top_k) {
    require(top_k >= 1, "co-occurrence top_k must be >= 1");
    if (ds.train.empty()) throw DataError("co-occurrence graph needs train interactions");
    const auto user_items = ds.adjacency(ds.train);
    std::vector<std::vector<Index>> item_users(static_cast<std::size_t>(ds.n_items));
    for (Index u = 0; u < ds.n_users; ++u)
        for (Index i : user_items[static_cast<std::size_t>(u)]) item_users[static_cast<std::size_t>(i)].push_back(u);

    const bool items = side == Side::item;
    const auto& own = items ? item_users : user_items;
    const auto& other = items ? user_items : item_users;
    const Index n = items ? ds.n_items : ds.n_users;

    std::vector<std::vector<SparseGraph::Entry>> rows(static_cast<std::size_t>(n));
    parallel_for(n, [&](Index node) {
        thread_local std::vector<Index> scratch;
        if (scratch.size() != static_cast<std::size_t>(n)) scratch.assign(static_cast<std::size_t>(n), 0);
        const auto counts = cooccurrence_counts(node, own, other, scratch);
        if (counts.empty()) return;
        std::vector<detail::Candidate> cand;
        cand.reserve(counts.size());
        for (auto [nb, c] : counts) cand.push_back({static_cast<double>(c), nb});
        detail::keep_top_k(cand, top_k);
        const double mx = cand.front().score;
        double z = 0;
        for (auto& c : cand) z += std::exp(c.score - mx);
        for (auto& c : cand) c.score = std::exp(c.score - mx) / z;
        rows[static_cast<std::size_t>(node)] = detail::sorted_entries(cand);
    });
    return SparseGraph::from_rows(n, GraphKind::cooccurrence, rows);
}

/// Cosine kNN graph with negatives clamped to zero, then symmetric degree
/// normalisation w / sqrt(deg_i deg_j). Zero-similarity pairs are not edges.
template <typename Scalar>
SparseGraph build_semantic_graph(const Matrix<Scalar>& features, Index top_k) {
    require(top_k >= 1, "semantic top_k must be >= 1");
    const Index n = features.rows();
    MatrixD unit = features.template cast<double>();
    for (Index r = 0; r < n; ++r) {
        const double nrm = unit.row(r).norm();
        if (nrm > 0) unit.row(r) /= nrm;
        else unit.row(r).setZero();
    }

    std::vector<std::vector<detail::Candidate>> kept(static_cast<std::size_t>(n));
    constexpr Index block = 256;
    const Index n_blocks = (n + block - 1) / block;
    parallel_for(n_blocks, [&](Index b) {
        const Index lo = b * block;
        const Index rows = std::min(block, n - lo);
        const MatrixD sims = unit.middleRows(lo, rows) * unit.transpose();
        for (Index r = 0; r < rows; ++r) {
            const Index node = lo + r;
            std::vector<detail::Candidate> cand;
            for (Index j = 0; j < n; ++j) {
                if (j == node) continue;
                const double s = std::min(1.0, sims(r, j));
                if (s > 0) cand.push_back({s, j});
            }
            detail::keep_top_k(cand, top_k);
            kept[static_cast<std::size_t>(node)] = std::move(cand);
        }
    });

    std::vector<double> deg(static_cast<std::size_t>(n), 0.0);
    for (Index r = 0; r < n; ++r)
        for (const auto& c : kept[static_cast<std::size_t>(r)]) deg[static_cast<std::size_t>(r)] += c.score;

    std::vector<std::vector<SparseGraph::Entry>> rows(static_cast<std::size_t>(n));
    for (Index r = 0; r < n; ++r) {
        auto& cand = kept[static_cast<std::size_t>(r)];
        for (auto& c : cand) c.score /= std::sqrt(deg[static_cast<std::size_t>(r)] * deg[static_cast<std::size_t>(c.node)]);
        rows[static_cast<std::size_t>(r)] = detail::sorted_entries(cand);
    }
    return SparseGraph::from_rows(n, GraphKind::semantic, rows);
}

/// Edge-wise weighted sum over the union of edge sets. Graphs with a zero
/// weight contribute no edges.
inline SparseGraph weighted_union(std::span<const SparseGraph* const> graphs, std::span<const double> alphas,
                                  GraphKind kind) {
    if (graphs.size() != alphas.size()) throw ConfigError("graph/weight count mismatch");
    if (graphs.empty()) throw ConfigError("no graphs to fuse");
    const Index n = graphs.front()->n;
    for (const auto* g : graphs)
        if (g->n != n) throw DataError("cannot fuse graphs of different sizes");
    std::vector<std::vector<SparseGraph::Entry>> rows(static_cast<std::size_t>(n));
    for (Index r = 0; r < n; ++r) {
        std::map<Index, double> acc;
        for (std::size_t g = 0; g < graphs.size(); ++g) {
            if (alphas[g] == 0.0) continue;
            for (Index e = graphs[g]->row_begin(r); e < graphs[g]->row_end(r); ++e)
                acc[graphs[g]->col_idx[static_cast<std::size_t>(e)]] +=
                    alphas[g] * graphs[g]->weights[static_cast<std::size_t>(e)];
        }
        rows[static_cast<std::size_t>(r)].assign(acc.begin(), acc.end());
    }
    return SparseGraph::from_rows(n, kind, rows);
}

inline SparseGraph fuse_semantic_graphs(const std::vector<SparseGraph>& graphs, std::span<const double> alphas) {
    std::vector<const SparseGraph*> ptrs;
    for (const auto& g : graphs) ptrs.push_back(&g);
    if (ptrs.size() != alphas.size()) throw ConfigError("modal weight count does not match graph count");
    return weighted_union(ptrs, alphas, GraphKind::semantic);
}

inline SparseGraph fuse_homograph(const SparseGraph& co, const SparseGraph& sem, double alpha_co) {
    require(alpha_co >= 0 && alpha_co <= 1, "alpha_co must lie in [0,1]");
    if (co.n != sem.n) throw DataError("co-occurrence and semantic graphs differ in size");
    const SparseGraph* ptrs[] = {&co, &sem};
    const double alphas[] = {alpha_co, 1.0 - alpha_co};
    return weighted_union(ptrs, alphas, GraphKind::fused);
}

// ---------------------------------------------------------------------------
// propagation

/// out = G * H with per-row double accumulation. Rows of G without entries
/// copy the input row when `passthrough_empty` is set and are zero otherwise.
template <typename Scalar>
Matrix<Scalar> spmm(const SparseGraph& g, const Matrix<Scalar>& h, bool passthrough_empty) {
    if (h.rows() != g.n) throw DataError("spmm: row count mismatch");
    Matrix<Scalar> out(g.n, h.cols());
    parallel_for(g.n, [&](Index r) {
        if (g.degree(r) == 0) {
            if (passthrough_empty) out.row(r) = h.row(r);
            else out.row(r).setZero();
            return;
        }
        Eigen::Matrix<double, 1, Eigen::Dynamic> acc = Eigen::Matrix<double, 1, Eigen::Dynamic>::Zero(h.cols());
        for (Index e = g.row_begin(r); e < g.row_end(r); ++e)
            acc += static_cast<double>(g.weights[static_cast<std::size_t>(e)]) *
                   h.row(g.col_idx[static_cast<std::size_t>(e)]).template cast<double>();
        out.row(r) = acc.template cast<Scalar>();
    });
    return out;
}

/// Linear operator of one homograph layer: empty rows act as identity rows.
/// Holds the transpose as well so the backward pass is a plain spmm.
struct HomographOperator {
    SparseGraph forward;
    SparseGraph adjoint;

    HomographOperator() = default;
    explicit HomographOperator(const SparseGraph& g) {
        std::vector<std::vector<SparseGraph::Entry>> rows(static_cast<std::size_t>(g.n));
        for (Index r = 0; r < g.n; ++r) {
            if (g.degree(r) == 0) rows[static_cast<std::size_t>(r)].emplace_back(r, 1.0);
            else rows[static_cast<std::size_t>(r)] = g.row_entries(r);
        }
        forward = SparseGraph::from_rows(g.n, g.kind, rows);
        adjoint = forward.transpose();
    }
    Index n() const { return forward.n; }

    template <typename Scalar>
    Matrix<Scalar> apply(Matrix<Scalar> h, Index layers) const {
        for (Index l = 0; l < layers; ++l) h = spmm(forward, h, false);
        return h;
    }
    template <typename Scalar>
    Matrix<Scalar> apply_adjoint(Matrix<Scalar> h, Index layers) const {
        for (Index l = 0; l < layers; ++l) h = spmm(adjoint, h, false);
        return h;
    }
};

template <typename Scalar>
struct HomographSlices {
    Matrix<Scalar> id;
    Matrix<Scalar> visual;
    Matrix<Scalar> textual;
};

/// Runs `layers` rounds of weighted neighbour summation on h0 = id||visual||textual
/// and returns the final layer split into its three slices.
template <typename Scalar>
HomographSlices<Scalar> propagate_homograph(const SparseGraph& g, const Matrix<Scalar>& h0, Index layers) {
    if (h0.cols() % 3 != 0) throw DataError("homograph input width must be 3d");
    if (h0.rows() != g.n) throw DataError("homograph input rows do not match graph");
    Matrix<Scalar> h = h0;
    for (Index l = 0; l < layers; ++l) h = spmm(g, h, true);
    const Index d = h0.cols() / 3;
    return {h.leftCols(d), h.middleCols(d, d), h.rightCols(d)};
}

// ---------------------------------------------------------------------------
// CSRG serialisation

inline constexpr std::uint32_t kGraphVersion = 1;

inline void save_graph(const std::string& path, const SparseGraph& g) {
    auto out = io::open_out(path);
    out.write("CSRG", 4);
    io::write_pod(out, kGraphVersion);
    io::write_pod(out, static_cast<std::uint64_t>(g.n));
    io::write_pod(out, static_cast<std::uint64_t>(g.nnz()));
    for (Index v : g.row_ptr) io::write_pod(out, static_cast<std::uint64_t>(v));
    for (Index v : g.col_idx) io::write_pod(out, static_cast<std::uint64_t>(v));
    out.write(reinterpret_cast<const char*>(g.weights.data()), static_cast<std::streamsize>(g.weights.size() * sizeof(float)));
    if (!out) throw DataError("write failed: " + path);
}

inline SparseGraph load_graph(const std::string& path, GraphKind kind) {
    auto in = io::open_in(path);
    io::expect_magic(in, "CSRG", path);
    const auto version = io::read_pod<std::uint32_t>(in, path);
    if (version != kGraphVersion) throw DataError(path + ": unsupported graph version");
    SparseGraph g;
    g.kind = kind;
    g.n = static_cast<Index>(io::read_pod<std::uint64_t>(in, path));
    const auto nnz = io::read_pod<std::uint64_t>(in, path);
    g.row_ptr.resize(static_cast<std::size_t>(g.n) + 1);
    for (auto& v : g.row_ptr) v = static_cast<Index>(io::read_pod<std::uint64_t>(in, path));
    g.col_idx.resize(nnz);
    for (auto& v : g.col_idx) v = static_cast<Index>(io::read_pod<std::uint64_t>(in, path));
    g.weights.resize(nnz);
    in.read(reinterpret_cast<char*>(g.weights.data()), static_cast<std::streamsize>(nnz * sizeof(float)));
    if (!in) throw DataError(path + ": truncated graph");
    g.validate();
    return g;
}

}  // namespace rearm
