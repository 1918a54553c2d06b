#pragma once

#include "rearm/graph.hpp"

namespace rearm {

/// Rectangular CSR block of the user-item graph.
struct BipartiteBlock {
    Index rows = 0;
    Index cols = 0;
    std::vector<Index> row_ptr{0};
    std::vector<Index> col_idx;
    std::vector<float> weights;

    Index degree(Index r) const { return row_ptr[static_cast<std::size_t>(r) + 1] - row_ptr[static_cast<std::size_t>(r)]; }

    /// out = B * x, accumulated in double.
    template <typename Scalar>
    Matrix<Scalar> multiply(const Matrix<Scalar>& x) const {
        if (x.rows() != cols) throw DataError("bipartite multiply: shape mismatch");
        Matrix<Scalar> out(rows, x.cols());
        parallel_for(rows, [&](Index r) {
            Eigen::Matrix<double, 1, Eigen::Dynamic> acc = Eigen::Matrix<double, 1, Eigen::Dynamic>::Zero(x.cols());
            for (Index e = row_ptr[static_cast<std::size_t>(r)]; e < row_ptr[static_cast<std::size_t>(r) + 1]; ++e)
                acc += static_cast<double>(weights[static_cast<std::size_t>(e)]) *
                       x.row(col_idx[static_cast<std::size_t>(e)]).template cast<double>();
            out.row(r) = acc.template cast<Scalar>();
        });
        return out;
    }
};

/// Symmetrically normalised train interaction graph, held in both directions
/// with identical per-edge weights 1/(sqrt|N_u| sqrt|N_i|).
struct BipartiteGraph {
    Index n_users = 0;
    Index n_items = 0;
    BipartiteBlock user_to_item;  ///< rows: users, cols: items
    BipartiteBlock item_to_user;  ///< rows: items, cols: users

    Index edges() const { return static_cast<Index>(user_to_item.col_idx.size()); }

    /// Square (N+M)-node form, users first; used for CSRG serialisation.
    SparseGraph to_sparse_graph() const {
        std::vector<std::vector<SparseGraph::Entry>> rows(static_cast<std::size_t>(n_users + n_items));
        for (Index u = 0; u < n_users; ++u)
            for (Index e = user_to_item.row_ptr[static_cast<std::size_t>(u)]; e < user_to_item.row_ptr[static_cast<std::size_t>(u) + 1]; ++e)
                rows[static_cast<std::size_t>(u)].emplace_back(n_users + user_to_item.col_idx[static_cast<std::size_t>(e)],
                                                               user_to_item.weights[static_cast<std::size_t>(e)]);
        for (Index i = 0; i < n_items; ++i)
            for (Index e = item_to_user.row_ptr[static_cast<std::size_t>(i)]; e < item_to_user.row_ptr[static_cast<std::size_t>(i) + 1]; ++e)
                rows[static_cast<std::size_t>(n_users + i)].emplace_back(item_to_user.col_idx[static_cast<std::size_t>(e)],
                                                                         item_to_user.weights[static_cast<std::size_t>(e)]);
        return SparseGraph::from_rows(n_users + n_items, GraphKind::bipartite, rows);
    }

    static BipartiteGraph from_sparse_graph(const SparseGraph& g, Index n_users) {
        if (n_users < 0 || n_users > g.n) throw DataError("bipartite graph: bad user count");
        BipartiteGraph b;
        b.n_users = n_users;
        b.n_items = g.n - n_users;
        b.user_to_item = {n_users, b.n_items, {0}, {}, {}};
        b.item_to_user = {b.n_items, n_users, {0}, {}, {}};
        for (Index r = 0; r < g.n; ++r) {
            const bool user = r < n_users;
            auto& blk = user ? b.user_to_item : b.item_to_user;
            for (Index e = g.row_begin(r); e < g.row_end(r); ++e) {
                const Index c = g.col_idx[static_cast<std::size_t>(e)];
                if (user != (c >= n_users)) throw DataError("bipartite graph: edge within one side");
                blk.col_idx.push_back(user ? c - n_users : c);
                blk.weights.push_back(g.weights[static_cast<std::size_t>(e)]);
            }
            blk.row_ptr.push_back(static_cast<Index>(blk.col_idx.size()));
        }
        return b;
    }
};

inline BipartiteGraph build_bipartite(const InteractionDataset& ds) {
    if (ds.train.empty()) throw DataError("bipartite graph needs train interactions");
    const auto user_items = ds.adjacency(ds.train);
    std::vector<std::vector<Index>> item_users(static_cast<std::size_t>(ds.n_items));
    for (Index u = 0; u < ds.n_users; ++u)
        for (Index i : user_items[static_cast<std::size_t>(u)]) item_users[static_cast<std::size_t>(i)].push_back(u);

    auto weight = [&](Index u, Index i) {
        return 1.0 / (std::sqrt(static_cast<double>(user_items[static_cast<std::size_t>(u)].size())) *
                      std::sqrt(static_cast<double>(item_users[static_cast<std::size_t>(i)].size())));
    };

    BipartiteGraph g;
    g.n_users = ds.n_users;
    g.n_items = ds.n_items;
    g.user_to_item = {ds.n_users, ds.n_items, {0}, {}, {}};
    g.item_to_user = {ds.n_items, ds.n_users, {0}, {}, {}};
    for (Index u = 0; u < ds.n_users; ++u) {
        for (Index i : user_items[static_cast<std::size_t>(u)]) {
            g.user_to_item.col_idx.push_back(i);
            g.user_to_item.weights.push_back(static_cast<float>(weight(u, i)));
        }
        g.user_to_item.row_ptr.push_back(static_cast<Index>(g.user_to_item.col_idx.size()));
    }
    for (Index i = 0; i < ds.n_items; ++i) {
        for (Index u : item_users[static_cast<std::size_t>(i)]) {
            g.item_to_user.col_idx.push_back(u);
            g.item_to_user.weights.push_back(static_cast<float>(weight(u, i)));
        }
        g.item_to_user.row_ptr.push_back(static_cast<Index>(g.item_to_user.col_idx.size()));
    }
    return g;
}

template <typename Scalar>
struct BipartiteOutput {
    Matrix<Scalar> users;
    Matrix<Scalar> items;
};

/// LightGCN propagation averaged over layers 0..L. The normalised adjacency is
/// symmetric, so this map is self-adjoint: the backward pass of
/// (users, items) -> output is the same call on the output gradients.
template <typename Scalar>
BipartiteOutput<Scalar> propagate_bipartite(const BipartiteGraph& g, const Matrix<Scalar>& u0, const Matrix<Scalar>& i0,
                                            Index layers) {
    if (u0.rows() != g.n_users || i0.rows() != g.n_items || u0.cols() != i0.cols())
        throw DataError("bipartite propagation: embedding shapes do not match graph");
    if (layers < 0) throw ConfigError("GCN layers must be >= 0");
    Matrix<double> su = u0.template cast<double>();
    Matrix<double> si = i0.template cast<double>();
    Matrix<Scalar> u = u0, i = i0;
    for (Index l = 0; l < layers; ++l) {
        Matrix<Scalar> nu = g.user_to_item.multiply(i);
        Matrix<Scalar> ni = g.item_to_user.multiply(u);
        u = std::move(nu);
        i = std::move(ni);
        su += u.template cast<double>();
        si += i.template cast<double>();
    }
    const double inv = 1.0 / static_cast<double>(layers + 1);
    return {(su * inv).template cast<Scalar>(), (si * inv).template cast<Scalar>()};
}

}  // namespace rearm
