#include "fixtures.hpp"

#include <gtest/gtest.h>

using namespace rearm;

namespace {

SparseGraph dense_to_graph(const MatrixD& m, GraphKind kind = GraphKind::fused) {
    std::vector<std::vector<SparseGraph::Entry>> rows(static_cast<std::size_t>(m.rows()));
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c)
            if (m(r, c) != 0) rows[static_cast<std::size_t>(r)].emplace_back(c, m(r, c));
    return SparseGraph::from_rows(m.rows(), kind, rows);
}

MatrixD random_sparse(Index n, double density, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MatrixD m = MatrixD::Zero(n, n);
    for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < n; ++c)
            if (r != c && u(rng) < density) m(r, c) = u(rng);
    return m;
}

}  // namespace

TEST(Cooccurrence, SoftmaxOverRetainedCounts) {
    // item 1 shares two users with item 0 and one with item 2
    const auto ds = oracle::train_only({{"0", "0"}, {"0", "1"}, {"1", "0"}, {"1", "1"}, {"2", "1"}, {"2", "2"}}, 3, 3);
    const auto g = build_cooccurrence_graph(ds, Side::item, 2);
    EXPECT_NEAR(g.weight(1, 0), std::exp(2.0) / (std::exp(2.0) + std::exp(1.0)), 1e-6);
    EXPECT_NEAR(g.weight(1, 0), 0.7311, 1e-4);
    EXPECT_NEAR(g.weight(1, 2), 0.2689, 1e-4);
}

TEST(Cooccurrence, IsolatedNodeHasEmptyRowAndZeroTopKRejected) {
    const auto ds = oracle::train_only({{"0", "0"}, {"0", "1"}, {"1", "2"}}, 2, 3);
    const auto g = build_cooccurrence_graph(ds, Side::item, 5);
    EXPECT_EQ(g.degree(2), 0);
    EXPECT_EQ(build_cooccurrence_graph(ds, Side::user, 5).nnz(), 0);
    EXPECT_THROW(build_cooccurrence_graph(ds, Side::item, 0), ConfigError);
}

TEST(Cooccurrence, RandomInstancesMatchDenseOracle) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const Index n = 3 + trial % 15, m = 3 + (trial * 7) % 15;
        const auto ds = oracle::train_only(oracle::random_pairs(n, m, 0.3, rng), n, m);
        const Index k = 1 + trial % 5;
        for (bool items : {false, true}) {
            const auto g = build_cooccurrence_graph(ds, items ? Side::item : Side::user, k);
            g.validate();
            const MatrixD expect = oracle::cooccurrence(ds, items, k);
            EXPECT_LT((g.to_dense() - expect).cwiseAbs().maxCoeff(), 1e-5) << "trial " << trial;
            for (Index r = 0; r < g.n; ++r)
                if (g.degree(r) > 0) {
                    double s = 0;
                    for (Index e = g.row_begin(r); e < g.row_end(r); ++e) s += g.weights[static_cast<std::size_t>(e)];
                    EXPECT_NEAR(s, 1.0, 1e-6);
                }
        }
    }
}

TEST(Cooccurrence, CountsAreSymmetric) {
    std::mt19937_64 rng(8);
    const auto ds = oracle::train_only(oracle::random_pairs(12, 9, 0.35, rng), 12, 9);
    const auto ui = ds.adjacency(ds.train);
    std::vector<std::vector<Index>> iu(9);
    for (Index u = 0; u < 12; ++u)
        for (Index i : ui[static_cast<std::size_t>(u)]) iu[static_cast<std::size_t>(i)].push_back(u);
    std::vector<Index> scratch(9, 0);
    MatrixD c = MatrixD::Zero(9, 9);
    for (Index i = 0; i < 9; ++i)
        for (auto [j, cnt] : cooccurrence_counts(i, iu, ui, scratch)) c(i, j) = static_cast<double>(cnt);
    EXPECT_EQ(c, c.transpose());
}

TEST(Semantic, OrthogonalAndCollinearRows) {
    MatrixD f(3, 2);
    f << 1, 0, 0, 1, 2, 0;
    const auto g = build_semantic_graph(f, 2);
    EXPECT_EQ(g.weight(0, 1), 0.0);  // orthogonal: no edge
    // collinear rows 0 and 2 have similarity 1; each has degree 1 so the normalised weight is 1
    EXPECT_NEAR(g.weight(0, 2), 1.0, 1e-6);
    EXPECT_EQ(g.degree(1), 0);
    EXPECT_THROW(build_semantic_graph(f, 0), ConfigError);
}

TEST(Semantic, RandomInstancesMatchBruteForceKnn) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const Index n = 2 + trial % 19;
        const MatrixD f = oracle::random_matrix(n, 4, rng);
        const Index k = 1 + trial % 6;
        const auto g = build_semantic_graph(f, k);
        g.validate();
        EXPECT_LT((g.to_dense() - oracle::semantic(f, k)).cwiseAbs().maxCoeff(), 1e-5) << "trial " << trial;
    }
}

TEST(Semantic, Random8x4TopK3NeighbourSets) {
    std::mt19937_64 rng(12);
    const MatrixD f = oracle::random_matrix(8, 4, rng);
    const auto g = build_semantic_graph(f, 3);
    const MatrixD expect = oracle::semantic(f, 3);
    for (Index r = 0; r < 8; ++r)
        for (Index c = 0; c < 8; ++c) EXPECT_EQ(g.weight(r, c) != 0, expect(r, c) != 0);
}

TEST(Fusion, DegenerateWeightsAndArithmetic) {
    MatrixD a = MatrixD::Zero(3, 3), b = MatrixD::Zero(3, 3);
    a(0, 1) = 0.2;
    b(0, 1) = 0.4;
    b(1, 2) = 0.5;
    const auto ga = dense_to_graph(a, GraphKind::semantic), gb = dense_to_graph(b, GraphKind::semantic);
    const double one_zero[] = {1.0, 0.0};
    const auto first = fuse_semantic_graphs({ga, gb}, one_zero);
    EXPECT_EQ(first.to_dense(), ga.to_dense());
    EXPECT_EQ(first.nnz(), ga.nnz());
    const double half[] = {0.5, 0.5};
    EXPECT_NEAR(fuse_semantic_graphs({ga, gb}, half).weight(0, 1), 0.3, 1e-7);
    const double three[] = {0.3, 0.3, 0.4};
    EXPECT_THROW(fuse_semantic_graphs({ga, gb}, three), ConfigError);
}

TEST(Fusion, RandomUnionMatchesDenseAddition) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        const MatrixD a = random_sparse(5, 0.3, rng), b = random_sparse(5, 0.3, rng);
        const double alphas[] = {0.3, 0.7};
        const auto g = fuse_semantic_graphs({dense_to_graph(a), dense_to_graph(b)}, alphas);
        const MatrixD fa = dense_to_graph(a).to_dense(), fb = dense_to_graph(b).to_dense();
        EXPECT_LT((g.to_dense() - (0.3 * fa + 0.7 * fb)).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Fusion, HomographBoundariesAndSharedEdge) {
    MatrixD co = MatrixD::Zero(2, 2), sem = MatrixD::Zero(2, 2);
    co(0, 1) = 1.0;
    sem(0, 1) = 0.5;
    sem(1, 0) = 0.25;
    const auto gc = dense_to_graph(co, GraphKind::cooccurrence), gs = dense_to_graph(sem, GraphKind::semantic);
    EXPECT_EQ(fuse_homograph(gc, gs, 0.0).to_dense(), gs.to_dense());
    EXPECT_EQ(fuse_homograph(gc, gs, 1.0).to_dense(), gc.to_dense());
    EXPECT_NEAR(fuse_homograph(gc, gs, 0.4).weight(0, 1), 0.7, 1e-7);
    EXPECT_THROW(fuse_homograph(gc, SparseGraph::empty(3, GraphKind::semantic), 0.5), DataError);
    EXPECT_THROW(fuse_homograph(gc, gs, 1.5), ConfigError);
}

TEST(Propagation, SingleEdgeAndEmptyGraph) {
    MatrixD a = MatrixD::Zero(2, 2);
    a(0, 1) = 1.0;
    const auto g = dense_to_graph(a);
    MatrixD h(2, 3);
    h << 1, 2, 3, 4, 5, 6;
    const auto out = propagate_homograph(g, h, 1);
    EXPECT_EQ(out.id(0, 0), 4.0);
    EXPECT_EQ(out.visual(0, 0), 5.0);
    EXPECT_EQ(out.textual(0, 0), 6.0);
    EXPECT_EQ(out.id(1, 0), 4.0);  // isolated node passes through
    EXPECT_EQ(out.textual(1, 0), 6.0);

    const auto e = propagate_homograph(SparseGraph::empty(2, GraphKind::fused), h, 3);
    EXPECT_EQ(e.id, h.leftCols(1));
    const auto zero = propagate_homograph(g, h, 0);
    EXPECT_EQ(zero.textual, h.rightCols(1));
}

TEST(Propagation, RandomGraphsMatchDensePowerOracle) {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        const Index n = 2 + trial % 19;
        const MatrixD a = random_sparse(n, 0.25, rng);
        const auto g = dense_to_graph(a);
        const MatrixD h = oracle::random_matrix(n, 6, rng);
        const Index layers = 1 + trial % 3;
        const auto out = propagate_homograph(g, h, layers);
        MatrixD got(n, 6);
        got << out.id, out.visual, out.textual;
        const MatrixD expect = oracle::homograph(g.to_dense(), h, layers);
        EXPECT_LT((got - expect).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
        // operator form and its adjoint agree with the dense oracle and its transpose
        const HomographOperator op(g);
        EXPECT_LT((op.apply(h, layers) - expect).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
        MatrixD dense_op = g.to_dense();
        for (Index r = 0; r < n; ++r)
            if (g.degree(r) == 0) dense_op(r, r) = 1.0;
        MatrixD adj = h;
        for (Index l = 0; l < layers; ++l) adj = dense_op.transpose() * adj;
        EXPECT_LT((op.apply_adjoint(h, layers) - adj).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, adj.cwiseAbs().maxCoeff()));
    }
}

TEST(Propagation, SixNodesTwoLayersIsASquaredH) {
    std::mt19937_64 rng(15);
    const MatrixD a = random_sparse(6, 0.5, rng);
    const auto g = dense_to_graph(a);
    const MatrixD h = oracle::random_matrix(6, 3, rng);
    const auto out = propagate_homograph(g, h, 2);
    MatrixD got(6, 3);
    got << out.id, out.visual, out.textual;
    EXPECT_LT((got - oracle::homograph(g.to_dense(), h, 2)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Propagation, Linear) {
    std::mt19937_64 rng(16);
    const auto g = dense_to_graph(random_sparse(10, 0.3, rng));
    const MatrixD x = oracle::random_matrix(10, 6, rng), y = oracle::random_matrix(10, 6, rng);
    auto f = [&](const MatrixD& h) {
        const auto o = propagate_homograph(g, h, 2);
        MatrixD r(10, 6);
        r << o.id, o.visual, o.textual;
        return r;
    };
    EXPECT_LT((f(2.0 * x - 0.5 * y) - (2.0 * f(x) - 0.5 * f(y))).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Graphs, DeterministicAndSerialisationRoundTrips) {
    const auto m = fixture::micro<double>({.n_users = 10, .n_items = 12, .seed = 4});
    const auto again = build_graph_set(*m.ds, *m.features, m.hp.homograph);
    EXPECT_EQ(again.item_fused, m.graphs->item_fused);
    EXPECT_EQ(again.user_sem, m.graphs->user_sem);
    const auto dir = fixture::scratch("graph-io");
    save_graph((dir / "g.csrg").string(), m.graphs->item_fused);
    EXPECT_EQ(load_graph((dir / "g.csrg").string(), GraphKind::fused), m.graphs->item_fused);
    const auto bytes = fixture::slurp(dir / "g.csrg");
    const auto& g = m.graphs->item_fused;
    EXPECT_EQ(bytes.substr(0, 4), "CSRG");
    EXPECT_EQ(bytes.size(), 4 + 4 + 8 + 8 + 8 * (g.row_ptr.size() + g.col_idx.size()) + 4 * g.weights.size());
    {
        std::ofstream(dir / "bad.csrg") << "CSRGjunk";
    }
    EXPECT_THROW(load_graph((dir / "bad.csrg").string(), GraphKind::fused), DataError);
}

TEST(Graphs, ZeroAlphaGraphContributesNoEdges) {
    auto m = fixture::micro<double>({.n_users = 10, .n_items = 12, .seed = 4});
    HomographConfig cfg = m.hp.homograph;
    cfg.alpha_co_item = 1.0;
    const auto g = build_graph_set(*m.ds, *m.features, cfg);
    EXPECT_EQ(g.item_fused.to_dense(), g.item_co.to_dense());
    EXPECT_EQ(g.item_fused.nnz(), g.item_co.nnz());
}
