#pragma once

#include "oracles.hpp"

#include <filesystem>
#include <memory>

namespace fixture {

using rearm::Index;

/// Small fully-wired model instance. Everything is heap-held so the context
/// pointers stay valid when the fixture is moved.
template <typename Scalar>
struct Micro {
    std::unique_ptr<rearm::InteractionDataset> ds;
    std::unique_ptr<rearm::FeatureSet<Scalar>> features;
    std::unique_ptr<rearm::GraphSet> graphs;
    rearm::MatrixD visual, textual;
    rearm::HyperParams hp;
    rearm::Ablation ablation;

    rearm::ModelContext<Scalar> context() const { return {ds.get(), graphs.get(), features.get(), hp, ablation}; }
    rearm::ModelParams<Scalar> init() const {
        return rearm::init_params<Scalar>(ds->n_users, ds->n_items, {visual.cols(), textual.cols()}, hp);
    }
};

struct MicroSpec {
    Index n_users = 6;
    Index n_items = 8;
    Index dim = 8;
    Index rank = 2;
    Index gcn_layers = 1;
    Index hom_layers = 1;
    Index top_k = 3;
    double density = 0.4;
    std::uint64_t seed = 1;
    bool with_split = false;
};

template <typename Scalar>
Micro<Scalar> micro(const MicroSpec& s = {}) {
    std::mt19937_64 rng(s.seed);
    Micro<Scalar> m;
    auto pairs = oracle::random_pairs(s.n_users, s.n_items, s.density, rng);
    if (s.with_split) {
        m.ds = std::make_unique<rearm::InteractionDataset>(rearm::split_dataset(pairs, {}, s.seed));
    } else {
        m.ds = std::make_unique<rearm::InteractionDataset>(oracle::train_only(pairs, s.n_users, s.n_items));
    }
    m.visual = oracle::random_matrix(m.ds->n_items, 5, rng);
    m.textual = oracle::random_matrix(m.ds->n_items, 3, rng);
    m.features = std::make_unique<rearm::FeatureSet<Scalar>>(
        rearm::make_feature_set<Scalar>(*m.ds, m.visual.template cast<Scalar>(), m.textual.template cast<Scalar>()));
    m.hp.dim = s.dim;
    m.hp.rank = s.rank;
    m.hp.gcn_layers = s.gcn_layers;
    m.hp.homograph.layers = s.hom_layers;
    m.hp.homograph.top_k_co = s.top_k;
    m.hp.homograph.top_k_sem = s.top_k;
    m.hp.batch_size = 16;
    m.hp.seed = s.seed;
    m.graphs = std::make_unique<rearm::GraphSet>(rearm::build_graph_set(*m.ds, *m.features, m.hp.homograph));
    return m;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("rearm-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fixture
