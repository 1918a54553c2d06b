#pragma once

#include "rearm/dataset.hpp"

#include <numbers>

namespace rearm {

/// Block-structured implicit feedback: users of block b interact with every
/// item of block b, plus `noise` x that many random out-of-block items. Item
/// features live in a per-block subspace of each modality, with `noise`-scaled
/// Gaussian leakage into the other coordinates.
struct SyntheticSpec {
    Index n_users = 200;
    Index n_items = 100;
    Index blocks = 2;
    double noise = 0.05;
    Index visual_dim = 32;
    Index textual_dim = 24;
    std::uint64_t seed = 7;
};

struct SyntheticData {
    std::vector<RawPair> pairs;
    MatrixF visual;
    MatrixF textual;
};

namespace detail {

inline double uniform01(std::mt19937_64& rng) { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; }

inline double gaussian(std::mt19937_64& rng) {
    const double u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

inline Index synthetic_block(Index node, Index n, Index blocks) { return node * blocks / n; }

inline SyntheticData make_block_dataset(const SyntheticSpec& spec) {
    require(spec.blocks >= 1 && spec.n_users >= spec.blocks && spec.n_items >= spec.blocks, "bad synthetic block layout");
    std::mt19937_64 rng(spec.seed);
    SyntheticData out;
    for (Index u = 0; u < spec.n_users; ++u) {
        const Index b = synthetic_block(u, spec.n_users, spec.blocks);
        std::vector<Index> outside;
        Index inside = 0;
        for (Index i = 0; i < spec.n_items; ++i) {
            if (synthetic_block(i, spec.n_items, spec.blocks) == b) {
                out.pairs.push_back({std::to_string(u), std::to_string(i)});
                ++inside;
            } else {
                outside.push_back(i);
            }
        }
        const auto n_noise = std::min<std::size_t>(outside.size(), static_cast<std::size_t>(std::llround(spec.noise * static_cast<double>(inside))));
        for (std::size_t k = 0; k < n_noise; ++k) {
            const std::size_t j = k + detail::bounded(rng, outside.size() - k);
            std::swap(outside[k], outside[j]);
            out.pairs.push_back({std::to_string(u), std::to_string(outside[k])});
        }
    }
    auto features = [&](Index dim) {
        MatrixF m(spec.n_items, dim);
        for (Index i = 0; i < spec.n_items; ++i) {
            const Index b = synthetic_block(i, spec.n_items, spec.blocks);
            for (Index c = 0; c < dim; ++c) {
                const bool own = synthetic_block(c, dim, spec.blocks) == b;
                m(i, c) = static_cast<float>((own ? 1.0 : spec.noise) * detail::gaussian(rng));
            }
        }
        return m;
    };
    out.visual = features(spec.visual_dim);
    out.textual = features(spec.textual_dim);
    return out;
}

inline void write_interactions(const std::string& path, const std::vector<RawPair>& pairs) {
    auto out = io::open_out(path);
    for (const auto& p : pairs) out << p.user << '\t' << p.item << '\n';
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace rearm
