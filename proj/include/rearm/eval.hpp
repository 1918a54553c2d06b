#pragma once

#include "rearm/model.hpp"

#include <limits>
#include <nlohmann/json.hpp>

namespace rearm {

enum class Split { val, test };

inline const char* split_name(Split s) { return s == Split::val ? "val" : "test"; }

struct MetricAtK {
    Index k = 0;
    double recall = 0;
    double ndcg = 0;
};

struct EvalReport {
    std::string split;
    std::vector<MetricAtK> metrics;
    Index n_users_evaluated = 0;

    const MetricAtK& at(Index k) const {
        for (const auto& m : metrics)
            if (m.k == k) return m;
        throw ConfigError("metric at K=" + std::to_string(k) + " was not computed");
    }

    nlohmann::json to_json() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& m : metrics)
            arr.push_back({{"split", split}, {"K", m.k}, {"recall", m.recall}, {"ndcg", m.ndcg}, {"n_users", n_users_evaluated}});
        return arr;
    }
};

/// Top-K items by inner product, excluding `mask` (sorted). Ties go to the
/// smaller item index.
template <typename Scalar, typename RowDerived>
std::vector<Index> rank_items(const Eigen::MatrixBase<RowDerived>& u_star, const Matrix<Scalar>& item_star,
                              const std::vector<Index>& mask, Index k) {
    const Index m = item_star.rows();
    Index masked = 0;
    for (Index i : mask)
        if (i >= 0 && i < m) ++masked;
    if (k < 0 || k > m - masked)
        throw ConfigError("rank_items: K=" + std::to_string(k) + " exceeds the " + std::to_string(m - masked) +
                          " unmasked items");
    std::vector<std::pair<double, Index>> scored;
    scored.reserve(static_cast<std::size_t>(m));
    std::size_t mp = 0;
    for (Index i = 0; i < m; ++i) {
        while (mp < mask.size() && mask[mp] < i) ++mp;
        if (mp < mask.size() && mask[mp] == i) continue;
        scored.emplace_back(static_cast<double>(predict(u_star, item_star.row(i))), i);
    }
    auto better = [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); };
    std::partial_sort(scored.begin(), scored.begin() + k, scored.end(), better);
    std::vector<Index> out(static_cast<std::size_t>(k));
    for (Index r = 0; r < k; ++r) out[static_cast<std::size_t>(r)] = scored[static_cast<std::size_t>(r)].second;
    return out;
}

/// Recall@K and NDCG@K averaged over users with non-empty truth. `topk[u]`
/// must hold at least max(K) items (or every unmasked item when fewer exist).
inline EvalReport compute_metrics(const std::vector<std::vector<Index>>& topk,
                                  const std::vector<std::vector<Index>>& truth, const std::vector<Index>& ks,
                                  std::string split = "val") {
    if (topk.size() != truth.size()) throw DataError("compute_metrics: ranking and truth user counts differ");
    EvalReport rep;
    rep.split = std::move(split);
    for (Index k : ks) rep.metrics.push_back({k, 0, 0});
    for (std::size_t u = 0; u < truth.size(); ++u) {
        const auto& t = truth[u];
        if (t.empty()) continue;
        ++rep.n_users_evaluated;
        std::vector<Index> sorted_truth = t;
        std::sort(sorted_truth.begin(), sorted_truth.end());
        for (auto& m : rep.metrics) {
            const Index lim = std::min<Index>(m.k, static_cast<Index>(topk[u].size()));
            double hits = 0, dcg = 0;
            for (Index r = 0; r < lim; ++r)
                if (std::binary_search(sorted_truth.begin(), sorted_truth.end(), topk[u][static_cast<std::size_t>(r)])) {
                    hits += 1;
                    dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
                }
            double idcg = 0;
            for (Index r = 0; r < std::min<Index>(m.k, static_cast<Index>(t.size())); ++r)
                idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
            m.recall += hits / static_cast<double>(t.size());
            m.ndcg += dcg / idcg;
        }
    }
    if (rep.n_users_evaluated > 0)
        for (auto& m : rep.metrics) {
            m.recall /= static_cast<double>(rep.n_users_evaluated);
            m.ndcg /= static_cast<double>(rep.n_users_evaluated);
        }
    return rep;
}

namespace detail {

inline std::vector<Index> merged_mask(const std::vector<Index>& a, const std::vector<Index>& b) {
    std::vector<Index> out;
    std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace detail

/// All-ranking evaluation from precomputed final representations. Validation
/// masks train items; test masks train and validation items.
template <typename Scalar>
EvalReport evaluate_representations(const InteractionDataset& ds, const Matrix<Scalar>& user_star,
                                    const Matrix<Scalar>& item_star, Split split, const std::vector<Index>& ks) {
    const auto truth = ds.adjacency(split == Split::val ? ds.val : ds.test);
    const auto val_adj = split == Split::test ? ds.adjacency(ds.val) : std::vector<std::vector<Index>>{};
    const Index max_k = *std::max_element(ks.begin(), ks.end());
    std::vector<std::vector<Index>> topk(static_cast<std::size_t>(ds.n_users));
    parallel_for(ds.n_users, [&](Index u) {
        const auto su = static_cast<std::size_t>(u);
        if (truth[su].empty()) return;
        const auto mask = split == Split::test ? detail::merged_mask(ds.train_adjacency[su], val_adj[su])
                                               : ds.train_adjacency[su];
        const Index avail = ds.n_items - static_cast<Index>(mask.size());
        topk[su] = rank_items(user_star.row(u), item_star, mask, std::min(max_k, avail));
    });
    return compute_metrics(topk, truth, ks, split_name(split));
}

template <typename Scalar>
struct Representations {
    Matrix<Scalar> users;  ///< N x 3d
    Matrix<Scalar> items;  ///< M x 3d
};

template <typename Scalar>
Representations<Scalar> final_representations(const ModelContext<Scalar>& ctx, const ModelParams<Scalar>& p) {
    auto c = forward(ctx, p, Mode::eval);
    return {std::move(c.user.star), std::move(c.item.star)};
}

template <typename Scalar>
EvalReport evaluate(const ModelContext<Scalar>& ctx, const ModelParams<Scalar>& p, Split split) {
    const auto r = final_representations(ctx, p);
    return evaluate_representations(*ctx.data, r.users, r.items, split, ctx.hp.eval_topk);
}

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Entry (u,i) = sigmoid(score_b) - sigmoid(score_a) over the given subsets.
template <typename Scalar>
MatrixD score_difference_matrix(const Representations<Scalar>& a, const Representations<Scalar>& b,
                                const std::vector<Index>& users, const std::vector<Index>& items) {
    for (Index u : users)
        if (u < 0 || u >= a.users.rows() || u >= b.users.rows()) throw ConfigError("user index out of range: " + std::to_string(u));
    for (Index i : items)
        if (i < 0 || i >= a.items.rows() || i >= b.items.rows()) throw ConfigError("item index out of range: " + std::to_string(i));
    MatrixD out(static_cast<Index>(users.size()), static_cast<Index>(items.size()));
    for (std::size_t r = 0; r < users.size(); ++r)
        for (std::size_t c = 0; c < items.size(); ++c) {
            const double sa = predict(a.users.row(users[r]), a.items.row(items[c]));
            const double sb = predict(b.users.row(users[r]), b.items.row(items[c]));
            out(static_cast<Index>(r), static_cast<Index>(c)) = sigmoid(sb) - sigmoid(sa);
        }
    return out;
}

inline void write_difference_tsv(std::ostream& os, const MatrixD& m, const std::vector<Index>& users,
                                 const std::vector<Index>& items) {
    os << "user";
    for (Index i : items) os << '\t' << i;
    os << '\n';
    char buf[32];
    for (std::size_t r = 0; r < users.size(); ++r) {
        os << users[r];
        for (std::size_t c = 0; c < items.size(); ++c) {
            std::snprintf(buf, sizeof buf, "%.9g", m(static_cast<Index>(r), static_cast<Index>(c)));
            os << '\t' << buf;
        }
        os << '\n';
    }
}

}  // namespace rearm
