#pragma once

#include "rearm/common.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace rearm {

struct RawPair {
    std::string user;
    std::string item;
    bool operator==(const RawPair&) const = default;
};

struct Interaction {
    Index user = 0;
    Index item = 0;
    bool operator==(const Interaction&) const = default;
    auto operator<=>(const Interaction&) const = default;
};

/// Bijection between external tokens and contiguous indices.
class IdMap {
public:
    IdMap() = default;
    explicit IdMap(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        index_.reserve(tokens_.size());
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (!index_.emplace(tokens_[i], static_cast<Index>(i)).second)
                throw DataError("duplicate token in id map: " + tokens_[i]);
        }
    }

    Index size() const noexcept { return static_cast<Index>(tokens_.size()); }
    const std::string& token(Index i) const { return tokens_.at(static_cast<std::size_t>(i)); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    Index at(const std::string& tok) const {
        auto it = index_.find(tok);
        if (it == index_.end()) throw DataError("unknown token: " + tok);
        return it->second;
    }
    bool contains(const std::string& tok) const { return index_.contains(tok); }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
        return j;
    }

    static IdMap from_json(const nlohmann::json& j) {
        std::vector<std::string> tokens(j.size());
        std::vector<bool> seen(j.size(), false);
        for (auto& [tok, idx] : j.items()) {
            const auto i = idx.get<std::size_t>();
            if (i >= tokens.size() || seen[i]) throw DataError("id map indices are not a bijection");
            tokens[i] = tok;
            seen[i] = true;
        }
        return IdMap(std::move(tokens));
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, Index> index_;
};

struct InteractionDataset {
    Index n_users = 0;
    Index n_items = 0;
    std::vector<Interaction> train;
    std::vector<Interaction> val;
    std::vector<Interaction> test;
    IdMap user_ids;
    IdMap item_ids;
    /// Sorted train items per user.
    std::vector<std::vector<Index>> train_adjacency;

    /// Per-user sorted item lists for an arbitrary split.
    std::vector<std::vector<Index>> adjacency(const std::vector<Interaction>& split) const {
        std::vector<std::vector<Index>> adj(static_cast<std::size_t>(n_users));
        for (const auto& p : split) adj[static_cast<std::size_t>(p.user)].push_back(p.item);
        for (auto& row : adj) std::sort(row.begin(), row.end());
        return adj;
    }

    /// Digest over the split contents and id maps; checkpoints are bound to it.
    std::uint64_t digest() const {
        Fnv1a h;
        h.add(n_users).add(n_items);
        for (const auto* split : {&train, &val, &test}) {
            h.add<std::uint64_t>(split->size());
            for (const auto& p : *split) h.add(p.user).add(p.item);
        }
        for (const auto& t : user_ids.tokens()) h.add(std::string_view(t));
        for (const auto& t : item_ids.tokens()) h.add(std::string_view(t));
        return h.value();
    }
};

enum class Modality { visual, textual };

inline const char* modality_name(Modality m) { return m == Modality::visual ? "visual" : "textual"; }

template <typename Scalar>
struct ModalFeatures {
    Modality modality = Modality::visual;
    Matrix<Scalar> item_matrix;  ///< M x d_m
    Matrix<Scalar> user_matrix;  ///< N x d_m, mean over each user's train items
    Index dim() const { return item_matrix.cols(); }
};

// ---------------------------------------------------------------------------
// interaction files

/// Parses "user<TAB>item[<TAB>ignored]" lines. Blank and '#' lines are skipped;
/// duplicates are preserved.
inline std::vector<RawPair> parse_interactions(std::istream& in, const std::string& source = "<stream>") {
    std::vector<RawPair> pairs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (line.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError(source + ":" + std::to_string(lineno) + ": expected user<TAB>item");
        const auto tab2 = line.find('\t', tab + 1);
        std::string user = line.substr(0, tab);
        std::string item = line.substr(tab + 1, tab2 == std::string::npos ? std::string::npos : tab2 - tab - 1);
        if (user.empty() || item.empty())
            throw DataError(source + ":" + std::to_string(lineno) + ": empty user or item token");
        pairs.push_back({std::move(user), std::move(item)});
    }
    if (pairs.empty()) throw DataError(source + ": no interactions");
    return pairs;
}

inline std::vector<RawPair> load_interactions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return parse_interactions(in, path);
}

/// First-occurrence order is kept.
inline std::vector<RawPair> dedup_pairs(const std::vector<RawPair>& pairs) {
    std::unordered_set<std::string> seen;
    std::vector<RawPair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        std::string key = p.user;
        key.push_back('\0');
        key += p.item;
        if (seen.insert(std::move(key)).second) out.push_back(p);
    }
    return out;
}

/// Iteratively drops users and items with fewer than k interactions.
inline std::vector<RawPair> apply_k_core(const std::vector<RawPair>& pairs, Index k) {
    require(k >= 1, "k-core threshold must be >= 1");
    std::vector<RawPair> cur = dedup_pairs(pairs);
    while (true) {
        std::unordered_map<std::string_view, Index> du, di;
        for (const auto& p : cur) {
            ++du[p.user];
            ++di[p.item];
        }
        std::vector<RawPair> next;
        next.reserve(cur.size());
        for (const auto& p : cur)
            if (du[p.user] >= k && di[p.item] >= k) next.push_back(p);
        if (next.size() == cur.size()) break;
        cur = std::move(next);
    }
    if (cur.empty()) throw DataError("dataset eliminated by k-core");
    return cur;
}

namespace detail {

inline bool is_unsigned_integer(const std::string& s) {
    if (s.empty() || s.size() > 18) return false;
    return std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

/// Numeric order when every token is a non-negative integer, lexicographic otherwise.
inline std::vector<std::string> ordered_tokens(std::vector<std::string> toks) {
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    if (std::all_of(toks.begin(), toks.end(), is_unsigned_integer)) {
        std::stable_sort(toks.begin(), toks.end(), [](const std::string& a, const std::string& b) {
            return std::stoll(a) < std::stoll(b);
        });
    }
    return toks;
}

/// Portable bounded draw (std distributions are implementation-defined).
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do x = rng();
    while (x >= limit);
    return x % n;
}

}  // namespace detail

struct SplitRatios {
    double train = 8;
    double val = 1;
    double test = 1;
};

/// Global random split, then a repair pass moving one val/test pair of any
/// train-less user back into train.
inline InteractionDataset split_dataset(const std::vector<RawPair>& pairs_in, SplitRatios ratios, std::uint64_t seed) {
    const auto pairs = dedup_pairs(pairs_in);
    if (pairs.size() < 3) throw DataError("need at least 3 interactions to split");
    require(ratios.train > 0 && ratios.val >= 0 && ratios.test >= 0, "split ratios must be positive");

    InteractionDataset ds;
    {
        std::vector<std::string> us, is;
        for (const auto& p : pairs) {
            us.push_back(p.user);
            is.push_back(p.item);
        }
        ds.user_ids = IdMap(detail::ordered_tokens(std::move(us)));
        ds.item_ids = IdMap(detail::ordered_tokens(std::move(is)));
    }
    ds.n_users = ds.user_ids.size();
    ds.n_items = ds.item_ids.size();

    std::vector<Interaction> all;
    all.reserve(pairs.size());
    for (const auto& p : pairs) all.push_back({ds.user_ids.at(p.user), ds.item_ids.at(p.item)});
    std::sort(all.begin(), all.end());

    std::mt19937_64 rng(seed);
    for (std::size_t i = all.size() - 1; i > 0; --i) std::swap(all[i], all[detail::bounded(rng, i + 1)]);

    const double total = ratios.train + ratios.val + ratios.test;
    const auto n = static_cast<double>(all.size());
    auto portion = [&](double r) -> std::size_t {
        if (r <= 0) return 0;
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * r / total)));
    };
    const std::size_t n_val = portion(ratios.val);
    const std::size_t n_test = portion(ratios.test);
    const std::size_t n_train = all.size() - n_val - n_test;

    ds.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.val.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                  all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    ds.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), all.end());

    std::vector<bool> has_train(static_cast<std::size_t>(ds.n_users), false);
    for (const auto& p : ds.train) has_train[static_cast<std::size_t>(p.user)] = true;
    for (auto* split : {&ds.val, &ds.test}) {
        std::vector<Interaction> kept;
        for (const auto& p : *split) {
            if (!has_train[static_cast<std::size_t>(p.user)]) {
                ds.train.push_back(p);
                has_train[static_cast<std::size_t>(p.user)] = true;
            } else {
                kept.push_back(p);
            }
        }
        *split = std::move(kept);
    }

    ds.train_adjacency = ds.adjacency(ds.train);
    return ds;
}

// ---------------------------------------------------------------------------
// feature matrices

inline constexpr std::uint32_t kFeatureVersion = 1;

template <typename Scalar>
void check_features_finite(const Matrix<Scalar>& m, const std::string& source) {
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c)
            if (!std::isfinite(m(r, c)))
                throw DataError(source + ": non-finite entry at row " + std::to_string(r) + ", col " + std::to_string(c));
}

inline void save_feature_matrix(const std::string& path, const MatrixF& m) {
    auto out = io::open_out(path);
    out.write("MMFT", 4);
    io::write_pod(out, kFeatureVersion);
    io::write_pod(out, static_cast<std::uint64_t>(m.rows()));
    io::write_pod(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!out) throw DataError("write failed: " + path);
}

inline MatrixF parse_feature_text(std::istream& in, const std::string& source) {
    std::vector<std::vector<float>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        std::vector<float> row;
        std::string tok;
        while (ls >> tok) {
            char* end = nullptr;
            const float v = std::strtof(tok.c_str(), &end);
            if (end == tok.c_str() || *end != '\0')
                throw DataError(source + ": bad number '" + tok + "' on row " + std::to_string(rows.size()));
            row.push_back(v);
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw DataError(source + ": ragged row " + std::to_string(rows.size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError(source + ": empty feature file");
    MatrixF m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    return m;
}

/// Reads the binary MMFT format, or whitespace-separated text when the magic is absent.
inline MatrixF read_feature_matrix(const std::string& path) {
    auto in = io::open_in(path);
    char magic[4] = {};
    in.read(magic, 4);
    MatrixF m;
    if (in && std::string_view(magic, 4) == "MMFT") {
        const auto version = io::read_pod<std::uint32_t>(in, path);
        if (version != kFeatureVersion) throw DataError(path + ": unsupported feature version " + std::to_string(version));
        const auto rows = io::read_pod<std::uint64_t>(in, path);
        const auto cols = io::read_pod<std::uint64_t>(in, path);
        m.resize(static_cast<Index>(rows), static_cast<Index>(cols));
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(rows * cols * sizeof(float)));
        if (!in) throw DataError(path + ": truncated feature payload");
    } else {
        in.clear();
        in.seekg(0);
        m = parse_feature_text(in, path);
    }
    check_features_finite(m, path);
    return m;
}

inline MatrixF load_feature_matrix(const std::string& path, Index expected_rows) {
    MatrixF m = read_feature_matrix(path);
    if (m.rows() != expected_rows)
        throw DataError(path + ": expected " + std::to_string(expected_rows) + " rows, found " + std::to_string(m.rows()));
    return m;
}

/// Aligns a feature file with the dataset's item indices. Row r belongs to item
/// index r when the row count equals n_items; a larger file indexed by integer
/// item tokens (the raw catalog) is gathered by token value.
inline MatrixF load_item_features(const std::string& path, const InteractionDataset& ds) {
    MatrixF m = read_feature_matrix(path);
    if (m.rows() == ds.n_items) return m;
    const auto& toks = ds.item_ids.tokens();
    const bool numeric = std::all_of(toks.begin(), toks.end(), detail::is_unsigned_integer);
    if (numeric && m.rows() > ds.n_items) {
        MatrixF out(ds.n_items, m.cols());
        for (Index i = 0; i < ds.n_items; ++i) {
            const auto row = std::stoll(toks[static_cast<std::size_t>(i)]);
            if (row >= m.rows()) throw DataError(path + ": item token " + toks[static_cast<std::size_t>(i)] + " beyond feature rows");
            out.row(i) = m.row(row);
        }
        return out;
    }
    throw DataError(path + ": expected " + std::to_string(ds.n_items) + " rows, found " + std::to_string(m.rows()));
}

/// Row u is the mean of the item rows over u's train items (zero if none).
template <typename Scalar>
Matrix<Scalar> derive_user_features(const InteractionDataset& ds, const Matrix<Scalar>& items) {
    if (items.rows() != ds.n_items) throw DataError("item feature rows do not match n_items");
    Matrix<Scalar> users = Matrix<Scalar>::Zero(ds.n_users, items.cols());
    parallel_for(ds.n_users, [&](Index u) {
        const auto& adj = ds.train_adjacency[static_cast<std::size_t>(u)];
        if (adj.empty()) return;
        Vector<double> acc = Vector<double>::Zero(items.cols());
        for (Index i : adj) acc += items.row(i).transpose().template cast<double>();
        users.row(u) = (acc / static_cast<double>(adj.size())).transpose().template cast<Scalar>();
    });
    return users;
}

template <typename Scalar>
ModalFeatures<Scalar> make_modal_features(const InteractionDataset& ds, Modality m, Matrix<Scalar> items) {
    ModalFeatures<Scalar> f;
    f.modality = m;
    f.user_matrix = derive_user_features(ds, items);
    f.item_matrix = std::move(items);
    return f;
}

inline void save_id_map(const std::string& path, const IdMap& map) {
    auto out = io::open_out(path);
    out << map.to_json().dump() << '\n';
}

inline IdMap load_id_map(const std::string& path) {
    auto in = io::open_in(path);
    return IdMap::from_json(nlohmann::json::parse(in));
}

}  // namespace rearm
