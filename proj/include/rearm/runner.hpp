#pragma once

#include "rearm/checkpoint.hpp"
#include "rearm/config.hpp"
#include "rearm/synthetic.hpp"
#include "rearm/train.hpp"

#include <filesystem>
#include <iostream>
#include <ostream>

namespace rearm {

namespace fs = std::filesystem;

struct PreparedData {
    InteractionDataset ds;
    FeatureSet<float> features;
};

inline PreparedData prepare_data(const RunConfig& cfg) {
    cfg.validate_inputs();
    PreparedData d;
    const auto raw = load_interactions(cfg.str("interactions"));
    d.ds = split_dataset(apply_k_core(raw, cfg.integer("k_core")), {}, static_cast<std::uint64_t>(cfg.integer("split_seed")));
    d.features = make_feature_set<float>(d.ds, load_item_features(cfg.str("visual_features"), d.ds),
                                         load_item_features(cfg.str("textual_features"), d.ds));
    return d;
}

inline std::uint64_t file_digest(const std::string& path) {
    auto in = io::open_in(path);
    Fnv1a h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.bytes(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.value();
}

/// Covers every input that changes graph numerics.
inline std::uint64_t graph_digest(const RunConfig& cfg, const HomographConfig& h) {
    Fnv1a d;
    d.add(std::string_view("rearm-graphs-v1"));
    for (const char* key : {"interactions", "visual_features", "textual_features"}) d.add(file_digest(cfg.str(key)));
    d.add(cfg.integer("k_core")).add(cfg.integer("split_seed"));
    d.add(h.top_k_co).add(h.top_k_sem).add(h.alpha_co_user).add(h.alpha_co_item);
    for (double a : h.alpha_modal_user) d.add(a);
    for (double a : h.alpha_modal_item) d.add(a);
    return d.value();
}

struct GraphBuild {
    GraphSet graphs;
    bool cache_hit = false;
    std::string dir;
};

namespace detail {

inline const std::vector<std::pair<const char*, SparseGraph GraphSet::*>>& cached_graphs() {
    static const std::vector<std::pair<const char*, SparseGraph GraphSet::*>> g{
        {"user_co", &GraphSet::user_co},       {"user_sem", &GraphSet::user_sem},
        {"item_co", &GraphSet::item_co},       {"item_sem", &GraphSet::item_sem},
        {"user_fused", &GraphSet::user_fused}, {"item_fused", &GraphSet::item_fused},
    };
    return g;
}

inline GraphKind kind_of(const std::string& name) {
    if (name.ends_with("_co")) return GraphKind::cooccurrence;
    if (name.ends_with("_sem")) return GraphKind::semantic;
    return GraphKind::fused;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    auto out = io::open_out(path.string());
    out << j.dump(2) << '\n';
}

inline void write_manifest(const fs::path& out_dir, const std::string& command, const RunConfig& cfg,
                           const std::vector<std::string>& files, std::uint64_t dataset_digest) {
    write_json(out_dir / "manifest.json", {{"command", command},
                                           {"files", files},
                                           {"dataset_digest", hex_digest(dataset_digest)},
                                           {"config", cfg.values()}});
}

}  // namespace detail

/// Builds (or loads from cache) the homogeneous graphs and the bipartite graph.
inline GraphBuild build_graphs_cached(const RunConfig& cfg, const PreparedData& data, const HomographConfig& h,
                                      std::ostream& log) {
    const std::uint64_t digest = graph_digest(cfg, h);
    const fs::path dir = fs::path(cfg.cache_dir()) / ("graphs-" + hex_digest(digest));
    GraphBuild out;
    out.dir = dir.string();

    const fs::path stamp = dir / "digest.json";
    bool hit = fs::is_regular_file(stamp) && fs::is_regular_file(dir / "bipartite.csrg");
    for (const auto& [name, _] : detail::cached_graphs()) hit = hit && fs::is_regular_file(dir / (std::string(name) + ".csrg"));
    if (hit) {
        std::ifstream in(stamp);
        hit = nlohmann::json::parse(in, nullptr, false).value("digest", "") == hex_digest(digest);
    }
    try {
        if (hit) {
            for (const auto& [name, member] : detail::cached_graphs())
                out.graphs.*member = load_graph((dir / (std::string(name) + ".csrg")).string(), detail::kind_of(name));
            out.graphs.bipartite =
                BipartiteGraph::from_sparse_graph(load_graph((dir / "bipartite.csrg").string(), GraphKind::bipartite), data.ds.n_users);
            if (out.graphs.user_fused.n != data.ds.n_users || out.graphs.item_fused.n != data.ds.n_items)
                throw DataError("cached graphs do not match the dataset");
            out.graphs.finalize();
            out.cache_hit = true;
            log << "build-graphs: cache hit (" << dir.string() << ")\n";
            return out;
        }
    } catch (const DataError& e) {
        log << "build-graphs: cache unreadable, rebuilding (" << e.what() << ")\n";
    }

    try {
        out.graphs = build_graph_set(data.ds, data.features, h);
    } catch (const Error& e) {
        throw DataError(std::string("build-graphs: construction failed: ") + e.what());
    }
    fs::create_directories(dir);
    for (const auto& [name, member] : detail::cached_graphs())
        save_graph((dir / (std::string(name) + ".csrg")).string(), out.graphs.*member);
    save_graph((dir / "bipartite.csrg").string(), out.graphs.bipartite.to_sparse_graph());
    save_id_map((dir / "user_ids.json").string(), data.ds.user_ids);
    save_id_map((dir / "item_ids.json").string(), data.ds.item_ids);
    detail::write_json(stamp, {{"digest", hex_digest(digest)},
                               {"n_users", data.ds.n_users},
                               {"n_items", data.ds.n_items},
                               {"top_k_co", h.top_k_co},
                               {"top_k_sem", h.top_k_sem},
                               {"alpha_co_user", h.alpha_co_user},
                               {"alpha_co_item", h.alpha_co_item}});
    log << "build-graphs: built " << data.ds.n_users << " users x " << data.ds.n_items << " items into " << dir.string()
        << "\n";
    return out;
}

inline GraphBuild cmd_build_graphs(const RunConfig& cfg, std::ostream& log = std::cout) {
    const auto hp = cfg.hyperparams();
    const auto data = prepare_data(cfg);
    return build_graphs_cached(cfg, data, hp.homograph, log);
}

struct TrainOutcome {
    FitResult<float> fit;
    EvalReport val, test;
    std::uint64_t dataset_digest = 0;
};

inline std::vector<std::string> history_lines(const std::vector<EpochRecord>& h) {
    std::vector<std::string> out;
    for (const auto& r : h) out.push_back(r.to_json().dump());
    return out;
}

inline TrainOutcome cmd_train(const RunConfig& cfg, std::ostream& log = std::cout) {
    const auto hp = cfg.hyperparams();
    const auto ablation = cfg.ablation();
    const fs::path out_dir = cfg.str("out");
    const auto data = prepare_data(cfg);
    const auto graphs = build_graphs_cached(cfg, data, hp.homograph, log);
    fs::create_directories(out_dir);

    ModelContext<float> ctx{&data.ds, &graphs.graphs, &data.features, hp, ablation};
    auto init = init_params<float>(data.ds.n_users, data.ds.n_items,
                                   {data.features.modal[0].dim(), data.features.modal[1].dim()}, hp);

    auto hist_out = io::open_out((out_dir / "history.jsonl").string());
    FitOptions opt;
    opt.record_time = cfg.flag("record_time");
    opt.on_epoch = [&](const EpochRecord& r) {
        hist_out << r.to_json().dump() << '\n';
        hist_out.flush();
        log << "epoch " << r.epoch << " loss " << r.loss << " val R@20 " << r.val_recall20 << "\n";
    };

    TrainOutcome res;
    res.fit = fit(ctx, std::move(init), opt);
    res.dataset_digest = data.ds.digest();
    res.val = evaluate(ctx, res.fit.best, Split::val);
    res.test = evaluate(ctx, res.fit.best, Split::test);

    save_checkpoint((out_dir / "checkpoint.rearm").string(),
                    {hp, ablation, res.dataset_digest, res.fit.best_epoch, res.fit.best});
    nlohmann::json rep = res.val.to_json();
    for (auto& e : res.test.to_json()) rep.push_back(e);
    detail::write_json(out_dir / "report.json", rep);
    detail::write_manifest(out_dir, "train", cfg, {"checkpoint.rearm", "history.jsonl", "report.json"}, res.dataset_digest);
    log << "train: best epoch " << res.fit.best_epoch << "; test R@20 " << res.test.at(20).recall << "\n";
    return res;
}

struct LoadedModel {
    PreparedData data;
    GraphBuild graphs;
    Checkpoint ck;
};

/// Loads a checkpoint and the graphs it was trained against; refuses
/// checkpoints bound to a different dataset.
inline LoadedModel load_model(const RunConfig& cfg, const std::string& checkpoint, std::ostream& log) {
    LoadedModel m;
    m.data = prepare_data(cfg);
    m.ck = load_checkpoint(checkpoint);
    if (m.ck.dataset_digest != m.data.ds.digest())
        throw DataError("checkpoint " + checkpoint + " was trained on a different dataset (digest " +
                        hex_digest(m.ck.dataset_digest) + " vs " + hex_digest(m.data.ds.digest()) + ")");
    m.graphs = build_graphs_cached(cfg, m.data, m.ck.hp.homograph, log);
    return m;
}

inline std::string default_checkpoint(const RunConfig& cfg, const std::string& key = "checkpoint") {
    const auto& c = cfg.str(key);
    return c.empty() ? (fs::path(cfg.str("out")) / "checkpoint.rearm").string() : c;
}

inline std::pair<EvalReport, EvalReport> cmd_evaluate(const RunConfig& cfg, std::ostream& log = std::cout) {
    const auto m = load_model(cfg, default_checkpoint(cfg), log);
    ModelContext<float> ctx{&m.data.ds, &m.graphs.graphs, &m.data.features, m.ck.hp, m.ck.ablation};
    auto val = evaluate(ctx, m.ck.params, Split::val);
    auto test = evaluate(ctx, m.ck.params, Split::test);
    const fs::path out_dir = cfg.str("out");
    fs::create_directories(out_dir);
    nlohmann::json rep = val.to_json();
    for (auto& e : test.to_json()) rep.push_back(e);
    detail::write_json(out_dir / "eval_report.json", rep);
    log << rep.dump(2) << "\n";
    return {std::move(val), std::move(test)};
}

inline MatrixD cmd_diff_matrix(const RunConfig& cfg, std::ostream& log = std::cout) {
    if (cfg.str("checkpoint_b").empty()) throw ConfigError("diff-matrix needs checkpoint_b");
    const auto a = load_model(cfg, default_checkpoint(cfg), log);
    const auto b = load_model(cfg, cfg.str("checkpoint_b"), log);
    ModelContext<float> ca{&a.data.ds, &a.graphs.graphs, &a.data.features, a.ck.hp, a.ck.ablation};
    ModelContext<float> cb{&b.data.ds, &b.graphs.graphs, &b.data.features, b.ck.hp, b.ck.ablation};
    const auto users = cfg.index_list("diff_users");
    const auto items = cfg.index_list("diff_items");
    const auto diff = score_difference_matrix(final_representations(ca, a.ck.params), final_representations(cb, b.ck.params),
                                              users, items);
    const fs::path out_dir = cfg.str("out");
    fs::create_directories(out_dir);
    auto out = io::open_out((out_dir / "diff_matrix.tsv").string());
    write_difference_tsv(out, diff, users, items);
    log << "diff-matrix: wrote " << (out_dir / "diff_matrix.tsv").string() << "\n";
    return diff;
}

struct AblationRow {
    std::string variant;
    EvalReport val, test;
    Index best_epoch = 0;
};

/// Trains the full model and every ablation variant with a shared seed.
inline std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, std::ostream& log = std::cout) {
    if (!cfg.list("ablation").empty()) throw ConfigError("ablate runs every variant; leave 'ablation' empty");
    const fs::path out_dir = cfg.str("out");
    std::vector<AblationRow> rows;
    for (const auto& v : Ablation::variant_names()) {
        RunConfig vc = cfg;
        vc.set("ablation", v == "full" ? "" : v);
        vc.set("out", (out_dir / "ablate" / v).string());
        log << "ablate: variant " << v << "\n";
        auto r = cmd_train(vc, log);
        rows.push_back({v, std::move(r.val), std::move(r.test), r.fit.best_epoch});
    }
    nlohmann::json table = nlohmann::json::array();
    std::ostringstream md;
    md << "| variant | split | K | recall | ndcg |\n|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        for (const auto* rep : {&r.val, &r.test})
            for (const auto& m : rep->metrics) {
                table.push_back({{"variant", r.variant}, {"split", rep->split}, {"K", m.k}, {"recall", m.recall},
                                 {"ndcg", m.ndcg}, {"best_epoch", r.best_epoch}});
                char buf[128];
                std::snprintf(buf, sizeof buf, "| %s | %s | %lld | %.4f | %.4f |\n", r.variant.c_str(), rep->split.c_str(),
                              static_cast<long long>(m.k), m.recall, m.ndcg);
                md << buf;
            }
    }
    fs::create_directories(out_dir);
    detail::write_json(out_dir / "ablation.json", table);
    auto mdo = io::open_out((out_dir / "ablation.md").string());
    mdo << md.str();
    detail::write_manifest(out_dir, "ablate", cfg, {"ablation.json", "ablation.md"}, 0);
    log << md.str();
    return rows;
}

/// Writes the synthetic block dataset plus a matching config file.
inline void cmd_synth(const std::string& dir, const SyntheticSpec& spec, std::ostream& log = std::cout) {
    fs::create_directories(dir);
    const auto data = make_block_dataset(spec);
    const fs::path d = dir;
    write_interactions((d / "interactions.tsv").string(), data.pairs);
    save_feature_matrix((d / "visual.mmft").string(), data.visual);
    save_feature_matrix((d / "textual.mmft").string(), data.textual);
    auto conf = io::open_out((d / "rearm.conf").string());
    conf << "# synthetic two-block dataset\n"
         << "interactions = " << (d / "interactions.tsv").string() << "\n"
         << "visual_features = " << (d / "visual.mmft").string() << "\n"
         << "textual_features = " << (d / "textual.mmft").string() << "\n"
         << "cache_dir = " << (d / "cache").string() << "\n"
         << "out = " << (d / "out").string() << "\n";
    log << "synth: " << data.pairs.size() << " interactions written to " << dir << "\n";
}

}  // namespace rearm
