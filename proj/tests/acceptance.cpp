// Acceptance suite: one PASS/FAIL line per criterion; nonzero exit if any fails.

#include "gradcheck.hpp"

#include "rearm/runner.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>

using namespace rearm;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const std::string& id, bool ok, const std::string& detail) {
    std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", id.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += !ok;
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double max_abs(const MatrixD& a, const MatrixD& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return std::numeric_limits<double>::infinity();
    return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------

void criterion_gradients() {
    const auto t0 = Clock::now();
    std::size_t tensors = 0, bad = 0;
    double worst = 0;
    std::string worst_name;
    const auto micro = gradcheck::instance();
    std::mt19937_64 rng(9);
    for (const auto& r : gradcheck::check(micro, sample_triplets(*micro.ds, 16, rng))) {
        ++tensors;
        bad += !gradcheck::passes(r);
        if (r.rel_error > worst) {
            worst = r.rel_error;
            worst_name = r.name;
        }
    }
    const double t = seconds_since(t0);
    std::ostringstream d;
    d << tensors << " tensors, " << bad << " over 1e-3, worst rel " << worst << " (" << worst_name << "), "
      << fmt("%.1f s", t);
    report("1 gradient suite", bad == 0 && tensors > 0 && t < 60, d.str());
}

// ---------------------------------------------------------------------------

struct OracleTally {
    Index instances = 0;
    double worst = 0;
    void add(double err) {
        ++instances;
        worst = std::max(worst, err);
    }
};

void criterion_oracles() {
    const auto t0 = Clock::now();
    std::map<std::string, OracleTally> tally;
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const Index n = 2 + trial % 12, m = 2 + (trial * 7) % 18;
        const auto ds = oracle::train_only(oracle::random_pairs(n, m, 0.3, rng), n, m);
        const Index k = 1 + trial % 5;

        tally["co-occurrence graph"].add(
            std::max(max_abs(build_cooccurrence_graph(ds, Side::item, k).to_dense(), oracle::cooccurrence(ds, true, k)),
                     max_abs(build_cooccurrence_graph(ds, Side::user, k).to_dense(), oracle::cooccurrence(ds, false, k))));

        const MatrixD f = oracle::random_matrix(m, 4, rng);
        tally["semantic kNN graph"].add(max_abs(build_semantic_graph(f, k).to_dense(), oracle::semantic(f, k)));

        const auto bip = build_bipartite(ds);
        const MatrixD adj = oracle::bipartite_adjacency(ds);
        tally["bipartite normalization"].add(max_abs(bip.to_sparse_graph().to_dense(), adj));

        const MatrixD e = oracle::random_matrix(n + m, 3, rng);
        const Index layers = trial % 5;
        const auto prop = propagate_bipartite<double>(bip, e.topRows(n), e.bottomRows(m), layers);
        MatrixD stacked(n + m, 3);
        stacked << prop.users, prop.items;
        tally["bipartite propagation"].add(max_abs(stacked, oracle::lightgcn(adj, e, layers)));

        const auto g = build_cooccurrence_graph(ds, Side::item, k);
        const MatrixD h = oracle::random_matrix(m, 6, rng);
        const Index hl = trial % 4;
        const auto hp = propagate_homograph(g, h, hl);
        MatrixD hs(m, 6);
        hs << hp.id, hp.visual, hp.textual;
        tally["homograph propagation"].add(max_abs(hs, oracle::homograph(g.to_dense(), h, hl)));

        const Index d = 2 + trial % 5, rows = 1 + trial % 20;
        const MatrixD xv = oracle::random_matrix(rows, d, rng), xt = oracle::random_matrix(rows, d, rng);
        AttentionParams<double> ap;
        for (int s = 0; s < 2; ++s)
            for (auto* w : {&ap.self[s], &ap.cross[s]})
                *w = {oracle::random_matrix(d, d, rng, 0.5), oracle::random_matrix(d, d, rng, 0.5),
                      oracle::random_matrix(d, d, rng, 0.5)};
        const auto sv = self_attention_block(xv, ap.self[0], AttentionConfig{});
        const auto [cv, ct] = cross_attention_block(xv, xt, ap.cross[0], ap.cross[1], AttentionConfig{});
        tally["attention blocks"].add(std::max(
            {max_abs(sv, oracle::attention_stage(xv, xv, ap.self[0].query, ap.self[0].key, ap.self[0].value)),
             max_abs(cv, oracle::attention_stage(xt, xv, ap.cross[1].query, ap.cross[0].key, ap.cross[0].value)),
             max_abs(ct, oracle::attention_stage(xv, xt, ap.cross[0].query, ap.cross[1].key, ap.cross[1].value))}));

        const MatrixD scores = oracle::random_matrix(n, m, rng);
        std::vector<std::vector<Index>> mask(static_cast<std::size_t>(n)), truth(static_cast<std::size_t>(n));
        for (Index u = 0; u < n; ++u)
            for (Index i = 0; i < m; ++i) {
                const auto r = rng() % 5;
                if (r == 0) mask[static_cast<std::size_t>(u)].push_back(i);
                if (r == 1) truth[static_cast<std::size_t>(u)].push_back(i);
            }
        Index kk = m;
        for (const auto& mk : mask) kk = std::min(kk, m - static_cast<Index>(mk.size()));
        const MatrixD unit = MatrixD::Identity(m, m);
        std::vector<std::vector<Index>> topk(static_cast<std::size_t>(n));
        for (Index u = 0; u < n; ++u)
            topk[static_cast<std::size_t>(u)] = rank_items(scores.row(u), unit, mask[static_cast<std::size_t>(u)], kk);
        double err = 0;
        if (kk > 0) {
            const auto rep = compute_metrics(topk, truth, {kk});
            const auto o = oracle::ranking_metrics(scores, mask, truth, kk);
            err = std::max(std::abs(rep.at(kk).recall - o.recall), std::abs(rep.at(kk).ndcg - o.ndcg));
        }
        tally["ranking metrics"].add(err);
    }
    const double t = seconds_since(t0);
    bool ok = t < 300;
    std::ostringstream d;
    for (const auto& [name, tl] : tally) {
        ok = ok && tl.instances >= 100 && tl.worst <= 1e-5;
        d << name << " " << tl.instances << "x max " << tl.worst << "; ";
    }
    d << fmt("%.1f s", t);
    report("2 oracle equivalence", ok, d.str());
}

// ---------------------------------------------------------------------------

void criterion_losses() {
    const std::vector<double> z{0.0};
    const double bpr = bpr_loss<double>(z, z);
    MatrixD one(1, 3);
    one << 0.4, -1.0, 2.0;
    const double cl1 = infonce_loss(one, one, 0.2);
    MatrixD a(2, 2), b(2, 2);
    a << 1, 0, 0, 1;
    b << 0, 2, -3, 0;
    const double ort = orthogonal_loss(a, b);
    const double cl2 = infonce_loss<double>(MatrixD::Identity(2, 2), MatrixD::Identity(2, 2), 1.0);
    const bool ok = std::abs(bpr - std::log(2.0)) <= 1e-9 && std::abs(cl1) <= 1e-9 && std::abs(ort) <= 1e-12 &&
                    std::abs(cl2 - 0.3133) <= 1e-4;
    std::ostringstream d;
    d.precision(12);
    d << "BPR(pos=neg) " << bpr << ", InfoNCE aligned " << cl1 << ", orthogonal " << ort << ", InfoNCE 2-row "
      << cl2;
    report("3 loss unit values", ok, d.str());
}

// ---------------------------------------------------------------------------

RunConfig synthetic_config(const fs::path& dir) {
    RunConfig cfg;
    cfg.load((dir / "rearm.conf").string());
    cfg.set("epochs", "50");
    cfg.set("batch_size", "1024");
    cfg.set("lr", "0.01");
    cfg.set("threads", "1");
    return cfg;
}

/// Expected Recall@K of a uniformly random ranking under the validation mask.
double random_recall(const InteractionDataset& ds, Index k) {
    const auto truth = ds.adjacency(ds.val);
    double sum = 0;
    Index users = 0;
    for (Index u = 0; u < ds.n_users; ++u) {
        const auto su = static_cast<std::size_t>(u);
        if (truth[su].empty()) continue;
        const double avail = static_cast<double>(ds.n_items - static_cast<Index>(ds.train_adjacency[su].size()));
        sum += std::min(1.0, static_cast<double>(k) / avail);
        ++users;
    }
    return sum / static_cast<double>(users);
}

void criterion_synthetic(const fs::path& root) {
    const auto t0 = Clock::now();
    set_threads(1);
    const fs::path dir = root / "synthetic";
    std::ostringstream sink;
    cmd_synth(dir.string(), SyntheticSpec{}, sink);

    std::vector<double> full, wo_hom;
    double untrained = 0, expect_random = 0;
    bool finite = true;
    for (int seed = 1; seed <= 3; ++seed) {
        for (const bool ablate : {false, true}) {
            auto cfg = synthetic_config(dir);
            cfg.set("seed", std::to_string(seed));
            cfg.set("ablation", ablate ? "wo_hom" : "");
            cfg.set("out", (root / ("synthetic-" + std::to_string(seed) + (ablate ? "-wo_hom" : ""))).string());
            const auto r = cmd_train(cfg, sink);
            (ablate ? wo_hom : full).push_back(r.val.at(10).recall);
            for (const auto* t : r.fit.best.tensors()) finite = finite && t->allFinite();
        }
    }
    {
        const auto cfg = synthetic_config(dir);
        const auto data = prepare_data(cfg);
        const auto hp = cfg.hyperparams();
        const auto graphs = build_graphs_cached(cfg, data, hp.homograph, sink);
        ModelContext<float> ctx{&data.ds, &graphs.graphs, &data.features, hp, {}};
        const auto init = init_params<float>(data.ds.n_users, data.ds.n_items,
                                             {data.features.modal[0].dim(), data.features.modal[1].dim()}, hp);
        untrained = evaluate(ctx, init, Split::val).at(10).recall;
        expect_random = random_recall(data.ds, 10);
    }
    const double t = seconds_since(t0);

    const bool reach = full[0] >= 0.8;
    bool lower = true;
    for (std::size_t s = 0; s < 3; ++s) lower = lower && wo_hom[s] < full[s];
    std::ostringstream d;
    d.precision(4);
    d << "full val R@10 " << full[0] << "; " << fmt("%.1f s", t) << " on one core";
    report("4a synthetic run reaches R@10 >= 0.8 within 10 min", reach && finite && t < 600, d.str());

    // Untrained score versus the random-ranking expectation under the same mask (K/M adjusted for masked items).
    std::ostringstream du;
    du.precision(4);
    du << "untrained val R@10 " << untrained << " vs random expectation " << expect_random << " (K/M = 0.1)";
    report("4b untrained model scores ~ K/M (|diff| <= 0.05)", std::abs(untrained - expect_random) <= 0.05, du.str());

    std::ostringstream dh;
    dh.precision(4);
    for (std::size_t s = 0; s < 3; ++s) dh << "seed " << s + 1 << ": full " << full[s] << " wo_hom " << wo_hom[s] << "; ";
    report("4c wo_hom strictly below full on 3 shared seeds", lower, dh.str());
}

// ---------------------------------------------------------------------------

RunConfig small_config(const fs::path& root) {
    const fs::path dir = root / "small";
    if (!fs::exists(dir / "rearm.conf")) {
        std::ostringstream sink;
        cmd_synth(dir.string(), SyntheticSpec{}, sink);
    }
    RunConfig cfg;
    cfg.load((dir / "rearm.conf").string());
    for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{
             {"d", "8"}, {"rank", "2"}, {"epochs", "3"}, {"patience", "5"}, {"batch_size", "512"}, {"gcn_layers", "2"},
             {"threads", "1"}})
        cfg.set(k, v);
    return cfg;
}

void criterion_ablation(const fs::path& root) {
    auto cfg = small_config(root);
    cfg.set("out", (root / "ablate").string());
    std::ostringstream sink;
    const auto rows = cmd_ablate(cfg, sink);
    std::vector<std::string> names;
    for (const auto& r : rows) names.push_back(r.variant);
    const bool all = names == Ablation::variant_names();

    auto composed = small_config(root);
    composed.set("ablation", "wo_meta,wo_ort");
    composed.set("out", (root / "wo_meta_ort").string());
    cmd_train(composed, sink);
    const fs::path ref = root / "ablate" / "ablate" / "wo_ref";
    const bool same_hist = fixture::slurp(ref / "history.jsonl") == fixture::slurp(root / "wo_meta_ort" / "history.jsonl");
    const bool same_params = load_checkpoint((ref / "checkpoint.rearm").string()).params ==
                             load_checkpoint((root / "wo_meta_ort" / "checkpoint.rearm").string()).params;
    std::ostringstream d;
    d << names.size() << " variants emitted; wo_ref vs wo_meta+wo_ort history " << (same_hist ? "identical" : "differs")
      << ", parameters " << (same_params ? "identical" : "differ");
    report("5 ablation structure", all && same_hist && same_params, d.str());
}

void criterion_determinism(const fs::path& root) {
    std::ostringstream sink;
    for (const char* out : {"det-a", "det-b"}) {
        auto cfg = small_config(root);
        cfg.set("out", (root / out).string());
        cmd_train(cfg, sink);
    }
    const bool hist = fixture::slurp(root / "det-a" / "history.jsonl") == fixture::slurp(root / "det-b" / "history.jsonl");
    const bool ck =
        fixture::slurp(root / "det-a" / "checkpoint.rearm") == fixture::slurp(root / "det-b" / "checkpoint.rearm");
    report("6 determinism", hist && ck,
           std::string("history ") + (hist ? "byte-identical" : "differs") + ", checkpoint " +
               (ck ? "byte-identical" : "differs"));
}

void criterion_defaults() {
    const HyperParams hp;
    const auto from_cfg = RunConfig{}.hyperparams();
    bool ok = hp.dim == 64 && hp.batch_size == 2048 && hp.patience == 20 && hp.epochs == 2000 &&
              from_cfg.dim == 64 && from_cfg.batch_size == 2048 && from_cfg.patience == 20 && from_cfg.epochs == 2000;

    // stop metric: R@20 falls every epoch while NDCG@20 rises; stopping must follow R@20
    fixture::MicroSpec spec;
    spec.with_split = true;
    spec.n_users = 10;
    spec.n_items = 12;
    auto m = fixture::micro<float>(spec);
    m.hp.patience = 20;
    m.hp.epochs = 2000;
    FitOptions opt;
    opt.validation_override = [](Index e) { return std::pair{1.0 / static_cast<double>(e), static_cast<double>(e)}; };
    const auto res = fit(m.context(), m.init(), opt);
    ok = ok && res.history.size() == 21 && res.best_epoch == 1;
    std::ostringstream d;
    d << "d=" << hp.dim << " batch=" << hp.batch_size << " patience=" << hp.patience << " epochs=" << hp.epochs
      << "; scripted falling R@20 stops at epoch " << res.history.size() << " with best epoch " << res.best_epoch;
    report("7 protocol defaults and R@20 stop metric", ok, d.str());
}

}  // namespace

int main() {
    const fs::path root = fs::temp_directory_path() / "rearm-acceptance";
    fs::remove_all(root);
    fs::create_directories(root);
    const auto t0 = Clock::now();
    try {
        criterion_gradients();
        criterion_oracles();
        criterion_losses();
        criterion_synthetic(root);
        criterion_ablation(root);
        criterion_determinism(root);
        criterion_defaults();
    } catch (const std::exception& e) {
        std::printf("FAIL acceptance aborted: %s\n", e.what());
        return 1;
    }
    std::printf("%d criteria failed; total %.1f s\n", failures, seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
