#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <map>

using namespace rearm;

namespace {

std::vector<Triplet> micro_batch(const fixture::Micro<double>& m, std::uint64_t seed = 9) {
    std::mt19937_64 rng(seed);
    return sample_triplets(*m.ds, 16, rng);
}

void expect_gradients_match(const fixture::Micro<double>& m) {
    for (const auto& r : gradcheck::check(m, micro_batch(m)))
        EXPECT_TRUE(gradcheck::passes(r)) << r.name << " rel " << r.rel_error << " abs " << r.abs_error;
}

}  // namespace

TEST(Gradient, FullModelEveryTensor) { expect_gradients_match(gradcheck::instance()); }

TEST(Gradient, WithoutMetaNetwork) { expect_gradients_match(gradcheck::instance(Ablation::parse({"wo_meta"}), 2)); }

TEST(Gradient, WithoutHomographAndRowSoftmax) {
    auto m = gradcheck::instance(Ablation::parse({"wo_hom"}), 3);
    m.hp.softmax_axis = SoftmaxAxis::rows;
    expect_gradients_match(m);
}

TEST(Gradient, DeeperPropagation) {
    auto m = gradcheck::instance({}, 4);
    m.hp.gcn_layers = 3;
    m.hp.homograph.layers = 2;
    m.graphs = std::make_unique<GraphSet>(build_graph_set(*m.ds, *m.features, m.hp.homograph));
    expect_gradients_match(m);
}

TEST(Sampler, ForcedNegativeAndNeverOwned) {
    // user 0 owns every item but 3
    const auto ds = oracle::train_only({{"0", "0"}, {"0", "1"}, {"0", "2"}, {"1", "3"}}, 2, 4);
    std::mt19937_64 rng(1);
    for (const auto& t : sample_triplets(ds, 200, rng)) {
        if (t.user == 0) {
            EXPECT_EQ(t.neg, 3);
        }
        const auto& own = ds.train_adjacency[static_cast<std::size_t>(t.user)];
        EXPECT_FALSE(std::binary_search(own.begin(), own.end(), t.neg));
        EXPECT_TRUE(std::binary_search(own.begin(), own.end(), t.pos));
    }
    const auto full = oracle::train_only({{"0", "0"}, {"0", "1"}}, 1, 2);
    EXPECT_THROW(sample_triplets(full, 1, rng), DataError);
}

TEST(Sampler, NegativesUniformOverUnownedItems) {
    const auto ds = oracle::train_only({{"0", "0"}, {"0", "1"}}, 1, 6);
    std::mt19937_64 rng(7);
    std::map<Index, double> counts;
    const int n = 8000;
    for (const auto& t : sample_triplets(ds, n, rng)) counts[t.neg] += 1;
    ASSERT_EQ(counts.size(), 4u);
    double chi2 = 0;
    for (const auto& [_, c] : counts) chi2 += (c - n / 4.0) * (c - n / 4.0) / (n / 4.0);
    EXPECT_LT(chi2, 16.27);  // df = 3, p = 0.001
}

TEST(Sampler, DeterministicPerSeed) {
    auto m = fixture::micro<double>();
    std::mt19937_64 a(5), b(5), c(6);
    const auto x = sample_triplets(*m.ds, 50, a);
    EXPECT_EQ(x, sample_triplets(*m.ds, 50, b));
    EXPECT_NE(x, sample_triplets(*m.ds, 50, c));
}

TEST(Bpr, UnitValues) {
    const std::vector<double> z{0.0, 0.0}, one{1.0}, zero1{0.0}, big{40.0};
    EXPECT_NEAR(bpr_loss<double>(z, z), std::log(2.0), 1e-9);
    EXPECT_NEAR(bpr_loss<double>(one, zero1), 0.3133, 1e-4);
    EXPECT_LT(bpr_loss<double>(big, zero1), 1e-12);
    const std::vector<double> neg_big{-800.0};
    EXPECT_NEAR(bpr_loss<double>(zero1, std::vector<double>{800.0}), 800.0, 1e-9);
    EXPECT_TRUE(std::isfinite(bpr_loss<double>(neg_big, zero1)));
    EXPECT_THROW(bpr_loss<double>(z, one), DataError);
}

TEST(Bpr, RandomMatchesOracle) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0, 3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> pos(1 + trial % 9), neg(pos.size());
        for (std::size_t k = 0; k < pos.size(); ++k) {
            pos[k] = g(rng);
            neg[k] = g(rng);
        }
        EXPECT_NEAR(bpr_loss<double>(pos, neg), oracle::bpr(pos, neg), 1e-12);
    }
}

TEST(TotalLoss, Combinations) {
    EXPECT_DOUBLE_EQ(total_loss(0.7, 5, 9, 100, {0, 0, 0}, 4), 0.7);
    EXPECT_DOUBLE_EQ(total_loss(0, 0, 0, 25, {0, 0, 1}, 5), 5.0);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 2);
    for (int trial = 0; trial < 50; ++trial) {
        const double b = u(rng), c = u(rng), o = u(rng), s = u(rng), l1 = u(rng), l2 = u(rng), l3 = u(rng);
        EXPECT_NEAR(total_loss(b, c, o, s, {l1, l2, l3}, 8), b + l1 * c + l2 * o + l3 * s / 8.0, 1e-12);
    }
    EXPECT_THROW(total_loss(0, 0, 0, 0, {-1, 0, 0}, 1), ConfigError);
}

TEST(TotalLoss, WithoutOrthogonalDropsTheTerm) {
    auto m = gradcheck::instance(Ablation::parse({"wo_ort"}));
    const auto l = loss_and_grad<double>(m.context(), m.init(), micro_batch(m), 0, nullptr);
    EXPECT_GT(l.ort, 0.0);
    EXPECT_NEAR(l.total, l.bpr + m.hp.lambda_cl * l.cl + l.reg, 1e-12);
}

TEST(TrainStep, ZeroLearningRateLeavesParametersUnchanged) {
    auto m = fixture::micro<float>();
    m.hp.learning_rate = 0;
    const auto init = m.init();
    Trainer<float> t(m.context(), init);
    for (int s = 0; s < 3; ++s) t.train_step(t.sample(16));
    EXPECT_EQ(t.params(), init);
}

TEST(TrainStep, IdenticalStateGivesIdenticalSteps) {
    auto m = fixture::micro<float>();
    m.hp.dropout = 0.2;
    Trainer<float> a(m.context(), m.init()), b(m.context(), m.init());
    for (int s = 0; s < 4; ++s) {
        const auto ra = a.train_step(a.sample(16));
        const auto rb = b.train_step(b.sample(16));
        EXPECT_EQ(ra.loss.total, rb.loss.total);
        EXPECT_EQ(ra.grad_norm, rb.grad_norm);
    }
    EXPECT_EQ(a.params(), b.params());
}

TEST(TrainStep, SmallStepDecreasesBatchLoss) {
    auto m = fixture::micro<double>();
    m.hp.learning_rate = 1e-4;
    m.hp.dropout = 0;
    const auto batch = micro_batch(m);
    Trainer<double> t(m.context(), m.init());
    const double before = loss_and_grad<double>(m.context(), t.params(), batch, 0, nullptr).total;
    t.train_step(batch);
    const double after = loss_and_grad<double>(m.context(), t.params(), batch, 0, nullptr).total;
    EXPECT_LT(after, before);
}

TEST(TrainStep, NonFiniteLossNamesTheTensor) {
    auto m = fixture::micro<double>();
    auto p = m.init();
    p.item_id(0, 0) = std::numeric_limits<double>::quiet_NaN();
    try {
        loss_and_grad<double>(m.context(), p, micro_batch(m), 0, nullptr);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
        EXPECT_EQ(e.kind(), ErrorKind::numeric);
    }
}

TEST(EarlyStoppingRule, StopsAfterPatienceStaleEpochs) {
    EarlyStopping s(3);
    const std::vector<double> seq{0.1, 0.2, 0.2, 0.15, 0.19, 0.3};
    std::vector<bool> best;
    Index stopped_at = 0;
    for (std::size_t e = 0; e < seq.size(); ++e) {
        best.push_back(s.observe(seq[e]));
        if (s.should_stop()) {
            stopped_at = static_cast<Index>(e + 1);
            break;
        }
    }
    EXPECT_EQ(stopped_at, 5);
    EXPECT_EQ(s.best_epoch(), 2);
    EXPECT_EQ(best, (std::vector<bool>{true, true, false, false, false}));
    EXPECT_THROW(EarlyStopping(0), ConfigError);
}

TEST(Fit, MonotonicallyWorseningValidationReturnsFirstEpoch) {
    fixture::MicroSpec spec;
    spec.with_split = true;
    spec.n_users = 10;
    spec.n_items = 12;
    auto m = fixture::micro<float>(spec);
    m.hp.patience = 4;
    m.hp.epochs = 100;
    m.hp.learning_rate = 0.05;
    FitOptions opt;
    opt.validation_override = [](Index epoch) { return std::pair{1.0 / static_cast<double>(epoch), 0.0}; };
    const auto init = m.init();
    const auto res = fit(m.context(), init, opt);
    EXPECT_EQ(res.history.size(), 5u);
    EXPECT_EQ(res.best_epoch, 1);

    // the snapshot is the parameter state after exactly one epoch
    m.hp.epochs = 1;
    const auto after_one = fit(m.context(), init, opt);
    EXPECT_EQ(res.best, after_one.best);
    EXPECT_FALSE(res.best == init);
}

TEST(Fit, ZeroEpochsReturnsInitialParameters) {
    fixture::MicroSpec spec;
    spec.with_split = true;
    spec.n_users = 10;
    spec.n_items = 12;
    auto m = fixture::micro<float>(spec);
    m.hp.epochs = 0;
    const auto init = m.init();
    const auto res = fit(m.context(), init);
    EXPECT_TRUE(res.history.empty());
    EXPECT_EQ(res.best, init);
}

TEST(Fit, SeededRunsHaveIdenticalHistory) {
    fixture::MicroSpec spec;
    spec.with_split = true;
    spec.n_users = 12;
    spec.n_items = 14;
    auto m = fixture::micro<float>(spec);
    m.hp.epochs = 4;
    m.hp.learning_rate = 0.01;
    const auto a = fit(m.context(), m.init());
    const auto b = fit(m.context(), m.init());
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e) EXPECT_EQ(a.history[e].to_json().dump(), b.history[e].to_json().dump());
    EXPECT_EQ(a.best, b.best);
    for (const auto* t : a.best.tensors()) EXPECT_TRUE(t->allFinite());
}

TEST(Defaults, MatchProtocol) {
    const HyperParams hp;
    EXPECT_EQ(hp.dim, 64);
    EXPECT_EQ(hp.batch_size, 2048);
    EXPECT_EQ(hp.patience, 20);
    EXPECT_EQ(hp.epochs, 2000);
    EXPECT_DOUBLE_EQ(hp.learning_rate, 1e-3);
    EXPECT_EQ(hp.gcn_layers, 4);
    EXPECT_DOUBLE_EQ(hp.tau, 0.2);
    EXPECT_DOUBLE_EQ(hp.lambda_cl, 0.01);
    EXPECT_DOUBLE_EQ(hp.lambda_ort, 0.01);
    EXPECT_EQ(hp.rank, 4);
    EXPECT_EQ(hp.homograph.top_k_co, 10);
    EXPECT_EQ(hp.homograph.layers, 1);
    EXPECT_EQ(hp.eval_topk, (std::vector<Index>{10, 20}));
    EXPECT_NO_THROW(hp.validate());
    auto bad = hp;
    bad.rank = 64;
    EXPECT_THROW(bad.validate(), ConfigError);
}
