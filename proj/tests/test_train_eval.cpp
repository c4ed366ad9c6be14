#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "xbe/eval.hpp"
#include "xbe/train.hpp"

using namespace xbe;

namespace {

struct MicroWorld {
    SynthOutput data;
    CorpusIndex index;
    IndexedDataset train;
    IndexedDataset test;
    XbeConfig model_cfg;
};

MicroWorld micro_world(int pairs = 8, int bag_size = 3, int noise = 0, std::uint64_t seed = 3) {
    MicroWorld w;
    SynthSpec spec;
    spec.n_relations = 3;
    spec.pairs_per_relation = pairs;
    spec.templates_per_relation = 3;
    spec.bag_size = bag_size;
    spec.noise = noise;
    spec.seed = seed;
    w.data = synthesize_dataset(spec);
    const DsreDataset* splits[] = {&w.data.train, &w.data.test};
    w.index = CorpusIndex::build(splits);
    w.train = index_dataset(w.data.train, w.index);
    w.test = index_dataset(w.data.test, w.index);

    XbeConfig c;
    c.text = {2, 8, 2, 2, 24, w.index.text_vocab.size()};
    c.kg = {2, 8, 2, 2, 3, w.index.kg_layout().size()};
    c.stitch_layers = {1};
    c.lambda_s = 0.1;
    c.n_target_relations = w.index.n_target_relations();
    c.transe_dim = 4;
    w.model_cfg = c;
    return w;
}

TrainConfig quick_train(int epochs = 2) {
    TrainConfig t;
    t.lr = 3e-3;
    t.warmup_steps = 0;
    t.batch_size = 4;
    t.epochs = epochs;
    t.pretrain_epochs = 1;
    t.transe_epochs = 5;
    t.seed = 11;
    return t;
}

}  // namespace

TEST_CASE("adam with zero gradient moves parameters only through weight decay") {
    Tensor p = Tensor::param_full({3}, 2.0);
    TrainConfig cfg;
    cfg.lr = 0.1;
    cfg.warmup_steps = 0;
    cfg.weight_decay = 0.01;
    Adam opt({{"p", p}}, cfg);
    opt.step();
    for (double v : p.data()) CHECK(v == doctest::Approx(2.0 - 0.1 * 0.01 * 2.0).epsilon(1e-15));
}

TEST_CASE("adam first step matches the closed form on a scalar") {
    Tensor p = Tensor::param_full({1}, 0.7);
    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.warmup_steps = 0;
    cfg.weight_decay = 0.001;
    cfg.adam_eps = 1e-8;
    Adam opt({{"p", p}}, cfg);

    const double g = -0.3;
    p.mutable_grad()[0] = g;
    opt.step();

    // bias-corrected m̂ = g, v̂ = g² at t=1
    const double expect = 0.7 - 0.05 * (g / (std::fabs(g) + 1e-8) + 0.001 * 0.7);
    CHECK(p.at(0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("learning rate ramps linearly over warmup") {
    Tensor p = Tensor::param_full({1}, 1.0);
    TrainConfig cfg;
    cfg.lr = 0.2;
    cfg.warmup_steps = 10;
    Adam opt({{"p", p}}, cfg);
    for (int i = 0; i < 4; ++i) opt.step();  // next step is #5 = warmup/2
    CHECK(opt.next_lr() == doctest::Approx(0.1).epsilon(1e-15));
    for (int i = 0; i < 20; ++i) opt.step();
    CHECK(opt.next_lr() == doctest::Approx(0.2).epsilon(1e-15));  // holds after ramp
}

TEST_CASE("training reduces the mean loss on synthetic data") {
    MicroWorld w = micro_world();
    XbeModel model(w.model_cfg, w.index.kg_layout(), 5);
    auto log = train_xbe(model, w.train, quick_train(4));
    REQUIRE(log.epoch_mean_loss.size() == 4);
    CHECK(log.epoch_mean_loss.back() < log.epoch_mean_loss.front());
}

TEST_CASE("training is deterministic under its seed") {
    MicroWorld w = micro_world();
    XbeModel a(w.model_cfg, w.index.kg_layout(), 5);
    XbeModel b(w.model_cfg, w.index.kg_layout(), 5);
    auto la = train_xbe(a, w.train, quick_train());
    auto lb = train_xbe(b, w.train, quick_train());
    CHECK(la.epoch_mean_loss.back() == lb.epoch_mean_loss.back());
    auto pa = a.named_params();
    auto pb = b.named_params();
    for (std::size_t i = 0; i < pa.size(); ++i)
        for (std::size_t j = 0; j < pa[i].second.data().size(); ++j)
            CHECK(pa[i].second.data()[j] == pb[i].second.data()[j]);
}

TEST_CASE("freeze_kg leaves kg parameters bitwise unchanged by fine-tuning") {
    MicroWorld w = micro_world();
    XbeConfig cfg = w.model_cfg;
    cfg.ablate.freeze_kg = true;
    XbeModel model(cfg, w.index.kg_layout(), 7);

    TrainConfig t = quick_train();
    // snapshot after the pre-training phase, which freeze_kg still runs
    XbeModel probe(cfg, w.index.kg_layout(), 7);
    fit_transe(probe, w.train.triples, t);
    pretrain_kg(probe, w.train.triples, t);
    std::vector<double> before;
    for (auto& [name, p] : probe.named_params())
        if (XbeModel::is_kg_param(name)) before.insert(before.end(), p.data().begin(), p.data().end());

    train_xbe(model, w.train, t);
    std::vector<double> after;
    for (auto& [name, p] : model.named_params())
        if (XbeModel::is_kg_param(name)) after.insert(after.end(), p.data().begin(), p.data().end());

    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("ranked-list metrics match the hand oracle") {
    std::vector<RankedPrediction> cands = {
        {"a", "b", "r1", 0.9, true},
        {"c", "d", "r1", 0.8, false},
        {"e", "f", "r2", 0.7, true},
    };
    std::vector<int> pn = {1, 2, 3};
    EvalReport rep = metrics_from_ranking(cands, 2, pn);
    REQUIRE(rep.p_at_n.size() == 3);
    CHECK(rep.p_at_n[0].second == doctest::Approx(1.0));
    CHECK(rep.p_at_n[1].second == doctest::Approx(0.5));
    CHECK(rep.p_at_n[2].second == doctest::Approx(2.0 / 3));
    // trapezoid: (0,1)→(0.5,1) then flat recall, then (0.5,0.5)→(1,2/3)
    const double expect = 0.5 * (1.0 + 1.0) / 2 + 0.5 * (0.5 + 2.0 / 3) / 2;
    CHECK(rep.auc == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("all-correct ranking saturates the metrics") {
    std::vector<RankedPrediction> cands;
    for (int i = 0; i < 6; ++i) cands.push_back({"e" + std::to_string(i), "x", "r", 1.0 - 0.1 * i, true});
    std::vector<int> pn = {1, 3, 6};
    EvalReport rep = metrics_from_ranking(cands, 6, pn);
    CHECK(rep.auc == doctest::Approx(1.0).epsilon(1e-15));
    for (const auto& [n, p] : rep.p_at_n) CHECK(p == doctest::Approx(1.0));
}

TEST_CASE("ties are broken lexicographically so evaluation is order-independent") {
    std::vector<RankedPrediction> a = {
        {"b", "x", "r1", 0.5, false},
        {"a", "x", "r1", 0.5, true},
        {"a", "x", "r0", 0.5, false},
    };
    std::vector<RankedPrediction> b = {a[2], a[0], a[1]};
    std::vector<int> pn = {1};
    EvalReport ra = metrics_from_ranking(a, 1, pn);
    EvalReport rb = metrics_from_ranking(b, 1, pn);
    REQUIRE(ra.ranking.size() == 3);
    CHECK(ra.ranking[0].relation == "r0");  // (a,x,r0) < (a,x,r1) < (b,x,r1)
    CHECK(ra.ranking[1].correct);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(ra.ranking[i].e1 == rb.ranking[i].e1);
        CHECK(ra.ranking[i].relation == rb.ranking[i].relation);
    }
    CHECK(ra.auc == rb.auc);
}

TEST_CASE("metrics agree with a brute-force implementation on random rankings") {
    Rng rng(55);
    for (int trial = 0; trial < 20; ++trial) {
        const int k = 5 + rng.uniform_int(40);
        std::vector<RankedPrediction> cands;
        int gold = 0;
        for (int i = 0; i < k; ++i) {
            RankedPrediction c;
            c.e1 = "e" + std::to_string(i);
            c.e2 = "f";
            c.relation = "r" + std::to_string(rng.uniform_int(3));
            c.score = rng.uniform();
            c.correct = rng.uniform() < 0.4;
            gold += c.correct ? 1 : 0;
            cands.push_back(std::move(c));
        }
        if (gold == 0) {
            cands[0].correct = true;
            gold = 1;
        }
        std::vector<int> pn = {1, 5, 10, k};
        EvalReport rep = metrics_from_ranking(cands, gold, pn);

        // brute force: rescan the prefix at every rank
        auto ranked = rep.ranking;
        double prev_r = 0.0, prev_p = 1.0, auc = 0.0;
        for (int n = 1; n <= k; ++n) {
            int c = 0;
            for (int i = 0; i < n; ++i) c += ranked[i].correct ? 1 : 0;
            const double prec = static_cast<double>(c) / n;
            const double rec = static_cast<double>(c) / gold;
            auc += (rec - prev_r) * (prec + prev_p) / 2.0;
            prev_r = rec;
            prev_p = prec;
        }
        CHECK(std::fabs(rep.auc - auc) <= 1e-12);
        for (const auto& [n, p] : rep.p_at_n) {
            int c = 0;
            for (int i = 0; i < n; ++i) c += ranked[i].correct ? 1 : 0;
            CHECK(std::fabs(p - static_cast<double>(c) / n) <= 1e-12);
        }
    }
}

TEST_CASE("evaluate scores every non-NA relation per bag") {
    MicroWorld w = micro_world(4, 2);
    XbeModel model(w.model_cfg, w.index.kg_layout(), 9);
    EvalReport rep = evaluate(model, w.test, w.index);
    CHECK(rep.ranking.size() == w.test.bags.size() * 3);  // 3 non-NA relations
    CHECK(rep.total_gold == static_cast<int>(w.test.bags.size()));
    CHECK(rep.auc >= 0.0);
    CHECK(rep.auc <= 1.0);
    for (const auto& r : rep.ranking) CHECK(r.relation != std::string(kNaRelation));

    IndexedDataset empty;
    CHECK_THROWS_AS(evaluate(model, empty, w.index), std::invalid_argument);
}

TEST_CASE("gate probe sums are additive and closed-form under a fixed gate") {
    MicroWorld w = micro_world(4, 2);
    XbeConfig cfg = w.model_cfg;
    cfg.gate_mode = GateMode::fixed;
    cfg.fixed_gate = 0.5;
    XbeModel model(cfg, w.index.kg_layout(), 13);

    GateProbe one = gate_probe(model, w.test);
    CHECK(one.t2s_sum == doctest::Approx(0.5 * static_cast<double>(one.t2s_count)).epsilon(1e-12));

    IndexedDataset doubled = w.test;
    for (const auto& bag : w.test.bags) doubled.bags.push_back(bag);
    GateProbe two = gate_probe(model, doubled);
    CHECK(two.t2s_sum == doctest::Approx(2.0 * one.t2s_sum).epsilon(1e-12));
    CHECK(two.t2s_count == 2 * one.t2s_count);

    XbeConfig off = w.model_cfg;
    off.ablate.no_xstitch = true;
    XbeModel no_stitch(off, w.index.kg_layout(), 13);
    CHECK_THROWS_AS(gate_probe(no_stitch, w.test), std::invalid_argument);
}

TEST_CASE("spearman rank correlation") {
    std::vector<double> x = {1, 2, 3, 4, 5, 6};
    std::vector<double> down = {9, 8, 7, 6, 5, 4};
    std::vector<double> up = {2, 4, 5, 7, 8, 11};
    CHECK(spearman(x, down) == doctest::Approx(-1.0));
    CHECK(spearman(x, up) == doctest::Approx(1.0));

    // one adjacent swap in six → 1 − 6·2/(6·35) = 0.9428…
    std::vector<double> swapped = {1, 2, 4, 3, 5, 6};
    CHECK(spearman(x, swapped) == doctest::Approx(1.0 - 12.0 / 210.0).epsilon(1e-12));

    std::vector<double> tiny = {1};
    CHECK_THROWS_AS(spearman(tiny, tiny), std::invalid_argument);
}

TEST_CASE("placement parsing") {
    CHECK(parse_placement("all", 6) == std::vector<int>{1, 2, 3, 4, 5});
    CHECK(parse_placement("4", 6) == std::vector<int>{4});
    CHECK(parse_placement("2,4", 6) == (std::vector<int>{2, 4}));
    CHECK(parse_placement("none", 6).empty());
    CHECK_THROWS_AS(parse_placement("6", 6), std::invalid_argument);
    CHECK_THROWS_AS(parse_placement("x", 6), std::invalid_argument);
}

TEST_CASE("layer sweep rows reproduce independent single runs") {
    MicroWorld w = micro_world(4, 2);
    TrainConfig t = quick_train(1);
    std::vector<std::string> placements = {"1", "all"};
    auto rows = layer_sweep(w.model_cfg, t, w.train, w.test, w.index, placements);
    REQUIRE(rows.size() == 2);

    XbeConfig cfg = w.model_cfg;
    cfg.stitch_layers = {1};
    XbeModel model(cfg, w.index.kg_layout(), t.seed);
    train_xbe(model, w.train, t);
    EvalReport rep = evaluate(model, w.test, w.index);
    CHECK(rows[0].auc == rep.auc);
}

TEST_CASE("ablation suite trains every variant") {
    MicroWorld w = micro_world(4, 2);
    TrainConfig t = quick_train(1);
    std::vector<std::uint64_t> seeds = {21};
    AblationTable table = run_ablation_suite(w.model_cfg, t, w.train, w.test, w.index, seeds);
    REQUIRE(table.rows.size() == 6);
    CHECK(table.rows[0].variant == "full");
    for (const auto& row : table.rows) {
        REQUIRE(row.cells.size() == 1);
        CHECK(row.mean_auc >= 0.0);
        CHECK(row.mean_auc <= 1.0);
    }
}

TEST_CASE("grad check passes on a tiny model and catches tampered gradients") {
    MicroWorld w = micro_world(4, 2);
    XbeModel model(w.model_cfg, w.index.kg_layout(), 17);
    const IndexedBag& bag = w.train.bags.front();

    GradCheckReport rep = grad_check(model, bag, 2);
    CHECK(rep.passed(1e-3));
    CHECK(rep.groups.size() == model.named_params().size());

    GradCheckReport bad = grad_check(model, bag, 2, 1e-5,
                                     [](const std::string& name, std::vector<double>& g) {
                                         if (name == "head.w")
                                             for (auto& v : g) v = v * 2.0 + 0.5;
                                     });
    CHECK(!bad.passed(1e-3));
}
