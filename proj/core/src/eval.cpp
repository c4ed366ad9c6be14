#include "xbe/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace xbe {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("xbe::eval: " + msg); }

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) fail("cannot open " + path + " for writing");
    return os;
}

}  // namespace

EvalReport metrics_from_ranking(std::vector<RankedPrediction> candidates, int total_gold,
                                std::span<const int> p_at_n) {
    if (candidates.empty()) fail("empty ranking");
    if (total_gold < 1) fail("no gold triples to rank against");
    std::sort(candidates.begin(), candidates.end(), [](const RankedPrediction& a, const RankedPrediction& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::tie(a.e1, a.e2, a.relation) < std::tie(b.e1, b.e2, b.relation);
    });

    EvalReport report;
    report.total_gold = total_gold;
    report.pr.reserve(candidates.size());
    int correct = 0;
    double prev_recall = 0.0, prev_precision = 1.0;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        correct += candidates[k].correct ? 1 : 0;
        PrPoint p;
        p.precision = static_cast<double>(correct) / static_cast<double>(k + 1);
        p.recall = static_cast<double>(correct) / static_cast<double>(total_gold);
        report.auc += (p.recall - prev_recall) * (p.precision + prev_precision) / 2.0;
        prev_recall = p.recall;
        prev_precision = p.precision;
        report.pr.push_back(p);
    }
    for (int n : p_at_n) {
        if (n < 1 || n > static_cast<int>(candidates.size())) continue;
        int c = 0;
        for (int k = 0; k < n; ++k) c += candidates[k].correct ? 1 : 0;
        report.p_at_n.emplace_back(n, static_cast<double>(c) / static_cast<double>(n));
    }
    report.ranking = std::move(candidates);
    return report;
}

EvalReport evaluate(const XbeModel& model, const IndexedDataset& test, const CorpusIndex& index,
                    std::span<const int> p_at_n) {
    if (test.bags.empty()) fail("empty test set");
    std::vector<RankedPrediction> candidates;
    int total_gold = 0;
    for (const IndexedBag& bag : test.bags) {
        auto probs = model.predict_bag(bag.sentences, bag.masked);
        for (int r = 1; r < static_cast<int>(probs.size()); ++r) {
            RankedPrediction cand;
            cand.e1 = bag.e1;
            cand.e2 = bag.e2;
            cand.relation = index.target_name(r);
            cand.score = probs[r];
            cand.correct = test.gold.count({{bag.e1_idx, bag.e2_idx}, r - 1}) > 0;
            total_gold += cand.correct ? 1 : 0;
            candidates.push_back(std::move(cand));
        }
    }
    return metrics_from_ranking(std::move(candidates), total_gold, p_at_n);
}

GateProbe gate_probe(const XbeModel& model, const IndexedDataset& data) {
    if (model.config().ablate.no_xstitch || model.config().stitch_layers.empty())
        fail("gate_probe requires a model with the cross-stitch enabled");
    NoGradGuard ng;
    GateProbe probe;
    for (const IndexedBag& bag : data.bags) {
        for (const TokenizedSentence& sent : bag.sentences) {
            auto fr = model.forward_pair(sent, bag.masked, true);
            probe.t2s_sum += fr.trace.total_sum("t2s");
            probe.t2s_count += fr.trace.total_count("t2s");
        }
    }
    if (probe.t2s_count > 0) probe.t2s_mean = probe.t2s_sum / static_cast<double>(probe.t2s_count);
    return probe;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) fail("spearman needs two equally sized series");
    const std::size_t n = x.size();
    auto ranks = [n](std::span<const double> v) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0u);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double num = 0, dx = 0, dy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx == 0 || dy == 0) fail("spearman undefined for constant series");
    return num / std::sqrt(dx * dy);
}

namespace {

XbeConfig variant_config(const XbeConfig& base, const std::string& variant) {
    XbeConfig cfg = base;
    cfg.ablate = AblationSwitches{};
    if (variant == "full") {
    } else if (variant == "no_xstitch") {
        cfg.ablate.no_xstitch = true;
    } else if (variant == "no_kg_encoder") {
        cfg.ablate.no_kg_encoder = true;
    } else if (variant == "no_text_encoder") {
        cfg.ablate.no_text_encoder = true;
    } else if (variant == "random_init_kg") {
        cfg.ablate.random_init_kg = true;
    } else if (variant == "freeze_kg") {
        cfg.ablate.freeze_kg = true;
    } else {
        fail("unknown ablation variant " + variant);
    }
    return cfg;
}

}  // namespace

AblationTable run_ablation_suite(const XbeConfig& base, const TrainConfig& tcfg,
                                 const IndexedDataset& train, const IndexedDataset& test,
                                 const CorpusIndex& index, std::span<const std::uint64_t> seeds) {
    if (seeds.empty()) fail("run_ablation_suite needs at least one seed");
    AblationTable table;
    for (const std::string& variant : kAblationVariants) {
        AblationRow row;
        row.variant = variant;
        for (std::uint64_t seed : seeds) {
            XbeConfig cfg = variant_config(base, variant);
            XbeModel model(cfg, index.kg_layout(), seed);
            TrainConfig run_cfg = tcfg;
            run_cfg.seed = seed;
            train_xbe(model, train, run_cfg);
            EvalReport report = evaluate(model, test, index);
            AblationCell cell;
            cell.seed = seed;
            cell.auc = report.auc;
            cell.p_at_n = report.p_at_n;
            row.cells.push_back(std::move(cell));
        }
        double mean = 0.0;
        for (const auto& c : row.cells) mean += c.auc;
        mean /= static_cast<double>(row.cells.size());
        double var = 0.0;
        for (const auto& c : row.cells) var += (c.auc - mean) * (c.auc - mean);
        row.mean_auc = mean;
        row.stddev_auc = row.cells.size() > 1 ? std::sqrt(var / (row.cells.size() - 1)) : 0.0;
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::vector<int> parse_placement(const std::string& text, int min_depth) {
    std::vector<int> sites;
    if (text == "all") {
        for (int i = 1; i < min_depth; ++i) sites.push_back(i);
        return sites;
    }
    if (text == "none" || text.empty()) return sites;
    std::size_t at = 0;
    while (at < text.size()) {
        std::size_t comma = text.find(',', at);
        if (comma == std::string::npos) comma = text.size();
        const std::string piece = text.substr(at, comma - at);
        try {
            sites.push_back(std::stoi(piece));
        } catch (const std::exception&) {
            fail("bad placement '" + piece + "' (expected layer indices or 'all')");
        }
        at = comma + 1;
    }
    for (int s : sites)
        if (s < 1 || s >= min_depth)
            fail("placement " + std::to_string(s) + " outside 1.." + std::to_string(min_depth - 1));
    return sites;
}

std::vector<SweepRow> layer_sweep(const XbeConfig& base, const TrainConfig& tcfg,
                                  const IndexedDataset& train, const IndexedDataset& test,
                                  const CorpusIndex& index,
                                  std::span<const std::string> placements) {
    std::vector<SweepRow> rows;
    const int min_depth = std::min(base.text.depth, base.kg.depth);
    for (const std::string& placement : placements) {
        XbeConfig cfg = base;
        cfg.stitch_layers = parse_placement(placement, min_depth);
        XbeModel model(cfg, index.kg_layout(), tcfg.seed);
        train_xbe(model, train, tcfg);
        EvalReport report = evaluate(model, test, index);
        rows.push_back({placement, report.auc});
    }
    return rows;
}

void write_eval_report_csv(const std::string& path, const EvalReport& report) {
    auto os = open_out(path);
    os << "rank,e1,e2,relation,score,correct,precision,recall\n";
    for (std::size_t k = 0; k < report.ranking.size(); ++k) {
        const auto& r = report.ranking[k];
        os << (k + 1) << ',' << r.e1 << ',' << r.e2 << ',' << r.relation << ',' << fmt(r.score)
           << ',' << (r.correct ? 1 : 0) << ',' << fmt(report.pr[k].precision) << ','
           << fmt(report.pr[k].recall) << '\n';
    }
}

void write_pr_curve_csv(const std::string& path, const EvalReport& report) {
    auto os = open_out(path);
    os << "recall,precision\n";
    for (const PrPoint& p : report.pr) os << fmt(p.recall) << ',' << fmt(p.precision) << '\n';
}

void write_metrics_csv(const std::string& path, const EvalReport& report) {
    auto os = open_out(path);
    os << "metric,value\n";
    os << "auc," << fmt(report.auc) << '\n';
    os << "total_gold," << report.total_gold << '\n';
    os << "candidates," << report.ranking.size() << '\n';
    for (const auto& [n, p] : report.p_at_n) os << "p@" << n << ',' << fmt(p) << '\n';
}

void write_gate_probe_csv(const std::string& path,
                          std::span<const std::pair<double, GateProbe>> rows) {
    auto os = open_out(path);
    os << "noise_ratio,gate_sum,gate_count,gate_mean\n";
    for (const auto& [ratio, probe] : rows)
        os << fmt(ratio) << ',' << fmt(probe.t2s_sum) << ',' << probe.t2s_count << ','
           << fmt(probe.t2s_mean) << '\n';
}

void write_ablation_csv(const std::string& path, const AblationTable& table) {
    auto os = open_out(path);
    os << "variant,seed,auc";
    if (!table.rows.empty() && !table.rows[0].cells.empty())
        for (const auto& [n, p] : table.rows[0].cells[0].p_at_n) os << ",p@" << n;
    os << '\n';
    for (const AblationRow& row : table.rows) {
        for (const AblationCell& cell : row.cells) {
            os << row.variant << ',' << cell.seed << ',' << fmt(cell.auc);
            for (const auto& [n, p] : cell.p_at_n) os << ',' << fmt(p);
            os << '\n';
        }
        os << row.variant << ",mean," << fmt(row.mean_auc);
        if (!row.cells.empty())
            for (std::size_t i = 0; i < row.cells[0].p_at_n.size(); ++i) {
                double m = 0.0;
                for (const auto& c : row.cells) m += c.p_at_n[i].second;
                os << ',' << fmt(m / row.cells.size());
            }
        os << '\n';
        os << row.variant << ",stddev," << fmt(row.stddev_auc);
        if (!row.cells.empty())
            for (std::size_t i = 0; i < row.cells[0].p_at_n.size(); ++i) os << ',';
        os << '\n';
    }
}

void write_layer_sweep_csv(const std::string& path, std::span<const SweepRow> rows) {
    auto os = open_out(path);
    os << "placement,auc\n";
    for (const SweepRow& r : rows) os << r.placement << ',' << fmt(r.auc) << '\n';
}

}  // namespace xbe
