#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xbe/data.hpp"
#include "xbe/model.hpp"
#include "xbe/train.hpp"

namespace xbe {

struct RankedPrediction {
    std::string e1, e2, relation;
    double score = 0.0;
    bool correct = false;
};

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
};

struct EvalReport {
    std::vector<RankedPrediction> ranking;  // score desc, ties by (e1,e2,relation)
    std::vector<PrPoint> pr;                // one point per rank
    double auc = 0.0;                       // trapezoid over pr, anchored at (0,1)
    std::vector<std::pair<int, double>> p_at_n;
    int total_gold = 0;
};

inline const std::vector<int> kDefaultPatN = {10, 30, 50, 100, 200};

// sorts the candidates and derives PR points, AUC and P@N
EvalReport metrics_from_ranking(std::vector<RankedPrediction> candidates, int total_gold,
                                std::span<const int> p_at_n);

// held-out evaluation: every (bag, non-NA relation) is a candidate scored by
// predict_bag; a candidate is correct iff its triple is a gold test triple
EvalReport evaluate(const XbeModel& model, const IndexedDataset& test, const CorpusIndex& index,
                    std::span<const int> p_at_n = kDefaultPatN);

struct GateProbe {
    double t2s_sum = 0.0;
    std::int64_t t2s_count = 0;
    double t2s_mean = 0.0;
};

// Σ over all forward passes of the G^{t2s} entries; rejects no_xstitch models
GateProbe gate_probe(const XbeModel& model, const IndexedDataset& data);

double spearman(std::span<const double> x, std::span<const double> y);

struct AblationCell {
    std::uint64_t seed = 0;
    double auc = 0.0;
    std::vector<std::pair<int, double>> p_at_n;
};

struct AblationRow {
    std::string variant;
    std::vector<AblationCell> cells;
    double mean_auc = 0.0;
    double stddev_auc = 0.0;
};

struct AblationTable {
    std::vector<AblationRow> rows;
};

inline const std::vector<std::string> kAblationVariants = {
    "full", "no_xstitch", "no_kg_encoder", "no_text_encoder", "random_init_kg", "freeze_kg"};

// trains and evaluates every variant under identical data and seeds
AblationTable run_ablation_suite(const XbeConfig& base, const TrainConfig& tcfg,
                                 const IndexedDataset& train, const IndexedDataset& test,
                                 const CorpusIndex& index, std::span<const std::uint64_t> seeds);

struct SweepRow {
    std::string placement;  // "1".."L-1" or "all"
    double auc = 0.0;
};

std::vector<int> parse_placement(const std::string& text, int min_depth);

std::vector<SweepRow> layer_sweep(const XbeConfig& base, const TrainConfig& tcfg,
                                  const IndexedDataset& train, const IndexedDataset& test,
                                  const CorpusIndex& index,
                                  std::span<const std::string> placements);

// ---- CSV artifacts (17-significant-digit floats, header rows) ----

void write_eval_report_csv(const std::string& path, const EvalReport& report);
void write_pr_curve_csv(const std::string& path, const EvalReport& report);
void write_metrics_csv(const std::string& path, const EvalReport& report);
void write_gate_probe_csv(const std::string& path,
                          std::span<const std::pair<double, GateProbe>> rows);
void write_ablation_csv(const std::string& path, const AblationTable& table);
void write_layer_sweep_csv(const std::string& path, std::span<const SweepRow> rows);

}  // namespace xbe
