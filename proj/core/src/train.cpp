#include "xbe/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xbe {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("xbe::train: " + msg); }

}  // namespace

void TrainConfig::validate() const {
    if (lr <= 0.0) fail("lr must be positive");
    if (warmup_steps < 0) fail("warmup_steps must be >= 0");
    if (epochs < 1) fail("epochs must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (adam_eps <= 0.0) fail("adam epsilon must be positive");
    if (weight_decay < 0.0) fail("weight_decay must be >= 0");
    if (pretrain_epochs < 0 || transe_epochs < 0) fail("phase epochs must be >= 0");
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, const TrainConfig& cfg,
           std::function<bool(const std::string&)> trainable,
           std::function<double(const std::string&)> lr_scale)
    : cfg_(cfg) {
    cfg_.validate();
    for (auto& [name, p] : params) {
        if (trainable && !trainable(name)) continue;
        Slot s;
        s.param = p;
        s.lr_scale = lr_scale ? lr_scale(name) : 1.0;
        s.m.assign(p.numel(), 0.0);
        s.v.assign(p.numel(), 0.0);
        slots_.push_back(std::move(s));
    }
}

double Adam::next_lr() const {
    const int t = t_ + 1;
    if (cfg_.warmup_steps > 0 && t < cfg_.warmup_steps)
        return cfg_.lr * static_cast<double>(t) / static_cast<double>(cfg_.warmup_steps);
    return cfg_.lr;
}

void Adam::step() {
    const double lr_t = next_lr();
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (Slot& s : slots_) {
        const double lr_s = lr_t * s.lr_scale;
        auto data = s.param.mutable_data();
        const bool has_grad = s.param.has_grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = has_grad ? s.param.grad()[i] : 0.0;
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            data[i] -= lr_s * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) + cfg_.weight_decay * data[i]);
        }
    }
}

void Adam::zero_grad() {
    for (Slot& s : slots_) s.param.zero_grad();
}

namespace {

KgTriple masked_input(const Triple& t, const KgVocabLayout& layout) {
    return {layout.n_relations + t.e1, layout.mask_id(), layout.n_relations + t.e2};
}

std::function<bool(const std::string&)> trainable_filter(const AblationSwitches& a) {
    return [a](const std::string& name) {
        if ((a.freeze_kg || a.no_kg_encoder) && XbeModel::is_kg_param(name)) return false;
        if (a.no_text_encoder && XbeModel::is_text_param(name)) return false;
        if (a.no_xstitch && name.rfind("xs.", 0) == 0) return false;
        return true;
    };
}

}  // namespace

std::vector<double> fit_transe(XbeModel& model, std::span<const Triple> kg,
                               const TrainConfig& cfg) {
    const KgVocabLayout& layout = model.kg_vocab();
    Rng init_rng(mix_seed(cfg.seed, "transe-init"));
    TransETable table(layout.n_entities, layout.n_relations, model.config().transe_dim, init_rng);
    Rng train_rng(mix_seed(cfg.seed, "transe-train"));
    auto log = transe_train(table, kg, cfg.transe_epochs, cfg.transe_margin, cfg.transe_lr,
                            train_rng);
    model.set_transe(std::move(table));
    return log.epoch_loss;
}

std::vector<Triple> covered_kg(const IndexedDataset& train_data, const TrainConfig& cfg) {
    if (cfg.kg_coverage < 0.0 || cfg.kg_coverage > 1.0) fail("kg_coverage must lie in [0,1]");
    std::set<std::pair<int, int>> train_pairs;
    for (const IndexedBag& bag : train_data.bags) train_pairs.insert({bag.e1_idx, bag.e2_idx});
    std::vector<Triple> kg, train_facts;
    for (const Triple& t : train_data.triples)
        (train_pairs.count({t.e1, t.e2}) ? train_facts : kg).push_back(t);
    if (cfg.kg_coverage >= 1.0) {
        kg.insert(kg.end(), train_facts.begin(), train_facts.end());
    } else if (!train_facts.empty()) {
        Rng cov_rng(mix_seed(cfg.seed, "kg-coverage"));
        for (std::size_t i = train_facts.size() - 1; i > 0; --i)
            std::swap(train_facts[i], train_facts[cov_rng.uniform_int(static_cast<int>(i + 1))]);
        const auto keep = static_cast<std::size_t>(
            static_cast<double>(train_facts.size()) * cfg.kg_coverage + 0.5);
        for (std::size_t i = 0; i < std::min(keep, train_facts.size()); ++i)
            kg.push_back(train_facts[i]);
    }
    if (kg.empty()) fail("covered_kg: the KG resource came out empty");
    std::sort(kg.begin(), kg.end());
    return kg;
}

std::vector<double> pretrain_kg(XbeModel& model, std::span<const Triple> kg,
                                const TrainConfig& cfg) {
    if (kg.empty()) fail("pretrain_kg: no triples");
    TrainConfig pcfg = cfg;
    pcfg.lr = cfg.pretrain_lr;
    pcfg.warmup_steps = 0;
    Adam opt(model.named_params(), pcfg,
             [](const std::string& name) { return XbeModel::is_kg_param(name); });

    const KgVocabLayout& layout = model.kg_vocab();
    std::vector<double> epoch_loss;
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        auto batches = batch_bags(static_cast<int>(kg.size()), cfg.pretrain_batch,
                                  mix_seed(cfg.seed, "pretrain-epoch" + std::to_string(epoch)));
        double total = 0.0;
        for (const auto& batch : batches) {
            opt.zero_grad();
            for (int ti : batch) {
                const Triple& t = kg[ti];
                Tensor loss = model.kg_pretrain_loss(masked_input(t, layout), t.r);
                total += loss.value();
                loss.backward();
            }
            opt.step();
        }
        epoch_loss.push_back(total / static_cast<double>(kg.size()));
    }
    return epoch_loss;
}

TrainLog train_xbe(XbeModel& model, const IndexedDataset& train_data, const TrainConfig& cfg) {
    cfg.validate();
    if (train_data.bags.empty()) fail("train_xbe: empty dataset");
    TrainLog log;

    const AblationSwitches& ab = model.config().ablate;
    const std::vector<Triple> kg = covered_kg(train_data, cfg);
    std::set<Triple> kg_set(kg.begin(), kg.end());
    if (!ab.no_rht && cfg.transe_epochs > 0) log.transe_epoch_loss = fit_transe(model, kg, cfg);
    if (!ab.random_init_kg && !ab.no_kg_encoder && cfg.pretrain_epochs > 0)
        log.pretrain_epoch_loss = pretrain_kg(model, kg, cfg);

    Adam opt(model.named_params(), cfg, trainable_filter(ab), [&cfg](const std::string& name) {
        return XbeModel::is_kg_param(name) ? cfg.kg_lr_scale : 1.0;
    });
    const double w = model.config().loss_weight;
    const bool use_kg_loss = !ab.no_kg_encoder;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto batches = batch_bags(static_cast<int>(train_data.bags.size()), cfg.batch_size,
                                  mix_seed(cfg.seed, "epoch" + std::to_string(epoch)));
        double total = 0.0;
        for (const auto& batch : batches) {
            opt.zero_grad();
            for (int bi : batch) {
                const IndexedBag& bag = train_data.bags[bi];
                std::vector<Tensor> logits;
                Tensor first_kg_logits;
                for (const TokenizedSentence& sent : bag.sentences) {
                    auto fr = model.forward_pair(sent, bag.masked);
                    logits.push_back(fr.rel_logits);
                    if (!first_kg_logits.defined()) first_kg_logits = fr.kg_logits;
                }
                Tensor loss = XbeModel::loss_re(logits, bag.gold_target);
                // the KG relation-prediction term applies only to facts the
                // covered KG actually holds
                if (use_kg_loss && bag.gold_target > 0 &&
                    kg_set.count({bag.e1_idx, bag.gold_target - 1, bag.e2_idx})) {
                    Tensor l_kg = model.loss_kg(first_kg_logits, bag.gold_target - 1);
                    loss = XbeModel::loss_total(loss, l_kg, w);
                }
                total += loss.value();
                loss.backward();
            }
            opt.step();
        }
        log.epoch_mean_loss.push_back(total / static_cast<double>(train_data.bags.size()));
    }
    return log;
}

GradCheckReport grad_check(
    XbeModel& model, const IndexedBag& bag, int probes_per_group, double eps,
    const std::function<void(const std::string&, std::vector<double>&)>& tamper) {
    auto named = model.named_params();
    const double w = model.config().loss_weight;

    auto build_loss = [&]() {
        std::vector<Tensor> logits;
        Tensor first_kg_logits;
        for (const TokenizedSentence& sent : bag.sentences) {
            auto fr = model.forward_pair(sent, bag.masked);
            logits.push_back(fr.rel_logits);
            if (!first_kg_logits.defined()) first_kg_logits = fr.kg_logits;
        }
        Tensor loss = XbeModel::loss_re(logits, bag.gold_target);
        if (!model.config().ablate.no_kg_encoder && bag.gold_target > 0)
            loss = XbeModel::loss_total(loss, model.loss_kg(first_kg_logits, bag.gold_target - 1), w);
        return loss;
    };

    for (auto& [name, p] : named) p.zero_grad();
    build_loss().backward();

    GradCheckReport report;
    Rng probe_rng(mix_seed(model.config().text.vocab_size, "gradcheck"));
    for (auto& [name, p] : named) {
        std::vector<double> analytic(p.numel(), 0.0);
        if (p.has_grad()) {
            auto g = p.grad();
            analytic.assign(g.begin(), g.end());
        }
        if (tamper) tamper(name, analytic);

        // probe a few random entries plus the one with the largest gradient
        std::vector<int> probes;
        const int n = static_cast<int>(p.numel());
        for (int k = 0; k < std::min(probes_per_group, n); ++k) probes.push_back(probe_rng.uniform_int(n));
        int best = 0;
        for (int i = 1; i < n; ++i)
            if (std::fabs(analytic[i]) > std::fabs(analytic[best])) best = i;
        probes.push_back(best);

        GradCheckGroup group;
        group.name = name;
        auto data = p.mutable_data();
        for (int idx : probes) {
            const double orig = data[idx];
            double fp, fm;
            {
                NoGradGuard ng;
                data[idx] = orig + eps;
                fp = build_loss().value();
                data[idx] = orig - eps;
                fm = build_loss().value();
                data[idx] = orig;
            }
            const double fd = (fp - fm) / (2.0 * eps);
            const double a = analytic[idx];
            const double scale = std::max({std::fabs(a), std::fabs(fd), 1e-6});
            group.max_rel_err = std::max(group.max_rel_err, std::fabs(a - fd) / scale);
        }
        report.worst = std::max(report.worst, group.max_rel_err);
        report.groups.push_back(std::move(group));
    }
    return report;
}

}  // namespace xbe
