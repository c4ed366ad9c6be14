#include "xbe/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xbe {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("xbe::model: " + msg); }

}  // namespace

void AblationSwitches::validate() const {
    if (no_kg_encoder && no_text_encoder) fail("at least one encoder must stay enabled");
}

void XbeConfig::validate() const {
    text.validate("text");
    kg.validate("kg");
    ablate.validate();
    if (kg.max_len < 3) fail("KG encoder max_len must be >= 3");
    if (loss_weight <= 0.0 || loss_weight > 1.0) fail("loss weight w must lie in (0,1]");
    if (n_target_relations < 2) fail("target relation inventory must include NA plus one relation");
    if (transe_dim < 1) fail("transe_dim must be positive");
    if (lambda_t < 0.0 || lambda_s < 0.0) fail("lambda weights must be nonnegative");
    if (fixed_gate < 0.0 || fixed_gate > 1.0) fail("fixed gate must lie in [0,1]");
    const int min_depth = std::min(text.depth, kg.depth);
    for (int site : stitch_layers) {
        if (site < 1 || site >= min_depth)
            fail("stitch site " + std::to_string(site) + " outside 1.." + std::to_string(min_depth - 1));
    }
}

XbeModel::XbeModel(XbeConfig cfg, KgVocabLayout kg_vocab, std::uint64_t seed)
    : cfg_(std::move(cfg)), kg_vocab_(kg_vocab) {
    cfg_.validate();
    if (kg_vocab_.size() != cfg_.kg.vocab_size)
        fail("KG vocab layout size " + std::to_string(kg_vocab_.size()) + " does not match config " +
             std::to_string(cfg_.kg.vocab_size));

    // fixed construction order keeps initialization identical across runs
    // and across ablation variants of the same seed
    Rng rng(mix_seed(seed, "xbe-model"));
    text_ = std::make_unique<TransformerEncoder>(cfg_.text, rng, "text");
    kg_ = std::make_unique<TransformerEncoder>(cfg_.kg, rng, "kg");

    const int hidden = cfg_.stitch_hidden > 0 ? cfg_.stitch_hidden : cfg_.text.width;
    for (int site : cfg_.stitch_layers) {
        if (!stitch_sites_.insert(site).second) continue;
        stitch_.emplace(site, XStitchParams::init(cfg_.text.width, hidden, rng, cfg_.lambda_t,
                                                  cfg_.lambda_s, cfg_.gate_mode, cfg_.fixed_gate));
    }

    const int fd = cfg_.feature_dim();
    head_w_ = Tensor::param({cfg_.n_target_relations, fd}, rng,
                            std::sqrt(2.0 / (fd + cfg_.n_target_relations)));
    head_b_ = Tensor::param_zeros({cfg_.n_target_relations});
    kg_out_bias_ = Tensor::param_zeros({kg_vocab_.size()});
}

ForwardResult XbeModel::forward_pair(const TokenizedSentence& sent, const KgTriple& masked,
                                     bool record_gates) const {
    const bool use_text = !cfg_.ablate.no_text_encoder;
    const bool use_kg = !cfg_.ablate.no_kg_encoder;
    const bool use_stitch = use_text && use_kg && !cfg_.ablate.no_xstitch && !stitch_sites_.empty();

    ForwardResult out;
    Tensor s, t;
    if (use_text) {
        sent.validate(cfg_.text.max_len);
        s = text_->embed(sent.tokens);
    }
    if (use_kg) {
        masked.validate(kg_vocab_);
        t = kg_->embed(masked.ids());
    }

    const int max_depth = std::max(use_text ? cfg_.text.depth : 0, use_kg ? cfg_.kg.depth : 0);
    for (int l = 0; l < max_depth; ++l) {
        if (use_text && l < cfg_.text.depth) s = text_->apply_block(l, s);
        if (use_kg && l < cfg_.kg.depth) t = kg_->apply_block(l, t);
        const int site = l + 1;
        if (use_stitch && stitch_sites_.count(site) && site < std::min(cfg_.text.depth, cfg_.kg.depth)) {
            const XStitchParams& xp = stitch_.at(site);
            auto [a_t2s, a_s2t] = cross_attention(s, t, xp);
            MixResult ms = mix_text(s, t, a_t2s, xp);
            MixResult mt = mix_kg(s, t, a_s2t, xp);
            s = ms.mixed;
            t = mt.mixed;
            if (record_gates) {
                out.trace.record(site, "t2s", ms.gate);
                out.trace.record(site, "s2t", mt.gate);
            }
        }
    }

    Tensor s_vec, x_e1, x_e2;
    if (use_text) {
        Tensor s_last = text_->final_norm(s);
        s_vec = sentence_summary(s_last, sent.head, sent.tail);
    } else {
        s_vec = Tensor::zeros({cfg_.summary_dim()});
    }
    if (use_kg) {
        Tensor t_last = kg_->final_norm(t);
        x_e1 = row(t_last, 0);
        x_e2 = row(t_last, 2);
        out.kg_logits = kg_mask_logits(kg_->token_table(), kg_out_bias_, t_last, 1);
    } else {
        x_e1 = Tensor::zeros({cfg_.kg.width});
        x_e2 = Tensor::zeros({cfg_.kg.width});
        out.kg_logits = Tensor::zeros({kg_vocab_.size()});
    }

    const int e1_idx = masked.head - kg_vocab_.n_relations;
    const int e2_idx = masked.tail - kg_vocab_.n_relations;
    Tensor rht = Tensor::from({cfg_.transe_dim}, rht_feature(e1_idx, e2_idx));

    std::vector<Tensor> parts = {s_vec, rht, x_e1, x_e2};
    Tensor feat = concat(std::span<const Tensor>(parts));
    out.rel_logits = add(matvec(head_w_, feat), head_b_);
    return out;
}

Tensor XbeModel::loss_re(std::span<const Tensor> sentence_logits, int target_relation) {
    if (sentence_logits.empty()) fail("loss_re: empty bag");
    Tensor total;
    for (const Tensor& logits : sentence_logits) {
        Tensor term = cross_entropy_logits(logits, target_relation);
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

Tensor XbeModel::loss_kg(const Tensor& kg_logits, int relation_id) const {
    if (!kg_vocab_.is_relation(relation_id))
        fail("loss_kg: id " + std::to_string(relation_id) + " is not a relation");
    if (kg_logits.rank() != 1 || kg_logits.rows() != kg_vocab_.size())
        fail("loss_kg: logits must cover the KG vocabulary");
    return cross_entropy_logits(kg_logits, relation_id);
}

Tensor XbeModel::loss_total(const Tensor& l_re, const Tensor& l_kg, double w) {
    if (w <= 0.0 || w > 1.0) fail("loss_total: w must lie in (0,1]");
    return add(l_re, scale(l_kg, w));
}

std::vector<double> XbeModel::bag_mean(const std::vector<std::vector<double>>& per_sentence) {
    if (per_sentence.empty()) fail("bag_mean: empty bag");
    const std::size_t k = per_sentence[0].size();
    std::vector<double> out(k, 0.0);
    std::vector<double> column(per_sentence.size());
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < per_sentence.size(); ++i) column[i] = per_sentence[i][j];
        // canonical summation order makes the mean bitwise permutation-invariant
        std::sort(column.begin(), column.end());
        double s = 0.0;
        for (double v : column) s += v;
        out[j] = s / static_cast<double>(per_sentence.size());
    }
    return out;
}

std::vector<double> XbeModel::predict_bag(std::span<const TokenizedSentence> bag,
                                          const KgTriple& masked) const {
    if (bag.empty()) fail("predict_bag: empty bag");
    NoGradGuard ng;
    std::vector<std::vector<double>> probs;
    probs.reserve(bag.size());
    for (const TokenizedSentence& sent : bag) {
        ForwardResult fr = forward_pair(sent, masked);
        probs.push_back(softmax_values(fr.rel_logits.data()));
    }
    return bag_mean(probs);
}

Tensor XbeModel::kg_pretrain_loss(const KgTriple& masked, int true_relation) const {
    if (!masked.masked(kg_vocab_)) fail("kg_pretrain_loss: relation slot must be [M]");
    masked.validate(kg_vocab_);
    auto layers = kg_->encode(masked.ids());
    Tensor logits = kg_mask_logits(kg_->token_table(), kg_out_bias_, layers.back(), 1);
    return loss_kg(logits, true_relation);
}

std::vector<double> XbeModel::rht_feature(int entity1_idx, int entity2_idx) const {
    if (cfg_.ablate.no_rht || transe_.n_entities() == 0)
        return std::vector<double>(cfg_.transe_dim, 0.0);
    if (transe_.dim() != cfg_.transe_dim) fail("TransE table width does not match config");
    return transe_.translation(entity1_idx, entity2_idx);
}

std::vector<std::pair<std::string, Tensor>> XbeModel::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    text_->collect_params(out);
    kg_->collect_params(out);
    for (const auto& [site, params] : stitch_) params.collect_params("xs.l" + std::to_string(site), out);
    out.emplace_back("head.w", head_w_);
    out.emplace_back("head.b", head_b_);
    out.emplace_back("kg.out_bias", kg_out_bias_);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

bool XbeModel::is_kg_param(const std::string& name) { return name.rfind("kg.", 0) == 0; }
bool XbeModel::is_text_param(const std::string& name) { return name.rfind("text.", 0) == 0; }

}  // namespace xbe
