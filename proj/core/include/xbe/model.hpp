#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xbe/encoders.hpp"
#include "xbe/transe.hpp"
#include "xbe/xstitch.hpp"

namespace xbe {

struct AblationSwitches {
    bool no_xstitch = false;
    bool no_kg_encoder = false;
    bool no_text_encoder = false;
    bool no_rht = false;
    bool freeze_kg = false;
    bool random_init_kg = false;

    void validate() const;
};

struct XbeConfig {
    EncoderConfig text;
    EncoderConfig kg;
    // cross-stitch: site i mixes the outputs of block i (1-based) before
    // both block i+1's run; valid sites are 1..min(depth)-1
    std::vector<int> stitch_layers = {4};
    int stitch_hidden = 0;  // 0 -> same as width (d' = d)
    double lambda_t = 1.0;
    double lambda_s = 1e-4;
    GateMode gate_mode = GateMode::dynamic;
    double fixed_gate = 0.5;
    double loss_weight = 1.0;     // w in L = L_RE + w·L_KG
    int n_target_relations = 0;   // |R_target| including NA at index 0
    int transe_dim = 32;
    AblationSwitches ablate;

    void validate() const;
    int summary_dim() const { return 4 * text.width; }
    int feature_dim() const { return summary_dim() + transe_dim + 2 * kg.width; }
};

struct ForwardResult {
    Tensor rel_logits;  // [|R_target|]
    Tensor kg_logits;   // [|V|]
    GateTrace trace;
};

class XbeModel {
public:
    XbeModel(XbeConfig cfg, KgVocabLayout kg_vocab, std::uint64_t seed);

    const XbeConfig& config() const { return cfg_; }
    const KgVocabLayout& kg_vocab() const { return kg_vocab_; }

    ForwardResult forward_pair(const TokenizedSentence& sent, const KgTriple& masked,
                               bool record_gates = false) const;

    // −Σ_i log softmax(logits_i)[target]  (literal sum over the bag)
    static Tensor loss_re(std::span<const Tensor> sentence_logits, int target_relation);
    // −log softmax(kg_logits)[relation id]; the target must be a relation
    Tensor loss_kg(const Tensor& kg_logits, int relation_id) const;
    static Tensor loss_total(const Tensor& l_re, const Tensor& l_kg, double w);

    // mean of per-sentence softmax probabilities; bitwise invariant under
    // sentence permutation (summands added in canonical order)
    std::vector<double> predict_bag(std::span<const TokenizedSentence> bag,
                                    const KgTriple& masked) const;
    static std::vector<double> bag_mean(const std::vector<std::vector<double>>& per_sentence);

    // KG-encoder-only loss used for pre-training; rejects unmasked triples
    Tensor kg_pretrain_loss(const KgTriple& masked, int true_relation) const;

    // r_ht feature (emb(e2) − emb(e1)); zeros when no_rht or no table
    std::vector<double> rht_feature(int entity1_idx, int entity2_idx) const;

    void set_transe(TransETable table) { transe_ = std::move(table); }
    const TransETable& transe() const { return transe_; }
    TransETable& transe_mut() { return transe_; }

    // named parameters, sorted by name
    std::vector<std::pair<std::string, Tensor>> named_params() const;
    // true if the parameter belongs to the KG encoder group (incl. its
    // tied-output bias): the group pre-training updates and freeze_kg locks
    static bool is_kg_param(const std::string& name);
    static bool is_text_param(const std::string& name);

    const TransformerEncoder& text_encoder() const { return *text_; }
    const TransformerEncoder& kg_encoder() const { return *kg_; }
    const XStitchParams& stitch_at(int site) const { return stitch_.at(site); }

private:
    XbeConfig cfg_;
    KgVocabLayout kg_vocab_;
    std::unique_ptr<TransformerEncoder> text_;
    std::unique_ptr<TransformerEncoder> kg_;
    std::map<int, XStitchParams> stitch_;  // site -> params
    Tensor head_w_, head_b_;
    Tensor kg_out_bias_;
    TransETable transe_;
    std::set<int> stitch_sites_;
};

}  // namespace xbe
