#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xbe/tensor.hpp"

namespace xbe {

struct EncoderConfig {
    int depth = 6;     // layer count
    int width = 64;    // hidden size d
    int heads = 4;
    int ffn_mult = 4;
    int max_len = 64;
    int vocab_size = 0;

    void validate(const std::string& which) const;
};

struct Span {
    int begin = 0;
    int end = 0;  // exclusive
    int length() const { return end - begin; }
};

struct TokenizedSentence {
    std::vector<int> tokens;
    Span head;
    Span tail;

    void validate(int max_len) const;
};

// Layout of the KG vocabulary V = R ∪ E ∪ {[M]}:
// ids [0, n_relations) are relations, then entities, mask id last.
struct KgVocabLayout {
    int n_relations = 0;
    int n_entities = 0;

    int mask_id() const { return n_relations + n_entities; }
    int size() const { return n_relations + n_entities + 1; }
    bool is_relation(int id) const { return id >= 0 && id < n_relations; }
    bool is_entity(int id) const { return id >= n_relations && id < n_relations + n_entities; }
};

struct KgTriple {
    int head = 0;
    int relation = 0;  // may be the mask id
    int tail = 0;

    void validate(const KgVocabLayout& v) const;
    std::vector<int> ids() const { return {head, relation, tail}; }
    bool masked(const KgVocabLayout& v) const { return relation == v.mask_id(); }
};

struct BlockParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
};

// Pre-norm transformer encoder. The model drives it layer by layer so the
// cross-stitch can rewrite hidden states between blocks.
class TransformerEncoder {
public:
    TransformerEncoder(EncoderConfig cfg, Rng& rng, std::string name_prefix);

    const EncoderConfig& config() const { return cfg_; }

    Tensor embed(std::span<const int> ids) const;
    // one block; when attn is non-null the per-head attention matrices
    // (rows = queries) are appended to it
    Tensor apply_block(int layer, const Tensor& x, std::vector<Tensor>* attn = nullptr) const;
    Tensor final_norm(const Tensor& x) const;

    // full pass: hidden states after every block, the last one final-normed
    std::vector<Tensor> encode(std::span<const int> ids, std::vector<Tensor>* attn = nullptr) const;

    void collect_params(std::vector<std::pair<std::string, Tensor>>& out) const;
    const Tensor& token_table() const { return tok_emb_; }

private:
    EncoderConfig cfg_;
    std::string prefix_;
    Tensor tok_emb_;
    Tensor pos_emb_;
    std::vector<BlockParams> blocks_;
    Tensor lnf_g_, lnf_b_;
};

std::vector<Tensor> encode_text_layers(const TransformerEncoder& enc, const TokenizedSentence& sent);
std::vector<Tensor> encode_kg_layers(const TransformerEncoder& enc, const KgTriple& triple,
                                     const KgVocabLayout& vocab);

// [h_e1; h_e2; h_mean; h_max] over the last text layer -> [4d]
Tensor sentence_summary(const Tensor& s_last, Span head, Span tail);

// unnormalized scores over V from the hidden state at `position`,
// projected through the (tied) KG embedding table
Tensor kg_mask_logits(const Tensor& kg_table, const Tensor& out_bias, const Tensor& t_last,
                      int position);

}  // namespace xbe
