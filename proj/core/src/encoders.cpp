#include "xbe/encoders.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace xbe {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("xbe::encoders: " + msg); }

double xavier(int fan_in, int fan_out) { return std::sqrt(2.0 / (fan_in + fan_out)); }

}  // namespace

void EncoderConfig::validate(const std::string& which) const {
    if (depth < 1) fail(which + ": depth must be >= 1, got " + std::to_string(depth));
    if (width < 1) fail(which + ": width must be >= 1");
    if (heads < 1 || width % heads != 0)
        fail(which + ": width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
    if (ffn_mult < 1) fail(which + ": ffn_mult must be >= 1");
    if (max_len < 1) fail(which + ": max_len must be >= 1");
    if (vocab_size < 1) fail(which + ": vocab_size must be >= 1");
}

void TokenizedSentence::validate(int max_len) const {
    const int n = static_cast<int>(tokens.size());
    if (n == 0) fail("sentence is empty");
    if (n > max_len) fail("sentence length " + std::to_string(n) + " exceeds max_len " + std::to_string(max_len));
    for (const Span& s : {head, tail}) {
        if (s.begin >= s.end) fail("empty entity span");
        if (s.begin < 0 || s.end > n) fail("entity span outside sentence");
    }
    if (head.begin < tail.end && tail.begin < head.end) fail("entity spans overlap");
}

void KgTriple::validate(const KgVocabLayout& v) const {
    if (!v.is_entity(head)) fail("head id " + std::to_string(head) + " is not an entity");
    if (!v.is_entity(tail)) fail("tail id " + std::to_string(tail) + " is not an entity");
    if (!v.is_relation(relation) && relation != v.mask_id())
        fail("relation id " + std::to_string(relation) + " is neither a relation nor [M]");
}

TransformerEncoder::TransformerEncoder(EncoderConfig cfg, Rng& rng, std::string name_prefix)
    : cfg_(cfg), prefix_(std::move(name_prefix)) {
    cfg_.validate(prefix_);
    const int d = cfg_.width;
    tok_emb_ = Tensor::param({cfg_.vocab_size, d}, rng, 0.02);
    pos_emb_ = Tensor::param({cfg_.max_len, d}, rng, 0.02);
    const int dff = cfg_.ffn_mult * d;
    for (int l = 0; l < cfg_.depth; ++l) {
        BlockParams b;
        b.ln1_g = Tensor::param_full({d}, 1.0);
        b.ln1_b = Tensor::param_zeros({d});
        b.wq = Tensor::param({d, d}, rng, xavier(d, d));
        b.bq = Tensor::param_zeros({d});
        b.wk = Tensor::param({d, d}, rng, xavier(d, d));
        b.bk = Tensor::param_zeros({d});
        b.wv = Tensor::param({d, d}, rng, xavier(d, d));
        b.bv = Tensor::param_zeros({d});
        b.wo = Tensor::param({d, d}, rng, xavier(d, d));
        b.bo = Tensor::param_zeros({d});
        b.ln2_g = Tensor::param_full({d}, 1.0);
        b.ln2_b = Tensor::param_zeros({d});
        b.w1 = Tensor::param({dff, d}, rng, xavier(d, dff));
        b.b1 = Tensor::param_zeros({dff});
        b.w2 = Tensor::param({d, dff}, rng, xavier(dff, d));
        b.b2 = Tensor::param_zeros({d});
        blocks_.push_back(std::move(b));
    }
    lnf_g_ = Tensor::param_full({d}, 1.0);
    lnf_b_ = Tensor::param_zeros({d});
}

Tensor TransformerEncoder::embed(std::span<const int> ids) const {
    const int n = static_cast<int>(ids.size());
    if (n > cfg_.max_len)
        fail(prefix_ + ": sequence length " + std::to_string(n) + " exceeds max_len " + std::to_string(cfg_.max_len));
    std::vector<int> positions(n);
    std::iota(positions.begin(), positions.end(), 0);
    return add(embedding(tok_emb_, ids), embedding(pos_emb_, positions));
}

Tensor TransformerEncoder::apply_block(int layer, const Tensor& x, std::vector<Tensor>* attn) const {
    const BlockParams& b = blocks_.at(static_cast<std::size_t>(layer));
    const int d = cfg_.width;
    const int dh = d / cfg_.heads;

    Tensor normed = layer_norm(x, b.ln1_g, b.ln1_b);
    Tensor q = linear(normed, b.wq, b.bq);
    Tensor k = linear(normed, b.wk, b.bk);
    Tensor v = linear(normed, b.wv, b.bv);

    std::vector<Tensor> ctx;
    for (int h = 0; h < cfg_.heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor weights = softmax(scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))), 1);
        if (attn) attn->push_back(weights);
        ctx.push_back(matmul(weights, vh));
    }
    Tensor merged = concat_cols(std::span<const Tensor>(ctx));
    Tensor after_attn = add(x, linear(merged, b.wo, b.bo));

    Tensor normed2 = layer_norm(after_attn, b.ln2_g, b.ln2_b);
    Tensor ffn = linear(relu(linear(normed2, b.w1, b.b1)), b.w2, b.b2);
    return add(after_attn, ffn);
}

Tensor TransformerEncoder::final_norm(const Tensor& x) const { return layer_norm(x, lnf_g_, lnf_b_); }

std::vector<Tensor> TransformerEncoder::encode(std::span<const int> ids, std::vector<Tensor>* attn) const {
    std::vector<Tensor> layers;
    Tensor x = embed(ids);
    for (int l = 0; l < cfg_.depth; ++l) {
        x = apply_block(l, x, attn);
        layers.push_back(l + 1 == cfg_.depth ? final_norm(x) : x);
    }
    return layers;
}

void TransformerEncoder::collect_params(std::vector<std::pair<std::string, Tensor>>& out) const {
    auto put = [&](const std::string& name, const Tensor& t) { out.emplace_back(prefix_ + "." + name, t); };
    put("tok_emb", tok_emb_);
    put("pos_emb", pos_emb_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const BlockParams& b = blocks_[l];
        const std::string p = "block" + std::to_string(l) + ".";
        put(p + "ln1_g", b.ln1_g);
        put(p + "ln1_b", b.ln1_b);
        put(p + "wq", b.wq);
        put(p + "bq", b.bq);
        put(p + "wk", b.wk);
        put(p + "bk", b.bk);
        put(p + "wv", b.wv);
        put(p + "bv", b.bv);
        put(p + "wo", b.wo);
        put(p + "bo", b.bo);
        put(p + "ln2_g", b.ln2_g);
        put(p + "ln2_b", b.ln2_b);
        put(p + "w1", b.w1);
        put(p + "b1", b.b1);
        put(p + "w2", b.w2);
        put(p + "b2", b.b2);
    }
    put("lnf_g", lnf_g_);
    put("lnf_b", lnf_b_);
}

std::vector<Tensor> encode_text_layers(const TransformerEncoder& enc, const TokenizedSentence& sent) {
    sent.validate(enc.config().max_len);
    return enc.encode(sent.tokens);
}

std::vector<Tensor> encode_kg_layers(const TransformerEncoder& enc, const KgTriple& triple,
                                     const KgVocabLayout& vocab) {
    triple.validate(vocab);
    if (vocab.size() != enc.config().vocab_size)
        fail("KG vocabulary size " + std::to_string(vocab.size()) + " does not match encoder vocab " +
             std::to_string(enc.config().vocab_size));
    return enc.encode(triple.ids());
}

Tensor sentence_summary(const Tensor& s_last, Span head, Span tail) {
    const int n = s_last.rows();
    for (const Span& s : {head, tail}) {
        if (s.begin >= s.end) fail("sentence_summary: empty span");
        if (s.begin < 0 || s.end > n) fail("sentence_summary: span outside sentence");
    }
    std::vector<Tensor> parts = {row(s_last, head.begin), row(s_last, tail.begin),
                                 pool_mean(s_last), pool_max(s_last)};
    return concat(std::span<const Tensor>(parts));
}

Tensor kg_mask_logits(const Tensor& kg_table, const Tensor& out_bias, const Tensor& t_last,
                      int position) {
    if (position < 0 || position >= t_last.rows())
        fail("kg_mask_logits: position " + std::to_string(position) + " out of range");
    return add(matvec(kg_table, row(t_last, position)), out_bias);
}

}  // namespace xbe
