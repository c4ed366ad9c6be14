#include "xbe/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace xbe {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("xbe::data: " + msg); }

[[noreturn]] void fail_at(const std::string& path, int line, const std::string& msg) {
    fail(path + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

Span parse_span(const std::string& text, const std::string& path, int line) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) fail_at(path, line, "span must look like a:b, got '" + text + "'");
    try {
        Span s;
        s.begin = std::stoi(text.substr(0, colon));
        s.end = std::stoi(text.substr(colon + 1));
        return s;
    } catch (const std::exception&) {
        fail_at(path, line, "span must hold integers, got '" + text + "'");
    }
}

}  // namespace

const Bag* DsreDataset::find_bag(const std::string& e1, const std::string& e2) const {
    for (const Bag& b : bags)
        if (b.e1 == e1 && b.e2 == e2) return &b;
    return nullptr;
}

DsreDataset load_dataset(const std::string& corpus_path, const std::string& kg_path) {
    DsreDataset ds;

    std::ifstream corpus(corpus_path);
    if (!corpus) fail("cannot open corpus file " + corpus_path);
    std::map<std::pair<std::string, std::string>, std::size_t> bag_of;
    std::string line;
    int line_no = 0;
    while (std::getline(corpus, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto fields = split_fields(line, '\t');
        if (fields.size() != 6)
            fail_at(corpus_path, line_no,
                    "expected 6 tab-separated fields, got " + std::to_string(fields.size()));
        Sentence sent;
        sent.head = parse_span(fields[3], corpus_path, line_no);
        sent.tail = parse_span(fields[4], corpus_path, line_no);
        std::istringstream toks(fields[5]);
        std::string tok;
        while (toks >> tok) sent.tokens.push_back(tok);
        const int n = static_cast<int>(sent.tokens.size());
        if (n == 0) fail_at(corpus_path, line_no, "sentence has no tokens");
        for (const Span& s : {sent.head, sent.tail}) {
            if (s.begin >= s.end) fail_at(corpus_path, line_no, "empty entity span");
            if (s.begin < 0 || s.end > n) fail_at(corpus_path, line_no, "entity span outside sentence");
        }
        if (sent.head.begin < sent.tail.end && sent.tail.begin < sent.head.end)
            fail_at(corpus_path, line_no, "entity spans overlap");

        const auto key = std::make_pair(fields[0], fields[1]);
        auto it = bag_of.find(key);
        if (it == bag_of.end()) {
            Bag bag;
            bag.e1 = fields[0];
            bag.e2 = fields[1];
            bag.relation = fields[2];
            bag.sentences.push_back(std::move(sent));
            bag_of.emplace(key, ds.bags.size());
            ds.bags.push_back(std::move(bag));
        } else {
            Bag& bag = ds.bags[it->second];
            if (bag.relation != fields[2])
                fail_at(corpus_path, line_no,
                        "conflicting gold relation for pair (" + fields[0] + "," + fields[1] + ")");
            bag.sentences.push_back(std::move(sent));
        }
    }

    std::ifstream kg(kg_path);
    if (!kg) fail("cannot open KG file " + kg_path);
    std::set<StringTriple> seen;
    line_no = 0;
    while (std::getline(kg, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto fields = split_fields(line, '\t');
        if (fields.size() != 3)
            fail_at(kg_path, line_no, "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
        StringTriple t{fields[0], fields[1], fields[2]};
        if (seen.insert(t).second) ds.triples.push_back(std::move(t));
    }
    return ds;
}

void save_corpus(const std::string& path, const DsreDataset& ds) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) fail("cannot open " + path + " for writing");
    for (const Bag& bag : ds.bags) {
        for (const Sentence& s : bag.sentences) {
            os << bag.e1 << '\t' << bag.e2 << '\t' << bag.relation << '\t' << s.head.begin << ':'
               << s.head.end << '\t' << s.tail.begin << ':' << s.tail.end << '\t';
            for (std::size_t i = 0; i < s.tokens.size(); ++i) {
                if (i) os << ' ';
                os << s.tokens[i];
            }
            os << '\n';
        }
    }
    if (!os) fail("write failed for " + path);
}

void save_kg(const std::string& path, std::span<const StringTriple> triples) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) fail("cannot open " + path + " for writing");
    for (const StringTriple& t : triples) os << t.e1 << '\t' << t.r << '\t' << t.e2 << '\n';
    if (!os) fail("write failed for " + path);
}

void SynthSpec::validate() const {
    if (n_relations < 2) fail("need at least 2 relations");
    if (pairs_per_relation < 1) fail("pairs_per_relation must be >= 1");
    if (templates_per_relation < 1) fail("templates_per_relation must be >= 1");
    if (template_tokens < 4 || template_tokens > 10) fail("template_tokens must lie in 4..10");
    if (bag_size < 1) fail("bag_size must be >= 1");
    if (noise < 0 || noise > bag_size)
        fail("noise " + std::to_string(noise) + " must lie in 0..bag_size");
    if (train_fraction <= 0.0 || train_fraction >= 1.0) fail("train_fraction must lie in (0,1)");
    if (pool_overlap < 0.0 || pool_overlap >= 1.0) fail("pool_overlap must lie in [0,1)");
    if (confusable_group_size < 1 || confusable_group_size > n_relations)
        fail("confusable_group_size must lie in 1..n_relations");
    if (private_templates < 0 || private_templates > templates_per_relation)
        fail("private_templates must lie in 0..templates_per_relation");
    if (entity_pool != 0) {
        const long pairs = static_cast<long>(n_relations) * pairs_per_relation;
        if (entity_pool < 3) fail("entity_pool must be 0 or >= 3");
        if (pairs > static_cast<long>(entity_pool) * (entity_pool - 1) / 2)
            fail("entity_pool too small for " + std::to_string(pairs) + " distinct pairs");
    }
    if (entity_blind < 0.0 || entity_blind > 1.0) fail("entity_blind must lie in [0,1]");
    if (na_pairs < 0) fail("na_pairs must be >= 0");
    if (na_pairs > 0 && entity_pool != 0) {
        const long pairs = static_cast<long>(n_relations) * pairs_per_relation + na_pairs;
        if (pairs > static_cast<long>(entity_pool) * (entity_pool - 1) / 2)
            fail("entity_pool too small for " + std::to_string(pairs) + " distinct pairs");
    }
}

namespace {

struct Template {
    std::vector<std::string> fillers;
    int e1_slot = 0;  // slot index among template_tokens + 2 positions
    int e2_slot = 0;
};

struct SynthInventory {
    std::vector<std::string> relations;
    std::vector<std::vector<Template>> templates;  // per relation
};

SynthInventory build_inventory(const SynthSpec& spec) {
    SynthInventory inv;
    Rng trng(mix_seed(spec.seed, "templates"));
    // each relation draws its fillers from a window into one global word
    // list; consecutive windows overlap by pool_overlap, so some tokens are
    // shared between neighboring relations while each pool stays distinctive
    const int pool = spec.template_tokens * 2;
    const int stride = std::max(1, static_cast<int>(pool * (1.0 - spec.pool_overlap) + 0.5));
    const int shared_count = spec.confusable_group_size > 1
                                 ? spec.templates_per_relation - spec.private_templates
                                 : 0;
    std::vector<Template> group_shared;
    std::vector<std::string> group_words;
    for (int r = 0; r < spec.n_relations; ++r) {
        inv.relations.push_back("rel" + std::to_string(r));
        const int leader = (r / spec.confusable_group_size) * spec.confusable_group_size;
        if (r == leader) {
            // vocabulary window is per group, so grouped relations are not
            // separable by tokens alone
            group_words.clear();
            for (int wi = 0; wi < pool; ++wi)
                group_words.push_back("w" + std::to_string(leader * stride + wi));
            group_shared.clear();
        }
        auto draw = [&]() {
            Template tmpl;
            for (int k = 0; k < spec.template_tokens; ++k)
                tmpl.fillers.push_back(group_words[trng.uniform_int(pool)]);
            const int slots = spec.template_tokens + 2;
            tmpl.e1_slot = trng.uniform_int(slots);
            tmpl.e2_slot = trng.uniform_int(slots - 1);
            if (tmpl.e2_slot >= tmpl.e1_slot) ++tmpl.e2_slot;
            return tmpl;
        };
        if (r == leader)
            for (int t = 0; t < shared_count; ++t) group_shared.push_back(draw());
        std::vector<Template> ts = group_shared;
        while (static_cast<int>(ts.size()) < spec.templates_per_relation) ts.push_back(draw());
        inv.templates.push_back(std::move(ts));
    }
    return inv;
}

Sentence realize(const Template& tmpl, const std::string& e1, const std::string& e2,
                 bool markers, bool blind) {
    Sentence s;
    const int slots = static_cast<int>(tmpl.fillers.size()) + 2;
    std::size_t filler_at = 0;
    for (int slot = 0; slot < slots; ++slot) {
        if (slot == tmpl.e1_slot || slot == tmpl.e2_slot) {
            const bool is_head = slot == tmpl.e1_slot;
            const std::string surface = blind ? std::string("<blank>") : (is_head ? e1 : e2);
            Span span;
            span.begin = static_cast<int>(s.tokens.size());
            if (markers) {
                s.tokens.push_back(is_head ? "<e1>" : "<e2>");
                s.tokens.push_back(surface);
                s.tokens.push_back(is_head ? "</e1>" : "</e2>");
            } else {
                s.tokens.push_back(surface);
            }
            span.end = static_cast<int>(s.tokens.size());
            (is_head ? s.head : s.tail) = span;
        } else {
            s.tokens.push_back(tmpl.fillers[filler_at++]);
        }
    }
    return s;
}

}  // namespace

SynthOutput synthesize_dataset(const SynthSpec& spec) {
    spec.validate();
    const SynthInventory inv = build_inventory(spec);

    SynthOutput out;
    out.train.split = "train";
    out.test.split = "test";

    std::set<StringTriple> triple_set;
    Rng split_rng(mix_seed(spec.seed, "split"));
    Rng noise_rng(mix_seed(spec.seed, std::to_string(spec.noise) + "-noise"));

    // pooled entities: sample distinct pairs, no pair reused in either order
    Rng pair_rng(mix_seed(spec.seed, "pairs"));
    std::set<std::pair<int, int>> used_pairs;
    auto draw_pair = [&](std::string& e1, std::string& e2) {
        for (;;) {
            const int a = pair_rng.uniform_int(spec.entity_pool);
            int b = pair_rng.uniform_int(spec.entity_pool - 1);
            if (b >= a) ++b;
            if (!used_pairs.insert({std::min(a, b), std::max(a, b)}).second) continue;
            e1 = "ent" + std::to_string(a);
            e2 = "ent" + std::to_string(b);
            return;
        }
    };

    for (int r = 0; r < spec.n_relations; ++r) {
        // pair-level split: shuffle pair indices, first chunk trains
        std::vector<int> order(spec.pairs_per_relation);
        for (int i = 0; i < spec.pairs_per_relation; ++i) order[i] = i;
        for (int i = spec.pairs_per_relation - 1; i > 0; --i)
            std::swap(order[i], order[split_rng.uniform_int(i + 1)]);
        const int train_n = std::max(
            1, std::min(spec.pairs_per_relation - 1,
                        static_cast<int>(spec.pairs_per_relation * spec.train_fraction + 0.5)));

        for (int pi = 0; pi < spec.pairs_per_relation; ++pi) {
            const int p = order[pi];
            const std::string stem = "r" + std::to_string(r) + "p" + std::to_string(p);
            Bag bag;
            if (spec.entity_pool > 0) {
                draw_pair(bag.e1, bag.e2);
            } else {
                bag.e1 = "ent_" + stem + "h";
                bag.e2 = "ent_" + stem + "t";
            }
            bag.relation = inv.relations[r];
            triple_set.insert({bag.e1, bag.relation, bag.e2});

            // choose which sentence slots carry noise
            std::vector<bool> noisy(spec.bag_size, false);
            {
                std::vector<int> slots(spec.bag_size);
                for (int i = 0; i < spec.bag_size; ++i) slots[i] = i;
                for (int i = spec.bag_size - 1; i > 0; --i)
                    std::swap(slots[i], slots[noise_rng.uniform_int(i + 1)]);
                for (int i = 0; i < spec.noise; ++i) noisy[slots[i]] = true;
            }

            for (int slot = 0; slot < spec.bag_size; ++slot) {
                // per-slot stream: a slot that stays valid across noise
                // ratios realizes the same template
                Rng slot_rng(mix_seed(spec.seed, stem + "#" + std::to_string(slot)));
                const bool blind = slot_rng.uniform() < spec.entity_blind;
                int source_rel = r;
                if (noisy[slot]) {
                    source_rel = slot_rng.uniform_int(spec.n_relations - 1);
                    if (source_rel >= r) ++source_rel;
                }
                const auto& ts = inv.templates[source_rel];
                Sentence s = realize(ts[slot_rng.uniform_int(static_cast<int>(ts.size()))], bag.e1,
                                     bag.e2, spec.entity_markers, blind);
                s.noisy = noisy[slot];
                s.source_relation = inv.relations[source_rel];
                bag.sentences.push_back(std::move(s));
            }
            (pi < train_n ? out.train : out.test).bags.push_back(std::move(bag));
        }
    }

    // NA bags: entity pairs with no KG fact; every sentence borrows some
    // relation's context, so only context-vs-fact reasoning can score
    // their candidates down
    if (spec.na_pairs > 0) {
        std::vector<int> order(spec.na_pairs);
        for (int i = 0; i < spec.na_pairs; ++i) order[i] = i;
        for (int i = spec.na_pairs - 1; i > 0; --i)
            std::swap(order[i], order[split_rng.uniform_int(i + 1)]);
        const int train_n = std::max(
            1, std::min(spec.na_pairs - 1,
                        static_cast<int>(spec.na_pairs * spec.train_fraction + 0.5)));
        for (int pi = 0; pi < spec.na_pairs; ++pi) {
            const int p = order[pi];
            const std::string stem = "naP" + std::to_string(p);
            Bag bag;
            if (spec.entity_pool > 0) {
                draw_pair(bag.e1, bag.e2);
            } else {
                bag.e1 = "ent_" + stem + "h";
                bag.e2 = "ent_" + stem + "t";
            }
            bag.relation = kNaRelation;
            for (int slot = 0; slot < spec.bag_size; ++slot) {
                Rng slot_rng(mix_seed(spec.seed, stem + "#" + std::to_string(slot)));
                const bool blind = slot_rng.uniform() < spec.entity_blind;
                const int source_rel = slot_rng.uniform_int(spec.n_relations);
                const auto& ts = inv.templates[source_rel];
                Sentence s = realize(ts[slot_rng.uniform_int(static_cast<int>(ts.size()))], bag.e1,
                                     bag.e2, spec.entity_markers, blind);
                s.noisy = true;
                s.source_relation = inv.relations[source_rel];
                bag.sentences.push_back(std::move(s));
            }
            (pi < train_n ? out.train : out.test).bags.push_back(std::move(bag));
        }
    }

    std::vector<StringTriple> triples(triple_set.begin(), triple_set.end());
    out.train.triples = triples;
    out.test.triples = std::move(triples);

    auto sort_bags = [](DsreDataset& ds) {
        std::sort(ds.bags.begin(), ds.bags.end(), [](const Bag& a, const Bag& b) {
            return std::tie(a.e1, a.e2) < std::tie(b.e1, b.e2);
        });
    };
    sort_bags(out.train);
    sort_bags(out.test);
    return out;
}

std::vector<SynthOutput> noise_sweep(const SynthSpec& base, std::span<const int> noise_levels) {
    std::vector<SynthOutput> out;
    for (int m : noise_levels) {
        SynthSpec spec = base;
        spec.noise = m;
        out.push_back(synthesize_dataset(spec));
    }
    return out;
}

std::vector<std::vector<int>> batch_bags(int n_bags, int batch_size, std::uint64_t seed) {
    if (batch_size < 1) fail("batch_size must be >= 1");
    std::vector<int> order(n_bags);
    for (int i = 0; i < n_bags; ++i) order[i] = i;
    Rng rng(mix_seed(seed, "batch"));
    for (int i = n_bags - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
    std::vector<std::vector<int>> batches;
    for (int at = 0; at < n_bags; at += batch_size) {
        const int end = std::min(n_bags, at + batch_size);
        batches.emplace_back(order.begin() + at, order.begin() + end);
    }
    return batches;
}

int Vocab::id(const std::string& token) const {
    auto it = index.find(token);
    if (it == index.end()) fail("token '" + token + "' not in vocabulary");
    return it->second;
}

CorpusIndex CorpusIndex::build(std::span<const DsreDataset* const> splits) {
    std::set<std::string> tokens, relations, entities;
    for (const DsreDataset* ds : splits) {
        for (const Bag& bag : ds->bags) {
            entities.insert(bag.e1);
            entities.insert(bag.e2);
            if (bag.relation != kNaRelation) relations.insert(bag.relation);
            for (const Sentence& s : bag.sentences)
                for (const std::string& t : s.tokens) tokens.insert(t);
        }
        for (const StringTriple& t : ds->triples) {
            entities.insert(t.e1);
            entities.insert(t.e2);
            relations.insert(t.r);
        }
    }
    CorpusIndex idx;
    idx.text_vocab.tokens.assign(tokens.begin(), tokens.end());
    for (std::size_t i = 0; i < idx.text_vocab.tokens.size(); ++i)
        idx.text_vocab.index.emplace(idx.text_vocab.tokens[i], static_cast<int>(i));
    idx.relations.assign(relations.begin(), relations.end());
    for (std::size_t i = 0; i < idx.relations.size(); ++i)
        idx.relation_idx.emplace(idx.relations[i], static_cast<int>(i));
    idx.entities.assign(entities.begin(), entities.end());
    for (std::size_t i = 0; i < idx.entities.size(); ++i)
        idx.entity_idx.emplace(idx.entities[i], static_cast<int>(i));
    return idx;
}

KgVocabLayout CorpusIndex::kg_layout() const {
    return {static_cast<int>(relations.size()), static_cast<int>(entities.size())};
}

int CorpusIndex::target_id(const std::string& relation) const {
    if (relation == kNaRelation) return 0;
    auto it = relation_idx.find(relation);
    if (it == relation_idx.end()) fail("relation '" + relation + "' not in inventory");
    return it->second + 1;
}

const std::string& CorpusIndex::target_name(int id) const {
    static const std::string na = kNaRelation;
    if (id == 0) return na;
    return relations.at(static_cast<std::size_t>(id - 1));
}

IndexedDataset index_dataset(const DsreDataset& ds, const CorpusIndex& index) {
    IndexedDataset out;
    const KgVocabLayout layout = index.kg_layout();
    for (const Bag& bag : ds.bags) {
        IndexedBag ib;
        ib.e1 = bag.e1;
        ib.e2 = bag.e2;
        ib.e1_idx = index.entity_idx.at(bag.e1);
        ib.e2_idx = index.entity_idx.at(bag.e2);
        ib.gold_target = index.target_id(bag.relation);
        ib.masked = {layout.n_relations + ib.e1_idx, layout.mask_id(), layout.n_relations + ib.e2_idx};
        for (const Sentence& s : bag.sentences) {
            TokenizedSentence ts;
            for (const std::string& tok : s.tokens) ts.tokens.push_back(index.text_vocab.id(tok));
            ts.head = s.head;
            ts.tail = s.tail;
            ib.sentences.push_back(std::move(ts));
        }
        out.bags.push_back(std::move(ib));
    }
    for (const StringTriple& t : ds.triples) {
        Triple dense{index.entity_idx.at(t.e1), index.relation_idx.at(t.r), index.entity_idx.at(t.e2)};
        out.triples.push_back(dense);
        out.gold.insert({{dense.e1, dense.e2}, dense.r});
    }
    return out;
}

}  // namespace xbe
