#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "xbe/encoders.hpp"
#include "xbe/transe.hpp"

namespace xbe {

inline constexpr const char* kNaRelation = "NA";

struct Sentence {
    std::vector<std::string> tokens;
    Span head;
    Span tail;
    // generator bookkeeping; never serialized
    bool noisy = false;
    std::string source_relation;
};

struct Bag {
    std::string e1, e2;
    std::string relation;  // gold label
    std::vector<Sentence> sentences;
};

struct StringTriple {
    std::string e1, r, e2;
    friend bool operator==(const StringTriple&, const StringTriple&) = default;
    friend auto operator<=>(const StringTriple&, const StringTriple&) = default;
};

// One split of a DS-RE corpus: bags keyed by entity pair plus the KG triple
// inventory (shared across splits).
struct DsreDataset {
    std::string split;  // "train", "test" or ""
    std::vector<StringTriple> triples;
    std::vector<Bag> bags;

    const Bag* find_bag(const std::string& e1, const std::string& e2) const;
};

// Corpus TSV: e1 <TAB> e2 <TAB> relation <TAB> a:b <TAB> c:d <TAB> tokens.
// KG TSV: e1 <TAB> relation <TAB> e2. '#' starts a comment line.
DsreDataset load_dataset(const std::string& corpus_path, const std::string& kg_path);
void save_corpus(const std::string& path, const DsreDataset& ds);
void save_kg(const std::string& path, std::span<const StringTriple> triples);

struct SynthSpec {
    int n_relations = 4;
    int pairs_per_relation = 50;     // entity pairs (= bags) generated per relation
    int templates_per_relation = 6;
    int template_tokens = 6;         // filler tokens per template, 4..10
    int bag_size = 5;                // n
    int noise = 0;                   // m noisy sentences per bag
    double train_fraction = 0.75;    // pair-level split
    std::uint64_t seed = 1;
    bool entity_markers = true;      // <e1> ... </e1> marker tokens around mentions
    // fraction of each relation's keyword pool shared with the next
    // relation's; 0 keeps the pools fully disjoint
    double pool_overlap = 0.0;
    // relations in groups of this size share one template inventory, so
    // their sentences are textually interchangeable and only the KG can
    // tell the members apart; 1 disables grouping
    int confusable_group_size = 1;
    // of the templates_per_relation templates, this many stay private to
    // the relation even inside a confusable group; dials how much of the
    // text signal survives grouping
    int private_templates = 0;
    // entities are drawn from a shared pool of this size, so each entity
    // recurs across pairs and relations and its surface token alone cannot
    // identify a bag's label; 0 mints fresh entities per pair instead
    int entity_pool = 0;
    // fraction of sentences whose mention surfaces are replaced by a
    // <blank> token (markers and spans stay); blocks pair memorization in
    // the text encoder the way entity blinding does in DS-RE pipelines
    double entity_blind = 0.0;
    // extra NA-labeled bags (pairs with no KG fact, sentences drawn from
    // random contexts); ranked evaluation treats their candidates as
    // incorrect, so something must learn to score them down
    int na_pairs = 0;

    void validate() const;
};

struct SynthOutput {
    DsreDataset train;
    DsreDataset test;
};

SynthOutput synthesize_dataset(const SynthSpec& spec);

// one synthesis per noise level, sharing pair/template inventories
std::vector<SynthOutput> noise_sweep(const SynthSpec& base, std::span<const int> noise_levels);

// deterministic shuffled index batches; the final partial batch is emitted
std::vector<std::vector<int>> batch_bags(int n_bags, int batch_size, std::uint64_t seed);

// ---- model-facing indexing ----

struct Vocab {
    std::vector<std::string> tokens;  // sorted unique
    std::unordered_map<std::string, int> index;

    int id(const std::string& token) const;
    int size() const { return static_cast<int>(tokens.size()); }
};

// Inventories shared across splits so that train and test agree on ids.
struct CorpusIndex {
    Vocab text_vocab;
    std::vector<std::string> relations;  // sorted unique, NA excluded
    std::vector<std::string> entities;   // sorted unique
    std::unordered_map<std::string, int> relation_idx;
    std::unordered_map<std::string, int> entity_idx;

    static CorpusIndex build(std::span<const DsreDataset* const> splits);

    KgVocabLayout kg_layout() const;
    int n_target_relations() const { return static_cast<int>(relations.size()) + 1; }
    // NA -> 0, otherwise 1 + dense relation index
    int target_id(const std::string& relation) const;
    const std::string& target_name(int id) const;
};

struct IndexedBag {
    std::string e1, e2;
    int e1_idx = 0, e2_idx = 0;   // dense entity indices
    int gold_target = 0;           // classifier target (0 = NA)
    KgTriple masked;               // (e1, [M], e2) in KG-vocab ids
    std::vector<TokenizedSentence> sentences;
};

struct IndexedDataset {
    std::vector<IndexedBag> bags;
    std::vector<Triple> triples;               // dense-index KG triples
    std::set<std::pair<std::pair<int, int>, int>> gold;  // ((e1,e2), relation idx)
};

IndexedDataset index_dataset(const DsreDataset& ds, const CorpusIndex& index);

}  // namespace xbe
