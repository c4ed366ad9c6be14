#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xbe/rng.hpp"

namespace xbe {

// Dense-index KG triple (entities and relations each in their own 0-based
// index space, unlike the KG-encoder vocabulary ids).
struct Triple {
    int e1 = 0;
    int r = 0;
    int e2 = 0;

    friend bool operator==(const Triple&, const Triple&) = default;
    friend auto operator<=>(const Triple&, const Triple&) = default;
};

// Translation-based KG completion embeddings. Trained once, then frozen;
// the model reads entity translations out of it as the r_ht feature.
class TransETable {
public:
    TransETable() = default;
    TransETable(int n_entities, int n_relations, int dim, Rng& rng);

    int dim() const { return dim_; }
    int n_entities() const { return n_entities_; }
    int n_relations() const { return n_relations_; }
    bool trained() const { return trained_; }
    void mark_trained() { trained_ = true; }

    std::span<const double> entity(int e) const;
    std::span<const double> relation(int r) const;
    std::span<double> entity_mut(int e);
    std::span<double> relation_mut(int r);

    // ‖e1 + r − e2‖₂ (smaller = more plausible)
    double score(const Triple& t) const;
    // emb(e2) − emb(e1)
    std::vector<double> translation(int e1, int e2) const;

    void renormalize_entity(int e);

    std::vector<double>& entity_storage() { return entities_; }
    std::vector<double>& relation_storage() { return relations_; }
    const std::vector<double>& entity_storage() const { return entities_; }
    const std::vector<double>& relation_storage() const { return relations_; }

private:
    int n_entities_ = 0;
    int n_relations_ = 0;
    int dim_ = 0;
    bool trained_ = false;
    std::vector<double> entities_;
    std::vector<double> relations_;

    void check_entity(int e) const;
    void check_relation(int r) const;
};

struct TransETrainLog {
    std::vector<double> epoch_loss;  // mean hinge loss per epoch
};

// Margin-ranking training with uniform head/tail corruption. Entity rows
// are renormalized to unit length after every update.
TransETrainLog transe_train(TransETable& table, std::span<const Triple> triples, int epochs,
                            double margin, double lr, Rng& rng);

}  // namespace xbe
