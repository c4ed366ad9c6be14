#include "xbe/transe.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace xbe {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("xbe::transe: " + msg); }

double l2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

TransETable::TransETable(int n_entities, int n_relations, int dim, Rng& rng)
    : n_entities_(n_entities), n_relations_(n_relations), dim_(dim) {
    if (n_entities < 1 || n_relations < 1 || dim < 1) fail("table dimensions must be positive");
    entities_.resize(static_cast<std::size_t>(n_entities) * dim);
    relations_.resize(static_cast<std::size_t>(n_relations) * dim);
    const double bound = 6.0 / std::sqrt(static_cast<double>(dim));
    for (auto& v : entities_) v = rng.uniform(-bound, bound);
    for (auto& v : relations_) v = rng.uniform(-bound, bound);
    for (int e = 0; e < n_entities; ++e) renormalize_entity(e);
    for (int r = 0; r < n_relations; ++r) {
        auto rv = relation_mut(r);
        const double n = l2(rv);
        if (n > 0)
            for (auto& x : rv) x /= n;
    }
}

void TransETable::check_entity(int e) const {
    if (e < 0 || e >= n_entities_) fail("unknown entity id " + std::to_string(e));
}

void TransETable::check_relation(int r) const {
    if (r < 0 || r >= n_relations_) fail("unknown relation id " + std::to_string(r));
}

std::span<const double> TransETable::entity(int e) const {
    check_entity(e);
    return {entities_.data() + static_cast<std::size_t>(e) * dim_, static_cast<std::size_t>(dim_)};
}

std::span<const double> TransETable::relation(int r) const {
    check_relation(r);
    return {relations_.data() + static_cast<std::size_t>(r) * dim_, static_cast<std::size_t>(dim_)};
}

std::span<double> TransETable::entity_mut(int e) {
    check_entity(e);
    return {entities_.data() + static_cast<std::size_t>(e) * dim_, static_cast<std::size_t>(dim_)};
}

std::span<double> TransETable::relation_mut(int r) {
    check_relation(r);
    return {relations_.data() + static_cast<std::size_t>(r) * dim_, static_cast<std::size_t>(dim_)};
}

double TransETable::score(const Triple& t) const {
    auto h = entity(t.e1);
    auto r = relation(t.r);
    auto tl = entity(t.e2);
    double s = 0.0;
    for (int i = 0; i < dim_; ++i) {
        const double d = h[i] + r[i] - tl[i];
        s += d * d;
    }
    return std::sqrt(s);
}

std::vector<double> TransETable::translation(int e1, int e2) const {
    auto a = entity(e1);
    auto b = entity(e2);
    std::vector<double> out(dim_);
    for (int i = 0; i < dim_; ++i) out[i] = b[i] - a[i];
    return out;
}

void TransETable::renormalize_entity(int e) {
    auto v = entity_mut(e);
    const double n = l2(v);
    if (n > 0)
        for (auto& x : v) x /= n;
}

TransETrainLog transe_train(TransETable& table, std::span<const Triple> triples, int epochs,
                            double margin, double lr, Rng& rng) {
    if (triples.empty()) fail("no triples to train on");
    if (margin < 0.0) fail("margin must be nonnegative");
    for (const Triple& t : triples) {
        table.entity(t.e1);
        table.entity(t.e2);
        table.relation(t.r);
    }

    const int dim = table.dim();
    TransETrainLog log;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (const Triple& pos : triples) {
            Triple neg = pos;
            if (rng.uniform() < 0.5) {
                neg.e1 = rng.uniform_int(table.n_entities());
            } else {
                neg.e2 = rng.uniform_int(table.n_entities());
            }
            const double dp = table.score(pos);
            const double dn = table.score(neg);
            const double loss = margin + dp - dn;
            if (loss <= 0.0) continue;
            epoch_loss += loss;

            // subgradient of ‖h+r−t‖ at the three embeddings, for both triples
            auto step = [&](const Triple& t, double sign, double dist) {
                if (dist <= 1e-12) return;
                auto h = table.entity_mut(t.e1);
                auto r = table.relation_mut(t.r);
                auto tl = table.entity_mut(t.e2);
                for (int i = 0; i < dim; ++i) {
                    const double g = sign * (h[i] + r[i] - tl[i]) / dist;
                    h[i] -= lr * g;
                    r[i] -= lr * g;
                    tl[i] += lr * g;
                }
            };
            step(pos, 1.0, dp);
            step(neg, -1.0, dn);
            table.renormalize_entity(pos.e1);
            table.renormalize_entity(pos.e2);
            table.renormalize_entity(neg.e1);
            table.renormalize_entity(neg.e2);
        }
        log.epoch_loss.push_back(epoch_loss / static_cast<double>(triples.size()));
    }
    table.mark_trained();
    return log;
}

}  // namespace xbe
