#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "xbe/tensor.hpp"

namespace xbe {

enum class GateMode { dynamic, fixed };

// Trainable pieces of one cross-stitch site: the two attention projections
// and the two-layer MLPs that produce the exchanged representations.
// No biases anywhere, so zeroing a second-layer weight silences the path.
struct XStitchParams {
    Tensor wp_t2s, wp_s2t;    // [d,d]
    Tensor wg1_t2s, wg2_t2s;  // [d',d], [d,d']
    Tensor wg1_s2t, wg2_s2t;
    double lambda_t = 1.0;
    double lambda_s = 1e-4;
    GateMode gate_mode = GateMode::dynamic;
    double fixed_gate = 0.5;

    static XStitchParams init(int d, int hidden, Rng& rng, double lambda_t, double lambda_s,
                              GateMode mode, double fixed_gate);
    void validate() const;
    void collect_params(const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor>>& out) const;
};

// Both attention maps come from one N×3 score geometry:
// t2s normalizes over the 3 triple positions for each text token (rows sum
// to 1), s2t over the N text positions for each triple position (columns
// sum to 1).
std::pair<Tensor, Tensor> cross_attention(const Tensor& s, const Tensor& t, const XStitchParams& p);

struct MixResult {
    Tensor mixed;
    Tensor gate;
};

// S' = G ⊙ S + λ_t · T^{t2s},  T^{t2s} = Wg2·ReLU(Wg1·(A^{t2s}·T)) row-wise
MixResult mix_text(const Tensor& s, const Tensor& t, const Tensor& a_t2s, const XStitchParams& p);
// T' = G ⊙ T + λ_s · S^{s2t},  S^{s2t} = Wg2·ReLU(Wg1·((A^{s2t})ᵀ·S))
MixResult mix_kg(const Tensor& s, const Tensor& t, const Tensor& a_s2t, const XStitchParams& p);

struct GateEntry {
    int layer = 0;            // 1-based stitch site (after this block)
    std::string direction;    // "t2s" or "s2t"
    double sum = 0.0;
    double mean = 0.0;
    std::int64_t count = 0;
    Tensor gates;             // recorded activations (N×d or 3×d)
};

struct GateTrace {
    std::vector<GateEntry> entries;

    void record(int layer, const std::string& direction, const Tensor& gate);
    double total_sum(const std::string& direction) const;
    std::int64_t total_count(const std::string& direction) const;
};

void write_gate_trace_header(std::ostream& os);
void append_gate_trace_csv(std::ostream& os, const std::string& example_id, const GateTrace& trace);

}  // namespace xbe
