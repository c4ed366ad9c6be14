#include "xbe/xstitch.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace xbe {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("xbe::xstitch: " + msg); }

void check_pair(const Tensor& s, const Tensor& t) {
    if (s.rank() != 2 || t.rank() != 2) fail("expected rank-2 streams");
    if (t.rows() != 3) fail("triple stream must be 3 rows, got " + shape_str(t.shape()));
    if (s.cols() != t.cols())
        fail("stream widths disagree: " + shape_str(s.shape()) + " vs " + shape_str(t.shape()));
}

}  // namespace

XStitchParams XStitchParams::init(int d, int hidden, Rng& rng, double lambda_t, double lambda_s,
                                  GateMode mode, double fixed_gate) {
    const double proj_std = std::sqrt(2.0 / (d + d));
    const double mlp_std = std::sqrt(2.0 / (d + hidden));
    XStitchParams p;
    p.wp_t2s = Tensor::param({d, d}, rng, proj_std);
    p.wp_s2t = Tensor::param({d, d}, rng, proj_std);
    p.wg1_t2s = Tensor::param({hidden, d}, rng, mlp_std);
    // zero second layers: a fresh stitch site starts at its zero-MLP limit
    // (gate 0.5, nothing injected) and learns to open up from there
    p.wg2_t2s = Tensor::param_zeros({d, hidden});
    p.wg1_s2t = Tensor::param({hidden, d}, rng, mlp_std);
    p.wg2_s2t = Tensor::param_zeros({d, hidden});
    p.lambda_t = lambda_t;
    p.lambda_s = lambda_s;
    p.gate_mode = mode;
    p.fixed_gate = fixed_gate;
    p.validate();
    return p;
}

void XStitchParams::validate() const {
    if (lambda_t < 0.0 || lambda_s < 0.0) fail("lambda weights must be nonnegative");
    if (fixed_gate < 0.0 || fixed_gate > 1.0) fail("fixed gate must lie in [0,1]");
}

void XStitchParams::collect_params(const std::string& prefix,
                                   std::vector<std::pair<std::string, Tensor>>& out) const {
    out.emplace_back(prefix + ".wp_t2s", wp_t2s);
    out.emplace_back(prefix + ".wp_s2t", wp_s2t);
    out.emplace_back(prefix + ".wg1_t2s", wg1_t2s);
    out.emplace_back(prefix + ".wg2_t2s", wg2_t2s);
    out.emplace_back(prefix + ".wg1_s2t", wg1_s2t);
    out.emplace_back(prefix + ".wg2_s2t", wg2_s2t);
}

std::pair<Tensor, Tensor> cross_attention(const Tensor& s, const Tensor& t, const XStitchParams& p) {
    check_pair(s, t);
    Tensor proj_t2s = matmul_nt(t, p.wp_t2s);  // [3,d]
    Tensor proj_s2t = matmul_nt(t, p.wp_s2t);
    Tensor a_t2s = softmax(matmul_nt(s, proj_t2s), 1);  // over triple positions
    Tensor a_s2t = softmax(matmul_nt(s, proj_s2t), 0);  // over text positions
    return {a_t2s, a_s2t};
}

namespace {

Tensor two_layer(const Tensor& x, const Tensor& w1, const Tensor& w2) {
    return matmul_nt(relu(matmul_nt(x, w1)), w2);
}

MixResult gated_mix(const Tensor& original, const Tensor& injected, double lambda,
                    const XStitchParams& p) {
    Tensor gate;
    if (p.gate_mode == GateMode::dynamic) {
        gate = sigmoid(injected);
    } else {
        gate = Tensor::full(original.shape(), p.fixed_gate);
    }
    Tensor mixed = add(hadamard(gate, original), scale(injected, lambda));
    return {mixed, gate};
}

}  // namespace

MixResult mix_text(const Tensor& s, const Tensor& t, const Tensor& a_t2s, const XStitchParams& p) {
    check_pair(s, t);
    if (a_t2s.rows() != s.rows() || a_t2s.cols() != 3)
        fail("A^{t2s} must be [N,3], got " + shape_str(a_t2s.shape()));
    Tensor t2s = two_layer(matmul(a_t2s, t), p.wg1_t2s, p.wg2_t2s);  // [N,d]
    return gated_mix(s, t2s, p.lambda_t, p);
}

MixResult mix_kg(const Tensor& s, const Tensor& t, const Tensor& a_s2t, const XStitchParams& p) {
    check_pair(s, t);
    if (a_s2t.rows() != s.rows() || a_s2t.cols() != 3)
        fail("A^{s2t} must be [N,3], got " + shape_str(a_s2t.shape()));
    Tensor s2t = two_layer(matmul_tn(a_s2t, s), p.wg1_s2t, p.wg2_s2t);  // [3,d]
    return gated_mix(t, s2t, p.lambda_s, p);
}

void GateTrace::record(int layer, const std::string& direction, const Tensor& gate) {
    GateEntry e;
    e.layer = layer;
    e.direction = direction;
    e.count = gate.numel();
    for (double v : gate.data()) e.sum += v;
    e.mean = e.sum / static_cast<double>(e.count);
    e.gates = gate;
    entries.push_back(std::move(e));
}

double GateTrace::total_sum(const std::string& direction) const {
    double s = 0.0;
    for (const auto& e : entries)
        if (e.direction == direction) s += e.sum;
    return s;
}

std::int64_t GateTrace::total_count(const std::string& direction) const {
    std::int64_t c = 0;
    for (const auto& e : entries)
        if (e.direction == direction) c += e.count;
    return c;
}

void write_gate_trace_header(std::ostream& os) {
    os << "example_id,direction,layer,gate_sum,gate_mean\n";
}

void append_gate_trace_csv(std::ostream& os, const std::string& example_id, const GateTrace& trace) {
    for (const auto& e : trace.entries) {
        os << example_id << ',' << e.direction << ',' << e.layer << ',';
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", e.sum, e.mean);
        os << buf;
    }
}

}  // namespace xbe
