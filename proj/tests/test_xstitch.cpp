#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>
#include <vector>

#include "testutil.hpp"
#include "xbe/xstitch.hpp"

using namespace xbe;

namespace {

XStitchParams random_params(int d, Rng& rng, double lt = 1.0, double ls = 0.5) {
    XStitchParams p = XStitchParams::init(d, d, rng, lt, ls, GateMode::dynamic, 0.5);
    // second layers are zero-initialized; op tests want a generic point
    p.wg2_t2s = Tensor::param({d, d}, rng, 0.5);
    p.wg2_s2t = Tensor::param({d, d}, rng, 0.5);
    return p;
}

// plain-loop reference for the full attention + mix pipeline
struct Reference {
    std::vector<std::vector<double>> a_t2s, a_s2t, s_new, t_new;
};

std::vector<std::vector<double>> to_rows(const Tensor& t) {
    std::vector<std::vector<double>> out(t.rows(), std::vector<double>(t.cols()));
    for (int i = 0; i < t.rows(); ++i)
        for (int j = 0; j < t.cols(); ++j) out[i][j] = t.at(i, j);
    return out;
}

std::vector<std::vector<double>> mat_nt(const std::vector<std::vector<double>>& a,
                                        const std::vector<std::vector<double>>& b) {
    std::vector<std::vector<double>> c(a.size(), std::vector<double>(b.size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            for (std::size_t k = 0; k < a[0].size(); ++k) c[i][j] += a[i][k] * b[j][k];
    return c;
}

Reference reference_pipeline(const Tensor& s, const Tensor& t, const XStitchParams& p) {
    const auto sv = to_rows(s), tv = to_rows(t);
    const auto wp1 = to_rows(p.wp_t2s), wp2 = to_rows(p.wp_s2t);
    const int n = s.rows(), d = s.cols();

    auto scores = [&](const std::vector<std::vector<double>>& wp) {
        auto proj = mat_nt(tv, wp);  // [3,d]
        return mat_nt(sv, proj);     // [n,3]
    };
    auto sc1 = scores(wp1), sc2 = scores(wp2);

    Reference ref;
    ref.a_t2s.assign(n, std::vector<double>(3));
    for (int i = 0; i < n; ++i) {
        double mx = std::max({sc1[i][0], sc1[i][1], sc1[i][2]});
        double den = 0.0;
        for (int k = 0; k < 3; ++k) den += std::exp(sc1[i][k] - mx);
        for (int k = 0; k < 3; ++k) ref.a_t2s[i][k] = std::exp(sc1[i][k] - mx) / den;
    }
    ref.a_s2t.assign(n, std::vector<double>(3));
    for (int k = 0; k < 3; ++k) {
        double mx = sc2[0][k];
        for (int i = 1; i < n; ++i) mx = std::max(mx, sc2[i][k]);
        double den = 0.0;
        for (int i = 0; i < n; ++i) den += std::exp(sc2[i][k] - mx);
        for (int i = 0; i < n; ++i) ref.a_s2t[i][k] = std::exp(sc2[i][k] - mx) / den;
    }

    auto mlp = [&](const std::vector<std::vector<double>>& x, const Tensor& w1t, const Tensor& w2t) {
        auto w1 = to_rows(w1t), w2 = to_rows(w2t);
        auto h = mat_nt(x, w1);
        for (auto& r : h)
            for (auto& v : r) v = std::max(0.0, v);
        return mat_nt(h, w2);
    };

    std::vector<std::vector<double>> ctx(n, std::vector<double>(d, 0.0));
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < d; ++j) ctx[i][j] += ref.a_t2s[i][k] * tv[k][j];
    auto t2s = mlp(ctx, p.wg1_t2s, p.wg2_t2s);
    ref.s_new.assign(n, std::vector<double>(d));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            const double g = 1.0 / (1.0 + std::exp(-t2s[i][j]));
            ref.s_new[i][j] = g * sv[i][j] + p.lambda_t * t2s[i][j];
        }

    std::vector<std::vector<double>> ctx2(3, std::vector<double>(d, 0.0));
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) ctx2[k][j] += ref.a_s2t[i][k] * sv[i][j];
    auto s2t = mlp(ctx2, p.wg1_s2t, p.wg2_s2t);
    ref.t_new.assign(3, std::vector<double>(d));
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < d; ++j) {
            const double g = 1.0 / (1.0 + std::exp(-s2t[k][j]));
            ref.t_new[k][j] = g * tv[k][j] + p.lambda_s * s2t[k][j];
        }
    return ref;
}

}  // namespace

TEST_CASE("single text token makes s2t attention all ones") {
    Rng rng(31);
    XStitchParams p = random_params(6, rng);
    Tensor s = Tensor::randn({1, 6}, rng, 1.0);
    Tensor t = Tensor::randn({3, 6}, rng, 1.0);
    auto [a_t2s, a_s2t] = cross_attention(s, t, p);
    CHECK(a_s2t.rows() == 1);
    for (int k = 0; k < 3; ++k) CHECK(a_s2t.at(0, k) == 1.0);
}

TEST_CASE("zero projections give uniform t2s attention") {
    Rng rng(32);
    XStitchParams p = random_params(4, rng);
    p.wp_t2s = Tensor::param_zeros({4, 4});
    Tensor s = Tensor::randn({5, 4}, rng, 1.0);
    Tensor t = Tensor::randn({3, 4}, rng, 1.0);
    auto [a_t2s, a_s2t] = cross_attention(s, t, p);
    for (int i = 0; i < 5; ++i)
        for (int k = 0; k < 3; ++k) CHECK(a_t2s.at(i, k) == doctest::Approx(1.0 / 3).epsilon(1e-14));
}

TEST_CASE("attention and mixes match the plain-loop reference") {
    Rng rng(33);
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 2 + rng.uniform_int(4), d = 4;
        XStitchParams p = random_params(d, rng);
        Tensor s = Tensor::randn({n, d}, rng, 1.0);
        Tensor t = Tensor::randn({3, d}, rng, 1.0);
        auto ref = reference_pipeline(s, t, p);
        auto [a_t2s, a_s2t] = cross_attention(s, t, p);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < 3; ++k) {
                CHECK(a_t2s.at(i, k) == doctest::Approx(ref.a_t2s[i][k]).epsilon(1e-12));
                CHECK(a_s2t.at(i, k) == doctest::Approx(ref.a_s2t[i][k]).epsilon(1e-12));
            }
        MixResult ms = mix_text(s, t, a_t2s, p);
        MixResult mt = mix_kg(s, t, a_s2t, p);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
                CHECK(ms.mixed.at(i, j) == doctest::Approx(ref.s_new[i][j]).epsilon(1e-12));
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < d; ++j)
                CHECK(mt.mixed.at(k, j) == doctest::Approx(ref.t_new[k][j]).epsilon(1e-12));
    }
}

TEST_CASE("attention normalization sums and gate range hold on random instances") {
    Rng rng(34);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + rng.uniform_int(6), d = 4;
        XStitchParams p = random_params(d, rng);
        Tensor s = Tensor::randn({n, d}, rng, 2.0);
        Tensor t = Tensor::randn({3, d}, rng, 2.0);
        auto [a_t2s, a_s2t] = cross_attention(s, t, p);
        for (int i = 0; i < n; ++i) {
            double rs = 0.0;
            for (int k = 0; k < 3; ++k) rs += a_t2s.at(i, k);
            CHECK(std::fabs(rs - 1.0) <= 1e-12);
        }
        for (int k = 0; k < 3; ++k) {
            double cs = 0.0;
            for (int i = 0; i < n; ++i) cs += a_s2t.at(i, k);
            CHECK(std::fabs(cs - 1.0) <= 1e-12);
        }
        MixResult ms = mix_text(s, t, a_t2s, p);
        MixResult mt = mix_kg(s, t, a_s2t, p);
        for (double g : ms.gate.data()) CHECK((g > 0.0 && g < 1.0));
        for (double g : mt.gate.data()) CHECK((g > 0.0 && g < 1.0));
    }
}

TEST_CASE("zero second MLP layer halves the original stream") {
    Rng rng(35);
    const int d = 4, n = 3;
    XStitchParams p = random_params(d, rng, 1.0, 1.0);
    p.wg2_t2s = Tensor::param_zeros({d, d});
    p.wg2_s2t = Tensor::param_zeros({d, d});
    Tensor s = Tensor::randn({n, d}, rng, 1.0);
    Tensor t = Tensor::randn({3, d}, rng, 1.0);
    auto [a_t2s, a_s2t] = cross_attention(s, t, p);
    MixResult ms = mix_text(s, t, a_t2s, p);
    MixResult mt = mix_kg(s, t, a_s2t, p);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            CHECK(ms.gate.at(i, j) == 0.5);
            CHECK(ms.mixed.at(i, j) == 0.5 * s.at(i, j));
        }
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < d; ++j) CHECK(mt.mixed.at(k, j) == 0.5 * t.at(k, j));
}

TEST_CASE("fixed gate 0.5 with lambda zero halves exactly") {
    Rng rng(36);
    const int d = 4;
    XStitchParams p = XStitchParams::init(d, d, rng, 0.0, 0.0, GateMode::fixed, 0.5);
    Tensor s = Tensor::randn({4, d}, rng, 1.0);
    Tensor t = Tensor::randn({3, d}, rng, 1.0);
    auto [a_t2s, a_s2t] = cross_attention(s, t, p);
    MixResult ms = mix_text(s, t, a_t2s, p);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < d; ++j) CHECK(ms.mixed.at(i, j) == 0.5 * s.at(i, j));
}

TEST_CASE("saturated gates with lambda_s zero keep the triple stream") {
    Rng rng(37);
    const int d = 4;
    XStitchParams p = XStitchParams::init(d, d, rng, 1.0, 0.0, GateMode::dynamic, 0.5);
    p.wg1_s2t = Tensor::param_full({d, d}, 8.0);
    p.wg2_s2t = Tensor::param_full({d, d}, 8.0);
    Tensor s = Tensor::full({4, d}, 1.0);
    Tensor t = Tensor::randn({3, d}, rng, 1.0);
    auto [a_t2s, a_s2t] = cross_attention(s, t, p);
    MixResult mt = mix_kg(s, t, a_s2t, p);
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < d; ++j)
            CHECK(mt.mixed.at(k, j) == doctest::Approx(t.at(k, j)).epsilon(1e-9));
}

TEST_CASE("information flows in both directions") {
    Rng rng(38);
    const int d = 4, n = 3;
    XStitchParams p = random_params(d, rng, 1.0, 0.7);
    Tensor s = Tensor::randn({n, d}, rng, 1.0);
    Tensor t = Tensor::randn({3, d}, rng, 1.0);

    auto s_out = [&] {
        auto [a_t2s, a_s2t] = cross_attention(s, t, p);
        return sum(mix_text(s, t, a_t2s, p).mixed).value();
    };
    auto t_out = [&] {
        auto [a_t2s, a_s2t] = cross_attention(s, t, p);
        return sum(mix_kg(s, t, a_s2t, p).mixed).value();
    };

    const double base_s = s_out(), base_t = t_out();
    t.mutable_data()[5] += 1e-3;
    CHECK(std::fabs(s_out() - base_s) > 1e-9);  // perturbing T moves S'
    t.mutable_data()[5] -= 1e-3;
    s.mutable_data()[2] += 1e-3;
    CHECK(std::fabs(t_out() - base_t) > 1e-9);  // perturbing S moves T'
}

TEST_CASE("gradients flow through the cross-stitch") {
    Rng rng(39);
    const int d = 4, n = 2;
    XStitchParams p = random_params(d, rng, 1.0, 0.8);
    Tensor s = Tensor::param({n, d}, rng, 1.0);
    Tensor t = Tensor::param({3, d}, rng, 1.0);
    std::vector<Tensor> leaves = {s,        t,        p.wp_t2s,  p.wp_s2t,
                                  p.wg1_t2s, p.wg2_t2s, p.wg1_s2t, p.wg2_s2t};
    auto build = [&] {
        auto [a_t2s, a_s2t] = cross_attention(s, t, p);
        Tensor both = add(sum(sigmoid(mix_text(s, t, a_t2s, p).mixed)),
                          sum(sigmoid(mix_kg(s, t, a_s2t, p).mixed)));
        return both;
    };
    Rng probe(77);
    CHECK(testutil::fd_max_rel_err(build, leaves, probe, 4) < 1e-4);
}

TEST_CASE("gate trace bookkeeping and CSV shape") {
    Rng rng(40);
    GateTrace trace;
    Tensor g1 = Tensor::from({2, 2}, {0.25, 0.75, 0.5, 0.5});
    Tensor g2 = Tensor::from({3, 1}, {0.1, 0.2, 0.3});
    trace.record(4, "t2s", g1);
    trace.record(4, "s2t", g2);

    CHECK(trace.total_sum("t2s") == doctest::Approx(2.0));
    CHECK(trace.total_sum("s2t") == doctest::Approx(0.6));
    CHECK(trace.total_count("t2s") == 4);
    for (const auto& e : trace.entries) {
        double manual = 0.0;
        for (double v : e.gates.data()) manual += v;
        CHECK(e.sum == doctest::Approx(manual).epsilon(1e-15));
    }

    std::ostringstream os;
    write_gate_trace_header(os);
    append_gate_trace_csv(os, "bag7", trace);
    const std::string text = os.str();
    CHECK(text.find("example_id,direction,layer,gate_sum,gate_mean") == 0);
    CHECK(text.find("bag7,t2s,4,") != std::string::npos);
    CHECK(text.find("bag7,s2t,4,") != std::string::npos);
}
