#include "xbe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace xbe {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("xbe::tensor: " + msg); }

void check_shape(const Shape& s) {
    if (s.empty() || s.size() > 2) fail("rank must be 1 or 2, got " + shape_str(s));
    for (int d : s)
        if (d <= 0) fail("dimensions must be positive, got " + shape_str(s));
}

bool needs_grad(const TensorNode& n) { return n.requires_grad || static_cast<bool>(n.backward); }

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape(shape);
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
        fail("data size " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return n;
}

// Creates the result node; records parents + backward rule only when grad
// mode is on and at least one parent wants gradients.
Tensor make_op(const char* op, Shape shape, std::vector<double> data,
               std::initializer_list<Tensor> parents,
               std::function<void(TensorNode&)> backward) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->op = op;
    bool record = g_grad_enabled;
    if (record) {
        bool any = false;
        for (const Tensor& p : parents) any = any || needs_grad(*p.node());
        record = any;
    }
    if (record) {
        n->requires_grad = true;
        for (const Tensor& p : parents) n->parents.push_back(p.node());
        n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
}

// ---- dense kernels; all accumulate into c ----

// c[m,n] += a[m,k] · b[k,n]
void mm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m,n] += a[m,k] · b[n,k]ᵀ
void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// c[k,n] += a[m,k]ᵀ · b[m,n]
void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int p = 0; p < m; ++p) {
        const double* ap = a + static_cast<std::size_t>(p) * k;
        const double* bp = b + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < k; ++i) {
            const double av = ap[i];
            double* ci = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace

void TensorNode::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void TensorNode::add_grad(std::span<const double> g) {
    ensure_grad();
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

ComputeGraph ComputeGraph::build(TensorNode& root) {
    ComputeGraph g;
    std::unordered_set<TensorNode*> seen;
    // iterative post-order: parents land before the nodes that consume them
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(&root, 0);
    seen.insert(&root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            g.order.push_back(node);
            stack.pop_back();
        }
    }
    return g;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), false));
}

Tensor Tensor::full(Shape shape, double value) {
    auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), false));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    auto n = shape_numel(shape);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * stddev;
    return Tensor(make_leaf(std::move(shape), std::move(v), false));
}

Tensor Tensor::param(Shape shape, Rng& rng, double stddev) {
    Tensor t = randn(std::move(shape), rng, stddev);
    t.set_requires_grad(true);
    return t;
}

Tensor Tensor::param_zeros(Shape shape) {
    Tensor t = zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
}

Tensor Tensor::param_full(Shape shape, double value) {
    Tensor t = full(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
}

const Shape& Tensor::shape() const { return n_->shape; }
int Tensor::rank() const { return static_cast<int>(n_->shape.size()); }
int Tensor::rows() const { return n_->shape[0]; }

int Tensor::cols() const {
    if (rank() != 2) fail("cols() on rank-" + std::to_string(rank()) + " tensor");
    return n_->shape[1];
}

std::int64_t Tensor::numel() const { return n_->numel(); }

double Tensor::value() const {
    if (numel() != 1) fail("value() on non-scalar tensor " + shape_str(n_->shape));
    return n_->data[0];
}

double Tensor::at(int i) const { return n_->data.at(static_cast<std::size_t>(i)); }

double Tensor::at(int i, int j) const {
    if (rank() != 2) fail("at(i,j) on rank-1 tensor");
    return n_->data.at(static_cast<std::size_t>(i) * cols() + j);
}

std::span<const double> Tensor::data() const { return n_->data; }
std::span<double> Tensor::mutable_data() { return n_->data; }

bool Tensor::requires_grad() const { return n_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    n_->requires_grad = v;
    return *this;
}

bool Tensor::has_grad() const { return !n_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (n_->grad.empty()) fail("grad() before any backward pass");
    return n_->grad;
}

std::span<double> Tensor::mutable_grad() {
    n_->ensure_grad();
    return n_->grad;
}

void Tensor::zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

void Tensor::backward() const {
    if (numel() != 1) fail("backward: loss must be scalar, got " + shape_str(n_->shape));
    ComputeGraph g = ComputeGraph::build(*n_);
    n_->ensure_grad();
    n_->grad[0] += 1.0;
    for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

const char* Tensor::op() const { return n_->op; }

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        fail("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    mm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        if (needs_grad(pa)) {
            pa.ensure_grad();
            mm_nt_acc(node.grad.data(), pb.data.data(), pa.grad.data(), m, n, k);
        }
        if (needs_grad(pb)) {
            pb.ensure_grad();
            mm_tn_acc(pa.data.data(), node.grad.data(), pb.grad.data(), m, k, n);
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        fail("matmul_nt: inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "T");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    mm_nt_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_op("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        if (needs_grad(pa)) {
            pa.ensure_grad();
            mm_acc(node.grad.data(), pb.data.data(), pa.grad.data(), m, n, k);
        }
        if (needs_grad(pb)) {
            pb.ensure_grad();
            mm_tn_acc(node.grad.data(), pa.data.data(), pb.grad.data(), m, n, k);
        }
    });
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
        fail("matmul_tn: inner dimensions disagree: " + shape_str(a.shape()) + "T x " + shape_str(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(static_cast<std::size_t>(k) * n, 0.0);
    mm_tn_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_op("matmul_tn", {k, n}, std::move(out), {a, b}, [m, k, n](TensorNode& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        if (needs_grad(pa)) {
            pa.ensure_grad();
            mm_nt_acc(pb.data.data(), node.grad.data(), pa.grad.data(), m, n, k);
        }
        if (needs_grad(pb)) {
            pb.ensure_grad();
            mm_acc(pa.data.data(), node.grad.data(), pb.grad.data(), m, k, n);
        }
    });
}

Tensor matvec(const Tensor& a, const Tensor& x) {
    if (a.rank() != 2 || x.rank() != 1 || a.cols() != x.rows())
        fail("matvec: dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(x.shape()));
    const int m = a.rows(), n = a.cols();
    std::vector<double> out(m, 0.0);
    const double* ad = a.data().data();
    const double* xd = x.data().data();
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += ad[static_cast<std::size_t>(i) * n + j] * xd[j];
        out[i] = acc;
    }
    return make_op("matvec", {m}, std::move(out), {a, x}, [m, n](TensorNode& node) {
        auto& pa = *node.parents[0];
        auto& px = *node.parents[1];
        if (needs_grad(pa)) {
            pa.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    pa.grad[static_cast<std::size_t>(i) * n + j] += node.grad[i] * px.data[j];
        }
        if (needs_grad(px)) {
            px.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    px.grad[j] += pa.data[static_cast<std::size_t>(i) * n + j] * node.grad[i];
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.cols())
        fail("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    const int n = x.rows(), in = x.cols(), out_dim = w.rows();
    if (b.rank() != 1 || b.rows() != out_dim)
        fail("linear: bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
    std::vector<double> out(static_cast<std::size_t>(n) * out_dim, 0.0);
    mm_nt_acc(x.data().data(), w.data().data(), out.data(), n, in, out_dim);
    const double* bd = b.data().data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_dim; ++j) out[static_cast<std::size_t>(i) * out_dim + j] += bd[j];
    return make_op("linear", {n, out_dim}, std::move(out), {x, w, b},
                   [n, in, out_dim](TensorNode& node) {
                       auto& px = *node.parents[0];
                       auto& pw = *node.parents[1];
                       auto& pb = *node.parents[2];
                       if (needs_grad(px)) {
                           px.ensure_grad();
                           mm_acc(node.grad.data(), pw.data.data(), px.grad.data(), n, out_dim, in);
                       }
                       if (needs_grad(pw)) {
                           pw.ensure_grad();
                           mm_tn_acc(node.grad.data(), px.data.data(), pw.grad.data(), n, out_dim, in);
                       }
                       if (needs_grad(pb)) {
                           pb.ensure_grad();
                           for (int i = 0; i < n; ++i)
                               for (int j = 0; j < out_dim; ++j)
                                   pb.grad[j] += node.grad[static_cast<std::size_t>(i) * out_dim + j];
                       }
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        fail("add: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.data().begin(), a.data().end());
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    return make_op("add", a.shape(), std::move(out), {a, b}, [](TensorNode& node) {
        for (auto& p : node.parents)
            if (needs_grad(*p)) p->add_grad(node.grad);
    });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        fail("hadamard: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.numel());
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    return make_op("hadamard", a.shape(), std::move(out), {a, b}, [](TensorNode& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        if (needs_grad(pa)) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < node.grad.size(); ++i) pa.grad[i] += node.grad[i] * pb.data[i];
        }
        if (needs_grad(pb)) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < node.grad.size(); ++i) pb.grad[i] += node.grad[i] * pa.data[i];
        }
    });
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= c;
    return make_op("scale", x.shape(), std::move(out), {x}, [c](TensorNode& node) {
        auto& p = *node.parents[0];
        if (!needs_grad(p)) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += c * node.grad[i];
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.numel());
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xd[i];
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return make_op("sigmoid", x.shape(), std::move(out), {x}, [](TensorNode& node) {
        auto& p = *node.parents[0];
        if (!needs_grad(p)) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
            const double y = node.data[i];
            p.grad[i] += node.grad[i] * y * (1.0 - y);
        }
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.numel());
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    return make_op("relu", x.shape(), std::move(out), {x}, [](TensorNode& node) {
        auto& p = *node.parents[0];
        if (!needs_grad(p)) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < node.grad.size(); ++i)
            if (p.data[i] > 0.0) p.grad[i] += node.grad[i];
    });
}

Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank())
        fail("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    for (double v : x.data())
        if (std::isnan(v)) fail("softmax: NaN input");
    const int nrows = x.rank() == 2 ? x.rows() : 1;
    const int ncols = x.rank() == 2 ? x.cols() : x.rows();
    const bool along_rows = (x.rank() == 1) || axis == 1;  // normalize within each row
    std::vector<double> out(x.numel());
    auto xd = x.data();
    const int slices = along_rows ? nrows : ncols;
    const int len = along_rows ? ncols : nrows;
    // element (s,t): s-th slice, t-th position within it
    const std::size_t s_stride = along_rows ? static_cast<std::size_t>(ncols) : 1u;
    const std::size_t t_stride = along_rows ? 1u : static_cast<std::size_t>(ncols);
    for (int s = 0; s < slices; ++s) {
        const std::size_t base = s * s_stride;
        double mx = xd[base];
        for (int t = 1; t < len; ++t) mx = std::max(mx, xd[base + t * t_stride]);
        double denom = 0.0;
        for (int t = 0; t < len; ++t) denom += std::exp(xd[base + t * t_stride] - mx);
        for (int t = 0; t < len; ++t)
            out[base + t * t_stride] = std::exp(xd[base + t * t_stride] - mx) / denom;
    }
    return make_op("softmax", x.shape(), std::move(out), {x},
                   [slices, len, s_stride, t_stride](TensorNode& node) {
                       auto& p = *node.parents[0];
                       if (!needs_grad(p)) return;
                       p.ensure_grad();
                       for (int s = 0; s < slices; ++s) {
                           const std::size_t base = s * s_stride;
                           double dot = 0.0;
                           for (int t = 0; t < len; ++t) {
                               const auto i = base + t * t_stride;
                               dot += node.grad[i] * node.data[i];
                           }
                           for (int t = 0; t < len; ++t) {
                               const auto i = base + t * t_stride;
                               p.grad[i] += node.data[i] * (node.grad[i] - dot);
                           }
                       }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() != 2) fail("layer_norm: expected rank-2 input, got " + shape_str(x.shape()));
    const int n = x.rows(), d = x.cols();
    if (gain.rank() != 1 || gain.rows() != d || bias.rank() != 1 || bias.rows() != d)
        fail("layer_norm: gain/bias must be [d]=" + std::to_string(d));
    std::vector<double> out(x.numel());
    std::vector<double> norm(x.numel());
    std::vector<double> invstd(n);
    auto xd = x.data();
    auto gd = gain.data();
    auto bd = bias.data();
    for (int i = 0; i < n; ++i) {
        const double* xi = xd.data() + static_cast<std::size_t>(i) * d;
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += xi[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        invstd[i] = inv;
        for (int j = 0; j < d; ++j) {
            const double y = (xi[j] - mu) * inv;
            norm[static_cast<std::size_t>(i) * d + j] = y;
            out[static_cast<std::size_t>(i) * d + j] = y * gd[j] + bd[j];
        }
    }
    return make_op("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                   [n, d, norm = std::move(norm), invstd = std::move(invstd)](TensorNode& node) {
                       auto& px = *node.parents[0];
                       auto& pg = *node.parents[1];
                       auto& pb = *node.parents[2];
                       if (needs_grad(pb)) {
                           pb.ensure_grad();
                           for (int i = 0; i < n; ++i)
                               for (int j = 0; j < d; ++j)
                                   pb.grad[j] += node.grad[static_cast<std::size_t>(i) * d + j];
                       }
                       if (needs_grad(pg)) {
                           pg.ensure_grad();
                           for (int i = 0; i < n; ++i)
                               for (int j = 0; j < d; ++j) {
                                   const auto k = static_cast<std::size_t>(i) * d + j;
                                   pg.grad[j] += node.grad[k] * norm[k];
                               }
                       }
                       if (needs_grad(px)) {
                           px.ensure_grad();
                           for (int i = 0; i < n; ++i) {
                               double mean_dy = 0.0, mean_dyy = 0.0;
                               for (int j = 0; j < d; ++j) {
                                   const auto k = static_cast<std::size_t>(i) * d + j;
                                   const double dy = node.grad[k] * pg.data[j];
                                   mean_dy += dy;
                                   mean_dyy += dy * norm[k];
                               }
                               mean_dy /= d;
                               mean_dyy /= d;
                               for (int j = 0; j < d; ++j) {
                                   const auto k = static_cast<std::size_t>(i) * d + j;
                                   const double dy = node.grad[k] * pg.data[j];
                                   px.grad[k] += invstd[i] * (dy - mean_dy - norm[k] * mean_dyy);
                               }
                           }
                       }
                   });
}

Tensor pool_mean(const Tensor& x) {
    if (x.rank() != 2) fail("pool_mean: expected rank-2 input, got " + shape_str(x.shape()));
    const int n = x.rows(), d = x.cols();
    std::vector<double> out(d, 0.0);
    auto xd = x.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[j] += xd[static_cast<std::size_t>(i) * d + j];
    for (int j = 0; j < d; ++j) out[j] /= n;
    return make_op("pool_mean", {d}, std::move(out), {x}, [n, d](TensorNode& node) {
        auto& p = *node.parents[0];
        if (!needs_grad(p)) return;
        p.ensure_grad();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) p.grad[static_cast<std::size_t>(i) * d + j] += node.grad[j] / n;
    });
}

Tensor pool_max(const Tensor& x) {
    if (x.rank() != 2) fail("pool_max: expected rank-2 input, got " + shape_str(x.shape()));
    const int n = x.rows(), d = x.cols();
    std::vector<double> out(d);
    std::vector<int> argmax(d, 0);
    auto xd = x.data();
    for (int j = 0; j < d; ++j) {
        double best = xd[j];
        int bi = 0;
        for (int i = 1; i < n; ++i) {
            const double v = xd[static_cast<std::size_t>(i) * d + j];
            if (v > best) {  // strict: first maximal row wins ties
                best = v;
                bi = i;
            }
        }
        out[j] = best;
        argmax[j] = bi;
    }
    return make_op("pool_max", {d}, std::move(out), {x},
                   [d, argmax = std::move(argmax)](TensorNode& node) {
                       auto& p = *node.parents[0];
                       if (!needs_grad(p)) return;
                       p.ensure_grad();
                       for (int j = 0; j < d; ++j)
                           p.grad[static_cast<std::size_t>(argmax[j]) * p.shape[1] + j] += node.grad[j];
                   });
}

Tensor row(const Tensor& x, int i) {
    if (x.rank() != 2) fail("row: expected rank-2 input, got " + shape_str(x.shape()));
    if (i < 0 || i >= x.rows()) fail("row: index " + std::to_string(i) + " out of " + shape_str(x.shape()));
    const int d = x.cols();
    auto xd = x.data();
    std::vector<double> out(xd.begin() + static_cast<std::size_t>(i) * d,
                            xd.begin() + static_cast<std::size_t>(i + 1) * d);
    return make_op("row", {d}, std::move(out), {x}, [i, d](TensorNode& node) {
        auto& p = *node.parents[0];
        if (!needs_grad(p)) return;
        p.ensure_grad();
        for (int j = 0; j < d; ++j) p.grad[static_cast<std::size_t>(i) * d + j] += node.grad[j];
    });
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
    if (x.rank() != 2) fail("slice_cols: expected rank-2 input");
    if (c0 < 0 || c1 > x.cols() || c0 >= c1)
        fail("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) + ") for " + shape_str(x.shape()));
    const int n = x.rows(), d = x.cols(), w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(n) * w);
    auto xd = x.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j)
            out[static_cast<std::size_t>(i) * w + j] = xd[static_cast<std::size_t>(i) * d + c0 + j];
    return make_op("slice_cols", {n, w}, std::move(out), {x}, [n, d, w, c0](TensorNode& node) {
        auto& p = *node.parents[0];
        if (!needs_grad(p)) return;
        p.ensure_grad();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j)
                p.grad[static_cast<std::size_t>(i) * d + c0 + j] += node.grad[static_cast<std::size_t>(i) * w + j];
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) fail("concat_cols: no inputs");
    const int n = parts[0].rows();
    int total = 0;
    for (const Tensor& t : parts) {
        if (t.rank() != 2 || t.rows() != n) fail("concat_cols: row counts disagree");
        total += t.cols();
    }
    std::vector<double> out(static_cast<std::size_t>(n) * total);
    std::vector<int> widths;
    int off = 0;
    for (const Tensor& t : parts) {
        const int w = t.cols();
        widths.push_back(w);
        auto td = t.data();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j)
                out[static_cast<std::size_t>(i) * total + off + j] = td[static_cast<std::size_t>(i) * w + j];
        off += w;
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = {n, total};
    node->data = std::move(out);
    node->op = "concat_cols";
    bool record = grad_enabled();
    if (record) {
        bool any = false;
        for (const Tensor& t : parts) any = any || needs_grad(*t.node());
        record = any;
    }
    if (record) {
        node->requires_grad = true;
        for (const Tensor& t : parts) node->parents.push_back(t.node());
        node->backward = [n, total, widths = std::move(widths)](TensorNode& nd) {
            int off2 = 0;
            for (std::size_t pi = 0; pi < nd.parents.size(); ++pi) {
                auto& p = *nd.parents[pi];
                const int w = widths[pi];
                if (needs_grad(p)) {
                    p.ensure_grad();
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < w; ++j)
                            p.grad[static_cast<std::size_t>(i) * w + j] +=
                                nd.grad[static_cast<std::size_t>(i) * total + off2 + j];
                }
                off2 += w;
            }
        };
    }
    return Tensor(std::move(node));
}

Tensor concat(std::span<const Tensor> parts) {
    if (parts.empty()) fail("concat: no inputs");
    int total = 0;
    for (const Tensor& t : parts) {
        if (t.rank() != 1) fail("concat: expected rank-1 parts, got " + shape_str(t.shape()));
        total += t.rows();
    }
    std::vector<double> out;
    out.reserve(total);
    std::vector<int> lens;
    for (const Tensor& t : parts) {
        lens.push_back(t.rows());
        out.insert(out.end(), t.data().begin(), t.data().end());
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = {total};
    node->data = std::move(out);
    node->op = "concat";
    bool record = grad_enabled();
    if (record) {
        bool any = false;
        for (const Tensor& t : parts) any = any || needs_grad(*t.node());
        record = any;
    }
    if (record) {
        node->requires_grad = true;
        for (const Tensor& t : parts) node->parents.push_back(t.node());
        node->backward = [lens = std::move(lens)](TensorNode& nd) {
            int off = 0;
            for (std::size_t pi = 0; pi < nd.parents.size(); ++pi) {
                auto& p = *nd.parents[pi];
                if (needs_grad(p)) {
                    p.ensure_grad();
                    for (int j = 0; j < lens[pi]; ++j) p.grad[j] += nd.grad[off + j];
                }
                off += lens[pi];
            }
        };
    }
    return Tensor(std::move(node));
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
    if (table.rank() != 2) fail("embedding: table must be rank-2");
    const int v = table.rows(), d = table.cols();
    const int n = static_cast<int>(ids.size());
    if (n == 0) fail("embedding: empty id sequence");
    for (int id : ids)
        if (id < 0 || id >= v)
            fail("embedding: id " + std::to_string(id) + " out of vocabulary of size " + std::to_string(v));
    std::vector<double> out(static_cast<std::size_t>(n) * d);
    auto td = table.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            out[static_cast<std::size_t>(i) * d + j] = td[static_cast<std::size_t>(ids[i]) * d + j];
    std::vector<int> ids_copy(ids.begin(), ids.end());
    return make_op("embedding", {n, d}, std::move(out), {table},
                   [d, ids_copy = std::move(ids_copy)](TensorNode& node) {
                       auto& p = *node.parents[0];
                       if (!needs_grad(p)) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < ids_copy.size(); ++i)
                           for (int j = 0; j < d; ++j)
                               p.grad[static_cast<std::size_t>(ids_copy[i]) * d + j] +=
                                   node.grad[i * d + j];
                   });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return make_op("sum", {1}, {acc}, {x}, [](TensorNode& node) {
        auto& p = *node.parents[0];
        if (!needs_grad(p)) return;
        p.ensure_grad();
        for (auto& g : p.grad) g += node.grad[0];
    });
}

Tensor cross_entropy_logits(const Tensor& logits, int target) {
    if (logits.rank() != 1) fail("cross_entropy_logits: expected rank-1 logits");
    const int n = logits.rows();
    if (target < 0 || target >= n)
        fail("cross_entropy_logits: target " + std::to_string(target) + " out of range " + std::to_string(n));
    auto v = logits.data();
    double mx = v[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, v[i]);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) denom += std::exp(v[i] - mx);
    const double loss = mx + std::log(denom) - v[target];
    std::vector<double> probs(n);
    for (int i = 0; i < n; ++i) probs[i] = std::exp(v[i] - mx) / denom;
    return make_op("cross_entropy", {1}, {loss}, {logits},
                   [target, probs = std::move(probs)](TensorNode& node) {
                       auto& p = *node.parents[0];
                       if (!needs_grad(p)) return;
                       p.ensure_grad();
                       const double g = node.grad[0];
                       for (std::size_t i = 0; i < probs.size(); ++i) p.grad[i] += probs[i] * g;
                       p.grad[target] -= g;
                   });
}

std::vector<double> softmax_values(std::span<const double> v) {
    std::vector<double> out(v.size());
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    double denom = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        denom += out[i];
    }
    for (auto& x : out) x /= denom;
    return out;
}

}  // namespace xbe
