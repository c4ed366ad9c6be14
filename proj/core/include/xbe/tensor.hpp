#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xbe/rng.hpp"

namespace xbe {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One node of the compute graph: forward value plus, when gradients are
// being recorded, the backward rule and the parent links it pulls on.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first needed; then data.size()
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> backward;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    void ensure_grad();
    void add_grad(std::span<const double> g);
};

// Topologically ordered record of the operations reachable from one root.
// Parents precede children; a backward sweep walks it once, in reverse.
struct ComputeGraph {
    std::vector<TensorNode*> order;
    static ComputeGraph build(TensorNode& root);
};

// While a guard is alive, ops do not record parents/backward rules.
// Used for inference and finite-difference probes.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// Value-semantic handle to a shared graph node. Rank is 1 or 2 everywhere
// in this project; shapes are validated by every op.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);
    static Tensor randn(Shape shape, Rng& rng, double stddev);
    // leaf that participates in training
    static Tensor param(Shape shape, Rng& rng, double stddev);
    static Tensor param_zeros(Shape shape);
    static Tensor param_full(Shape shape, double value);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const;
    int rank() const;
    int rows() const;  // dim 0
    int cols() const;  // dim 1 (rank-2 only)
    std::int64_t numel() const;

    double value() const;  // scalar tensors
    double at(int i) const;
    double at(int i, int j) const;

    std::span<const double> data() const;
    std::span<double> mutable_data();

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Reverse-mode sweep from a scalar root. Gradients accumulate into
    // every requires_grad tensor; repeated calls keep accumulating until
    // zero_grad.
    void backward() const;

    const char* op() const;
    const NodePtr& node() const { return n_; }
    explicit Tensor(NodePtr n) : n_(std::move(n)) {}

private:
    NodePtr n_;
};

// ---- ops (all record gradients when enabled) ----

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]·[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]·[n,k]ᵀ
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // [m,k]ᵀ·[m,n]
Tensor matvec(const Tensor& a, const Tensor& x);     // [m,n]·[n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x·wᵀ + b

Tensor add(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

// axis 0: normalize down each column; axis 1: along each row
Tensor softmax(const Tensor& x, int axis);

// row-wise: gain ⊙ (x − μ)/√(σ² + eps) + bias
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-12);

Tensor pool_mean(const Tensor& x);  // [N,d] -> [d]
Tensor pool_max(const Tensor& x);   // [N,d] -> [d], grad to first argmax
Tensor row(const Tensor& x, int i);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor concat_cols(std::span<const Tensor> parts);  // [N,ci] -> [N,Σci]
Tensor concat(std::span<const Tensor> parts);       // rank-1 concat

Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor sum(const Tensor& x);  // -> scalar
// −log softmax(logits)[target]
Tensor cross_entropy_logits(const Tensor& logits, int target);

// plain-value softmax used at inference; same max-shifted arithmetic
std::vector<double> softmax_values(std::span<const double> v);

}  // namespace xbe
