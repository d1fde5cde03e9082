#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "vpit/common.hpp"

namespace vpit {

class Tensor;
class GradSink;

namespace detail {
struct TensorNode {
    std::vector<size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // convenience accumulator, filled by Tensor::backward()
    std::vector<Tensor> inputs;
    std::function<void(const double*, GradSink&)> backprop;
    const char* op = "leaf";
};
}  // namespace detail

// Dense real tensor participating in a reverse-mode graph. Values are
// double precision; every op validates its output for NaN/Inf and throws.
// Graphs are single-owner values: independent graphs may live on different
// threads, and concurrent backward passes over graphs that share leaf
// parameters are safe because gradients are collected into per-call sinks.
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

    static Tensor zeros(std::vector<size_t> shape);
    static Tensor full(std::vector<size_t> shape, double value);
    static Tensor from_data(std::vector<size_t> shape, std::vector<double> data);
    static Tensor scalar(double value);
    static Tensor randn(std::vector<size_t> shape, Rng& rng, double stdev = 1.0);

    const std::vector<size_t>& shape() const { return node_->shape; }
    size_t numel() const { return node_->data.size(); }
    size_t rows() const;
    size_t cols() const;

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    double value() const;  // requires scalar

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool rg);
    bool is_leaf() const { return node_->inputs.empty(); }
    const char* op_name() const { return node_->op; }

    // Gradient accumulated by backward(); sized lazily.
    const std::vector<double>& grad_data() const { return node_->grad; }
    void zero_grad();

    // Convenience single-threaded backward: accumulates into every
    // requires_grad leaf's grad buffer. Loss must be scalar.
    void backward() const;

    detail::TensorNode* node() const { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::TensorNode> node_;

    friend Tensor make_op(const char* name, std::vector<size_t> shape,
                          std::vector<double> data, std::vector<Tensor> inputs,
                          std::function<void(const double*, GradSink&)> backprop);
};

// Per-backward-pass gradient collector. Buffers are keyed by node; only
// nodes on a path from the loss to a requires_grad leaf are active.
class GradSink {
public:
    // Pointer to the zero-initialized accumulation buffer for t, or nullptr
    // if t does not participate in gradient flow.
    double* accum(const Tensor& t);
    bool active(const Tensor& t) const { return active_.count(t.node()) != 0; }

private:
    friend class Tensor;
    friend std::vector<std::vector<double>> grad(const Tensor&, std::span<const Tensor>);
    friend void run_backward(const Tensor& loss, GradSink& sink);
    std::unordered_map<detail::TensorNode*, std::vector<double>> buffers_;
    std::unordered_set<detail::TensorNode*> active_;
};

// Reverse-mode gradient of a scalar loss with respect to leaf params.
// Returns one buffer per param, aligned with the input order;
// non-participating params get zero gradients.
std::vector<std::vector<double>> grad(const Tensor& loss, std::span<const Tensor> params);

// ---- elementwise / broadcast ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_rowvec(const Tensor& m, const Tensor& v);  // [n,d] + [d]
Tensor mul_rowvec(const Tensor& m, const Tensor& v);  // [n,d] * [d]
Tensor gelu(const Tensor& a);                         // exact Gaussian-CDF form

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- normalization / attention ----
Tensor softmax_rows(const Tensor& a);                 // row max subtracted
Tensor causal_softmax(const Tensor& a);               // [n,n]; weights beyond the diagonal are exactly 0
Tensor rmsnorm_rows(const Tensor& a, double eps = 1e-8);
Tensor rownorm_zm(const Tensor& a, double eps = 1e-8);  // zero-mean, unit-variance rows

// ---- indexing / shaping ----
Tensor gather_rows(const Tensor& a, const std::vector<size_t>& idx);
Tensor slice_cols(const Tensor& a, size_t c0, size_t c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& a, std::vector<size_t> shape);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// ---- convolution (3x3 kernel, stride 1, zero pad 1) ----
// x: [Cin,H,W], w: [Cout,Cin,3,3], b: [Cout] -> [Cout,H,W]
Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- losses ----
// Mean over masked rows of (1 - cos(pred_i, target_i)); value in [0,2].
// Zero-norm rows are a hard error; an empty mask is a configuration error.
Tensor cosine_loss(const Tensor& pred, const Tensor& target, const std::vector<uint8_t>& mask);
// Mean negative log softmax probability of the target over masked positions.
Tensor masked_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<uint8_t>& mask);
// Mean over masked rows of mean absolute difference across the row.
Tensor l1_loss(const Tensor& pred, const Tensor& target, const std::vector<uint8_t>& mask);
// Mean of squared differences over all elements.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

}  // namespace vpit
