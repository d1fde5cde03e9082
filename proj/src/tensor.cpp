#include "vpit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vpit {

namespace {

size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) {
        if (d == 0) throw std::invalid_argument("tensor: zero extent in shape");
        n *= d;
    }
    return n;
}

void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
        }
    }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor make_op(const char* name, std::vector<size_t> shape, std::vector<double> data,
               std::vector<Tensor> inputs,
               std::function<void(const double*, GradSink&)> backprop) {
    check_finite(name, data);
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->inputs = std::move(inputs);
    node->backprop = std::move(backprop);
    node->op = name;
    for (const Tensor& t : node->inputs) {
        if (t.requires_grad()) {
            node->requires_grad = true;
            break;
        }
    }
    return Tensor(std::move(node));
}

// ---- construction ----

Tensor Tensor::zeros(std::vector<size_t> shape) {
    size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<size_t> shape, double value) {
    size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from_data(std::vector<size_t> shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size()) {
        throw std::invalid_argument("tensor: shape does not match element count");
    }
    check_finite("leaf", data);
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    return t;
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::randn(std::vector<size_t> shape, Rng& rng, double stdev) {
    size_t n = shape_numel(shape);
    std::vector<double> d(n);
    for (double& x : d) x = rng.normal() * stdev;
    return from_data(std::move(shape), std::move(d));
}

size_t Tensor::rows() const {
    if (node_->shape.size() != 2) throw std::invalid_argument("tensor: rows() needs a 2-D tensor");
    return node_->shape[0];
}

size_t Tensor::cols() const {
    if (node_->shape.size() != 2) throw std::invalid_argument("tensor: cols() needs a 2-D tensor");
    return node_->shape[1];
}

double Tensor::value() const {
    if (numel() != 1) throw std::invalid_argument("tensor: value() needs a scalar");
    return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool rg) {
    if (rg && !is_leaf()) throw std::invalid_argument("tensor: requires_grad only settable on leaves");
    node_->requires_grad = rg;
    return *this;
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

// ---- backward engine ----

double* GradSink::accum(const Tensor& t) {
    detail::TensorNode* n = t.node();
    if (!active_.count(n)) return nullptr;
    auto it = buffers_.find(n);
    if (it == buffers_.end()) {
        it = buffers_.emplace(n, std::vector<double>(n->data.size(), 0.0)).first;
    }
    return it->second.data();
}

namespace {

// Topological order of the graph rooted at loss (inputs before consumers),
// restricted to nodes that lie on a path to a requires_grad leaf.
void topo_collect(detail::TensorNode* n, std::unordered_map<detail::TensorNode*, bool>& needs,
                  std::vector<detail::TensorNode*>& order) {
    auto it = needs.find(n);
    if (it != needs.end()) return;
    needs[n] = false;  // placeholder; cycles are impossible by construction
    bool need = n->inputs.empty() ? n->requires_grad : false;
    for (const Tensor& in : n->inputs) {
        topo_collect(in.node(), needs, order);
        if (needs[in.node()]) need = true;
    }
    needs[n] = need;
    if (need) order.push_back(n);
}

}  // namespace

void run_backward(const Tensor& loss, GradSink& sink) {
    if (loss.numel() != 1) throw std::invalid_argument("grad: loss must be a scalar");
    std::unordered_map<detail::TensorNode*, bool> needs;
    std::vector<detail::TensorNode*> order;
    topo_collect(loss.node(), needs, order);
    for (detail::TensorNode* n : order) sink.active_.insert(n);
    double* seed = sink.accum(loss);
    if (!seed) return;  // loss does not depend on any requires_grad leaf
    seed[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* n = *it;
        if (!n->backprop) continue;
        auto bufit = sink.buffers_.find(n);
        if (bufit == sink.buffers_.end()) continue;  // no gradient reached this node
        n->backprop(bufit->second.data(), sink);
    }
}

std::vector<std::vector<double>> grad(const Tensor& loss, std::span<const Tensor> params) {
    for (const Tensor& p : params) {
        if (!p.is_leaf()) throw std::invalid_argument("grad: param is not a leaf of the graph");
    }
    GradSink sink;
    run_backward(loss, sink);
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const Tensor& p : params) {
        auto it = sink.buffers_.find(p.node());
        if (it != sink.buffers_.end()) {
            out.push_back(it->second);
        } else {
            out.push_back(std::vector<double>(p.numel(), 0.0));
        }
    }
    return out;
}

void Tensor::backward() const {
    GradSink sink;
    run_backward(*this, sink);
    for (auto& [node, buf] : sink.buffers_) {
        if (!node->requires_grad || !node->inputs.empty()) continue;
        if (node->grad.empty()) node->grad.assign(node->data.size(), 0.0);
        for (size_t i = 0; i < buf.size(); ++i) node->grad[i] += buf[i];
    }
}

// ---- elementwise ----

namespace {
void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return make_op("add", a.shape(), std::move(out), {a, b}, [a, b](const double* g, GradSink& s) {
        size_t n = a.numel();
        if (double* ga = s.accum(a)) {
            for (size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (double* gb = s.accum(b)) {
            for (size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.numel());
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return make_op("sub", a.shape(), std::move(out), {a, b}, [a, b](const double* g, GradSink& s) {
        size_t n = a.numel();
        if (double* ga = s.accum(a)) {
            for (size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (double* gb = s.accum(b)) {
            for (size_t i = 0; i < n; ++i) gb[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    const auto& av = a.data();
    const auto& bv = b.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return make_op("mul", a.shape(), std::move(out), {a, b}, [a, b](const double* g, GradSink& s) {
        size_t n = a.numel();
        const auto& av = a.data();
        const auto& bv = b.data();
        if (double* ga = s.accum(a)) {
            for (size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
        }
        if (double* gb = s.accum(b)) {
            for (size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    const auto& av = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    return make_op("scale", a.shape(), std::move(out), {a}, [a, c](const double* g, GradSink& s) {
        if (double* ga = s.accum(a)) {
            for (size_t i = 0; i < a.numel(); ++i) ga[i] += g[i] * c;
        }
    });
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    size_t n = m.rows(), d = m.cols();
    if (v.numel() != d) throw std::invalid_argument("add_rowvec: vector length mismatch");
    std::vector<double> out(m.numel());
    const auto& mv = m.data();
    const auto& vv = v.data();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) out[i * d + j] = mv[i * d + j] + vv[j];
    return make_op("add_rowvec", m.shape(), std::move(out), {m, v},
                   [m, v, n, d](const double* g, GradSink& s) {
                       if (double* gm = s.accum(m)) {
                           for (size_t i = 0; i < n * d; ++i) gm[i] += g[i];
                       }
                       if (double* gv = s.accum(v)) {
                           for (size_t i = 0; i < n; ++i)
                               for (size_t j = 0; j < d; ++j) gv[j] += g[i * d + j];
                       }
                   });
}

Tensor mul_rowvec(const Tensor& m, const Tensor& v) {
    size_t n = m.rows(), d = m.cols();
    if (v.numel() != d) throw std::invalid_argument("mul_rowvec: vector length mismatch");
    std::vector<double> out(m.numel());
    const auto& mv = m.data();
    const auto& vv = v.data();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) out[i * d + j] = mv[i * d + j] * vv[j];
    return make_op("mul_rowvec", m.shape(), std::move(out), {m, v},
                   [m, v, n, d](const double* g, GradSink& s) {
                       const auto& mv = m.data();
                       const auto& vv = v.data();
                       if (double* gm = s.accum(m)) {
                           for (size_t i = 0; i < n; ++i)
                               for (size_t j = 0; j < d; ++j) gm[i * d + j] += g[i * d + j] * vv[j];
                       }
                       if (double* gv = s.accum(v)) {
                           for (size_t i = 0; i < n; ++i)
                               for (size_t j = 0; j < d; ++j) gv[j] += g[i * d + j] * mv[i * d + j];
                       }
                   });
}

Tensor gelu(const Tensor& a) {
    std::vector<double> out(a.numel());
    const auto& av = a.data();
    for (size_t i = 0; i < out.size(); ++i) {
        double x = av[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return make_op("gelu", a.shape(), std::move(out), {a}, [a](const double* g, GradSink& s) {
        if (double* ga = s.accum(a)) {
            const auto& av = a.data();
            for (size_t i = 0; i < a.numel(); ++i) {
                double x = av[i];
                double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                ga[i] += g[i] * (cdf + x * pdf);
            }
        }
    });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    size_t n = a.rows(), k = a.cols();
    if (b.rows() != k) throw std::invalid_argument("matmul: inner dimension mismatch");
    size_t m = b.cols();
    std::vector<double> out(n * m, 0.0);
    const double* av = a.data().data();
    const double* bv = b.data().data();
    for (size_t i = 0; i < n; ++i) {
        const double* arow = av + i * k;
        double* crow = out.data() + i * m;
        for (size_t kk = 0; kk < k; ++kk) {
            double aik = arow[kk];
            const double* brow = bv + kk * m;
            for (size_t j = 0; j < m; ++j) crow[j] += aik * brow[j];
        }
    }
    return make_op("matmul", {n, m}, std::move(out), {a, b},
                   [a, b, n, k, m](const double* g, GradSink& s) {
                       const double* av = a.data().data();
                       const double* bv = b.data().data();
                       if (double* ga = s.accum(a)) {
                           // dA = G B^T
                           for (size_t i = 0; i < n; ++i) {
                               const double* grow = g + i * m;
                               double* garow = ga + i * k;
                               for (size_t kk = 0; kk < k; ++kk) {
                                   const double* brow = bv + kk * m;
                                   double acc = 0.0;
                                   for (size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                                   garow[kk] += acc;
                               }
                           }
                       }
                       if (double* gb = s.accum(b)) {
                           // dB = A^T G
                           for (size_t i = 0; i < n; ++i) {
                               const double* arow = av + i * k;
                               const double* grow = g + i * m;
                               for (size_t kk = 0; kk < k; ++kk) {
                                   double aik = arow[kk];
                                   double* gbrow = gb + kk * m;
                                   for (size_t j = 0; j < m; ++j) gbrow[j] += aik * grow[j];
                               }
                           }
                       }
                   });
}

Tensor transpose(const Tensor& a) {
    size_t n = a.rows(), m = a.cols();
    std::vector<double> out(n * m);
    const auto& av = a.data();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out[j * n + i] = av[i * m + j];
    return make_op("transpose", {m, n}, std::move(out), {a},
                   [a, n, m](const double* g, GradSink& s) {
                       if (double* ga = s.accum(a)) {
                           for (size_t j = 0; j < m; ++j)
                               for (size_t i = 0; i < n; ++i) ga[i * m + j] += g[j * n + i];
                       }
                   });
}

// ---- normalization / attention ----

Tensor softmax_rows(const Tensor& a) {
    size_t n = a.rows(), m = a.cols();
    std::vector<double> out(n * m);
    const auto& av = a.data();
    for (size_t i = 0; i < n; ++i) {
        const double* row = av.data() + i * m;
        double mx = row[0];
        for (size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (size_t j = 0; j < m; ++j) {
            double e = std::exp(row[j] - mx);
            out[i * m + j] = e;
            z += e;
        }
        for (size_t j = 0; j < m; ++j) out[i * m + j] /= z;
    }
    Tensor result = make_op("softmax", a.shape(), std::move(out), {a}, nullptr);
    // backward needs the output itself
    result.node()->backprop = [a, result, n, m](const double* g, GradSink& s) {
        if (double* ga = s.accum(a)) {
            const auto& sv = result.data();
            for (size_t i = 0; i < n; ++i) {
                const double* srow = sv.data() + i * m;
                const double* grow = g + i * m;
                double dot = 0.0;
                for (size_t j = 0; j < m; ++j) dot += grow[j] * srow[j];
                for (size_t j = 0; j < m; ++j) ga[i * m + j] += srow[j] * (grow[j] - dot);
            }
        }
    };
    return result;
}

Tensor causal_softmax(const Tensor& a) {
    size_t n = a.rows();
    if (a.cols() != n) throw std::invalid_argument("causal_softmax: matrix must be square");
    std::vector<double> out(n * n, 0.0);
    const auto& av = a.data();
    for (size_t i = 0; i < n; ++i) {
        const double* row = av.data() + i * n;
        double mx = row[0];
        for (size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (size_t j = 0; j <= i; ++j) {
            double e = std::exp(row[j] - mx);
            out[i * n + j] = e;
            z += e;
        }
        for (size_t j = 0; j <= i; ++j) out[i * n + j] /= z;
    }
    Tensor result = make_op("causal_softmax", a.shape(), std::move(out), {a}, nullptr);
    result.node()->backprop = [a, result, n](const double* g, GradSink& s) {
        if (double* ga = s.accum(a)) {
            const auto& sv = result.data();
            for (size_t i = 0; i < n; ++i) {
                const double* srow = sv.data() + i * n;
                const double* grow = g + i * n;
                double dot = 0.0;
                for (size_t j = 0; j <= i; ++j) dot += grow[j] * srow[j];
                for (size_t j = 0; j <= i; ++j) ga[i * n + j] += srow[j] * (grow[j] - dot);
            }
        }
    };
    return result;
}

Tensor rmsnorm_rows(const Tensor& a, double eps) {
    size_t n = a.rows(), d = a.cols();
    std::vector<double> out(n * d);
    std::vector<double> inv_rms(n);
    const auto& av = a.data();
    for (size_t i = 0; i < n; ++i) {
        const double* row = av.data() + i * d;
        double ms = 0.0;
        for (size_t j = 0; j < d; ++j) ms += row[j] * row[j];
        ms = ms / static_cast<double>(d) + eps;
        double r = 1.0 / std::sqrt(ms);
        inv_rms[i] = r;
        for (size_t j = 0; j < d; ++j) out[i * d + j] = row[j] * r;
    }
    return make_op("rmsnorm", a.shape(), std::move(out), {a},
                   [a, n, d, inv_rms](const double* g, GradSink& s) {
                       if (double* ga = s.accum(a)) {
                           const auto& av = a.data();
                           for (size_t i = 0; i < n; ++i) {
                               const double* row = av.data() + i * d;
                               const double* grow = g + i * d;
                               double r = inv_rms[i];
                               double dot = 0.0;
                               for (size_t j = 0; j < d; ++j) dot += grow[j] * row[j];
                               double coef = r * r * r * dot / static_cast<double>(d);
                               for (size_t j = 0; j < d; ++j)
                                   ga[i * d + j] += r * grow[j] - coef * row[j];
                           }
                       }
                   });
}

Tensor rownorm_zm(const Tensor& a, double eps) {
    size_t n = a.rows(), d = a.cols();
    std::vector<double> out(n * d);
    std::vector<double> inv_sd(n);
    const auto& av = a.data();
    for (size_t i = 0; i < n; ++i) {
        const double* row = av.data() + i * d;
        double mu = 0.0;
        for (size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double r = 1.0 / std::sqrt(var + eps);
        inv_sd[i] = r;
        for (size_t j = 0; j < d; ++j) out[i * d + j] = (row[j] - mu) * r;
    }
    Tensor result = make_op("rownorm_zm", a.shape(), std::move(out), {a}, nullptr);
    result.node()->backprop = [a, result, n, d, inv_sd](const double* g, GradSink& s) {
        if (double* ga = s.accum(a)) {
            const auto& yv = result.data();
            for (size_t i = 0; i < n; ++i) {
                const double* yrow = yv.data() + i * d;
                const double* grow = g + i * d;
                double gmean = 0.0, gydot = 0.0;
                for (size_t j = 0; j < d; ++j) {
                    gmean += grow[j];
                    gydot += grow[j] * yrow[j];
                }
                gmean /= static_cast<double>(d);
                gydot /= static_cast<double>(d);
                double r = inv_sd[i];
                for (size_t j = 0; j < d; ++j)
                    ga[i * d + j] += r * (grow[j] - gmean - yrow[j] * gydot);
            }
        }
    };
    return result;
}

// ---- indexing / shaping ----

Tensor gather_rows(const Tensor& a, const std::vector<size_t>& idx) {
    size_t n = a.rows(), d = a.cols();
    for (size_t i : idx) {
        if (i >= n) throw std::invalid_argument("gather_rows: index out of range");
    }
    std::vector<double> out(idx.size() * d);
    const auto& av = a.data();
    for (size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(av.data() + idx[r] * d, d, out.data() + r * d);
    }
    return make_op("gather_rows", {idx.size(), d}, std::move(out), {a},
                   [a, idx, d](const double* g, GradSink& s) {
                       if (double* ga = s.accum(a)) {
                           for (size_t r = 0; r < idx.size(); ++r) {
                               double* dst = ga + idx[r] * d;
                               const double* src = g + r * d;
                               for (size_t j = 0; j < d; ++j) dst[j] += src[j];
                           }
                       }
                   });
}

Tensor slice_cols(const Tensor& a, size_t c0, size_t c1) {
    size_t n = a.rows(), d = a.cols();
    if (c0 >= c1 || c1 > d) throw std::invalid_argument("slice_cols: bad column range");
    size_t w = c1 - c0;
    std::vector<double> out(n * w);
    const auto& av = a.data();
    for (size_t i = 0; i < n; ++i)
        std::copy_n(av.data() + i * d + c0, w, out.data() + i * w);
    return make_op("slice_cols", {n, w}, std::move(out), {a},
                   [a, c0, w, n, d](const double* g, GradSink& s) {
                       if (double* ga = s.accum(a)) {
                           for (size_t i = 0; i < n; ++i) {
                               double* dst = ga + i * d + c0;
                               const double* src = g + i * w;
                               for (size_t j = 0; j < w; ++j) dst[j] += src[j];
                           }
                       }
                   });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    size_t d = parts[0].cols();
    size_t n = 0;
    for (const Tensor& p : parts) {
        if (p.cols() != d) throw std::invalid_argument("concat_rows: column mismatch");
        n += p.rows();
    }
    std::vector<double> out;
    out.reserve(n * d);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_op("concat_rows", {n, d}, std::move(out), parts,
                   [parts](const double* g, GradSink& s) {
                       size_t off = 0;
                       for (const Tensor& p : parts) {
                           size_t cnt = p.numel();
                           if (double* gp = s.accum(p)) {
                               for (size_t i = 0; i < cnt; ++i) gp[i] += g[off + i];
                           }
                           off += cnt;
                       }
                   });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    size_t n = parts[0].rows();
    size_t d = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
        d += p.cols();
    }
    std::vector<double> out(n * d);
    size_t coff = 0;
    for (const Tensor& p : parts) {
        size_t w = p.cols();
        const auto& pv = p.data();
        for (size_t i = 0; i < n; ++i)
            std::copy_n(pv.data() + i * w, w, out.data() + i * d + coff);
        coff += w;
    }
    return make_op("concat_cols", {n, d}, std::move(out), parts,
                   [parts, n, d](const double* g, GradSink& s) {
                       size_t coff = 0;
                       for (const Tensor& p : parts) {
                           size_t w = p.cols();
                           if (double* gp = s.accum(p)) {
                               for (size_t i = 0; i < n; ++i) {
                                   const double* src = g + i * d + coff;
                                   double* dst = gp + i * w;
                                   for (size_t j = 0; j < w; ++j) dst[j] += src[j];
                               }
                           }
                           coff += w;
                       }
                   });
}

Tensor reshape(const Tensor& a, std::vector<size_t> shape) {
    if (shape_numel(shape) != a.numel()) throw std::invalid_argument("reshape: element count mismatch");
    std::vector<double> out = a.data();
    return make_op("reshape", std::move(shape), std::move(out), {a},
                   [a](const double* g, GradSink& s) {
                       if (double* ga = s.accum(a)) {
                           for (size_t i = 0; i < a.numel(); ++i) ga[i] += g[i];
                       }
                   });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    return make_op("sum", {1}, {acc}, {a}, [a](const double* g, GradSink& s) {
        if (double* ga = s.accum(a)) {
            for (size_t i = 0; i < a.numel(); ++i) ga[i] += g[0];
        }
    });
}

Tensor mean(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    double inv = 1.0 / static_cast<double>(a.numel());
    return make_op("mean", {1}, {acc * inv}, {a}, [a, inv](const double* g, GradSink& s) {
        if (double* ga = s.accum(a)) {
            for (size_t i = 0; i < a.numel(); ++i) ga[i] += g[0] * inv;
        }
    });
}

// ---- convolution ----

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W]");
    if (ws.size() != 4 || ws[2] != 3 || ws[3] != 3)
        throw std::invalid_argument("conv2d: weight must be [Cout,Cin,3,3]");
    size_t cin = xs[0], h = xs[1], wd = xs[2];
    size_t cout = ws[0];
    if (ws[1] != cin) throw std::invalid_argument("conv2d: channel mismatch");
    if (b.numel() != cout) throw std::invalid_argument("conv2d: bias length mismatch");

    auto xat = [&](const double* xv, size_t c, long i, long j) -> double {
        if (i < 0 || j < 0 || i >= static_cast<long>(h) || j >= static_cast<long>(wd)) return 0.0;
        return xv[(c * h + static_cast<size_t>(i)) * wd + static_cast<size_t>(j)];
    };

    std::vector<double> out(cout * h * wd);
    const double* xv = x.data().data();
    const double* wv = w.data().data();
    const double* bv = b.data().data();
    for (size_t co = 0; co < cout; ++co) {
        for (size_t i = 0; i < h; ++i) {
            for (size_t j = 0; j < wd; ++j) {
                double acc = bv[co];
                for (size_t ci = 0; ci < cin; ++ci) {
                    const double* k = wv + ((co * cin + ci) * 3) * 3;
                    for (int di = 0; di < 3; ++di)
                        for (int dj = 0; dj < 3; ++dj)
                            acc += k[di * 3 + dj] *
                                   xat(xv, ci, static_cast<long>(i) + di - 1,
                                       static_cast<long>(j) + dj - 1);
                }
                out[(co * h + i) * wd + j] = acc;
            }
        }
    }
    return make_op(
        "conv2d", {cout, h, wd}, std::move(out), {x, w, b},
        [x, w, b, cin, cout, h, wd](const double* g, GradSink& s) {
            const double* xv = x.data().data();
            const double* wv = w.data().data();
            auto in_range = [&](long i, long j) {
                return i >= 0 && j >= 0 && i < static_cast<long>(h) && j < static_cast<long>(wd);
            };
            if (double* gx = s.accum(x)) {
                for (size_t co = 0; co < cout; ++co)
                    for (size_t i = 0; i < h; ++i)
                        for (size_t j = 0; j < wd; ++j) {
                            double gv = g[(co * h + i) * wd + j];
                            for (size_t ci = 0; ci < cin; ++ci) {
                                const double* k = wv + ((co * cin + ci) * 3) * 3;
                                for (int di = 0; di < 3; ++di)
                                    for (int dj = 0; dj < 3; ++dj) {
                                        long ii = static_cast<long>(i) + di - 1;
                                        long jj = static_cast<long>(j) + dj - 1;
                                        if (in_range(ii, jj))
                                            gx[(ci * h + static_cast<size_t>(ii)) * wd +
                                               static_cast<size_t>(jj)] += gv * k[di * 3 + dj];
                                    }
                            }
                        }
            }
            if (double* gw = s.accum(w)) {
                for (size_t co = 0; co < cout; ++co)
                    for (size_t i = 0; i < h; ++i)
                        for (size_t j = 0; j < wd; ++j) {
                            double gv = g[(co * h + i) * wd + j];
                            for (size_t ci = 0; ci < cin; ++ci)
                                for (int di = 0; di < 3; ++di)
                                    for (int dj = 0; dj < 3; ++dj) {
                                        long ii = static_cast<long>(i) + di - 1;
                                        long jj = static_cast<long>(j) + dj - 1;
                                        if (in_range(ii, jj))
                                            gw[((co * cin + ci) * 3 + static_cast<size_t>(di)) * 3 +
                                               static_cast<size_t>(dj)] +=
                                                gv * xv[(ci * h + static_cast<size_t>(ii)) * wd +
                                                        static_cast<size_t>(jj)];
                                    }
                        }
            }
            if (double* gb = s.accum(b)) {
                for (size_t co = 0; co < cout; ++co) {
                    double acc = 0.0;
                    for (size_t i = 0; i < h * wd; ++i) acc += g[co * h * wd + i];
                    gb[co] += acc;
                }
            }
        });
}

// ---- losses ----

namespace {
size_t count_mask(const std::vector<uint8_t>& mask) {
    size_t c = 0;
    for (uint8_t m : mask) c += (m != 0);
    return c;
}
}  // namespace

Tensor cosine_loss(const Tensor& pred, const Tensor& target, const std::vector<uint8_t>& mask) {
    require_same_shape("cosine_loss", pred, target);
    size_t n = pred.rows(), d = pred.cols();
    if (mask.size() != n) throw std::invalid_argument("cosine_loss: mask length mismatch");
    size_t cnt = count_mask(mask);
    if (cnt == 0) throw std::invalid_argument("cosine_loss: empty mask");

    const auto& pv = pred.data();
    const auto& tv = target.data();
    double loss = 0.0;
    std::vector<double> pn(n, 0.0), tn(n, 0.0), dots(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const double* p = pv.data() + i * d;
        const double* t = tv.data() + i * d;
        double pp = 0.0, tt = 0.0, pt = 0.0;
        for (size_t j = 0; j < d; ++j) {
            pp += p[j] * p[j];
            tt += t[j] * t[j];
            pt += p[j] * t[j];
        }
        if (tt == 0.0) throw std::runtime_error("cosine_loss: zero-norm target row");
        if (pp == 0.0) throw std::runtime_error("cosine_loss: zero-norm pred row");
        pn[i] = std::sqrt(pp);
        tn[i] = std::sqrt(tt);
        dots[i] = pt;
        loss += 1.0 - pt / (pn[i] * tn[i]);
    }
    loss /= static_cast<double>(cnt);
    double inv_cnt = 1.0 / static_cast<double>(cnt);
    return make_op(
        "cosine_loss", {1}, {loss}, {pred, target},
        [pred, target, mask, n, d, pn, tn, dots, inv_cnt](const double* g, GradSink& s) {
            const auto& pv = pred.data();
            const auto& tv = target.data();
            double g0 = g[0] * inv_cnt;
            if (double* gp = s.accum(pred)) {
                for (size_t i = 0; i < n; ++i) {
                    if (!mask[i]) continue;
                    const double* p = pv.data() + i * d;
                    const double* t = tv.data() + i * d;
                    double inv_pt = 1.0 / (pn[i] * tn[i]);
                    double coef = dots[i] / (pn[i] * pn[i] * pn[i] * tn[i]);
                    for (size_t j = 0; j < d; ++j)
                        gp[i * d + j] += g0 * (coef * p[j] - t[j] * inv_pt);
                }
            }
            if (double* gt = s.accum(target)) {
                for (size_t i = 0; i < n; ++i) {
                    if (!mask[i]) continue;
                    const double* p = pv.data() + i * d;
                    const double* t = tv.data() + i * d;
                    double inv_pt = 1.0 / (pn[i] * tn[i]);
                    double coef = dots[i] / (tn[i] * tn[i] * tn[i] * pn[i]);
                    for (size_t j = 0; j < d; ++j)
                        gt[i * d + j] += g0 * (coef * t[j] - p[j] * inv_pt);
                }
            }
        });
}

Tensor masked_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<uint8_t>& mask) {
    size_t n = logits.rows(), v = logits.cols();
    if (targets.size() != n || mask.size() != n)
        throw std::invalid_argument("masked_cross_entropy: targets/mask length mismatch");
    size_t cnt = count_mask(mask);
    if (cnt == 0) throw std::invalid_argument("masked_cross_entropy: empty mask");
    for (size_t i = 0; i < n; ++i) {
        if (mask[i] && (targets[i] < 0 || static_cast<size_t>(targets[i]) >= v))
            throw std::invalid_argument("masked_cross_entropy: target id out of range");
    }

    const auto& lv = logits.data();
    // softmax probabilities saved for backward (masked rows only)
    std::vector<double> probs(n * v, 0.0);
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const double* row = lv.data() + i * v;
        double mx = row[0];
        for (size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (size_t j = 0; j < v; ++j) {
            double e = std::exp(row[j] - mx);
            probs[i * v + j] = e;
            z += e;
        }
        for (size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
        loss -= std::log(probs[i * v + static_cast<size_t>(targets[i])]);
    }
    loss /= static_cast<double>(cnt);
    double inv_cnt = 1.0 / static_cast<double>(cnt);
    return make_op("masked_cross_entropy", {1}, {loss}, {logits},
                   [logits, targets, mask, n, v, probs, inv_cnt](const double* g, GradSink& s) {
                       if (double* gl = s.accum(logits)) {
                           double g0 = g[0] * inv_cnt;
                           for (size_t i = 0; i < n; ++i) {
                               if (!mask[i]) continue;
                               for (size_t j = 0; j < v; ++j)
                                   gl[i * v + j] += g0 * probs[i * v + j];
                               gl[i * v + static_cast<size_t>(targets[i])] -= g0;
                           }
                       }
                   });
}

Tensor l1_loss(const Tensor& pred, const Tensor& target, const std::vector<uint8_t>& mask) {
    require_same_shape("l1_loss", pred, target);
    size_t n = pred.rows(), d = pred.cols();
    if (mask.size() != n) throw std::invalid_argument("l1_loss: mask length mismatch");
    size_t cnt = count_mask(mask);
    if (cnt == 0) throw std::invalid_argument("l1_loss: empty mask");
    const auto& pv = pred.data();
    const auto& tv = target.data();
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        for (size_t j = 0; j < d; ++j) loss += std::abs(pv[i * d + j] - tv[i * d + j]);
    }
    double scale_f = 1.0 / (static_cast<double>(cnt) * static_cast<double>(d));
    loss *= scale_f;
    return make_op("l1_loss", {1}, {loss}, {pred, target},
                   [pred, target, mask, n, d, scale_f](const double* g, GradSink& s) {
                       const auto& pv = pred.data();
                       const auto& tv = target.data();
                       double g0 = g[0] * scale_f;
                       auto sgn = [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); };
                       if (double* gp = s.accum(pred)) {
                           for (size_t i = 0; i < n; ++i) {
                               if (!mask[i]) continue;
                               for (size_t j = 0; j < d; ++j)
                                   gp[i * d + j] += g0 * sgn(pv[i * d + j] - tv[i * d + j]);
                           }
                       }
                       if (double* gt = s.accum(target)) {
                           for (size_t i = 0; i < n; ++i) {
                               if (!mask[i]) continue;
                               for (size_t j = 0; j < d; ++j)
                                   gt[i * d + j] -= g0 * sgn(pv[i * d + j] - tv[i * d + j]);
                           }
                       }
                   });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape("mse_loss", pred, target);
    const auto& pv = pred.data();
    const auto& tv = target.data();
    double loss = 0.0;
    for (size_t i = 0; i < pv.size(); ++i) {
        double dlt = pv[i] - tv[i];
        loss += dlt * dlt;
    }
    double inv = 1.0 / static_cast<double>(pv.size());
    loss *= inv;
    return make_op("mse_loss", {1}, {loss}, {pred, target},
                   [pred, target, inv](const double* g, GradSink& s) {
                       const auto& pv = pred.data();
                       const auto& tv = target.data();
                       double g0 = 2.0 * g[0] * inv;
                       if (double* gp = s.accum(pred)) {
                           for (size_t i = 0; i < pv.size(); ++i) gp[i] += g0 * (pv[i] - tv[i]);
                       }
                       if (double* gt = s.accum(target)) {
                           for (size_t i = 0; i < pv.size(); ++i) gt[i] -= g0 * (pv[i] - tv[i]);
                       }
                   });
}

}  // namespace vpit
