#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mope/tensor.hpp"

namespace mope {

enum class OpTag {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Scale,
    AddBias,
    MatMul,
    Transpose,
    SoftmaxRows,
    LogSoftmaxRows,
    LayerNorm,
    Gelu,
    Embedding,
    SliceLast,
    ConcatLast,
    ZeroLastRanges,
    MeanAxis1,
    MeanAll,
    SumAll,
    L2NormalizeRows,
    Exp,
    ScalarMul,
    DiagMean,
};

// Reverse-mode graph node. `backprop` pushes this node's grad into its
// parents; the graph is acyclic, built bottom-up, and confined to one
// logical thread.
struct Node {
    Tensor value;
    Tensor grad;  // lazily allocated, same shape as value
    bool requires_grad = false;
    OpTag tag = OpTag::Const;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;
};

using NodePtr = std::shared_ptr<Node>;

inline NodePtr constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->tag = OpTag::Const;
    return n;
}

inline NodePtr leaf(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->tag = OpTag::Leaf;
    n->requires_grad = true;
    return n;
}

namespace detail {

inline NodePtr make_op(Tensor value, OpTag tag, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->tag = tag;
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->parents = std::move(parents);
    return n;
}

inline void ensure_grad(Node& n) {
    if (n.grad.vec().size() != n.value.numel()) n.grad = Tensor::zeros(n.value.shape());
}

// C[m,n] (+)= A[m,k] * B[k,n]
inline void mm(double* c, const double* a, const double* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<std::size_t>(i) * n;
        const double* ai = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T   (rows of A dotted with rows of B)
inline void mm_nt(double* c, const double* a, const double* b, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * n;
        double* ci = c + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
            const double* bj = b + static_cast<std::size_t>(j) * n;
            double s = 0.0;
            for (int p = 0; p < n; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
inline void mm_tn(double* c, const double* a, const double* b, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        const double* bi = b + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

}  // namespace detail

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor out(a->value.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
    auto node = detail::make_op(std::move(out), OpTag::Add, {a, b});
    if (node->requires_grad)
        node->backprop = [](Node& self) {
            for (const auto& p : self.parents) {
                if (!p->requires_grad) continue;
                detail::ensure_grad(*p);
                const std::size_t count = self.grad.numel();
                for (std::size_t i = 0; i < count; ++i) p->grad[i] += self.grad[i];
            }
        };
    return node;
}

inline NodePtr sub(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a->value, b->value, "sub");
    Tensor out(a->value.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
    auto node = detail::make_op(std::move(out), OpTag::Sub, {a, b});
    if (node->requires_grad)
        node->backprop = [](Node& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            const std::size_t count = self.grad.numel();
            if (pa->requires_grad) {
                detail::ensure_grad(*pa);
                for (std::size_t i = 0; i < count; ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                detail::ensure_grad(*pb);
                for (std::size_t i = 0; i < count; ++i) pb->grad[i] -= self.grad[i];
            }
        };
    return node;
}

inline NodePtr mul(const NodePtr& a, const NodePtr& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor out(a->value.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
    auto node = detail::make_op(std::move(out), OpTag::Mul, {a, b});
    if (node->requires_grad)
        node->backprop = [](Node& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            const std::size_t count = self.grad.numel();
            if (pa->requires_grad) {
                detail::ensure_grad(*pa);
                for (std::size_t i = 0; i < count; ++i) pa->grad[i] += self.grad[i] * pb->value[i];
            }
            if (pb->requires_grad) {
                detail::ensure_grad(*pb);
                for (std::size_t i = 0; i < count; ++i) pb->grad[i] += self.grad[i] * pa->value[i];
            }
        };
    return node;
}

inline NodePtr scale(const NodePtr& a, double c) {
    Tensor out(a->value.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) out[i] = a->value[i] * c;
    auto node = detail::make_op(std::move(out), OpTag::Scale, {a});
    if (node->requires_grad)
        node->backprop = [c](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            const std::size_t count = self.grad.numel();
            for (std::size_t i = 0; i < count; ++i) p->grad[i] += self.grad[i] * c;
        };
    return node;
}

// a: (..., n) plus bias b: (n), broadcast over leading dims.
inline NodePtr add_bias(const NodePtr& a, const NodePtr& b) {
    if (b->value.rank() != 1 || a->value.dim(a->value.rank() - 1) != b->value.dim(0))
        throw_error("dimension", "add_bias: bias must match last dim");
    Tensor out(a->value.shape());
    const int n = b->value.dim(0);
    const std::size_t rows = a->value.numel() / static_cast<std::size_t>(n);
    for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < n; ++j)
            out[r * n + j] = a->value[r * n + j] + b->value[static_cast<std::size_t>(j)];
    auto node = detail::make_op(std::move(out), OpTag::AddBias, {a, b});
    if (node->requires_grad)
        node->backprop = [n, rows](Node& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                detail::ensure_grad(*pa);
                const std::size_t count = self.grad.numel();
                for (std::size_t i = 0; i < count; ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                detail::ensure_grad(*pb);
                for (std::size_t r = 0; r < rows; ++r)
                    for (int j = 0; j < n; ++j)
                        pb->grad[static_cast<std::size_t>(j)] += self.grad[r * n + j];
            }
        };
    return node;
}

// matmul supports (m,k)x(k,n), (B,m,k)x(k,n) and (B,m,k)x(B,k,n).
inline NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    const int ra = av.rank(), rb = bv.rank();
    int batch = 1, m = 0, k = 0, n = 0;
    bool a_batched = false, b_batched = false;
    if (ra == 2 && rb == 2) {
        m = av.dim(0);
        k = av.dim(1);
        n = bv.dim(1);
        if (bv.dim(0) != k) throw_error("dimension", "matmul: inner dims mismatch");
    } else if (ra == 3 && rb == 2) {
        batch = av.dim(0);
        m = av.dim(1);
        k = av.dim(2);
        n = bv.dim(1);
        a_batched = true;
        if (bv.dim(0) != k) throw_error("dimension", "matmul: inner dims mismatch");
    } else if (ra == 3 && rb == 3) {
        batch = av.dim(0);
        m = av.dim(1);
        k = av.dim(2);
        n = bv.dim(2);
        a_batched = b_batched = true;
        if (bv.dim(0) != batch || bv.dim(1) != k)
            throw_error("dimension", "matmul: batched dims mismatch");
    } else {
        throw_error("dimension", "matmul: unsupported ranks");
    }
    Tensor out = a_batched ? Tensor({batch, m, n}) : Tensor({m, n});
    const std::size_t a_stride = static_cast<std::size_t>(m) * k;
    const std::size_t b_stride = b_batched ? static_cast<std::size_t>(k) * n : 0;
    const std::size_t o_stride = static_cast<std::size_t>(m) * n;
    for (int bt = 0; bt < batch; ++bt)
        detail::mm(out.data() + bt * o_stride, av.data() + bt * a_stride,
                   bv.data() + bt * b_stride, m, k, n);
    auto node = detail::make_op(std::move(out), OpTag::MatMul, {a, b});
    if (node->requires_grad)
        node->backprop = [batch, m, k, n, a_stride, b_stride, o_stride](Node& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                detail::ensure_grad(*pa);
                for (int bt = 0; bt < batch; ++bt)
                    detail::mm_nt(pa->grad.data() + bt * a_stride, self.grad.data() + bt * o_stride,
                                  pb->value.data() + bt * b_stride, m, n, k);
            }
            if (pb->requires_grad) {
                detail::ensure_grad(*pb);
                for (int bt = 0; bt < batch; ++bt)
                    detail::mm_tn(pb->grad.data() + bt * b_stride, pa->value.data() + bt * a_stride,
                                  self.grad.data() + bt * o_stride, m, k, n);
            }
        };
    return node;
}

// Swap the last two dims (rank 2 or 3).
inline NodePtr transpose_last(const NodePtr& a) {
    const Tensor& av = a->value;
    const int r = av.rank();
    if (r < 2) throw_error("dimension", "transpose_last: rank must be >= 2");
    const int batch = r == 3 ? av.dim(0) : 1;
    const int m = av.dim(r - 2), n = av.dim(r - 1);
    Tensor out = r == 3 ? Tensor({batch, n, m}) : Tensor({n, m});
    for (int bt = 0; bt < batch; ++bt) {
        const double* src = av.data() + static_cast<std::size_t>(bt) * m * n;
        double* dst = out.data() + static_cast<std::size_t>(bt) * m * n;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                dst[static_cast<std::size_t>(j) * m + i] = src[static_cast<std::size_t>(i) * n + j];
    }
    auto node = detail::make_op(std::move(out), OpTag::Transpose, {a});
    if (node->requires_grad)
        node->backprop = [batch, m, n](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            for (int bt = 0; bt < batch; ++bt) {
                const double* g = self.grad.data() + static_cast<std::size_t>(bt) * m * n;
                double* dst = p->grad.data() + static_cast<std::size_t>(bt) * m * n;
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < m; ++i)
                        dst[static_cast<std::size_t>(i) * n + j] +=
                            g[static_cast<std::size_t>(j) * m + i];
            }
        };
    return node;
}

// Row-wise softmax over the last dim, stabilized by row-max subtraction.
inline NodePtr softmax_rows(const NodePtr& a) {
    const Tensor& av = a->value;
    const int n = av.dim(av.rank() - 1);
    const std::size_t rows = av.numel() / static_cast<std::size_t>(n);
    Tensor out(av.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data() + r * n;
        double* y = out.data() + r * n;
        double mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) y[j] *= inv;
    }
    auto node = detail::make_op(std::move(out), OpTag::SoftmaxRows, {a});
    if (node->requires_grad)
        node->backprop = [n, rows](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* s = self.value.data() + r * n;
                const double* g = self.grad.data() + r * n;
                double* d = p->grad.data() + r * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += s[j] * g[j];
                for (int j = 0; j < n; ++j) d[j] += s[j] * (g[j] - dot);
            }
        };
    return node;
}

inline NodePtr log_softmax_rows(const NodePtr& a) {
    const Tensor& av = a->value;
    const int n = av.dim(av.rank() - 1);
    const std::size_t rows = av.numel() / static_cast<std::size_t>(n);
    Tensor out(av.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data() + r * n;
        double* y = out.data() + r * n;
        double mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) sum += std::exp(x[j] - mx);
        const double lse = mx + std::log(sum);
        for (int j = 0; j < n; ++j) y[j] = x[j] - lse;
    }
    auto node = detail::make_op(std::move(out), OpTag::LogSoftmaxRows, {a});
    if (node->requires_grad)
        node->backprop = [n, rows](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = self.value.data() + r * n;
                const double* g = self.grad.data() + r * n;
                double* d = p->grad.data() + r * n;
                double gsum = 0.0;
                for (int j = 0; j < n; ++j) gsum += g[j];
                for (int j = 0; j < n; ++j) d[j] += g[j] - std::exp(y[j]) * gsum;
            }
        };
    return node;
}

// Per-row normalization over the last dim, then affine with gamma/beta.
inline NodePtr layer_norm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                          double eps = 1e-5) {
    if (eps <= 0.0) throw_error("contract", "layer_norm: eps must be positive");
    const Tensor& xv = x->value;
    const int n = xv.dim(xv.rank() - 1);
    if (gamma->value.rank() != 1 || gamma->value.dim(0) != n || beta->value.rank() != 1 ||
        beta->value.dim(0) != n)
        throw_error("dimension", "layer_norm: gamma/beta must match last dim");
    const std::size_t rows = xv.numel() / static_cast<std::size_t>(n);
    Tensor out(xv.shape());
    // Cache normalized values and inverse stddev for the backward pass.
    auto xhat = std::make_shared<std::vector<double>>(xv.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += xr[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        double* h = xhat->data() + r * n;
        double* y = out.data() + r * n;
        for (int j = 0; j < n; ++j) {
            h[j] = (xr[j] - mean) * is;
            y[j] = gamma->value[static_cast<std::size_t>(j)] * h[j] +
                   beta->value[static_cast<std::size_t>(j)];
        }
    }
    auto node = detail::make_op(std::move(out), OpTag::LayerNorm, {x, gamma, beta});
    if (node->requires_grad)
        node->backprop = [n, rows, xhat, inv_std](Node& self) {
            auto& px = self.parents[0];
            auto& pg = self.parents[1];
            auto& pb = self.parents[2];
            if (pg->requires_grad) detail::ensure_grad(*pg);
            if (pb->requires_grad) detail::ensure_grad(*pb);
            if (px->requires_grad) detail::ensure_grad(*px);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = self.grad.data() + r * n;
                const double* h = xhat->data() + r * n;
                if (pg->requires_grad)
                    for (int j = 0; j < n; ++j) pg->grad[static_cast<std::size_t>(j)] += g[j] * h[j];
                if (pb->requires_grad)
                    for (int j = 0; j < n; ++j) pb->grad[static_cast<std::size_t>(j)] += g[j];
                if (px->requires_grad) {
                    double mean_gg = 0.0, mean_ggh = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double gg = g[j] * pg->value[static_cast<std::size_t>(j)];
                        mean_gg += gg;
                        mean_ggh += gg * h[j];
                    }
                    mean_gg /= n;
                    mean_ggh /= n;
                    const double is = (*inv_std)[r];
                    double* d = px->grad.data() + r * n;
                    for (int j = 0; j < n; ++j) {
                        const double gg = g[j] * pg->value[static_cast<std::size_t>(j)];
                        d[j] += (gg - mean_gg - h[j] * mean_ggh) * is;
                    }
                }
            }
        };
    return node;
}

namespace detail {
inline constexpr double kGeluCoeff = 0.044715;
inline const double kGeluScale = std::sqrt(2.0 / 3.14159265358979323846);
}  // namespace detail

// tanh-approximation GELU with the fixed 0.044715 cubic coefficient.
inline NodePtr gelu(const NodePtr& a) {
    const Tensor& av = a->value;
    Tensor out(av.shape());
    const std::size_t count = av.numel();
    for (std::size_t i = 0; i < count; ++i) {
        const double x = av[i];
        const double u = detail::kGeluScale * (x + detail::kGeluCoeff * x * x * x);
        out[i] = 0.5 * x * (1.0 + std::tanh(u));
    }
    auto node = detail::make_op(std::move(out), OpTag::Gelu, {a});
    if (node->requires_grad)
        node->backprop = [count](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            for (std::size_t i = 0; i < count; ++i) {
                const double x = p->value[i];
                const double u = detail::kGeluScale * (x + detail::kGeluCoeff * x * x * x);
                const double t = std::tanh(u);
                const double sech2 = 1.0 - t * t;
                const double du = detail::kGeluScale * (1.0 + 3.0 * detail::kGeluCoeff * x * x);
                p->grad[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * sech2 * du);
            }
        };
    return node;
}

// Gather rows of `table` (V,d) for token ids; output (B,S,d).
inline NodePtr embedding(const NodePtr& table, const std::vector<std::vector<int>>& ids) {
    const Tensor& tv = table->value;
    if (tv.rank() != 2) throw_error("dimension", "embedding: table must be rank 2");
    const int vocab = tv.dim(0), d = tv.dim(1);
    const int batch = static_cast<int>(ids.size());
    if (batch == 0) throw_error("input", "embedding: empty batch");
    const int seq = static_cast<int>(ids[0].size());
    Tensor out({batch, seq, d});
    for (int b = 0; b < batch; ++b) {
        if (static_cast<int>(ids[static_cast<std::size_t>(b)].size()) != seq)
            throw_error("input", "embedding: ragged batch");
        for (int s = 0; s < seq; ++s) {
            const int id = ids[static_cast<std::size_t>(b)][static_cast<std::size_t>(s)];
            if (id < 0 || id >= vocab) throw_error("input", "embedding: token id out of range");
            const double* src = tv.data() + static_cast<std::size_t>(id) * d;
            double* dst = out.data() + (static_cast<std::size_t>(b) * seq + s) * d;
            for (int j = 0; j < d; ++j) dst[j] = src[j];
        }
    }
    auto node = detail::make_op(std::move(out), OpTag::Embedding, {table});
    if (node->requires_grad) {
        auto ids_copy = std::make_shared<std::vector<std::vector<int>>>(ids);
        node->backprop = [ids_copy, d, seq, batch](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            for (int b = 0; b < batch; ++b)
                for (int s = 0; s < seq; ++s) {
                    const int id = (*ids_copy)[static_cast<std::size_t>(b)][static_cast<std::size_t>(s)];
                    const double* g = self.grad.data() + (static_cast<std::size_t>(b) * seq + s) * d;
                    double* dst = p->grad.data() + static_cast<std::size_t>(id) * d;
                    for (int j = 0; j < d; ++j) dst[j] += g[j];
                }
        };
    }
    return node;
}

inline NodePtr slice_last(const NodePtr& a, int offset, int len) {
    const Tensor& av = a->value;
    const int n = av.dim(av.rank() - 1);
    if (offset < 0 || len <= 0 || offset + len > n)
        throw_error("dimension", "slice_last: invalid slice");
    std::vector<int> shape = av.shape();
    shape.back() = len;
    Tensor out(shape);
    const std::size_t rows = av.numel() / static_cast<std::size_t>(n);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = av.data() + r * n + offset;
        double* dst = out.data() + r * len;
        for (int j = 0; j < len; ++j) dst[j] = src[j];
    }
    auto node = detail::make_op(std::move(out), OpTag::SliceLast, {a});
    if (node->requires_grad)
        node->backprop = [offset, len, n, rows](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = self.grad.data() + r * len;
                double* dst = p->grad.data() + r * n + offset;
                for (int j = 0; j < len; ++j) dst[j] += g[j];
            }
        };
    return node;
}

inline NodePtr concat_last(const std::vector<NodePtr>& parts) {
    if (parts.empty()) throw_error("contract", "concat_last: no parts");
    std::vector<int> shape = parts[0]->value.shape();
    const int rank = static_cast<int>(shape.size());
    int total = 0;
    for (const auto& p : parts) {
        if (p->value.rank() != rank) throw_error("dimension", "concat_last: rank mismatch");
        for (int i = 0; i + 1 < rank; ++i)
            if (p->value.dim(i) != shape[static_cast<std::size_t>(i)])
                throw_error("dimension", "concat_last: leading dims mismatch");
        total += p->value.dim(rank - 1);
    }
    shape.back() = total;
    Tensor out(shape);
    const std::size_t rows = out.numel() / static_cast<std::size_t>(total);
    int col = 0;
    for (const auto& p : parts) {
        const int w = p->value.dim(rank - 1);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* src = p->value.data() + r * w;
            double* dst = out.data() + r * total + col;
            for (int j = 0; j < w; ++j) dst[j] = src[j];
        }
        col += w;
    }
    auto node = detail::make_op(std::move(out), OpTag::ConcatLast, parts);
    if (node->requires_grad)
        node->backprop = [total, rows](Node& self) {
            int c = 0;
            for (auto& p : self.parents) {
                const int w = p->value.dim(p->value.rank() - 1);
                if (p->requires_grad) {
                    detail::ensure_grad(*p);
                    for (std::size_t r = 0; r < rows; ++r) {
                        const double* g = self.grad.data() + r * total + c;
                        double* dst = p->grad.data() + r * w;
                        for (int j = 0; j < w; ++j) dst[j] += g[j];
                    }
                }
                c += w;
            }
        };
    return node;
}

// Zero out half-open column ranges of the last dim (ablation masking).
inline NodePtr zero_last_ranges(const NodePtr& a, const std::vector<std::pair<int, int>>& ranges) {
    const Tensor& av = a->value;
    const int n = av.dim(av.rank() - 1);
    std::vector<char> mask(static_cast<std::size_t>(n), 0);
    for (const auto& [lo, hi] : ranges) {
        if (lo < 0 || hi > n || lo >= hi) throw_error("dimension", "zero_last_ranges: bad range");
        for (int j = lo; j < hi; ++j) mask[static_cast<std::size_t>(j)] = 1;
    }
    Tensor out(av.shape());
    const std::size_t rows = av.numel() / static_cast<std::size_t>(n);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = av.data() + r * n;
        double* dst = out.data() + r * n;
        for (int j = 0; j < n; ++j) dst[j] = mask[static_cast<std::size_t>(j)] ? 0.0 : src[j];
    }
    auto node = detail::make_op(std::move(out), OpTag::ZeroLastRanges, {a});
    if (node->requires_grad) {
        auto mask_copy = std::make_shared<std::vector<char>>(std::move(mask));
        node->backprop = [mask_copy, n, rows](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = self.grad.data() + r * n;
                double* dst = p->grad.data() + r * n;
                for (int j = 0; j < n; ++j)
                    if (!(*mask_copy)[static_cast<std::size_t>(j)]) dst[j] += g[j];
            }
        };
    }
    return node;
}

// (B,S,d) -> (B,d): mean over the middle axis (token pooling).
inline NodePtr mean_axis1(const NodePtr& a) {
    const Tensor& av = a->value;
    if (av.rank() != 3) throw_error("dimension", "mean_axis1: rank must be 3");
    const int batch = av.dim(0), seq = av.dim(1), d = av.dim(2);
    Tensor out({batch, d});
    for (int b = 0; b < batch; ++b) {
        double* dst = out.data() + static_cast<std::size_t>(b) * d;
        for (int s = 0; s < seq; ++s) {
            const double* src = av.data() + (static_cast<std::size_t>(b) * seq + s) * d;
            for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
        for (int j = 0; j < d; ++j) dst[j] /= seq;
    }
    auto node = detail::make_op(std::move(out), OpTag::MeanAxis1, {a});
    if (node->requires_grad)
        node->backprop = [batch, seq, d](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            for (int b = 0; b < batch; ++b) {
                const double* g = self.grad.data() + static_cast<std::size_t>(b) * d;
                for (int s = 0; s < seq; ++s) {
                    double* dst = p->grad.data() + (static_cast<std::size_t>(b) * seq + s) * d;
                    for (int j = 0; j < d; ++j) dst[j] += g[j] / seq;
                }
            }
        };
    return node;
}

inline NodePtr sum_all(const NodePtr& a) {
    double s = 0.0;
    const std::size_t count = a->value.numel();
    for (std::size_t i = 0; i < count; ++i) s += a->value[i];
    auto node = detail::make_op(Tensor::scalar(s), OpTag::SumAll, {a});
    if (node->requires_grad)
        node->backprop = [count](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            const double g = self.grad[0];
            for (std::size_t i = 0; i < count; ++i) p->grad[i] += g;
        };
    return node;
}

inline NodePtr mean_all(const NodePtr& a) {
    const std::size_t count = a->value.numel();
    double s = 0.0;
    for (std::size_t i = 0; i < count; ++i) s += a->value[i];
    auto node = detail::make_op(Tensor::scalar(s / static_cast<double>(count)), OpTag::MeanAll, {a});
    if (node->requires_grad)
        node->backprop = [count](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            const double g = self.grad[0] / static_cast<double>(count);
            for (std::size_t i = 0; i < count; ++i) p->grad[i] += g;
        };
    return node;
}

// Rows of (n,d) scaled to unit L2 norm.
inline NodePtr l2_normalize_rows(const NodePtr& a) {
    const Tensor& av = a->value;
    if (av.rank() != 2) throw_error("dimension", "l2_normalize_rows: rank must be 2");
    const int n = av.dim(0), d = av.dim(1);
    Tensor out({n, d});
    auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* x = av.data() + static_cast<std::size_t>(i) * d;
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += x[j] * x[j];
        const double r = std::sqrt(s);
        if (r == 0.0) throw_error("numeric", "l2_normalize_rows: zero-norm row");
        (*norms)[static_cast<std::size_t>(i)] = r;
        double* y = out.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) y[j] = x[j] / r;
    }
    auto node = detail::make_op(std::move(out), OpTag::L2NormalizeRows, {a});
    if (node->requires_grad)
        node->backprop = [n, d, norms](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            for (int i = 0; i < n; ++i) {
                const double* y = self.value.data() + static_cast<std::size_t>(i) * d;
                const double* g = self.grad.data() + static_cast<std::size_t>(i) * d;
                double* dst = p->grad.data() + static_cast<std::size_t>(i) * d;
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += y[j] * g[j];
                const double inv = 1.0 / (*norms)[static_cast<std::size_t>(i)];
                for (int j = 0; j < d; ++j) dst[j] += (g[j] - y[j] * dot) * inv;
            }
        };
    return node;
}

inline NodePtr exp_node(const NodePtr& a) {
    Tensor out(a->value.shape());
    const std::size_t count = out.numel();
    for (std::size_t i = 0; i < count; ++i) out[i] = std::exp(a->value[i]);
    auto node = detail::make_op(std::move(out), OpTag::Exp, {a});
    if (node->requires_grad)
        node->backprop = [count](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            for (std::size_t i = 0; i < count; ++i) p->grad[i] += self.grad[i] * self.value[i];
        };
    return node;
}

// Broadcast-multiply a tensor by a scalar node (e.g. exp(logit_scale)).
inline NodePtr scalar_mul(const NodePtr& s, const NodePtr& a) {
    if (!s->value.is_scalar()) throw_error("contract", "scalar_mul: scale must be scalar");
    const double sv = s->value[0];
    Tensor out(a->value.shape());
    const std::size_t count = out.numel();
    for (std::size_t i = 0; i < count; ++i) out[i] = sv * a->value[i];
    auto node = detail::make_op(std::move(out), OpTag::ScalarMul, {s, a});
    if (node->requires_grad)
        node->backprop = [count, sv](Node& self) {
            auto& ps = self.parents[0];
            auto& pa = self.parents[1];
            if (ps->requires_grad) {
                detail::ensure_grad(*ps);
                double acc = 0.0;
                for (std::size_t i = 0; i < count; ++i) acc += self.grad[i] * pa->value[i];
                ps->grad[0] += acc;
            }
            if (pa->requires_grad) {
                detail::ensure_grad(*pa);
                for (std::size_t i = 0; i < count; ++i) pa->grad[i] += self.grad[i] * sv;
            }
        };
    return node;
}

// Mean of the main diagonal of a square matrix.
inline NodePtr diag_mean(const NodePtr& a) {
    const Tensor& av = a->value;
    if (av.rank() != 2 || av.dim(0) != av.dim(1))
        throw_error("dimension", "diag_mean: square matrix required");
    const int n = av.dim(0);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += av.at(i, i);
    auto node = detail::make_op(Tensor::scalar(s / n), OpTag::DiagMean, {a});
    if (node->requires_grad)
        node->backprop = [n](Node& self) {
            auto& p = self.parents[0];
            detail::ensure_grad(*p);
            const double g = self.grad[0] / n;
            for (int i = 0; i < n; ++i) p->grad.at(i, i) += g;
        };
    return node;
}

inline NodePtr mse(const NodePtr& a, const NodePtr& b) {
    auto d = sub(a, b);
    return mean_all(mul(d, d));
}

// Reverse-mode sweep: fills grad of every node reachable from `loss` with
// d loss / d value, accumulated in reverse topological order.
inline void backward(const NodePtr& loss) {
    if (!loss->value.is_scalar()) throw_error("contract", "backward: loss must be scalar");
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* child = node->parents[next].get();
            ++next;
            if (child->requires_grad && visited.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    detail::ensure_grad(*loss);
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backprop) {
            detail::ensure_grad(*node);
            node->backprop(*node);
        }
    }
}

}  // namespace mope
