#ifndef KT_TENSOR_HPP
#define KT_TENSOR_HPP

// Dense row-major matrices with reverse-mode differentiation.
//
// A Tensor is a cheap shared handle onto a graph node. Operations on tensors
// that require gradients record their inputs and a backward closure; calling
// backward() on a 1x1 result walks the graph in reverse topological order and
// accumulates (+=) gradients into every ancestor that requires them. Graphs
// are rebuilt for every batch and freed when the last handle goes away.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "kt/error.hpp"

namespace kt {

namespace detail {

struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    std::vector<double>& grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

inline bool& no_grad_flag() {
    thread_local bool flag = false;
    return flag;
}

}  // namespace detail

/// While alive, operations on the current thread do not record graph edges.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::no_grad_flag()) { detail::no_grad_flag() = true; }
    ~NoGradGuard() { detail::no_grad_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline std::string shape_string(std::size_t rows, std::size_t cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

class Tensor {
public:
    Tensor() = default;

    /// Leaf holding `values` (row-major). Throws DimensionError on size mismatch.
    static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
        if (values.size() != rows * cols) {
            throw DimensionError("tensor of shape " + shape_string(rows, cols) + " given " +
                                 std::to_string(values.size()) + " values");
        }
        auto node = std::make_shared<detail::Node>();
        node->rows = rows;
        node->cols = cols;
        node->value = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false) {
        return from(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
    }

    static Tensor parameter(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return from(rows, cols, std::move(values), true);
    }

    static Tensor scalar(double v) { return from(1, 1, {v}); }

    bool defined() const noexcept { return node_ != nullptr; }
    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    const char* op() const { return node_->op; }

    double operator()(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
    double item() const { return node_->value.at(0); }

    std::span<const double> values() const { return node_->value; }
    std::span<double> mutable_values() { return node_->value; }

    bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

    /// Copy of the values with no graph linkage.
    Tensor detached_copy() const { return from(rows(), cols(), node_->value, false); }

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Builds an op result; records inputs and the backward closure only when
/// some input requires gradients and recording is enabled.
inline Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value, const char* op,
                          std::initializer_list<Tensor> inputs, std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->rows = rows;
    node->cols = cols;
    node->value = std::move(value);
    node->op = op;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any && !no_grad_flag()) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

inline Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value, const char* op,
                          const std::vector<Tensor>& inputs, std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->rows = rows;
    node->cols = cols;
    node->value = std::move(value);
    node->op = op;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any && !no_grad_flag()) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

inline Node& in(Node& self, std::size_t k) { return *self.inputs[k]; }

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shapes " + shape_string(a.rows(), a.cols()) + " and " +
                             shape_string(b.rows(), b.cols()) + " differ");
    }
}

/// Numerically safe logistic function: exp is only ever taken of -|x|.
inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

using detail::sigmoid;

// ---------------------------------------------------------------------------
// Matrix products

/// a (m x k) times b (k x n).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: cannot multiply " + shape_string(a.rows(), a.cols()) + " by " +
                             shape_string(b.rows(), b.cols()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av[i * k + p];
            if (x == 0.0) continue;
            const double* brow = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
        }
    }
    return detail::make_result(m, n, std::move(out), "matmul", {a, b}, [m, k, n](detail::Node& self) {
        auto& A = detail::in(self, 0);
        auto& B = detail::in(self, 1);
        const auto& g = self.grad;
        if (A.requires_grad) {
            auto& ga = A.grad_buffer();
            // ga += g * B^T
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = B.value.data() + p * n;
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    ga[i * k + p] += s;
                }
            }
        }
        if (B.requires_grad) {
            auto& gb = B.grad_buffer();
            // gb += A^T * g
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double x = A.value[i * k + p];
                    if (x == 0.0) continue;
                    double* gbrow = gb.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += x * grow[j];
                }
            }
        }
    });
}

/// Alias matching the usual BLAS name.
inline Tensor gemm(const Tensor& a, const Tensor& b) { return matmul(a, b); }

/// a (m x k) times b^T where b is (n x k).
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: cannot multiply " + shape_string(a.rows(), a.cols()) +
                             " by the transpose of " + shape_string(b.rows(), b.cols()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<double> out(m * n, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += av[i * k + p] * bv[j * k + p];
            out[i * n + j] = s;
        }
    }
    return detail::make_result(m, n, std::move(out), "matmul_nt", {a, b}, [m, k, n](detail::Node& self) {
        auto& A = detail::in(self, 0);
        auto& B = detail::in(self, 1);
        const auto& g = self.grad;
        if (A.requires_grad) {
            auto& ga = A.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    if (gij == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * B.value[j * k + p];
                }
        }
        if (B.requires_grad) {
            auto& gb = B.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    if (gij == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * A.value[i * k + p];
                }
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return detail::make_result(a.rows(), a.cols(), std::move(out), "add", {a, b}, [](detail::Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto& x = detail::in(self, k);
            if (!x.requires_grad) continue;
            auto& gx = x.grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return detail::make_result(a.rows(), a.cols(), std::move(out), "sub", {a, b}, [](detail::Node& self) {
        auto& x = detail::in(self, 0);
        auto& y = detail::in(self, 1);
        if (x.requires_grad) {
            auto& g = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (y.requires_grad) {
            auto& g = y.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

/// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return detail::make_result(a.rows(), a.cols(), std::move(out), "mul", {a, b}, [](detail::Node& self) {
        auto& x = detail::in(self, 0);
        auto& y = detail::in(self, 1);
        if (x.requires_grad) {
            auto& g = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
        }
        if (y.requires_grad) {
            auto& g = y.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a.values()[i];
    return detail::make_result(a.rows(), a.cols(), std::move(out), "scale", {a}, [s](detail::Node& self) {
        auto& g = detail::in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

/// x (m x n) plus a 1 x n row vector broadcast over rows.
inline Tensor add_row(const Tensor& x, const Tensor& bias) {
    if (bias.rows() != 1 || bias.cols() != x.cols()) {
        throw DimensionError("add_row: bias " + shape_string(bias.rows(), bias.cols()) + " does not broadcast over " +
                             shape_string(x.rows(), x.cols()));
    }
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.values()[j];
    return detail::make_result(m, n, std::move(out), "add_row", {x, bias}, [m, n](detail::Node& self) {
        auto& X = detail::in(self, 0);
        auto& Bv = detail::in(self, 1);
        if (X.requires_grad) {
            auto& g = X.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (Bv.requires_grad) {
            auto& g = Bv.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
        }
    });
}

/// Dense layer: x * w + b, with w stored (in x out) and b (1 x out).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row(matmul(x, w), b); }

/// Sum of all entries as a 1x1 tensor.
inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    return detail::make_result(1, 1, {s}, "sum", {x}, [](detail::Node& self) {
        auto& g = detail::in(self, 0).grad_buffer();
        for (double& v : g) v += self.grad[0];
    });
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { sigmoid, tanh };

inline Tensor activation(const Tensor& x, Activation kind) {
    std::vector<double> out(x.size());
    if (kind == Activation::sigmoid) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid(x.values()[i]);
        return detail::make_result(x.rows(), x.cols(), std::move(out), "sigmoid", {x}, [](detail::Node& self) {
            auto& g = detail::in(self, 0).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double y = self.value[i];
                g[i] += self.grad[i] * y * (1.0 - y);
            }
        });
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.values()[i]);
    return detail::make_result(x.rows(), x.cols(), std::move(out), "tanh", {x}, [](detail::Node& self) {
        auto& g = detail::in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = self.value[i];
            g[i] += self.grad[i] * (1.0 - y * y);
        }
    });
}

inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid); }
inline Tensor tanh(const Tensor& x) { return activation(x, Activation::tanh); }

/// Row-wise softmax with per-row max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.values().data() + i * n;
        double* orow = out.data() + i * n;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            z += orow[j];
        }
        for (std::size_t j = 0; j < n; ++j) orow[j] /= z;
    }
    return detail::make_result(m, n, std::move(out), "softmax_rows", {x}, [m, n](detail::Node& self) {
        auto& g = detail::in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
            const double* y = self.value.data() + i * n;
            const double* gy = self.grad.data() + i * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (gy[j] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// Indexing and layout

/// Rows of `table` selected by 1-based ids. Backward scatter-adds.
inline Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
    const std::size_t n = table.cols();
    std::vector<std::size_t> idx(ids.size());
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const int id = ids[r];
        if (id < 1 || static_cast<std::size_t>(id) > table.rows()) {
            throw IndexError("gather_rows: id " + std::to_string(id) + " outside [1, " +
                                 std::to_string(table.rows()) + "]",
                             id);
        }
        idx[r] = static_cast<std::size_t>(id - 1);
    }
    std::vector<double> out(ids.size() * n);
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(table.values().data() + idx[r] * n, n, out.data() + r * n);
    return detail::make_result(ids.size(), n, std::move(out), "gather_rows", {table},
                               [idx = std::move(idx), n](detail::Node& self) {
                                   auto& g = detail::in(self, 0).grad_buffer();
                                   for (std::size_t r = 0; r < idx.size(); ++r)
                                       for (std::size_t j = 0; j < n; ++j) g[idx[r] * n + j] += self.grad[r * n + j];
                               });
}

/// [a, b] joined along the column (feature) axis.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("concat_cols: row counts differ (" + shape_string(a.rows(), a.cols()) + " vs " +
                             shape_string(b.rows(), b.cols()) + ")");
    }
    const std::size_t m = a.rows(), na = a.cols(), nb = b.cols(), n = na + nb;
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(a.values().data() + i * na, na, out.data() + i * n);
        std::copy_n(b.values().data() + i * nb, nb, out.data() + i * n + na);
    }
    return detail::make_result(m, n, std::move(out), "concat_cols", {a, b}, [m, na, nb, n](detail::Node& self) {
        auto& A = detail::in(self, 0);
        auto& B = detail::in(self, 1);
        if (A.requires_grad) {
            auto& g = A.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < na; ++j) g[i * na + j] += self.grad[i * n + j];
        }
        if (B.requires_grad) {
            auto& g = B.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < nb; ++j) g[i * nb + j] += self.grad[i * n + na + j];
        }
    });
}

/// Joins k tensors of shape (m x 1) into one (m x k).
inline Tensor stack_cols(const std::vector<Tensor>& columns) {
    if (columns.empty()) throw DimensionError("stack_cols: no columns");
    const std::size_t m = columns.front().rows(), k = columns.size();
    for (const auto& c : columns) {
        if (c.rows() != m || c.cols() != 1) {
            throw DimensionError("stack_cols: expected " + shape_string(m, 1) + ", got " +
                                 shape_string(c.rows(), c.cols()));
        }
    }
    std::vector<double> out(m * k);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < m; ++i) out[i * k + j] = columns[j].values()[i];
    return detail::make_result(m, k, std::move(out), "stack_cols", columns, [m, k](detail::Node& self) {
        for (std::size_t j = 0; j < k; ++j) {
            auto& c = detail::in(self, j);
            if (!c.requires_grad) continue;
            auto& g = c.grad_buffer();
            for (std::size_t i = 0; i < m; ++i) g[i] += self.grad[i * k + j];
        }
    });
}

/// Columns [start, start + count) of x.
inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    if (start + count > x.cols()) {
        throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                             ") exceed " + shape_string(x.rows(), x.cols()));
    }
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * count);
    for (std::size_t i = 0; i < m; ++i) std::copy_n(x.values().data() + i * n + start, count, out.data() + i * count);
    return detail::make_result(m, count, std::move(out), "slice_cols", {x}, [m, n, start, count](detail::Node& self) {
        auto& g = detail::in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j) g[i * n + start + j] += self.grad[i * count + j];
    });
}

/// One entry per row: out[i] = x[i][cols[i]] (0-based column indices).
inline Tensor pick_cols(const Tensor& x, std::span<const std::size_t> cols) {
    if (cols.size() != x.rows()) {
        throw DimensionError("pick_cols: " + std::to_string(cols.size()) + " indices for " +
                             std::to_string(x.rows()) + " rows");
    }
    const std::size_t n = x.cols();
    std::vector<std::size_t> idx(cols.begin(), cols.end());
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= n) throw IndexError("pick_cols: column index out of range", static_cast<long long>(idx[i]));
        out[i] = x.values()[i * n + idx[i]];
    }
    const std::size_t rows = idx.size();
    return detail::make_result(rows, 1, std::move(out), "pick_cols", {x},
                               [idx = std::move(idx), n](detail::Node& self) {
                                   auto& g = detail::in(self, 0).grad_buffer();
                                   for (std::size_t i = 0; i < idx.size(); ++i) g[i * n + idx[i]] += self.grad[i];
                               });
}

/// Same values, new shape.
inline Tensor reshape(const Tensor& x, std::size_t rows, std::size_t cols) {
    if (rows * cols != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_string(x.rows(), x.cols()) + " as " +
                             shape_string(rows, cols));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    return detail::make_result(rows, cols, std::move(out), "reshape", {x}, [](detail::Node& self) {
        auto& g = detail::in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

/// Repeats a 1 x n row `count` times.
inline Tensor tile_rows(const Tensor& row, std::size_t count) {
    if (row.rows() != 1) throw DimensionError("tile_rows: expected a single row, got " + shape_string(row.rows(), row.cols()));
    const std::size_t n = row.cols();
    std::vector<double> out(count * n);
    for (std::size_t i = 0; i < count; ++i) std::copy_n(row.values().data(), n, out.data() + i * n);
    return detail::make_result(count, n, std::move(out), "tile_rows", {row}, [count, n](detail::Node& self) {
        auto& g = detail::in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    });
}

// ---------------------------------------------------------------------------
// Batched slot memory. A batch of B memories with S slots of width D is stored
// as a B x (S*D) tensor; row b holds memory b with slot s at columns
// [s*D, (s+1)*D).

/// r[b] = sum_s w[b][s] * M[b][s]. w is B x S.
inline Tensor memory_read(const Tensor& memory, const Tensor& weights, std::size_t slot_width) {
    const std::size_t batch = memory.rows(), slots = weights.cols(), d = slot_width;
    if (weights.rows() != batch || slots * d != memory.cols()) {
        throw DimensionError("memory_read: memory " + shape_string(memory.rows(), memory.cols()) +
                             " incompatible with weights " + shape_string(weights.rows(), weights.cols()) +
                             " at slot width " + std::to_string(d));
    }
    std::vector<double> out(batch * d, 0.0);
    const auto mv = memory.values();
    const auto wv = weights.values();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < slots; ++s) {
            const double w = wv[b * slots + s];
            const double* slot = mv.data() + b * slots * d + s * d;
            for (std::size_t j = 0; j < d; ++j) out[b * d + j] += w * slot[j];
        }
    return detail::make_result(batch, d, std::move(out), "memory_read", {memory, weights},
                               [batch, slots, d](detail::Node& self) {
                                   auto& M = detail::in(self, 0);
                                   auto& W = detail::in(self, 1);
                                   if (M.requires_grad) {
                                       auto& g = M.grad_buffer();
                                       for (std::size_t b = 0; b < batch; ++b)
                                           for (std::size_t s = 0; s < slots; ++s) {
                                               const double w = W.value[b * slots + s];
                                               for (std::size_t j = 0; j < d; ++j)
                                                   g[b * slots * d + s * d + j] += w * self.grad[b * d + j];
                                           }
                                   }
                                   if (W.requires_grad) {
                                       auto& g = W.grad_buffer();
                                       for (std::size_t b = 0; b < batch; ++b)
                                           for (std::size_t s = 0; s < slots; ++s) {
                                               const double* slot = M.value.data() + b * slots * d + s * d;
                                               double acc = 0.0;
                                               for (std::size_t j = 0; j < d; ++j) acc += slot[j] * self.grad[b * d + j];
                                               g[b * slots + s] += acc;
                                           }
                                   }
                               });
}

/// Erase-then-add update: M'[b][s] = M[b][s] * (1 - w[b][s] e[b]) + w[b][s] a[b].
/// Rows whose `active` flag is 0 pass through unchanged (no gradient into
/// w, e, a for those rows). An empty `active` span means all rows active.
inline Tensor memory_write(const Tensor& memory, const Tensor& weights, const Tensor& erase, const Tensor& add_vec,
                           std::span<const unsigned char> active = {}) {
    const std::size_t batch = memory.rows(), slots = weights.cols(), d = erase.cols();
    if (weights.rows() != batch || erase.rows() != batch || add_vec.rows() != batch || add_vec.cols() != d ||
        slots * d != memory.cols() || (!active.empty() && active.size() != batch)) {
        throw DimensionError("memory_write: memory " + shape_string(memory.rows(), memory.cols()) + ", weights " +
                             shape_string(weights.rows(), weights.cols()) + ", erase " +
                             shape_string(erase.rows(), erase.cols()) + ", add " +
                             shape_string(add_vec.rows(), add_vec.cols()) + " are inconsistent");
    }
    std::vector<unsigned char> on(active.begin(), active.end());
    if (on.empty()) on.assign(batch, 1);
    std::vector<double> out(memory.values().begin(), memory.values().end());
    const auto wv = weights.values();
    const auto ev = erase.values();
    const auto av = add_vec.values();
    for (std::size_t b = 0; b < batch; ++b) {
        if (!on[b]) continue;
        for (std::size_t s = 0; s < slots; ++s) {
            const double w = wv[b * slots + s];
            double* slot = out.data() + b * slots * d + s * d;
            for (std::size_t j = 0; j < d; ++j) slot[j] = slot[j] * (1.0 - w * ev[b * d + j]) + w * av[b * d + j];
        }
    }
    return detail::make_result(
        batch, slots * d, std::move(out), "memory_write", {memory, weights, erase, add_vec},
        [batch, slots, d, on = std::move(on)](detail::Node& self) {
            auto& M = detail::in(self, 0);
            auto& W = detail::in(self, 1);
            auto& E = detail::in(self, 2);
            auto& A = detail::in(self, 3);
            const auto& g = self.grad;
            if (M.requires_grad) {
                auto& gm = M.grad_buffer();
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t base = b * slots * d;
                    if (!on[b]) {
                        for (std::size_t i = 0; i < slots * d; ++i) gm[base + i] += g[base + i];
                        continue;
                    }
                    for (std::size_t s = 0; s < slots; ++s) {
                        const double w = W.value[b * slots + s];
                        for (std::size_t j = 0; j < d; ++j)
                            gm[base + s * d + j] += g[base + s * d + j] * (1.0 - w * E.value[b * d + j]);
                    }
                }
            }
            if (W.requires_grad) {
                auto& gw = W.grad_buffer();
                for (std::size_t b = 0; b < batch; ++b) {
                    if (!on[b]) continue;
                    for (std::size_t s = 0; s < slots; ++s) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < d; ++j) {
                            const std::size_t mi = b * slots * d + s * d + j;
                            acc += g[mi] * (A.value[b * d + j] - M.value[mi] * E.value[b * d + j]);
                        }
                        gw[b * slots + s] += acc;
                    }
                }
            }
            if (E.requires_grad || A.requires_grad) {
                for (std::size_t b = 0; b < batch; ++b) {
                    if (!on[b]) continue;
                    for (std::size_t s = 0; s < slots; ++s) {
                        const double w = W.value[b * slots + s];
                        for (std::size_t j = 0; j < d; ++j) {
                            const std::size_t mi = b * slots * d + s * d + j;
                            if (E.requires_grad) E.grad_buffer()[b * d + j] -= g[mi] * w * M.value[mi];
                            if (A.requires_grad) A.grad_buffer()[b * d + j] += g[mi] * w;
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Loss

/// -sum_i weight_i * (y_i log p_i + (1 - y_i) log(1 - p_i)) with p clamped to
/// [eps, 1 - eps]. Entries clamped away from p receive no gradient.
inline Tensor binary_cross_entropy_sum(const Tensor& probs, std::span<const double> targets,
                                       std::span<const double> weights, double eps = 1e-7) {
    if (targets.size() != probs.size() || weights.size() != probs.size()) {
        throw DimensionError("binary_cross_entropy_sum: " + std::to_string(probs.size()) + " probabilities, " +
                             std::to_string(targets.size()) + " targets, " + std::to_string(weights.size()) +
                             " weights");
    }
    double total = 0.0;
    std::vector<double> coef(probs.size(), 0.0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double w = weights[i];
        if (w == 0.0) continue;
        const double raw = probs.values()[i];
        const double p = std::clamp(raw, eps, 1.0 - eps);
        const double y = targets[i];
        total -= w * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        if (raw == p) coef[i] = w * (-y / p + (1.0 - y) / (1.0 - p));
    }
    return detail::make_result(1, 1, {total}, "binary_cross_entropy_sum", {probs},
                               [coef = std::move(coef)](detail::Node& self) {
                                   auto& g = detail::in(self, 0).grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * coef[i];
                               });
}

// ---------------------------------------------------------------------------
// Reverse pass

/// Accumulates d(loss)/d(node) into every reachable node that requires
/// gradients. `loss` must be 1x1; its own grad is set to 1.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1) {
        throw ContractError("backward: loss must be a 1x1 tensor, got " +
                            (loss.defined() ? shape_string(loss.rows(), loss.cols()) : std::string("undefined")));
    }
    detail::Node* root = loss.node().get();
    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad_buffer();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

}  // namespace kt

#endif  // KT_TENSOR_HPP
