#pragma once

// Minimal define-by-run reverse-mode autodiff over dense double tensors.
//
// Every op result records its inputs and a backward rule. Node ids come from a
// monotonically increasing per-thread counter, so the insertion order of the
// graph is recoverable and backward() can visit nodes in exact reverse order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "switchprompt/random.hpp"

namespace switchprompt {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

inline std::uint64_t next_node_id() {
    thread_local std::uint64_t counter = 0;
    return ++counter;
}

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::uint64_t id = next_node_id();
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    bool is_leaf() const { return !backward; }

    std::vector<double>& grad_buffer() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

/// Handle to a node in the computation graph. Copies share the node.
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return from_values(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return from_values(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        }
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->values = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from_values({1}, {value}, requires_grad);
    }

    /// i.i.d. N(0, stddev^2) entries drawn from `rng`.
    static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false) {
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = rng.normal(0.0, stddev);
        return from_values(std::move(shape), std::move(v), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node().shape; }
    std::size_t dim() const { return shape().size(); }
    std::size_t size() const { return node().values.size(); }
    std::size_t rows() const { return dim() == 2 ? shape()[0] : 1; }
    std::size_t cols() const { return shape().empty() ? 1 : shape().back(); }

    std::span<const double> values() const { return node().values; }
    /// Direct write access, for initialization and optimizer updates only.
    std::span<double> mutable_values() { return node().values; }

    double item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return node().values[0];
    }
    double operator[](std::size_t i) const { return node().values[i]; }
    double at(std::size_t r, std::size_t c) const { return node().values[r * cols() + c]; }

    bool has_grad() const { return !node().grad.empty(); }
    /// Gradient buffer; zeros if nothing has been accumulated yet.
    std::vector<double> grad() const {
        if (node().grad.empty()) return std::vector<double>(size(), 0.0);
        return node().grad;
    }
    void zero_grad() { node().grad.clear(); }

    bool requires_grad() const { return node().requires_grad; }
    void set_requires_grad(bool flag) {
        if (!node().is_leaf()) throw std::logic_error("requires_grad can only be changed on leaf tensors");
        node().requires_grad = flag;
        if (!flag) node().grad.clear();
    }

    std::uint64_t node_id() const { return node().id; }
    bool is_leaf() const { return node().is_leaf(); }

    /// Value copy detached from the graph.
    Tensor detach(bool requires_grad = false) const {
        return from_values(shape(), node().values, requires_grad);
    }

    detail::Node& node() const {
        if (!node_) throw std::logic_error("use of undefined tensor");
        return *node_;
    }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

   private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    friend Tensor make_op_result(Shape, std::vector<double>, std::vector<Tensor>,
                                 std::function<void(detail::Node&)>);

    std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
   public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

/// Builds an op output. The backward rule and inputs are only retained when
/// at least one input requires gradient, so constant subgraphs record nothing.
inline Tensor make_op_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                             std::function<void(detail::Node&)> backward) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    const bool needs = detail::grad_mode() && std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
    if (needs) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& t : inputs) node->inputs.push_back(t.node_ptr());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

namespace detail {

inline std::vector<double>* grad_target(Node& self, std::size_t input) {
    Node& in = *self.inputs[input];
    return in.requires_grad ? &in.grad_buffer() : nullptr;
}

inline void require_2d(const Tensor& t, const char* op) {
    if (t.dim() != 2) throw ShapeError(std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

/// Runs reverse accumulation from a scalar loss. Leaf gradients accumulate
/// across calls; intermediate gradients are reset on entry.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) throw std::logic_error("backward on a tensor that is not part of a recorded graph");

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{&loss.node()};
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        order.push_back(n);
        for (auto& in : n->inputs) {
            if (in->requires_grad) stack.push_back(in.get());
        }
    }
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id > b->id; });

    for (auto* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->values.size(), 0.0);
    }
    loss.node().grad_buffer()[0] += 1.0;
    for (auto* n : order) {
        if (!n->is_leaf()) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

/// a + b. `b` may also be a 1-D row vector broadcast over the rows of a 2-D
/// `a`, or a single-element tensor.
inline Tensor add(const Tensor& a, const Tensor& b) {
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.begin(), av.end());
    enum { Same, Row, Scalar } mode;
    if (a.shape() == b.shape()) {
        mode = Same;
    } else if (b.dim() == 1 && a.dim() == 2 && b.size() == a.cols()) {
        mode = Row;
    } else if (b.size() == 1) {
        mode = Scalar;
    } else {
        throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t cols = a.cols();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += mode == Same ? bv[i] : mode == Row ? bv[i % cols] : bv[0];
    }
    return make_op_result(a.shape(), std::move(out), {a, b}, [mode, cols](detail::Node& self) {
        const auto& g = self.grad;
        if (auto* ga = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
        if (auto* gb = detail::grad_target(self, 1)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*gb)[mode == Same ? i : mode == Row ? i % cols : 0] += g[i];
            }
        }
    });
}

/// Elementwise product. `b` may be a single-element tensor (scalar gate).
inline Tensor mul(const Tensor& a, const Tensor& b) {
    const bool scalar_b = b.size() == 1 && a.shape() != b.shape();
    if (!scalar_b && a.shape() != b.shape()) {
        throw ShapeError("mul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * (scalar_b ? bv[0] : bv[i]);
    return make_op_result(a.shape(), std::move(out), {a, b}, [scalar_b](detail::Node& self) {
        const auto& g = self.grad;
        const auto& av = self.inputs[0]->values;
        const auto& bv = self.inputs[1]->values;
        if (auto* ga = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (scalar_b ? bv[0] : bv[i]);
        }
        if (auto* gb = detail::grad_target(self, 1)) {
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[scalar_b ? 0 : i] += g[i] * av[i];
        }
    });
}

/// scale * x + shift.
inline Tensor affine(const Tensor& x, double scale, double shift = 0.0) {
    std::vector<double> out(x.values().begin(), x.values().end());
    for (auto& v : out) v = scale * v + shift;
    return make_op_result(x.shape(), std::move(out), {x}, [scale](detail::Node& self) {
        if (auto* gx = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += scale * self.grad[i];
        }
    });
}

inline Tensor scale(const Tensor& x, double factor) { return affine(x, factor, 0.0); }

/// 1 - x, the complementary gate weight.
inline Tensor one_minus(const Tensor& x) { return affine(x, -1.0, 1.0); }

inline double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(x[i]);
    return make_op_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        if (auto* gx = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.values[i];
                (*gx)[i] += self.grad[i] * y * (1.0 - y);
            }
        }
    });
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return make_op_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        if (auto* gx = detail::grad_target(self, 0)) {
            const auto& xv = self.inputs[0]->values;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (xv[i] > 0.0) (*gx)[i] += self.grad[i];
            }
        }
    });
}

/// Exact (erf-based) GELU.
inline Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
    }
    return make_op_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        if (auto* gx = detail::grad_target(self, 0)) {
            const auto& xv = self.inputs[0]->values;
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double v = xv[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                (*gx)[i] += self.grad[i] * (cdf + v * pdf);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra and shape
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.dim() != 2 || b.dim() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t p = a.shape()[0], q = a.shape()[1], r = b.shape()[1];
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(p * r, 0.0);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t k = 0; k < q; ++k) {
            const double aik = av[i * q + k];
            const double* brow = bv.data() + k * r;
            double* orow = out.data() + i * r;
            for (std::size_t j = 0; j < r; ++j) orow[j] += aik * brow[j];
        }
    }
    return make_op_result({p, r}, std::move(out), {a, b}, [p, q, r](detail::Node& self) {
        const auto& g = self.grad;
        const auto& av = self.inputs[0]->values;
        const auto& bv = self.inputs[1]->values;
        if (auto* ga = detail::grad_target(self, 0)) {
            // dA = G * B^T
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t k = 0; k < q; ++k) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < r; ++j) acc += g[i * r + j] * bv[k * r + j];
                    (*ga)[i * q + k] += acc;
                }
            }
        }
        if (auto* gb = detail::grad_target(self, 1)) {
            // dB = A^T * G
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t k = 0; k < q; ++k) {
                    const double aik = av[i * q + k];
                    for (std::size_t j = 0; j < r; ++j) (*gb)[k * r + j] += aik * g[i * r + j];
                }
            }
        }
    });
}

inline Tensor transpose(const Tensor& x) {
    detail::require_2d(x, "transpose");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
    return make_op_result({c, r}, std::move(out), {x}, [r, c](detail::Node& self) {
        if (auto* gx = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += self.grad[j * r + i];
        }
    });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(x.values().begin(), x.values().end());
    return make_op_result(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
        if (auto* gx = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
        }
    });
}

/// Concatenates 2-D tensors along the row (sequence) axis.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t cols = parts.front().shape().at(1);
    std::size_t rows = 0;
    std::vector<double> out;
    std::vector<std::size_t> offsets;
    for (const auto& t : parts) {
        detail::require_2d(t, "concat_rows");
        if (t.shape()[1] != cols) {
            throw ShapeError("concat_rows: column mismatch " + shape_str(parts.front().shape()) + " vs " +
                             shape_str(t.shape()));
        }
        offsets.push_back(out.size());
        out.insert(out.end(), t.values().begin(), t.values().end());
        rows += t.shape()[0];
    }
    return make_op_result({rows, cols}, std::move(out), parts, [offsets](detail::Node& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            if (auto* g = detail::grad_target(self, k)) {
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[offsets[k] + i];
            }
        }
    });
}

/// Concatenates 2-D tensors along the column (feature) axis.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t rows = parts.front().shape().at(0);
    std::vector<std::size_t> widths, starts;
    std::size_t total = 0;
    for (const auto& t : parts) {
        detail::require_2d(t, "concat_cols");
        if (t.shape()[0] != rows) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                             shape_str(t.shape()));
        }
        starts.push_back(total);
        widths.push_back(t.shape()[1]);
        total += t.shape()[1];
    }
    std::vector<double> out(rows * total);
    for (std::size_t k = 0; k < parts.size(); ++k)
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j)
                out[i * total + starts[k] + j] = parts[k][i * widths[k] + j];
    return make_op_result({rows, total}, std::move(out), parts, [rows, total, widths, starts](detail::Node& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            if (auto* g = detail::grad_target(self, k)) {
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j)
                        (*g)[i * widths[k] + j] += self.grad[i * total + starts[k] + j];
            }
        }
    });
}

/// Rows [begin, begin + count) of a 2-D tensor.
inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
    detail::require_2d(x, "slice_rows");
    const std::size_t cols = x.shape()[1];
    if (begin + count > x.shape()[0]) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of bounds for " + shape_str(x.shape()));
    }
    const auto v = x.values();
    std::vector<double> out(v.begin() + begin * cols, v.begin() + (begin + count) * cols);
    return make_op_result({count, cols}, std::move(out), {x}, [begin, cols](detail::Node& self) {
        if (auto* gx = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[begin * cols + i] += self.grad[i];
        }
    });
}

/// Columns [begin, begin + count) of a 2-D tensor.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
    detail::require_2d(x, "slice_cols");
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    if (begin + count > cols) {
        throw ShapeError("slice_cols: range out of bounds for " + shape_str(x.shape()));
    }
    std::vector<double> out(rows * count);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x[i * cols + begin + j];
    return make_op_result({rows, count}, std::move(out), {x}, [rows, cols, begin, count](detail::Node& self) {
        if (auto* gx = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < count; ++j) (*gx)[i * cols + begin + j] += self.grad[i * count + j];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
    const auto v = x.values();
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    return make_op_result({1}, {s}, {x}, [](detail::Node& self) {
        if (auto* gx = detail::grad_target(self, 0)) {
            for (auto& g : *gx) g += self.grad[0];
        }
    });
}

inline Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw ShapeError("mean of an empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// Neural-network ops
// ---------------------------------------------------------------------------

/// Row-wise softmax over the last axis of a 2-D tensor.
inline Tensor softmax_rows(const Tensor& x) {
    detail::require_2d(x, "softmax_rows");
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < rows; ++i) {
        const double* in = x.values().data() + i * cols;
        double* o = out.data() + i * cols;
        const double mx = *std::max_element(in, in + cols);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) z += (o[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < cols; ++j) o[j] /= z;
    }
    return make_op_result(x.shape(), std::move(out), {x}, [rows, cols](detail::Node& self) {
        if (auto* gx = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < rows; ++i) {
                const double* y = self.values.data() + i * cols;
                const double* g = self.grad.data() + i * cols;
                double dot = 0.0;
                for (std::size_t j = 0; j < cols; ++j) dot += y[j] * g[j];
                for (std::size_t j = 0; j < cols; ++j) (*gx)[i * cols + j] += y[j] * (g[j] - dot);
            }
        }
    });
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of logits.
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
    detail::require_2d(logits, "softmax_cross_entropy");
    const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
    if (labels.size() != batch) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
    }
    std::vector<double> probs(logits.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        if (labels[i] >= classes) {
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                                    " out of range for " + std::to_string(classes) + " classes");
        }
        const double* in = logits.values().data() + i * classes;
        const double mx = *std::max_element(in, in + classes);
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) z += std::exp(in[j] - mx);
        const double log_z = mx + std::log(z);
        for (std::size_t j = 0; j < classes; ++j) probs[i * classes + j] = std::exp(in[j] - log_z);
        loss += log_z - in[labels[i]];
    }
    loss /= static_cast<double>(batch);
    std::vector<std::size_t> targets(labels.begin(), labels.end());
    return make_op_result({1}, {loss}, {logits},
                          [probs = std::move(probs), targets = std::move(targets), batch, classes](detail::Node& self) {
                              if (auto* gx = detail::grad_target(self, 0)) {
                                  const double g = self.grad[0] / static_cast<double>(batch);
                                  for (std::size_t i = 0; i < batch; ++i) {
                                      for (std::size_t j = 0; j < classes; ++j) {
                                          const double onehot = j == targets[i] ? 1.0 : 0.0;
                                          (*gx)[i * classes + j] += g * (probs[i * classes + j] - onehot);
                                      }
                                  }
                              }
                          });
}

/// Per-row layer normalization with affine parameters gamma, beta of length cols.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
    detail::require_2d(x, "layer_norm");
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    if (gamma.size() != cols || beta.size() != cols) {
        throw ShapeError("layer_norm: parameters " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " for input " + shape_str(x.shape()));
    }
    std::vector<double> out(x.size()), xhat(x.size()), inv_std(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* in = x.values().data() + i * cols;
        double mu = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mu += in[j];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(cols);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j) {
            xhat[i * cols + j] = (in[j] - mu) * inv_std[i];
            out[i * cols + j] = xhat[i * cols + j] * gamma[j] + beta[j];
        }
    }
    return make_op_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
            const auto& g = self.grad;
            const auto& gamma_v = self.inputs[1]->values;
            if (auto* gx = detail::grad_target(self, 0)) {
                const double n = static_cast<double>(cols);
                for (std::size_t i = 0; i < rows; ++i) {
                    double sum_dy = 0.0, sum_dy_xhat = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) {
                        const double dy = g[i * cols + j] * gamma_v[j];
                        sum_dy += dy;
                        sum_dy_xhat += dy * xhat[i * cols + j];
                    }
                    for (std::size_t j = 0; j < cols; ++j) {
                        const double dy = g[i * cols + j] * gamma_v[j];
                        (*gx)[i * cols + j] +=
                            inv_std[i] / n * (n * dy - sum_dy - xhat[i * cols + j] * sum_dy_xhat);
                    }
                }
            }
            if (auto* gg = detail::grad_target(self, 1)) {
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) (*gg)[j] += g[i * cols + j] * xhat[i * cols + j];
            }
            if (auto* gb = detail::grad_target(self, 2)) {
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) (*gb)[j] += g[i * cols + j];
            }
        });
}

/// Gathers rows of `table` by id; backward scatter-adds into the table.
inline Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
    detail::require_2d(table, "embedding");
    const std::size_t vocab = table.shape()[0], width = table.shape()[1];
    std::vector<double> out(ids.size() * width);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab) {
            throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                                    std::to_string(vocab));
        }
        std::copy_n(table.values().data() + ids[i] * width, width, out.data() + i * width);
    }
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    return make_op_result({ids.size(), width}, std::move(out), {table}, [idx = std::move(idx), width](detail::Node& self) {
        if (auto* gt = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < width; ++j) (*gt)[idx[i] * width + j] += self.grad[i * width + j];
        }
    });
}

/// Identifies one dropout call: the mask is a pure function of these three
/// counters and the element index.
struct DropoutStream {
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::uint64_t op_index = 0;

    std::uint64_t key() const { return hash_combine(hash_combine(seed, step), op_index); }
};

/// Inverted dropout in training mode; the identity (same node values, no new
/// graph node) in eval mode.
inline Tensor dropout(const Tensor& x, double rate, bool training, const DropoutStream& stream) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must lie in [0, 1)");
    if (!training || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    const std::uint64_t key = stream.key();
    std::vector<double> mask(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = counter_uniform(key, i) >= rate ? keep_scale : 0.0;
        out[i] = x[i] * mask[i];
    }
    return make_op_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](detail::Node& self) {
        if (auto* gx = detail::grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * mask[i];
        }
    });
}

}  // namespace switchprompt
