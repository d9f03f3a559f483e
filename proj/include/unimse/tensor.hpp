#pragma once

// Dense 2-D tensors of doubles with reverse-mode automatic differentiation.
//
// The model is define-by-run: ops compute their value immediately and append
// a node to the owning Graph (a tape). backward() walks the tape once in
// reverse creation order, so every node's adjoint is complete before it is
// propagated to its inputs. Scalars are 1x1 tensors; there is no batch axis,
// callers loop over samples and let the tape join the graphs.
//
// Parameters are leaf tensors created outside any graph; their gradients
// accumulate across backward() calls until zero_grad().

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "unimse/common.hpp"
#include "unimse/rng.hpp"

namespace unimse::numcore {

struct Shape {
    int rows = 0;
    int cols = 0;
    bool operator==(const Shape& o) const { return rows == o.rows && cols == o.cols; }
    std::size_t count() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

inline std::string shape_str(const Shape& s) { return str(s.rows, "x", s.cols); }

struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad; // sized lazily; empty means "all zero, untouched"
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void()> backward_fn; // empty for leaves
    const char* op = "leaf";
    std::string name; // parameter name, for diagnostics and checkpoints
    std::int64_t seq = -1; // position on the tape; -1 for leaves

    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(val.size(), 0.0);
        return grad;
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static Tensor leaf(int rows, int cols, std::vector<double> data, bool requires_grad = false,
                       std::string name = "") {
        if (rows <= 0 || cols <= 0)
            fail("tensor: non-positive shape ", rows, "x", cols, (name.empty() ? "" : " for "), name);
        auto n = std::make_shared<Node>();
        n->shape = {rows, cols};
        if (data.size() != n->shape.count())
            fail("tensor: data size ", data.size(), " does not match shape ", shape_str(n->shape));
        n->val = std::move(data);
        n->requires_grad = requires_grad;
        n->name = std::move(name);
        return Tensor(n);
    }

    static Tensor zeros(int rows, int cols, bool requires_grad = false, std::string name = "") {
        return leaf(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0),
                    requires_grad, std::move(name));
    }

    static Tensor full(int rows, int cols, double v) {
        return leaf(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, v));
    }

    static Tensor scalar(double v) { return full(1, 1, v); }

    // Gaussian init scaled by `stddev`; the usual starting point for parameters.
    static Tensor randn(int rows, int cols, Rng& rng, double stddev, std::string name = "") {
        std::vector<double> d(static_cast<std::size_t>(rows) * cols);
        for (auto& x : d) x = rng.normal(0.0, stddev);
        return leaf(rows, cols, std::move(d), true, std::move(name));
    }

    bool defined() const { return n_ != nullptr; }
    Node* node() const { return n_.get(); }
    const std::shared_ptr<Node>& ptr() const { return n_; }

    int rows() const { return n_->shape.rows; }
    int cols() const { return n_->shape.cols; }
    const Shape& shape() const { return n_->shape; }
    std::size_t size() const { return n_->shape.count(); }
    const std::string& name() const { return n_->name; }

    const std::vector<double>& data() const { return n_->val; }
    std::vector<double>& mutable_data() { return n_->val; }
    const std::vector<double>& grad() const { return n_->grad; }

    double at(int r, int c) const { return n_->val[static_cast<std::size_t>(r) * cols() + c]; }
    void set(int r, int c, double v) { n_->val[static_cast<std::size_t>(r) * cols() + c] = v; }

    double value() const {
        if (size() != 1) fail("tensor: value() on non-scalar shape ", shape_str(shape()));
        return n_->val[0];
    }

    double grad_at(std::size_t i) const { return n_->grad.empty() ? 0.0 : n_->grad[i]; }

    void zero_grad() { n_->grad.assign(n_->val.size(), 0.0); }

private:
    std::shared_ptr<Node> n_;
};

// Tape of op nodes in creation order. Holds the seed for stochastic ops so a
// rebuilt graph with the same seed replays the same masks.
class Graph {
public:
    explicit Graph(std::uint64_t seed = 0) : rng_(seed) {}

    Rng& rng() { return rng_; }
    std::size_t size() const { return tape_.size(); }

    Tensor make(const char* op, Shape shape, std::vector<Tensor> inputs) {
        auto n = std::make_shared<Node>();
        n->shape = shape;
        n->val.assign(shape.count(), 0.0);
        n->is_leaf = false;
        n->op = op;
        for (auto& t : inputs) {
            if (!t.defined()) fail(op, ": undefined input tensor");
            n->inputs.push_back(t.ptr());
            if (t.node()->requires_grad) n->requires_grad = true;
        }
        n->seq = static_cast<std::int64_t>(tape_.size());
        tape_.push_back(n);
        return Tensor(n);
    }

    // Rejects NaN/Inf as soon as an op produces one, naming the op; a bad
    // value caught here is far easier to trace than a NaN loss ten ops later.
    static void check_finite(const char* op, const Node& n) {
        for (std::size_t i = 0; i < n.val.size(); ++i) {
            if (!std::isfinite(n.val[i]))
                fail(op, ": non-finite output at flat index ", i, " (shape ", shape_str(n.shape), ")");
        }
    }

    // Reverse-mode sweep from a scalar loss. Visits each reachable op node
    // exactly once, in reverse creation order. Returns the visit count.
    std::size_t backward(const Tensor& loss) {
        if (loss.size() != 1) fail("backward: loss must be scalar, got ", shape_str(loss.shape()));
        if (ran_backward_) fail("backward: graph already swept; build a fresh graph per step");
        ran_backward_ = true;

        std::unordered_set<Node*> reachable;
        std::vector<Node*> stack{loss.node()};
        while (!stack.empty()) {
            Node* n = stack.back();
            stack.pop_back();
            if (!n->requires_grad) continue;
            if (!reachable.insert(n).second) continue;
            for (auto& in : n->inputs) stack.push_back(in.get());
        }

        loss.node()->ensure_grad()[0] += 1.0;
        std::size_t visits = 0;
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
            Node* n = it->get();
            if (!reachable.count(n) || !n->backward_fn) continue;
            n->ensure_grad();
            n->backward_fn();
            ++visits;
        }
        return visits;
    }

private:
    std::vector<std::shared_ptr<Node>> tape_;
    Rng rng_;
    bool ran_backward_ = false;
};

namespace detail {

inline void want(bool cond, const char* op, const std::string& msg) {
    if (!cond) fail(op, ": ", msg);
}

inline std::string two(const Tensor& a, const Tensor& b) {
    return str(shape_str(a.shape()), " and ", shape_str(b.shape()));
}

} // namespace detail

// ---- arithmetic ----

inline Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
    detail::want(a.shape() == b.shape(), "add", "shape mismatch " + detail::two(a, b));
    Tensor out = g.make("add", a.shape(), {a, b});
    auto *na = a.node(), *nb = b.node(), *no = out.node();
    for (std::size_t i = 0; i < no->val.size(); ++i) no->val[i] = na->val[i] + nb->val[i];
    Graph::check_finite("add", *no);
    no->backward_fn = [na, nb, no] {
        const auto& go = no->grad;
        if (na->requires_grad) {
            auto& ga = na->ensure_grad();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (nb->requires_grad) {
            auto& gb = nb->ensure_grad();
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
        }
    };
    return out;
}

// a (m x n) + b (1 x n), b broadcast over rows.
inline Tensor add_rowvec(Graph& g, const Tensor& a, const Tensor& b) {
    detail::want(b.rows() == 1 && b.cols() == a.cols(), "add_rowvec",
                 "want (m x n) + (1 x n), got " + detail::two(a, b));
    Tensor out = g.make("add_rowvec", a.shape(), {a, b});
    auto *na = a.node(), *nb = b.node(), *no = out.node();
    const int m = a.rows(), n = a.cols();
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c)
            no->val[static_cast<std::size_t>(r) * n + c] =
                na->val[static_cast<std::size_t>(r) * n + c] + nb->val[c];
    Graph::check_finite("add_rowvec", *no);
    no->backward_fn = [na, nb, no, m, n] {
        const auto& go = no->grad;
        if (na->requires_grad) {
            auto& ga = na->ensure_grad();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (nb->requires_grad) {
            auto& gb = nb->ensure_grad();
            for (int r = 0; r < m; ++r)
                for (int c = 0; c < n; ++c) gb[c] += go[static_cast<std::size_t>(r) * n + c];
        }
    };
    return out;
}

inline Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
    detail::want(a.shape() == b.shape(), "mul", "shape mismatch " + detail::two(a, b));
    Tensor out = g.make("mul", a.shape(), {a, b});
    auto *na = a.node(), *nb = b.node(), *no = out.node();
    for (std::size_t i = 0; i < no->val.size(); ++i) no->val[i] = na->val[i] * nb->val[i];
    Graph::check_finite("mul", *no);
    no->backward_fn = [na, nb, no] {
        const auto& go = no->grad;
        if (na->requires_grad) {
            auto& ga = na->ensure_grad();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * nb->val[i];
        }
        if (nb->requires_grad) {
            auto& gb = nb->ensure_grad();
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * na->val[i];
        }
    };
    return out;
}

// a (m x n) scaled per row by column vector c (m x 1). Used to zero padded
// rows with a 0/1 mask before pooling or convolution.
inline Tensor mul_rows(Graph& g, const Tensor& a, const Tensor& c) {
    detail::want(c.cols() == 1 && c.rows() == a.rows(), "mul_rows",
                 "want (m x n) * (m x 1), got " + detail::two(a, c));
    Tensor out = g.make("mul_rows", a.shape(), {a, c});
    auto *na = a.node(), *nc = c.node(), *no = out.node();
    const int m = a.rows(), n = a.cols();
    for (int r = 0; r < m; ++r)
        for (int k = 0; k < n; ++k)
            no->val[static_cast<std::size_t>(r) * n + k] =
                na->val[static_cast<std::size_t>(r) * n + k] * nc->val[r];
    Graph::check_finite("mul_rows", *no);
    no->backward_fn = [na, nc, no, m, n] {
        const auto& go = no->grad;
        if (na->requires_grad) {
            auto& ga = na->ensure_grad();
            for (int r = 0; r < m; ++r)
                for (int k = 0; k < n; ++k)
                    ga[static_cast<std::size_t>(r) * n + k] +=
                        go[static_cast<std::size_t>(r) * n + k] * nc->val[r];
        }
        if (nc->requires_grad) {
            auto& gc = nc->ensure_grad();
            for (int r = 0; r < m; ++r) {
                double s = 0.0;
                for (int k = 0; k < n; ++k)
                    s += go[static_cast<std::size_t>(r) * n + k] *
                         na->val[static_cast<std::size_t>(r) * n + k];
                gc[r] += s;
            }
        }
    };
    return out;
}

inline Tensor scale(Graph& g, const Tensor& a, double s) {
    Tensor out = g.make("scale", a.shape(), {a});
    auto *na = a.node(), *no = out.node();
    for (std::size_t i = 0; i < no->val.size(); ++i) no->val[i] = na->val[i] * s;
    Graph::check_finite("scale", *no);
    no->backward_fn = [na, no, s] {
        if (!na->requires_grad) return;
        auto& ga = na->ensure_grad();
        for (std::size_t i = 0; i < no->grad.size(); ++i) ga[i] += no->grad[i] * s;
    };
    return out;
}

inline Tensor sub(Graph& g, const Tensor& a, const Tensor& b) { return add(g, a, scale(g, b, -1.0)); }

// ---- matrix products ----

inline Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
    detail::want(a.cols() == b.rows(), "matmul", "inner dims differ: " + detail::two(a, b));
    Tensor out = g.make("matmul", {a.rows(), b.cols()}, {a, b});
    auto *na = a.node(), *nb = b.node(), *no = out.node();
    const int m = a.rows(), k = a.cols(), n = b.cols();
    for (int i = 0; i < m; ++i) {
        double* orow = &no->val[static_cast<std::size_t>(i) * n];
        const double* arow = &na->val[static_cast<std::size_t>(i) * k];
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = &nb->val[static_cast<std::size_t>(p) * n];
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    Graph::check_finite("matmul", *no);
    no->backward_fn = [na, nb, no, m, k, n] {
        const auto& go = no->grad;
        if (na->requires_grad) {
            auto& ga = na->ensure_grad();
            // dA = dC * B^T
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* grow = &go[static_cast<std::size_t>(i) * n];
                    const double* brow = &nb->val[static_cast<std::size_t>(p) * n];
                    for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                    ga[static_cast<std::size_t>(i) * k + p] += s;
                }
        }
        if (nb->requires_grad) {
            auto& gb = nb->ensure_grad();
            // dB = A^T * dC
            for (int p = 0; p < k; ++p)
                for (int i = 0; i < m; ++i) {
                    const double av = na->val[static_cast<std::size_t>(i) * k + p];
                    if (av == 0.0) continue;
                    const double* grow = &go[static_cast<std::size_t>(i) * n];
                    double* brow = &gb[static_cast<std::size_t>(p) * n];
                    for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    };
    return out;
}

// C = A * B^T, so attention scores and similarity matrices avoid explicit transposes.
inline Tensor matmul_nt(Graph& g, const Tensor& a, const Tensor& b) {
    detail::want(a.cols() == b.cols(), "matmul_nt", "inner dims differ: " + detail::two(a, b));
    Tensor out = g.make("matmul_nt", {a.rows(), b.rows()}, {a, b});
    auto *na = a.node(), *nb = b.node(), *no = out.node();
    const int m = a.rows(), k = a.cols(), n = b.rows();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            const double* arow = &na->val[static_cast<std::size_t>(i) * k];
            const double* brow = &nb->val[static_cast<std::size_t>(j) * k];
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            no->val[static_cast<std::size_t>(i) * n + j] = s;
        }
    Graph::check_finite("matmul_nt", *no);
    no->backward_fn = [na, nb, no, m, k, n] {
        const auto& go = no->grad;
        if (na->requires_grad) {
            auto& ga = na->ensure_grad();
            // dA = dC * B
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double gv = go[static_cast<std::size_t>(i) * n + j];
                    if (gv == 0.0) continue;
                    const double* brow = &nb->val[static_cast<std::size_t>(j) * k];
                    double* garow = &ga[static_cast<std::size_t>(i) * k];
                    for (int p = 0; p < k; ++p) garow[p] += gv * brow[p];
                }
        }
        if (nb->requires_grad) {
            auto& gb = nb->ensure_grad();
            // dB = dC^T * A
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i) {
                    const double gv = go[static_cast<std::size_t>(i) * n + j];
                    if (gv == 0.0) continue;
                    const double* arow = &na->val[static_cast<std::size_t>(i) * k];
                    double* gbrow = &gb[static_cast<std::size_t>(j) * k];
                    for (int p = 0; p < k; ++p) gbrow[p] += gv * arow[p];
                }
        }
    };
    return out;
}

// ---- elementwise nonlinearities ----

namespace detail {

template <typename Fwd, typename Bwd>
Tensor unary(Graph& g, const char* op, const Tensor& a, Fwd fwd, Bwd bwd_from_y_and_x) {
    Tensor out = g.make(op, a.shape(), {a});
    auto *na = a.node(), *no = out.node();
    for (std::size_t i = 0; i < no->val.size(); ++i) no->val[i] = fwd(na->val[i]);
    Graph::check_finite(op, *no);
    no->backward_fn = [na, no, bwd_from_y_and_x] {
        if (!na->requires_grad) return;
        auto& ga = na->ensure_grad();
        for (std::size_t i = 0; i < no->grad.size(); ++i)
            ga[i] += no->grad[i] * bwd_from_y_and_x(no->val[i], na->val[i]);
    };
    return out;
}

} // namespace detail

inline Tensor sigmoid(Graph& g, const Tensor& a) {
    return detail::unary(
        g, "sigmoid", a,
        [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double y, double) { return y * (1.0 - y); });
}

inline Tensor tanh(Graph& g, const Tensor& a) {
    return detail::unary(g, "tanh", a, [](double x) { return std::tanh(x); },
                         [](double y, double) { return 1.0 - y * y; });
}

inline Tensor exp(Graph& g, const Tensor& a) {
    return detail::unary(g, "exp", a, [](double x) { return std::exp(x); },
                         [](double y, double) { return y; });
}

inline Tensor log(Graph& g, const Tensor& a) {
    return detail::unary(g, "log", a, [](double x) { return std::log(x); },
                         [](double, double x) { return 1.0 / x; });
}

// ---- softmax / normalization ----

namespace detail {

inline void softmax_forward(const double* in, double* out, const std::uint8_t* keep, int n) {
    double mx = -HUGE_VAL;
    for (int j = 0; j < n; ++j)
        if (!keep || keep[j]) mx = std::max(mx, in[j]);
    if (mx == -HUGE_VAL) { // fully masked row: define as uniform over nothing -> zeros
        for (int j = 0; j < n; ++j) out[j] = 0.0;
        return;
    }
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
        out[j] = (!keep || keep[j]) ? std::exp(in[j] - mx) : 0.0;
        z += out[j];
    }
    for (int j = 0; j < n; ++j) out[j] /= z;
}

inline Tensor softmax_impl(Graph& g, const Tensor& a, std::vector<std::uint8_t> keep) {
    const int m = a.rows(), n = a.cols();
    if (!keep.empty())
        detail::want(keep.size() == a.size(), "softmax_rows", "mask size does not match tensor");
    Tensor out = g.make("softmax_rows", a.shape(), {a});
    auto *na = a.node(), *no = out.node();
    for (int r = 0; r < m; ++r)
        softmax_forward(&na->val[static_cast<std::size_t>(r) * n],
                        &no->val[static_cast<std::size_t>(r) * n],
                        keep.empty() ? nullptr : &keep[static_cast<std::size_t>(r) * n], n);
    Graph::check_finite("softmax_rows", *no);
    no->backward_fn = [na, no, m, n] {
        if (!na->requires_grad) return;
        auto& ga = na->ensure_grad();
        // dx = y .* (dy - <dy, y>) per row; masked columns have y == 0, so they
        // receive no gradient and contribute nothing to the inner product.
        for (int r = 0; r < m; ++r) {
            const double* y = &no->val[static_cast<std::size_t>(r) * n];
            const double* gy = &no->grad[static_cast<std::size_t>(r) * n];
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += gy[j] * y[j];
            double* gx = &ga[static_cast<std::size_t>(r) * n];
            for (int j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    };
    return out;
}

} // namespace detail

// Numerically stabilized row softmax (max subtraction before exponentiation).
inline Tensor softmax_rows(Graph& g, const Tensor& a) { return detail::softmax_impl(g, a, {}); }

// Row softmax over a 0/1 keep-mask; masked entries get exactly zero weight.
inline Tensor masked_softmax_rows(Graph& g, const Tensor& a, std::vector<std::uint8_t> keep) {
    return detail::softmax_impl(g, a, std::move(keep));
}

// Row-wise layer normalization with learned gain and bias.
inline Tensor layer_norm_rows(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias,
                              double eps = 1e-5) {
    const int m = x.rows(), n = x.cols();
    detail::want(gain.rows() == 1 && gain.cols() == n && bias.rows() == 1 && bias.cols() == n,
                 "layer_norm_rows", "gain/bias must be 1 x cols(x)");
    Tensor out = g.make("layer_norm_rows", x.shape(), {x, gain, bias});
    auto *nx = x.node(), *ng = gain.node(), *nb = bias.node(), *no = out.node();
    // Cache the normalized rows and inverse stddevs for the backward pass.
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto istd = std::make_shared<std::vector<double>>(m);
    for (int r = 0; r < m; ++r) {
        const double* row = &nx->val[static_cast<std::size_t>(r) * n];
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += row[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*istd)[r] = is;
        for (int j = 0; j < n; ++j) {
            const double xh = (row[j] - mean) * is;
            (*xhat)[static_cast<std::size_t>(r) * n + j] = xh;
            no->val[static_cast<std::size_t>(r) * n + j] = xh * ng->val[j] + nb->val[j];
        }
    }
    Graph::check_finite("layer_norm_rows", *no);
    no->backward_fn = [nx, ng, nb, no, xhat, istd, m, n] {
        const auto& go = no->grad;
        if (ng->requires_grad) {
            auto& gg = ng->ensure_grad();
            for (int r = 0; r < m; ++r)
                for (int j = 0; j < n; ++j)
                    gg[j] += go[static_cast<std::size_t>(r) * n + j] *
                             (*xhat)[static_cast<std::size_t>(r) * n + j];
        }
        if (nb->requires_grad) {
            auto& gb = nb->ensure_grad();
            for (int r = 0; r < m; ++r)
                for (int j = 0; j < n; ++j) gb[j] += go[static_cast<std::size_t>(r) * n + j];
        }
        if (nx->requires_grad) {
            auto& gx = nx->ensure_grad();
            for (int r = 0; r < m; ++r) {
                const double* gorow = &go[static_cast<std::size_t>(r) * n];
                const double* xh = &(*xhat)[static_cast<std::size_t>(r) * n];
                // dxhat = dy .* gain; dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
                double m1 = 0.0, m2 = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double dxh = gorow[j] * ng->val[j];
                    m1 += dxh;
                    m2 += dxh * xh[j];
                }
                m1 /= n;
                m2 /= n;
                for (int j = 0; j < n; ++j) {
                    const double dxh = gorow[j] * ng->val[j];
                    gx[static_cast<std::size_t>(r) * n + j] += (*istd)[r] * (dxh - m1 - xh[j] * m2);
                }
            }
        }
    };
    return out;
}

// ---- shape ops ----

inline Tensor concat_cols(Graph& g, const std::vector<Tensor>& parts) {
    detail::want(!parts.empty(), "concat_cols", "no inputs");
    const int m = parts[0].rows();
    int total = 0;
    for (const auto& p : parts) {
        detail::want(p.rows() == m, "concat_cols",
                     "row mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        total += p.cols();
    }
    Tensor out = g.make("concat_cols", {m, total}, parts);
    auto* no = out.node();
    int off = 0;
    for (const auto& p : parts) {
        const auto* np = p.node();
        const int pc = p.cols();
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < pc; ++c)
                no->val[static_cast<std::size_t>(r) * total + off + c] =
                    np->val[static_cast<std::size_t>(r) * pc + c];
        off += pc;
    }
    Graph::check_finite("concat_cols", *no);
    no->backward_fn = [no, m, total] {
        int off2 = 0;
        for (auto& inp : no->inputs) {
            const int pc = inp->shape.cols;
            if (inp->requires_grad) {
                auto& gi = inp->ensure_grad();
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < pc; ++c)
                        gi[static_cast<std::size_t>(r) * pc + c] +=
                            no->grad[static_cast<std::size_t>(r) * total + off2 + c];
            }
            off2 += pc;
        }
    };
    return out;
}

inline Tensor concat_rows(Graph& g, const std::vector<Tensor>& parts) {
    detail::want(!parts.empty(), "concat_rows", "no inputs");
    const int n = parts[0].cols();
    int total = 0;
    for (const auto& p : parts) {
        detail::want(p.cols() == n, "concat_rows",
                     "col mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        total += p.rows();
    }
    Tensor out = g.make("concat_rows", {total, n}, parts);
    auto* no = out.node();
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto* np = p.node();
        for (std::size_t i = 0; i < np->val.size(); ++i) no->val[off + i] = np->val[i];
        off += np->val.size();
    }
    Graph::check_finite("concat_rows", *no);
    no->backward_fn = [no] {
        std::size_t off2 = 0;
        for (auto& inp : no->inputs) {
            const std::size_t sz = inp->val.size();
            if (inp->requires_grad) {
                auto& gi = inp->ensure_grad();
                for (std::size_t i = 0; i < sz; ++i) gi[i] += no->grad[off2 + i];
            }
            off2 += sz;
        }
    };
    return out;
}

inline Tensor row_slice(Graph& g, const Tensor& a, int r0, int r1) {
    detail::want(0 <= r0 && r0 < r1 && r1 <= a.rows(), "row_slice",
                 str("range [", r0, ", ", r1, ") out of ", a.rows(), " rows"));
    const int n = a.cols();
    Tensor out = g.make("row_slice", {r1 - r0, n}, {a});
    auto *na = a.node(), *no = out.node();
    for (std::size_t i = 0; i < no->val.size(); ++i)
        no->val[i] = na->val[static_cast<std::size_t>(r0) * n + i];
    no->backward_fn = [na, no, r0, n] {
        if (!na->requires_grad) return;
        auto& ga = na->ensure_grad();
        for (std::size_t i = 0; i < no->grad.size(); ++i)
            ga[static_cast<std::size_t>(r0) * n + i] += no->grad[i];
    };
    return out;
}

inline Tensor col_slice(Graph& g, const Tensor& a, int c0, int c1) {
    detail::want(0 <= c0 && c0 < c1 && c1 <= a.cols(), "col_slice",
                 str("range [", c0, ", ", c1, ") out of ", a.cols(), " cols"));
    const int m = a.rows(), n = a.cols(), w = c1 - c0;
    Tensor out = g.make("col_slice", {m, w}, {a});
    auto *na = a.node(), *no = out.node();
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < w; ++c)
            no->val[static_cast<std::size_t>(r) * w + c] = na->val[static_cast<std::size_t>(r) * n + c0 + c];
    no->backward_fn = [na, no, c0, m, n, w] {
        if (!na->requires_grad) return;
        auto& ga = na->ensure_grad();
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < w; ++c)
                ga[static_cast<std::size_t>(r) * n + c0 + c] += no->grad[static_cast<std::size_t>(r) * w + c];
    };
    return out;
}

// Replicate a 1 x d row m times; the broadcast used when a per-utterance
// vector joins a per-token matrix.
inline Tensor repeat_row(Graph& g, const Tensor& a, int m) {
    detail::want(a.rows() == 1, "repeat_row", "input must be 1 x d, got " + shape_str(a.shape()));
    detail::want(m >= 1, "repeat_row", "replication count must be positive");
    const int d = a.cols();
    Tensor out = g.make("repeat_row", {m, d}, {a});
    auto *na = a.node(), *no = out.node();
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < d; ++c) no->val[static_cast<std::size_t>(r) * d + c] = na->val[c];
    no->backward_fn = [na, no, m, d] {
        if (!na->requires_grad) return;
        auto& ga = na->ensure_grad();
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < d; ++c) ga[c] += no->grad[static_cast<std::size_t>(r) * d + c];
    };
    return out;
}

// ---- reductions ----

// Mean over the first `len` rows; rows beyond `len` are ignored entirely, so
// padded tails cannot leak into pooled vectors.
inline Tensor mean_rows_prefix(Graph& g, const Tensor& a, int len) {
    detail::want(1 <= len && len <= a.rows(), "mean_rows_prefix",
                 str("prefix length ", len, " out of ", a.rows(), " rows"));
    const int n = a.cols();
    Tensor out = g.make("mean_rows_prefix", {1, n}, {a});
    auto *na = a.node(), *no = out.node();
    for (int r = 0; r < len; ++r)
        for (int c = 0; c < n; ++c) no->val[c] += na->val[static_cast<std::size_t>(r) * n + c];
    for (int c = 0; c < n; ++c) no->val[c] /= len;
    Graph::check_finite("mean_rows_prefix", *no);
    no->backward_fn = [na, no, len, n] {
        if (!na->requires_grad) return;
        auto& ga = na->ensure_grad();
        for (int r = 0; r < len; ++r)
            for (int c = 0; c < n; ++c) ga[static_cast<std::size_t>(r) * n + c] += no->grad[c] / len;
    };
    return out;
}

inline Tensor mean_rows(Graph& g, const Tensor& a) { return mean_rows_prefix(g, a, a.rows()); }

inline Tensor sum_all(Graph& g, const Tensor& a) {
    Tensor out = g.make("sum_all", {1, 1}, {a});
    auto *na = a.node(), *no = out.node();
    double s = 0.0;
    for (double v : na->val) s += v;
    no->val[0] = s;
    Graph::check_finite("sum_all", *no);
    no->backward_fn = [na, no] {
        if (!na->requires_grad) return;
        auto& ga = na->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += no->grad[0];
    };
    return out;
}

// ---- lookup ----

// Gather rows of `table` (V x d) by token id. Duplicate ids accumulate their
// gradients into the same row.
inline Tensor embedding(Graph& g, const Tensor& table, const std::vector<int>& ids) {
    detail::want(!ids.empty(), "embedding", "empty id list");
    const int v = table.rows(), d = table.cols();
    for (int id : ids)
        detail::want(0 <= id && id < v, "embedding", str("id ", id, " out of vocabulary size ", v));
    Tensor out = g.make("embedding", {static_cast<int>(ids.size()), d}, {table});
    auto *nt = table.node(), *no = out.node();
    for (std::size_t r = 0; r < ids.size(); ++r)
        for (int c = 0; c < d; ++c)
            no->val[r * d + c] = nt->val[static_cast<std::size_t>(ids[r]) * d + c];
    Graph::check_finite("embedding", *no);
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    no->backward_fn = [nt, no, ids_copy, d] {
        if (!nt->requires_grad) return;
        auto& gt = nt->ensure_grad();
        for (std::size_t r = 0; r < ids_copy->size(); ++r)
            for (int c = 0; c < d; ++c)
                gt[static_cast<std::size_t>((*ids_copy)[r]) * d + c] += no->grad[r * d + c];
    };
    return out;
}

// ---- temporal convolution ----

// 1-D convolution over time with same-length zero padding. Input x is
// (len x d_in), weights are ((k * d_in) x d_out) with tap t occupying rows
// [t*d_in, (t+1)*d_in), bias is (1 x d_out). Output is (len x d_out).
inline Tensor conv1d_same(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b, int k) {
    detail::want(k >= 1, "conv1d_same", "kernel size must be positive");
    const int len = x.rows(), din = x.cols();
    detail::want(w.rows() == k * din, "conv1d_same",
                 str("weight rows ", w.rows(), " != k*d_in = ", k * din));
    const int dout = w.cols();
    detail::want(b.rows() == 1 && b.cols() == dout, "conv1d_same", "bias must be 1 x d_out");
    Tensor out = g.make("conv1d_same", {len, dout}, {x, w, b});
    auto *nx = x.node(), *nw = w.node(), *nb = b.node(), *no = out.node();
    const int pad = (k - 1) / 2;
    for (int t = 0; t < len; ++t) {
        double* orow = &no->val[static_cast<std::size_t>(t) * dout];
        for (int c = 0; c < dout; ++c) orow[c] = nb->val[c];
        for (int tap = 0; tap < k; ++tap) {
            const int u = t + tap - pad;
            if (u < 0 || u >= len) continue; // zero padding outside the sequence
            const double* xrow = &nx->val[static_cast<std::size_t>(u) * din];
            for (int d = 0; d < din; ++d) {
                const double xv = xrow[d];
                if (xv == 0.0) continue;
                const double* wrow = &nw->val[static_cast<std::size_t>(tap * din + d) * dout];
                for (int c = 0; c < dout; ++c) orow[c] += xv * wrow[c];
            }
        }
    }
    Graph::check_finite("conv1d_same", *no);
    no->backward_fn = [nx, nw, nb, no, len, din, dout, k, pad] {
        const auto& go = no->grad;
        if (nb->requires_grad) {
            auto& gb = nb->ensure_grad();
            for (int t = 0; t < len; ++t)
                for (int c = 0; c < dout; ++c) gb[c] += go[static_cast<std::size_t>(t) * dout + c];
        }
        for (int t = 0; t < len; ++t) {
            const double* grow = &go[static_cast<std::size_t>(t) * dout];
            for (int tap = 0; tap < k; ++tap) {
                const int u = t + tap - pad;
                if (u < 0 || u >= len) continue;
                for (int d = 0; d < din; ++d) {
                    const std::size_t wbase = static_cast<std::size_t>(tap * din + d) * dout;
                    if (nw->requires_grad) {
                        auto& gw = nw->ensure_grad();
                        const double xv = nx->val[static_cast<std::size_t>(u) * din + d];
                        if (xv != 0.0)
                            for (int c = 0; c < dout; ++c) gw[wbase + c] += xv * grow[c];
                    }
                    if (nx->requires_grad) {
                        auto& gx = nx->ensure_grad();
                        double s = 0.0;
                        for (int c = 0; c < dout; ++c) s += nw->val[wbase + c] * grow[c];
                        gx[static_cast<std::size_t>(u) * din + d] += s;
                    }
                }
            }
        }
    };
    return out;
}

// ---- losses ----

// Mean negative log-likelihood over rows of logits, weighted per row. The
// softmax and the log are fused and stabilized with log-sum-exp; the backward
// is the classic (p - onehot) * weight / total_weight.
inline Tensor cross_entropy_rows(Graph& g, const Tensor& logits, const std::vector<int>& targets,
                                 const std::vector<double>& weights) {
    const int m = logits.rows(), v = logits.cols();
    detail::want(static_cast<int>(targets.size()) == m, "cross_entropy_rows",
                 str("targets size ", targets.size(), " != rows ", m));
    detail::want(static_cast<int>(weights.size()) == m, "cross_entropy_rows",
                 str("weights size ", weights.size(), " != rows ", m));
    double wsum = 0.0;
    for (int r = 0; r < m; ++r) {
        detail::want(0 <= targets[r] && targets[r] < v, "cross_entropy_rows",
                     str("target id ", targets[r], " out of ", v, " classes at row ", r));
        detail::want(weights[r] >= 0.0, "cross_entropy_rows", "negative weight");
        wsum += weights[r];
    }
    detail::want(wsum > 0.0, "cross_entropy_rows", "all rows masked out (weight sum is zero)");

    Tensor out = g.make("cross_entropy_rows", {1, 1}, {logits});
    auto *nl = logits.node(), *no = out.node();
    auto probs = std::make_shared<std::vector<double>>(logits.size());
    double loss = 0.0;
    for (int r = 0; r < m; ++r) {
        const double* row = &nl->val[static_cast<std::size_t>(r) * v];
        double* prow = &(*probs)[static_cast<std::size_t>(r) * v];
        double mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < v; ++j) {
            prow[j] = std::exp(row[j] - mx);
            z += prow[j];
        }
        const double logz = std::log(z) + mx;
        for (int j = 0; j < v; ++j) prow[j] /= z;
        loss += weights[r] * (logz - row[targets[r]]);
    }
    no->val[0] = loss / wsum;
    Graph::check_finite("cross_entropy_rows", *no);
    auto tcopy = std::make_shared<std::vector<int>>(targets);
    auto wcopy = std::make_shared<std::vector<double>>(weights);
    no->backward_fn = [nl, no, probs, tcopy, wcopy, wsum, m, v] {
        if (!nl->requires_grad) return;
        auto& gl = nl->ensure_grad();
        const double go = no->grad[0];
        for (int r = 0; r < m; ++r) {
            const double wr = (*wcopy)[r] / wsum * go;
            if (wr == 0.0) continue;
            const double* prow = &(*probs)[static_cast<std::size_t>(r) * v];
            double* grow = &gl[static_cast<std::size_t>(r) * v];
            for (int j = 0; j < v; ++j) grow[j] += wr * prow[j];
            grow[(*tcopy)[r]] -= wr;
        }
    };
    return out;
}

// ---- stochastic ----

// Inverted dropout: keeps are scaled by 1/(1-p) so the expectation is the
// identity. p == 0 is a true no-op. The mask comes from the graph's own RNG,
// so a rebuilt graph with the same seed replays it.
inline Tensor dropout(Graph& g, const Tensor& a, double p) {
    if (p == 0.0) return a;
    detail::want(0.0 < p && p < 1.0, "dropout", str("rate ", p, " outside [0, 1)"));
    Tensor out = g.make("dropout", a.shape(), {a});
    auto *na = a.node(), *no = out.node();
    auto mask = std::make_shared<std::vector<double>>(a.size());
    const double scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < a.size(); ++i) {
        (*mask)[i] = g.rng().uniform() < p ? 0.0 : scale;
        no->val[i] = na->val[i] * (*mask)[i];
    }
    Graph::check_finite("dropout", *no);
    no->backward_fn = [na, no, mask] {
        if (!na->requires_grad) return;
        auto& ga = na->ensure_grad();
        for (std::size_t i = 0; i < no->grad.size(); ++i) ga[i] += no->grad[i] * (*mask)[i];
    };
    return out;
}

} // namespace unimse::numcore
