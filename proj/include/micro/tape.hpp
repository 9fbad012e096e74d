#pragma once

// Reverse-mode automatic differentiation on a flat tape.
//
// Usage follows a stage/forward pattern: each training step builds a fresh
// graph by staging constants (input) and learnable tensors (param), chaining
// ops, and calling backward on a scalar loss node. Learned parameters live
// outside the tape; param() copies the current values in, and the caller
// reads gradients back out by node id after backward(). Ops that are not
// differentiable everywhere (relu, clamp, minimum) use the conventional
// subgradient that is zero on the inactive side.

#include <functional>
#include <vector>

#include "micro/tensor.hpp"

namespace micro {

class Tape {
  public:
    using NodeId = int;

    /// Constant leaf: participates in forward values only.
    NodeId input(Tensor v) { return push(std::move(v), false, {}); }

    /// Differentiable leaf: gradient is accumulated during backward.
    NodeId param(const Tensor& v) { return push(v, true, {}); }

    const Tensor& value(NodeId id) const { return nodes_[check(id)].value; }

    const Tensor& grad(NodeId id) const {
        const Node& n = nodes_[check(id)];
        require(n.requires_grad, "Tape::grad: node does not track gradients");
        return n.grad;
    }

    size_t size() const { return nodes_.size(); }

    /// Drop all nodes; ids from before clear() are invalid afterwards.
    void clear() { nodes_.clear(); }

    // ---- binary ops -------------------------------------------------------

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        require_arg(A.cols == B.rows, "Tape::matmul: inner dimensions disagree");
        Tensor out(A.rows, B.cols);
        emap(out).noalias() = emap(A) * emap(B);
        return push(std::move(out), tracked(a) || tracked(b), [this, a, b](const Tensor& g, Tensor&) {
            if (tracked(a)) emap(grad_mut(a)).noalias() += emap(g) * emap(value(b)).transpose();
            if (tracked(b)) emap(grad_mut(b)).noalias() += emap(value(a)).transpose() * emap(g);
        });
    }

    /// Broadcast-add a [1,m] row vector b to every row of a [n,m] matrix.
    NodeId add_rowvec(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        require_arg(B.rows == 1 && B.cols == A.cols, "Tape::add_rowvec: bias shape mismatch");
        Tensor out = A;
        emap(out).rowwise() += emap(B).row(0);
        return push(std::move(out), tracked(a) || tracked(b), [this, a, b](const Tensor& g, Tensor&) {
            if (tracked(a)) emap(grad_mut(a)) += emap(g);
            if (tracked(b)) {
                // fixed-order accumulation: Eigen's partial redux sums in an
                // address-dependent order, which breaks bitwise reproducibility
                Tensor& gb = grad_mut(b);
                for (size_t r = 0; r < g.rows; ++r)
                    for (size_t j = 0; j < g.cols; ++j) gb.at(0, j) += g.at(r, j);
            }
        });
    }

    NodeId add(NodeId a, NodeId b) {
        return elementwise2(a, b, "add", [](double x, double y) { return x + y; },
                            [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
    }

    NodeId sub(NodeId a, NodeId b) {
        return elementwise2(a, b, "sub", [](double x, double y) { return x - y; },
                            [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
    }

    NodeId mul(NodeId a, NodeId b) {
        return elementwise2(a, b, "mul", [](double x, double y) { return x * y; },
                            [](double, double y) { return y; }, [](double x, double) { return x; });
    }

    /// Elementwise minimum; gradient routes to the smaller input (ties to a).
    NodeId minimum(NodeId a, NodeId b) {
        return elementwise2(a, b, "minimum",
                            [](double x, double y) { return x < y ? x : y; },
                            [](double x, double y) { return x <= y ? 1.0 : 0.0; },
                            [](double x, double y) { return x <= y ? 0.0 : 1.0; });
    }

    NodeId concat_cols(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        require_arg(A.rows == B.rows, "Tape::concat_cols: row counts disagree");
        Tensor out(A.rows, A.cols + B.cols);
        emap(out).leftCols(A.cols) = emap(A);
        emap(out).rightCols(B.cols) = emap(B);
        const size_t ac = A.cols, bc = B.cols;
        return push(std::move(out), tracked(a) || tracked(b),
                    [this, a, b, ac, bc](const Tensor& g, Tensor&) {
                        if (tracked(a)) emap(grad_mut(a)) += emap(g).leftCols(ac);
                        if (tracked(b)) emap(grad_mut(b)) += emap(g).rightCols(bc);
                    });
    }

    // ---- unary ops --------------------------------------------------------

    NodeId scale(NodeId a, double k) {
        return elementwise1(a, [k](double x) { return k * x; }, [k](double) { return k; });
    }

    NodeId add_scalar(NodeId a, double c) {
        return elementwise1(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
    }

    NodeId neg(NodeId a) { return scale(a, -1.0); }

    NodeId relu(NodeId a) {
        return elementwise1(a, [](double x) { return x > 0.0 ? x : 0.0; },
                            [](double x) { return x > 0.0 ? 1.0 : 0.0; });
    }

    NodeId tanh(NodeId a) {
        return elementwise1(a, [](double x) { return std::tanh(x); },
                            [](double x) { double t = std::tanh(x); return 1.0 - t * t; });
    }

    NodeId exp(NodeId a) {
        return elementwise1(a, [](double x) { return std::exp(x); },
                            [](double x) { return std::exp(x); });
    }

    NodeId log(NodeId a) {
        return elementwise1(a, [](double x) { return std::log(x); },
                            [](double x) { return 1.0 / x; });
    }

    /// Numerically stable log(1 + exp(x)).
    NodeId softplus(NodeId a) {
        return elementwise1(a,
                            [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
                            [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    }

    NodeId square(NodeId a) {
        return elementwise1(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
    }

    /// Hard clamp to [lo, hi]; gradient is zero outside the interval.
    NodeId clamp(NodeId a, double lo, double hi) {
        require_arg(lo <= hi, "Tape::clamp: lo > hi");
        return elementwise1(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                            [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
    }

    NodeId slice_cols(NodeId a, size_t c0, size_t c1) {
        const Tensor& A = value(a);
        require_arg(c0 < c1 && c1 <= A.cols, "Tape::slice_cols: bad column range");
        Tensor out(A.rows, c1 - c0);
        emap(out) = emap(A).middleCols(c0, c1 - c0);
        return push(std::move(out), tracked(a), [this, a, c0, c1](const Tensor& g, Tensor&) {
            if (tracked(a)) emap(grad_mut(a)).middleCols(c0, c1 - c0) += emap(g);
        });
    }

    // ---- reductions -------------------------------------------------------

    // All reductions accumulate in fixed index order rather than through
    // Eigen's redux kernels, whose summation order follows buffer alignment
    // and so is not bitwise reproducible across runs.

    /// Row sums: [n,m] -> [n,1].
    NodeId sum_cols(NodeId a) {
        const Tensor& A = value(a);
        Tensor out(A.rows, 1);
        for (size_t r = 0; r < A.rows; ++r) {
            double s = 0.0;
            for (size_t j = 0; j < A.cols; ++j) s += A.at(r, j);
            out.at(r, 0) = s;
        }
        return push(std::move(out), tracked(a), [this, a](const Tensor& g, Tensor&) {
            if (tracked(a)) emap(grad_mut(a)).colwise() += emap(g).col(0);
        });
    }

    NodeId sum_all(NodeId a) {
        double s = 0.0;
        for (const double x : value(a).data) s += x;
        Tensor out = Tensor::scalar(s);
        return push(std::move(out), tracked(a), [this, a](const Tensor& g, Tensor&) {
            if (tracked(a)) emap(grad_mut(a)).array() += g.data[0];
        });
    }

    NodeId mean_all(NodeId a) {
        const double n = static_cast<double>(value(a).size());
        double s = 0.0;
        for (const double x : value(a).data) s += x;
        Tensor out = Tensor::scalar(s / n);
        return push(std::move(out), tracked(a), [this, a, n](const Tensor& g, Tensor&) {
            if (tracked(a)) emap(grad_mut(a)).array() += g.data[0] / n;
        });
    }

    // ---- backward ---------------------------------------------------------

    /// Backpropagate from a scalar loss node. Gradients accumulate into every
    /// param() leaf reachable from it; call grad(id) to read them.
    void backward(NodeId loss) {
        Node& ln = nodes_[check(loss)];
        require(ln.value.rows == 1 && ln.value.cols == 1, "Tape::backward: loss must be scalar");
        require(ln.requires_grad, "Tape::backward: loss does not depend on any param");
        for (auto& n : nodes_)
            if (n.requires_grad) emap(n.grad).setZero();
        ln.grad.data[0] = 1.0;
        for (int id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.requires_grad && n.backward) n.backward(n.grad, n.value);
        }
    }

  private:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated only when requires_grad
        bool requires_grad = false;
        std::function<void(const Tensor&, Tensor&)> backward;
    };

    bool tracked(NodeId id) const { return nodes_[check(id)].requires_grad; }

    Tensor& grad_mut(NodeId id) { return nodes_[check(id)].grad; }

    NodeId push(Tensor v, bool rg, std::function<void(const Tensor&, Tensor&)> bw) {
        Node n;
        n.requires_grad = rg;
        if (rg) n.grad = Tensor(v.rows, v.cols);
        n.value = std::move(v);
        n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    int check(NodeId id) const {
        require(id >= 0 && static_cast<size_t>(id) < nodes_.size(), "Tape: invalid node id");
        return id;
    }

    template <class F, class DA, class DB>
    NodeId elementwise2(NodeId a, NodeId b, const char* name, F f, DA da, DB db) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        require_arg(A.same_shape(B), std::string("Tape::") + name + ": shape mismatch");
        Tensor out(A.rows, A.cols);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = f(A.data[i], B.data[i]);
        return push(std::move(out), tracked(a) || tracked(b),
                    [this, a, b, da, db](const Tensor& g, Tensor&) {
                        const Tensor& A2 = value(a);
                        const Tensor& B2 = value(b);
                        if (tracked(a)) {
                            Tensor& ga = grad_mut(a);
                            for (size_t i = 0; i < g.data.size(); ++i)
                                ga.data[i] += g.data[i] * da(A2.data[i], B2.data[i]);
                        }
                        if (tracked(b)) {
                            Tensor& gb = grad_mut(b);
                            for (size_t i = 0; i < g.data.size(); ++i)
                                gb.data[i] += g.data[i] * db(A2.data[i], B2.data[i]);
                        }
                    });
    }

    template <class F, class D>
    NodeId elementwise1(NodeId a, F f, D df) {
        const Tensor& A = value(a);
        Tensor out(A.rows, A.cols);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = f(A.data[i]);
        return push(std::move(out), tracked(a), [this, a, df](const Tensor& g, Tensor&) {
            if (!tracked(a)) return;
            const Tensor& A2 = value(a);
            Tensor& ga = grad_mut(a);
            for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * df(A2.data[i]);
        });
    }

    std::vector<Node> nodes_;
};

}  // namespace micro
