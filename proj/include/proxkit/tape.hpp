#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "proxkit/error.hpp"
#include "proxkit/matrix.hpp"

namespace proxkit {

class Tape;

// Handle to a node on a tape. Cheap to copy; the tape owns all storage.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const DenseMatrix& value() const;
    const DenseMatrix& grad() const;
};

// Maps the upstream adjoint to one adjoint per parent, in parent order.
using BackwardFn = std::function<std::vector<DenseMatrix>(const DenseMatrix& upstream)>;

// Minimal reverse-mode tape over DenseMatrix values. Nodes are appended in
// evaluation order, so reverse id order is a valid backward schedule. A tape
// is single-use: backward() may run once, then the tape is read-only.
class Tape {
public:
    Var leaf(DenseMatrix value) { return push(std::move(value), {}, nullptr); }

    // Installs a node with a hand-written backward pass. This is how the
    // proximal layers enter the graph: the forward value comes from an inner
    // solver and the callback carries the derivation for its adjoints.
    Var custom(std::vector<Var> inputs, DenseMatrix value, BackwardFn backward) {
        std::vector<std::size_t> parents;
        parents.reserve(inputs.size());
        for (const Var& v : inputs) {
            check_owned(v);
            parents.push_back(v.id);
        }
        return push(std::move(value), std::move(parents), std::move(backward));
    }

    void backward(Var root) {
        check_owned(root);
        if (backward_done_) throw std::logic_error("Tape::backward: already ran on this tape");
        const DenseMatrix& rv = value(root.id);
        if (rv.rows() != 1 || rv.cols() != 1) {
            throw std::invalid_argument("Tape::backward: root must be scalar, got " + shape_str(rv));
        }
        backward_done_ = true;
        nodes_[root.id].grad = DenseMatrix(1, 1, 1.0);
        for (std::size_t id = root.id + 1; id-- > 0;) {
            Node& node = nodes_[id];
            if (!node.grad || node.parents.empty()) continue;
            std::vector<DenseMatrix> adjoints = node.backward(*node.grad);
            if (adjoints.size() != node.parents.size()) {
                throw NumericalError("Tape: node #" + std::to_string(id) + " returned " +
                                     std::to_string(adjoints.size()) + " adjoints for " +
                                     std::to_string(node.parents.size()) + " parents");
            }
            for (std::size_t k = 0; k < node.parents.size(); ++k) {
                Node& parent = nodes_[node.parents[k]];
                if (!parent.value.same_shape(adjoints[k])) {
                    throw NumericalError("Tape: node #" + std::to_string(id) + " produced adjoint " +
                                         shape_str(adjoints[k]) + " for parent #" +
                                         std::to_string(node.parents[k]) + " of shape " + shape_str(parent.value));
                }
                if (!parent.grad) {
                    parent.grad = adjoints[k];
                } else {
                    for (std::size_t i = 0; i < parent.grad->size(); ++i)
                        parent.grad->data()[i] += adjoints[k].data()[i];
                }
            }
        }
    }

    const DenseMatrix& value(std::size_t id) const { return nodes_.at(id).value; }

    const DenseMatrix* grad_ptr(std::size_t id) const {
        const auto& g = nodes_.at(id).grad;
        return g ? &*g : nullptr;
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        DenseMatrix value;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        std::optional<DenseMatrix> grad;
    };

    Var push(DenseMatrix value, std::vector<std::size_t> parents, BackwardFn backward) {
        if (backward_done_) throw std::logic_error("Tape: cannot grow a tape after backward");
        nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward), std::nullopt});
        return Var{this, nodes_.size() - 1};
    }

    void check_owned(const Var& v) const {
        if (v.tape != this || v.id >= nodes_.size()) {
            throw std::invalid_argument("Tape: Var does not belong to this tape");
        }
    }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

inline const DenseMatrix& Var::value() const { return tape->value(id); }

inline const DenseMatrix& Var::grad() const {
    const DenseMatrix* g = tape->grad_ptr(id);
    if (!g) throw std::logic_error("Var::grad: node has no gradient (backward not run or node unreachable)");
    return *g;
}

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b, const char* op) {
    if (a.tape == nullptr || a.tape != b.tape) {
        throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
    }
    return *a.tape;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations. Each captures by value what its backward pass needs.
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    Tape& t = detail::same_tape(a, b, "add");
    DenseMatrix out = add(a.value(), b.value());
    return t.custom({a, b}, std::move(out), [](const DenseMatrix& up) {
        return std::vector<DenseMatrix>{up, up};
    });
}

inline Var sub(Var a, Var b) {
    Tape& t = detail::same_tape(a, b, "sub");
    DenseMatrix out = sub(a.value(), b.value());
    return t.custom({a, b}, std::move(out), [](const DenseMatrix& up) {
        return std::vector<DenseMatrix>{up, scale(up, -1.0)};
    });
}

inline Var matmul(Var a, Var b) {
    Tape& t = detail::same_tape(a, b, "matmul");
    DenseMatrix av = a.value(), bv = b.value();
    DenseMatrix out = matmul(av, bv);
    return t.custom({a, b}, std::move(out), [av, bv](const DenseMatrix& up) {
        return std::vector<DenseMatrix>{matmul(up, transpose(bv)), matmul(transpose(av), up)};
    });
}

inline Var hadamard(Var a, Var b) {
    Tape& t = detail::same_tape(a, b, "hadamard");
    DenseMatrix av = a.value(), bv = b.value();
    DenseMatrix out = hadamard(av, bv);
    return t.custom({a, b}, std::move(out), [av, bv](const DenseMatrix& up) {
        return std::vector<DenseMatrix>{hadamard(up, bv), hadamard(up, av)};
    });
}

inline Var transpose(Var a) {
    DenseMatrix out = transpose(a.value());
    return a.tape->custom({a}, std::move(out), [](const DenseMatrix& up) {
        return std::vector<DenseMatrix>{transpose(up)};
    });
}

inline Var scale(Var a, double c) {
    DenseMatrix out = scale(a.value(), c);
    return a.tape->custom({a}, std::move(out), [c](const DenseMatrix& up) {
        return std::vector<DenseMatrix>{scale(up, c)};
    });
}

inline Var sum(Var a) {
    const DenseMatrix& av = a.value();
    DenseMatrix out(1, 1, sum_entries(av));
    const std::size_t r = av.rows(), c = av.cols();
    return a.tape->custom({a}, std::move(out), [r, c](const DenseMatrix& up) {
        return std::vector<DenseMatrix>{DenseMatrix(r, c, up(0, 0))};
    });
}

inline Var sigmoid(Var a) {
    DenseMatrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-out.data()[i]));
    DenseMatrix cached = out;
    return a.tape->custom({a}, std::move(out), [cached](const DenseMatrix& up) {
        DenseMatrix g = cached;
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = up.data()[i] * cached.data()[i] * (1.0 - cached.data()[i]);
        return std::vector<DenseMatrix>{std::move(g)};
    });
}

inline Var tanh(Var a) {
    DenseMatrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::tanh(out.data()[i]);
    DenseMatrix cached = out;
    return a.tape->custom({a}, std::move(out), [cached](const DenseMatrix& up) {
        DenseMatrix g = cached;
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = up.data()[i] * (1.0 - cached.data()[i] * cached.data()[i]);
        return std::vector<DenseMatrix>{std::move(g)};
    });
}

inline Var relu(Var a) {
    DenseMatrix av = a.value();
    DenseMatrix out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::max(0.0, out.data()[i]);
    return a.tape->custom({a}, std::move(out), [av](const DenseMatrix& up) {
        DenseMatrix g = up;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (av.data()[i] <= 0.0) g.data()[i] = 0.0;
        return std::vector<DenseMatrix>{std::move(g)};
    });
}

// Column-wise log-softmax: each column is treated as one logit vector.
inline Var logsoftmax(Var a) {
    const DenseMatrix& av = a.value();
    DenseMatrix out(av.rows(), av.cols());
    DenseMatrix soft(av.rows(), av.cols());
    for (std::size_t j = 0; j < av.cols(); ++j) {
        double mx = -1e300;
        for (std::size_t i = 0; i < av.rows(); ++i) mx = std::max(mx, av(i, j));
        double lse = 0.0;
        for (std::size_t i = 0; i < av.rows(); ++i) lse += std::exp(av(i, j) - mx);
        lse = mx + std::log(lse);
        for (std::size_t i = 0; i < av.rows(); ++i) {
            out(i, j) = av(i, j) - lse;
            soft(i, j) = std::exp(out(i, j));
        }
    }
    return a.tape->custom({a}, std::move(out), [soft](const DenseMatrix& up) {
        DenseMatrix g = up;
        for (std::size_t j = 0; j < g.cols(); ++j) {
            double colsum = 0.0;
            for (std::size_t i = 0; i < g.rows(); ++i) colsum += up(i, j);
            for (std::size_t i = 0; i < g.rows(); ++i) g(i, j) = up(i, j) - soft(i, j) * colsum;
        }
        return std::vector<DenseMatrix>{std::move(g)};
    });
}

// Mean over entries of (a - b)^2.
inline Var mse_loss(Var a, Var b) {
    Tape& t = detail::same_tape(a, b, "mse_loss");
    require_same_shape(a.value(), b.value(), "mse_loss");
    DenseMatrix av = a.value(), bv = b.value();
    const double n = static_cast<double>(av.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av.data()[i] - bv.data()[i];
        acc += d * d;
    }
    return t.custom({a, b}, DenseMatrix(1, 1, acc / n), [av, bv, n](const DenseMatrix& up) {
        DenseMatrix ga(av.rows(), av.cols()), gb(av.rows(), av.cols());
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double d = 2.0 * (av.data()[i] - bv.data()[i]) * up(0, 0) / n;
            ga.data()[i] = d;
            gb.data()[i] = -d;
        }
        return std::vector<DenseMatrix>{std::move(ga), std::move(gb)};
    });
}

// Mean over columns of -log softmax(logits)[label]. logits: classes x batch.
inline Var cross_entropy_loss(Var logits, const std::vector<std::size_t>& labels) {
    const DenseMatrix& lv = logits.value();
    if (labels.size() != lv.cols()) {
        throw std::invalid_argument("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for " +
                                    shape_str(lv) + " logits");
    }
    for (std::size_t lbl : labels)
        if (lbl >= lv.rows()) throw std::invalid_argument("cross_entropy_loss: label out of range");
    DenseMatrix soft(lv.rows(), lv.cols());
    double loss = 0.0;
    for (std::size_t j = 0; j < lv.cols(); ++j) {
        double mx = -1e300;
        for (std::size_t i = 0; i < lv.rows(); ++i) mx = std::max(mx, lv(i, j));
        double lse = 0.0;
        for (std::size_t i = 0; i < lv.rows(); ++i) lse += std::exp(lv(i, j) - mx);
        lse = mx + std::log(lse);
        for (std::size_t i = 0; i < lv.rows(); ++i) soft(i, j) = std::exp(lv(i, j) - lse);
        loss -= lv(labels[j], j) - lse;
    }
    const double n = static_cast<double>(lv.cols());
    return logits.tape->custom({logits}, DenseMatrix(1, 1, loss / n), [soft, labels, n](const DenseMatrix& up) {
        DenseMatrix g = soft;
        for (std::size_t j = 0; j < g.cols(); ++j) g(labels[j], j) -= 1.0;
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= up(0, 0) / n;
        return std::vector<DenseMatrix>{std::move(g)};
    });
}

// Adds a column vector to every column of a matrix.
inline Var add_bias(Var a, Var bias) {
    Tape& t = detail::same_tape(a, bias, "add_bias");
    const DenseMatrix& av = a.value();
    const DenseMatrix& bv = bias.value();
    if (bv.cols() != 1 || bv.rows() != av.rows()) {
        throw std::invalid_argument("add_bias: bias " + shape_str(bv) + " for " + shape_str(av));
    }
    DenseMatrix out = av;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv(i, 0);
    return t.custom({a, bias}, std::move(out), [](const DenseMatrix& up) {
        DenseMatrix gb(up.rows(), 1);
        for (std::size_t i = 0; i < up.rows(); ++i)
            for (std::size_t j = 0; j < up.cols(); ++j) gb(i, 0) += up(i, j);
        return std::vector<DenseMatrix>{up, std::move(gb)};
    });
}

// Row slice [begin, end).
inline Var rows(Var a, std::size_t begin, std::size_t end) {
    const DenseMatrix& av = a.value();
    if (begin >= end || end > av.rows()) throw std::invalid_argument("rows: bad range for " + shape_str(av));
    DenseMatrix out(end - begin, av.cols());
    for (std::size_t i = begin; i < end; ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) out(i - begin, j) = av(i, j);
    const std::size_t r = av.rows(), c = av.cols();
    return a.tape->custom({a}, std::move(out), [r, c, begin](const DenseMatrix& up) {
        DenseMatrix g(r, c);
        for (std::size_t i = 0; i < up.rows(); ++i)
            for (std::size_t j = 0; j < c; ++j) g(begin + i, j) = up(i, j);
        return std::vector<DenseMatrix>{std::move(g)};
    });
}

// Right-multiplication by the centering matrix I - (1/n) 11^T.
inline Var center_cols(Var a) {
    DenseMatrix out = center_columns(a.value());
    return a.tape->custom({a}, std::move(out), [](const DenseMatrix& up) {
        // H is symmetric and idempotent, so the adjoint is up * H again.
        return std::vector<DenseMatrix>{center_columns(up)};
    });
}

// ---------------------------------------------------------------------------
// Finite-difference oracle. Builds the graph once for the analytic gradient,
// then re-evaluates values only for the central differences.
// ---------------------------------------------------------------------------

inline double finite_diff_check(const std::function<Var(Tape&, Var)>& fn, const DenseMatrix& x, double h) {
    if (!(h >= 1e-8 && h <= 1e-3)) throw std::invalid_argument("finite_diff_check: h out of [1e-8, 1e-3]");

    Tape tape;
    Var leaf = tape.leaf(x);
    Var root = fn(tape, leaf);
    if (!root.value().all_finite()) throw NumericalError("finite_diff_check: non-finite function value");
    tape.backward(root);
    const DenseMatrix analytic = leaf.grad();

    auto eval = [&fn](const DenseMatrix& at) {
        Tape t;
        Var r = fn(t, t.leaf(at));
        const double v = r.value()(0, 0);
        if (!std::isfinite(v)) throw NumericalError("finite_diff_check: non-finite function value");
        return v;
    };

    double worst = 0.0;
    DenseMatrix probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + h;
        const double fp = eval(probe);
        probe.data()[i] = orig - h;
        const double fm = eval(probe);
        probe.data()[i] = orig;
        const double cd = (fp - fm) / (2.0 * h);
        const double a = analytic.data()[i];
        worst = std::max(worst, std::abs(a - cd) / std::max(1.0, std::abs(a)));
    }
    return worst;
}

}  // namespace proxkit
