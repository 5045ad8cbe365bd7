#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Nodes are appended in
// creation order, which is already a topological order, so backward() walks
// the tape from the loss node down to index 0. A tape is built per pass and
// thrown away afterwards; it is not thread-safe, but distinct tapes can run on
// distinct threads.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hgnn/errors.hpp"

namespace hgnn::numgrad {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

inline std::string shape_str(Index rows, Index cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

enum class OpKind {
    constant,
    parameter,
    matmul,
    concat_cols,
    stack_rows,
    slice_rows,
    gather_rows,
    reshape,
    add,
    add_row,
    scale,
    leaky_relu,
    relu,
    softmax_rows,
    mean_rows,
    affine_combine,
    cross_entropy,
    sum,
    mean_of,
};

template <class T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
template <class T>
class Var {
public:
    Var() = default;

    const Mat<T>& value() const { return tape_->value(id_); }
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    Tape<T>* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape<T>;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <class T>
class Tape {
public:
    /// Receives the accumulated output gradient and pushes it into parents.
    using Backward = std::function<void(Tape&, const Mat<T>&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Mat<T> value) {
        Node& n = nodes_.emplace_back();
        n.op = OpKind::constant;
        n.owned = std::move(value);
        return {this, nodes_.size() - 1};
    }

    /// Non-owning leaf bound to external storage; the storage must outlive the tape.
    Var<T> parameter(const Mat<T>& storage) {
        Node& n = nodes_.emplace_back();
        n.op = OpKind::parameter;
        n.external = &storage;
        n.requires_grad = true;
        return {this, nodes_.size() - 1};
    }
    Var<T> parameter(Mat<T>&&) = delete;

    Var<T> record(OpKind op, std::vector<std::size_t> parents, Mat<T> value, Backward fn) {
        bool needs = false;
        for (auto p : parents) needs = needs || nodes_[p].requires_grad;
        Node& n = nodes_.emplace_back();
        n.op = op;
        n.parents = std::move(parents);
        n.owned = std::move(value);
        n.requires_grad = needs;
        if (needs) n.backward = std::move(fn);
        return {this, nodes_.size() - 1};
    }

    const Mat<T>& value(std::size_t id) const {
        const Node& n = nodes_[id];
        return n.external ? *n.external : n.owned;
    }

    OpKind op(std::size_t id) const { return nodes_[id].op; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient accumulator for a node, zero-initialized on first touch.
    Mat<T>& grad_for(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.has_grad) {
            const Mat<T>& v = value(id);
            n.grad = Mat<T>::Zero(v.rows(), v.cols());
            n.has_grad = true;
        }
        return n.grad;
    }

    /// Adds a matrix product into a node's gradient; the first touch assigns, skipping the zero fill.
    template <class Product>
    void accumulate_product(std::size_t id, const Product& product) {
        Node& n = nodes_[id];
        if (n.has_grad) {
            n.grad.noalias() += product;
        } else {
            n.grad.noalias() = product;
            n.has_grad = true;
        }
    }

    /// Null when backward never reached the node (its gradient is zero).
    const Mat<T>* grad(const Var<T>& v) const {
        const Node& n = nodes_[v.id()];
        return n.has_grad ? &n.grad : nullptr;
    }

    Mat<T> grad_or_zero(const Var<T>& v) const {
        if (const Mat<T>* g = grad(v)) return *g;
        return Mat<T>::Zero(v.rows(), v.cols());
    }

    void backward(const Var<T>& loss) {
        if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
        if (loss.rows() != 1 || loss.cols() != 1)
            throw ContractError("backward: loss must be scalar, got " +
                                shape_str(loss.rows(), loss.cols()));
        grad_for(loss.id()).setOnes();
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.has_grad || !n.backward) continue;
            n.backward(*this, n.grad);
        }
    }

private:
    struct Node {
        OpKind op = OpKind::constant;
        std::vector<std::size_t> parents;
        Mat<T> owned;
        const Mat<T>* external = nullptr;
        Mat<T> grad;
        bool has_grad = false;
        bool requires_grad = false;
        Backward backward;
    };

    // deque keeps references stable while nodes are appended
    std::deque<Node> nodes_;
};

namespace detail {

template <class T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.tape() != b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
    return *a.tape();
}

} // namespace detail

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    Tape<T>& tape = detail::same_tape(a, b, "matmul");
    if (a.cols() != b.rows())
        throw DimensionError("matmul: cannot multiply " + shape_str(a.rows(), a.cols()) + " by " +
                             shape_str(b.rows(), b.cols()));
    Mat<T> out = a.value() * b.value();
    const auto ia = a.id();
    const auto ib = b.id();
    return tape.record(OpKind::matmul, {ia, ib}, std::move(out), [ia, ib](Tape<T>& t, const Mat<T>& g) {
        if (t.requires_grad(ia)) t.accumulate_product(ia, g * t.value(ib).transpose());
        if (t.requires_grad(ib)) t.accumulate_product(ib, t.value(ia).transpose() * g);
    });
}

template <class T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
    Tape<T>& tape = detail::same_tape(a, b, "concat_cols");
    if (a.rows() != b.rows())
        throw DimensionError("concat_cols: row mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                             shape_str(b.rows(), b.cols()));
    Mat<T> out(a.rows(), a.cols() + b.cols());
    out << a.value(), b.value();
    const auto ia = a.id();
    const auto ib = b.id();
    const Index ca = a.cols();
    const Index cb = b.cols();
    return tape.record(OpKind::concat_cols, {ia, ib}, std::move(out),
                       [ia, ib, ca, cb](Tape<T>& t, const Mat<T>& g) {
                           if (t.requires_grad(ia)) t.grad_for(ia) += g.leftCols(ca);
                           if (t.requires_grad(ib)) t.grad_for(ib) += g.rightCols(cb);
                       });
}

/// Vertical stack of matrices sharing a column count.
template <class T>
Var<T> stack_rows(std::span<const Var<T>> parts) {
    if (parts.empty()) throw ContractError("stack_rows: nothing to stack");
    Tape<T>& tape = *parts.front().tape();
    const Index cols = parts.front().cols();
    Index rows = 0;
    std::vector<std::size_t> ids;
    std::vector<Index> offsets;
    for (const auto& p : parts) {
        if (p.tape() != &tape) throw ContractError("stack_rows: operands on different tapes");
        if (p.cols() != cols)
            throw DimensionError("stack_rows: column mismatch " + shape_str(p.rows(), p.cols()) +
                                 " vs width " + std::to_string(cols));
        ids.push_back(p.id());
        offsets.push_back(rows);
        rows += p.rows();
    }
    Mat<T> out(rows, cols);
    for (std::size_t k = 0; k < parts.size(); ++k)
        out.middleRows(offsets[k], parts[k].rows()) = parts[k].value();
    return tape.record(OpKind::stack_rows, ids, std::move(out),
                       [ids, offsets](Tape<T>& t, const Mat<T>& g) {
                           for (std::size_t k = 0; k < ids.size(); ++k) {
                               if (!t.requires_grad(ids[k])) continue;
                               Mat<T>& acc = t.grad_for(ids[k]);
                               acc += g.middleRows(offsets[k], acc.rows());
                           }
                       });
}

template <class T>
Var<T> stack_rows(std::initializer_list<Var<T>> parts) {
    std::vector<Var<T>> v(parts);
    return stack_rows<T>(std::span<const Var<T>>(v));
}

template <class T>
Var<T> slice_rows(const Var<T>& a, Index begin, Index count) {
    if (begin < 0 || count < 0 || begin + count > a.rows())
        throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") outside " +
                             shape_str(a.rows(), a.cols()));
    Mat<T> out = a.value().middleRows(begin, count);
    const auto ia = a.id();
    return a.tape()->record(OpKind::slice_rows, {ia}, std::move(out),
                            [ia, begin, count](Tape<T>& t, const Mat<T>& g) {
                                t.grad_for(ia).middleRows(begin, count) += g;
                            });
}

template <class T>
Var<T> gather_rows(const Var<T>& a, std::vector<Index> rows) {
    for (Index r : rows)
        if (r < 0 || r >= a.rows())
            throw DimensionError("gather_rows: row " + std::to_string(r) + " outside " +
                                 shape_str(a.rows(), a.cols()));
    Mat<T> out(static_cast<Index>(rows.size()), a.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = a.value().row(rows[k]);
    const auto ia = a.id();
    return a.tape()->record(OpKind::gather_rows, {ia}, std::move(out),
                            [ia, rows = std::move(rows)](Tape<T>& t, const Mat<T>& g) {
                                Mat<T>& acc = t.grad_for(ia);
                                for (std::size_t k = 0; k < rows.size(); ++k)
                                    acc.row(rows[k]) += g.row(static_cast<Index>(k));
                            });
}

/// Row-major reshape.
template <class T>
Var<T> reshape(const Var<T>& a, Index rows, Index cols) {
    if (rows * cols != a.rows() * a.cols())
        throw DimensionError("reshape: " + shape_str(a.rows(), a.cols()) + " into " +
                             shape_str(rows, cols));
    Mat<T> out = Eigen::Map<const Mat<T>>(a.value().data(), rows, cols);
    const auto ia = a.id();
    const Index r0 = a.rows();
    const Index c0 = a.cols();
    return a.tape()->record(OpKind::reshape, {ia}, std::move(out),
                            [ia, r0, c0](Tape<T>& t, const Mat<T>& g) {
                                t.grad_for(ia) += Eigen::Map<const Mat<T>>(g.data(), r0, c0);
                            });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    Tape<T>& tape = detail::same_tape(a, b, "add");
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError("add: shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                             shape_str(b.rows(), b.cols()));
    Mat<T> out = a.value() + b.value();
    const auto ia = a.id();
    const auto ib = b.id();
    return tape.record(OpKind::add, {ia, ib}, std::move(out), [ia, ib](Tape<T>& t, const Mat<T>& g) {
        if (t.requires_grad(ia)) t.grad_for(ia) += g;
        if (t.requires_grad(ib)) t.grad_for(ib) += g;
    });
}

/// Adds a 1xC row to every row of an RxC matrix (bias).
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
    Tape<T>& tape = detail::same_tape(a, row, "add_row");
    if (row.rows() != 1 || row.cols() != a.cols())
        throw DimensionError("add_row: cannot broadcast " + shape_str(row.rows(), row.cols()) +
                             " over " + shape_str(a.rows(), a.cols()));
    Mat<T> out = a.value().rowwise() + row.value().row(0);
    const auto ia = a.id();
    const auto ib = row.id();
    return tape.record(OpKind::add_row, {ia, ib}, std::move(out), [ia, ib](Tape<T>& t, const Mat<T>& g) {
        if (t.requires_grad(ia)) t.grad_for(ia) += g;
        if (t.requires_grad(ib)) t.grad_for(ib) += g.colwise().sum();
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
    Mat<T> out = a.value() * factor;
    const auto ia = a.id();
    return a.tape()->record(OpKind::scale, {ia}, std::move(out), [ia, factor](Tape<T>& t, const Mat<T>& g) {
        t.grad_for(ia) += g * factor;
    });
}

/// Elementwise max(x, slope*x); the derivative at 0 is taken as slope.
template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    if (!(slope > T(0) && slope < T(1)))
        throw ContractError("leaky_relu: slope must lie in (0,1), got " + std::to_string(slope));
    Mat<T> out = x.value().unaryExpr([slope](T v) { return v > T(0) ? v : slope * v; });
    const auto ix = x.id();
    return x.tape()->record(OpKind::leaky_relu, {ix}, std::move(out), [ix, slope](Tape<T>& t, const Mat<T>& g) {
        const Mat<T>& xv = t.value(ix);
        t.grad_for(ix).array() += (xv.array() > T(0)).select(g.array(), g.array() * slope);
    });
}

/// Elementwise max(x, 0); the derivative at 0 is taken as 0.
template <class T>
Var<T> relu(const Var<T>& x) {
    Mat<T> out = x.value().cwiseMax(T(0));
    const auto ix = x.id();
    return x.tape()->record(OpKind::relu, {ix}, std::move(out), [ix](Tape<T>& t, const Mat<T>& g) {
        const Mat<T>& xv = t.value(ix);
        t.grad_for(ix).array() += (xv.array() > T(0)).select(g.array(), T(0));
    });
}

template <class T>
Mat<T> softmax_rows_value(const Mat<T>& x) {
    Mat<T> out(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        if (x.cols() == 0) continue;
        const T m = x.row(r).maxCoeff();
        out.row(r) = (x.row(r).array() - m).exp();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

template <class T>
Var<T> softmax_rows(const Var<T>& x) {
    Mat<T> out = softmax_rows_value(x.value());
    const auto ix = x.id();
    const auto self = x.tape()->size();
    return x.tape()->record(OpKind::softmax_rows, {ix}, std::move(out), [ix, self](Tape<T>& t, const Mat<T>& g) {
        const Mat<T>& y = t.value(self);
        const Eigen::Matrix<T, Eigen::Dynamic, 1> inner = (g.array() * y.array()).rowwise().sum();
        t.grad_for(ix).array() += y.array() * (g.colwise() - inner).array();
    });
}

/// Arithmetic mean of the selected rows, as a 1xC matrix.
template <class T>
Var<T> mean_rows(const Var<T>& x, std::vector<Index> rows) {
    if (rows.empty()) throw ContractError("mean_rows: empty row set");
    for (Index r : rows)
        if (r < 0 || r >= x.rows())
            throw ContractError("mean_rows: row " + std::to_string(r) + " outside " +
                                shape_str(x.rows(), x.cols()));
    Mat<T> out = Mat<T>::Zero(1, x.cols());
    for (Index r : rows) out += x.value().row(r);
    const T inv = T(1) / static_cast<T>(rows.size());
    out *= inv;
    const auto ix = x.id();
    return x.tape()->record(OpKind::mean_rows, {ix}, std::move(out),
                            [ix, inv, rows = std::move(rows)](Tape<T>& t, const Mat<T>& g) {
                                Mat<T>& acc = t.grad_for(ix);
                                for (Index r : rows) acc.row(r) += g.row(0) * inv;
                            });
}

/// beta*a + (1-beta)*b. Exact copies at beta 1 and 0.
template <class T>
Var<T> affine_combine(const Var<T>& a, const Var<T>& b, T beta) {
    Tape<T>& tape = detail::same_tape(a, b, "affine_combine");
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError("affine_combine: shape mismatch " + shape_str(a.rows(), a.cols()) +
                             " vs " + shape_str(b.rows(), b.cols()));
    if (!(beta >= T(0) && beta <= T(1)))
        throw ContractError("affine_combine: beta must lie in [0,1], got " + std::to_string(beta));
    Mat<T> out;
    if (beta == T(1))
        out = a.value();
    else if (beta == T(0))
        out = b.value();
    else
        out = beta * a.value() + (T(1) - beta) * b.value();
    const auto ia = a.id();
    const auto ib = b.id();
    return tape.record(OpKind::affine_combine, {ia, ib}, std::move(out),
                       [ia, ib, beta](Tape<T>& t, const Mat<T>& g) {
                           if (beta != T(0) && t.requires_grad(ia)) t.grad_for(ia) += beta * g;
                           if (beta != T(1) && t.requires_grad(ib)) t.grad_for(ib) += (T(1) - beta) * g;
                       });
}

/// -log softmax(logits)[label] for a 1xC logit row, returned as 1x1.
template <class T>
Var<T> cross_entropy_logits(const Var<T>& logits, Index label) {
    if (logits.rows() != 1)
        throw DimensionError("cross_entropy_logits: expected one row, got " +
                             shape_str(logits.rows(), logits.cols()));
    if (label < 0 || label >= logits.cols())
        throw ContractError("cross_entropy_logits: label " + std::to_string(label) +
                            " outside [0, " + std::to_string(logits.cols()) + ")");
    const auto& z = logits.value();
    Index top = 0;
    const T m = z.row(0).maxCoeff(&top);
    // log-sum-exp minus max, excluding the max term so tiny tails keep precision
    T rest = 0;
    for (Index c = 0; c < z.cols(); ++c)
        if (c != top) rest += std::exp(z(0, c) - m);
    Mat<T> out(1, 1);
    out(0, 0) = std::log1p(rest) + m - z(0, label);
    const auto ix = logits.id();
    return logits.tape()->record(OpKind::cross_entropy, {ix}, std::move(out),
                                 [ix, label](Tape<T>& t, const Mat<T>& g) {
                                     Mat<T> p = softmax_rows_value(t.value(ix));
                                     p(0, label) -= T(1);
                                     t.grad_for(ix) += p * g(0, 0);
                                 });
}

/// Sum of all entries as 1x1.
template <class T>
Var<T> sum(const Var<T>& x) {
    Mat<T> out(1, 1);
    out(0, 0) = x.value().sum();
    const auto ix = x.id();
    return x.tape()->record(OpKind::sum, {ix}, std::move(out), [ix](Tape<T>& t, const Mat<T>& g) {
        t.grad_for(ix).array() += g(0, 0);
    });
}

/// Mean of 1x1 scalars.
template <class T>
Var<T> mean_of(std::span<const Var<T>> scalars) {
    if (scalars.empty()) throw ContractError("mean_of: no terms");
    Tape<T>& tape = *scalars.front().tape();
    std::vector<std::size_t> ids;
    T total = 0;
    for (const auto& s : scalars) {
        if (s.tape() != &tape) throw ContractError("mean_of: operands on different tapes");
        if (s.rows() != 1 || s.cols() != 1)
            throw DimensionError("mean_of: expected 1x1 terms, got " + shape_str(s.rows(), s.cols()));
        ids.push_back(s.id());
        total += s.value()(0, 0);
    }
    const T inv = T(1) / static_cast<T>(ids.size());
    Mat<T> out(1, 1);
    out(0, 0) = total * inv;
    return tape.record(OpKind::mean_of, ids, std::move(out), [ids, inv](Tape<T>& t, const Mat<T>& g) {
        for (auto id : ids)
            if (t.requires_grad(id)) t.grad_for(id)(0, 0) += g(0, 0) * inv;
    });
}

template <class T>
bool all_finite(const Mat<T>& m) {
    return m.allFinite();
}

} // namespace hgnn::numgrad
