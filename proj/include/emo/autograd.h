#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// Every value is a 2-D Eigen matrix; row vectors are 1xC. A Var owns a node in
// a dynamically built tape. Calling backward() on a 1x1 Var walks the tape in
// reverse topological order and accumulates gradients into every node with
// requires_grad set. Nodes whose inputs are all constants are created without
// a backward closure, so inference builds no tape.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace emo::ag {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;
/// true = position may be attended to.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct Node {
    Mat value;
    Mat grad;  // empty until something is accumulated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void accumulate(const Mat& g);
};

class Var {
public:
    Var() = default;
    explicit Var(Mat value, bool requires_grad = false);

    static Var constant(Mat value) { return Var(std::move(value), false); }
    static Var leaf(Mat value) { return Var(std::move(value), true); }

    bool defined() const { return node_ != nullptr; }
    const Mat& value() const { return node_->value; }
    /// Direct mutation is only meaningful for leaves (parameters, inputs).
    Mat& mutable_value() { return node_->value; }
    /// Gradient, or a zero matrix of the value's shape when none was accumulated.
    Mat grad() const;
    bool has_grad() const { return node_->grad.size() != 0; }
    void zero_grad() { node_->grad.resize(0, 0); }

    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    double item() const;

    /// Seeds d(this)/d(this) = 1 and propagates. Requires a 1x1 value.
    void backward() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

private:
    friend Var make_result(Mat value, std::vector<Var> parents,
                           std::function<void(Node&)> backward);
    std::shared_ptr<Node> node_;
};

/// Builds an op result; the closure is dropped when no parent needs gradients.
Var make_result(Mat value, std::vector<Var> parents, std::function<void(Node&)> backward);

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_t(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Adds a 1xC row to every row of a.
Var add_row(const Var& a, const Var& row);

Var gelu(const Var& a);

/// Row-wise softmax. Masked-out entries get probability exactly zero; every row
/// must keep at least one allowed entry.
Var softmax_rows(const Var& logits, const Mask* mask = nullptr);

/// Row-wise layer normalization with 1xC gain and bias.
Var layer_norm(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Mean over rows, giving 1xC.
Var mean_rows(const Var& a);
Var sum_all(const Var& a);
/// sum(a .* w) with a constant weight matrix; handy for scalar probes.
Var dot_const(const Var& a, const Mat& w);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
/// Row-major flatten into 1x(rows*cols).
Var flatten_row(const Var& a);

/// Rows of `table` selected by id (repeats allowed); gradient scatter-adds.
Var gather_rows(const Var& table, std::span<const int> ids);

/// Mean over pairs of -log softmax(logits.row(rows[i]))[targets[i]].
Var cross_entropy_rows(const Var& logits, std::span<const int> rows, std::span<const int> targets);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }

/// Numerically stable row softmax on plain matrices (shared with inference helpers).
Mat softmax_rows(const Mat& logits, const Mask* mask = nullptr);

bool all_finite(const Mat& m);

}  // namespace emo::ag
