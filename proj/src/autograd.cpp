#include "emo/autograd.h"

#include "emo/errors.h"

#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

namespace emo::ag {

void Node::accumulate(const Mat& g) {
    if (grad.size() == 0) {
        grad = g;
    } else {
        grad += g;
    }
}

Var::Var(Mat value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Mat Var::grad() const {
    if (node_->grad.size() == 0) return Mat::Zero(rows(), cols());
    return node_->grad;
}

double Var::item() const {
    if (rows() != 1 || cols() != 1) throw InputError("item() on a non-scalar value");
    return node_->value(0, 0);
}

void Var::backward() const {
    if (rows() != 1 || cols() != 1) throw InputError("backward() needs a 1x1 value");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->accumulate(Mat::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
}

Var make_result(Mat value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    Var out(std::move(value), false);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
        out.node_->requires_grad = true;
        out.node_->parents.reserve(parents.size());
        for (auto& p : parents) out.node_->parents.push_back(p.shared());
        out.node_->backward = std::move(backward);
    }
    return out;
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
    }
}

// Parents are stored in call order; the closures below index into them.
inline Node& parent(Node& n, size_t i) { return *n.parents[i]; }

}  // namespace

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimension mismatch");
    Mat v;
    v.noalias() = a.value() * b.value();
    return make_result(std::move(v), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad * pb.value.transpose());
        if (pb.requires_grad) pb.accumulate(pa.value.transpose() * n.grad);
    });
}

Var matmul_t(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) throw ConfigError("matmul_t: inner dimension mismatch");
    Mat v;
    v.noalias() = a.value() * b.value().transpose();
    return make_result(std::move(v), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad * pb.value);
        if (pb.requires_grad) pb.accumulate(n.grad.transpose() * pa.value);
    });
}

Var transpose(const Var& a) {
    return make_result(a.value().transpose(), {a}, [](Node& n) {
        parent(n, 0).accumulate(n.grad.transpose());
    });
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    return make_result(a.value() + b.value(), {a, b}, [](Node& n) {
        if (parent(n, 0).requires_grad) parent(n, 0).accumulate(n.grad);
        if (parent(n, 1).requires_grad) parent(n, 1).accumulate(n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    return make_result(a.value() - b.value(), {a, b}, [](Node& n) {
        if (parent(n, 0).requires_grad) parent(n, 0).accumulate(n.grad);
        if (parent(n, 1).requires_grad) parent(n, 1).accumulate(-n.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad.cwiseProduct(pb.value));
        if (pb.requires_grad) pb.accumulate(n.grad.cwiseProduct(pa.value));
    });
}

Var scale(const Var& a, double s) {
    return make_result(a.value() * s, {a}, [s](Node& n) { parent(n, 0).accumulate(n.grad * s); });
}

Var add_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) throw ConfigError("add_row: bias shape mismatch");
    Mat v = a.value().rowwise() + row.value().row(0);
    return make_result(std::move(v), {a, row}, [](Node& n) {
        if (parent(n, 0).requires_grad) parent(n, 0).accumulate(n.grad);
        if (parent(n, 1).requires_grad) parent(n, 1).accumulate(n.grad.colwise().sum());
    });
}

Var gelu(const Var& a) {
    // tanh approximation; smooth everywhere, which keeps finite-difference checks clean.
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c = 0.044715;
    const Mat& x = a.value();
    Mat v = x.unaryExpr([](double t) { return 0.5 * t * (1.0 + std::tanh(k * (t + c * t * t * t))); });
    return make_result(std::move(v), {a}, [](Node& n) {
        Node& p = parent(n, 0);
        Mat d = p.value.unaryExpr([](double t) {
            const double u = k * (t + c * t * t * t);
            const double th = std::tanh(u);
            const double du = k * (1.0 + 3.0 * c * t * t);
            return 0.5 * (1.0 + th) + 0.5 * t * (1.0 - th * th) * du;
        });
        p.accumulate(n.grad.cwiseProduct(d));
    });
}

Mat softmax_rows(const Mat& logits, const Mask* mask) {
    if (mask && (mask->rows() != logits.rows() || mask->cols() != logits.cols())) {
        throw ConfigError("softmax_rows: mask shape mismatch");
    }
    Mat out = Mat::Zero(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            if (!mask || (*mask)(r, c)) mx = std::max(mx, logits(r, c));
        }
        if (!std::isfinite(mx)) throw NumericError("softmax_rows: row has no finite allowed entry");
        double total = 0.0;
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            if (!mask || (*mask)(r, c)) {
                out(r, c) = std::exp(logits(r, c) - mx);
                total += out(r, c);
            }
        }
        out.row(r) /= total;
    }
    return out;
}

Var softmax_rows(const Var& logits, const Mask* mask) {
    Mat p = softmax_rows(logits.value(), mask);
    return make_result(p, {logits}, [](Node& n) {
        // dL/dz = p .* (g - sum(g .* p)) per row; masked entries have p = 0.
        const Mat& p = n.value;
        Eigen::VectorXd inner = (n.grad.cwiseProduct(p)).rowwise().sum();
        Mat d = p.cwiseProduct(n.grad.colwise() - inner);
        parent(n, 0).accumulate(d);
    });
}

Var layer_norm(const Var& a, const Var& gamma, const Var& beta, double eps) {
    const Eigen::Index C = a.cols();
    if (gamma.rows() != 1 || gamma.cols() != C || beta.rows() != 1 || beta.cols() != C) {
        throw ConfigError("layer_norm: gain/bias width mismatch");
    }
    const Mat& x = a.value();
    Eigen::VectorXd mean = x.rowwise().mean();
    Mat centered = x.colwise() - mean;
    Eigen::VectorXd inv_std =
        ((centered.array().square().rowwise().sum() / double(C)) + eps).rsqrt().matrix();
    Mat xhat = centered.array().colwise() * inv_std.array();
    Mat v = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
            beta.value().row(0).array();
    return make_result(std::move(v), {a, gamma, beta}, [xhat, inv_std](Node& n) {
        Node& px = parent(n, 0);
        Node& pg = parent(n, 1);
        Node& pb = parent(n, 2);
        if (pg.requires_grad) pg.accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
        if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
        if (px.requires_grad) {
            Mat gx = n.grad.array().rowwise() * pg.value.row(0).array();
            Eigen::VectorXd m1 = gx.rowwise().mean();
            Eigen::VectorXd m2 = gx.cwiseProduct(xhat).rowwise().mean();
            Mat d = gx.colwise() - m1;
            d.array() -= xhat.array().colwise() * m2.array();
            d.array().colwise() *= inv_std.array();
            px.accumulate(d);
        }
    });
}

Var mean_rows(const Var& a) {
    if (a.rows() == 0) throw InputError("mean_rows: empty input");
    const double inv = 1.0 / double(a.rows());
    Mat v = a.value().colwise().mean();
    return make_result(std::move(v), {a}, [inv](Node& n) {
        Node& p = parent(n, 0);
        p.accumulate(n.grad.replicate(p.value.rows(), 1) * inv);
    });
}

Var sum_all(const Var& a) {
    Mat v(1, 1);
    v(0, 0) = a.value().sum();
    return make_result(std::move(v), {a}, [](Node& n) {
        Node& p = parent(n, 0);
        p.accumulate(Mat::Constant(p.value.rows(), p.value.cols(), n.grad(0, 0)));
    });
}

Var dot_const(const Var& a, const Mat& w) {
    if (w.rows() != a.rows() || w.cols() != a.cols()) throw ConfigError("dot_const: shape mismatch");
    Mat v(1, 1);
    v(0, 0) = a.value().cwiseProduct(w).sum();
    return make_result(std::move(v), {a}, [w](Node& n) { parent(n, 0).accumulate(w * n.grad(0, 0)); });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw InputError("concat_rows: nothing to concatenate");
    const Eigen::Index C = parts[0].cols();
    Eigen::Index total = 0;
    for (const auto& p : parts) {
        if (p.cols() != C) throw ConfigError("concat_rows: width mismatch");
        total += p.rows();
    }
    Mat v(total, C);
    std::vector<Eigen::Index> offsets;
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        v.middleRows(off, p.rows()) = p.value();
        off += p.rows();
    }
    return make_result(std::move(v), std::vector<Var>(parts.begin(), parts.end()),
                       [offsets](Node& n) {
                           for (size_t i = 0; i < n.parents.size(); ++i) {
                               Node& p = *n.parents[i];
                               if (p.requires_grad) p.accumulate(n.grad.middleRows(offsets[i], p.value.rows()));
                           }
                       });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw InputError("concat_cols: nothing to concatenate");
    const Eigen::Index R = parts[0].rows();
    Eigen::Index total = 0;
    for (const auto& p : parts) {
        if (p.rows() != R) throw ConfigError("concat_cols: height mismatch");
        total += p.cols();
    }
    Mat v(R, total);
    std::vector<Eigen::Index> offsets;
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        v.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    return make_result(std::move(v), std::vector<Var>(parts.begin(), parts.end()),
                       [offsets](Node& n) {
                           for (size_t i = 0; i < n.parents.size(); ++i) {
                               Node& p = *n.parents[i];
                               if (p.requires_grad) p.accumulate(n.grad.middleCols(offsets[i], p.value.cols()));
                           }
                       });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw InputError("slice_rows: out of range");
    return make_result(a.value().middleRows(start, count), {a}, [start, count](Node& n) {
        Node& p = parent(n, 0);
        Mat g = Mat::Zero(p.value.rows(), p.value.cols());
        g.middleRows(start, count) = n.grad;
        p.accumulate(g);
    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw InputError("slice_cols: out of range");
    return make_result(a.value().middleCols(start, count), {a}, [start, count](Node& n) {
        Node& p = parent(n, 0);
        Mat g = Mat::Zero(p.value.rows(), p.value.cols());
        g.middleCols(start, count) = n.grad;
        p.accumulate(g);
    });
}

Var flatten_row(const Var& a) {
    const Eigen::Index R = a.rows();
    const Eigen::Index C = a.cols();
    Mat v(1, R * C);
    for (Eigen::Index r = 0; r < R; ++r) v.block(0, r * C, 1, C) = a.value().row(r);
    return make_result(std::move(v), {a}, [R, C](Node& n) {
        Mat g(R, C);
        for (Eigen::Index r = 0; r < R; ++r) g.row(r) = n.grad.block(0, r * C, 1, C);
        parent(n, 0).accumulate(g);
    });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
    Mat v(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows()) throw InputError("gather_rows: id out of range");
        v.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
    }
    std::vector<int> idv(ids.begin(), ids.end());
    return make_result(std::move(v), {table}, [idv](Node& n) {
        Node& p = parent(n, 0);
        Mat g = Mat::Zero(p.value.rows(), p.value.cols());
        for (size_t i = 0; i < idv.size(); ++i) g.row(idv[i]) += n.grad.row(static_cast<Eigen::Index>(i));
        p.accumulate(g);
    });
}

Var cross_entropy_rows(const Var& logits, std::span<const int> rows, std::span<const int> targets) {
    if (rows.size() != targets.size()) throw InputError("cross_entropy_rows: rows/targets length mismatch");
    if (rows.empty()) throw InputError("cross_entropy_rows: no positions to score");
    const Mat& z = logits.value();
    Mat probs(static_cast<Eigen::Index>(rows.size()), z.cols());
    double total = 0.0;
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= z.rows()) throw InputError("cross_entropy_rows: row out of range");
        if (targets[i] < 0 || targets[i] >= z.cols()) throw InputError("cross_entropy_rows: target out of range");
        const auto row = z.row(rows[i]);
        const double mx = row.maxCoeff();
        const double lse = mx + std::log((row.array() - mx).exp().sum());
        total += lse - row(targets[i]);
        probs.row(static_cast<Eigen::Index>(i)) = (row.array() - lse).exp();
    }
    const double inv = 1.0 / double(rows.size());
    Mat v(1, 1);
    v(0, 0) = total * inv;
    std::vector<int> rv(rows.begin(), rows.end());
    std::vector<int> tv(targets.begin(), targets.end());
    return make_result(std::move(v), {logits}, [probs, rv, tv, inv](Node& n) {
        Node& p = parent(n, 0);
        Mat g = Mat::Zero(p.value.rows(), p.value.cols());
        const double s = n.grad(0, 0) * inv;
        for (size_t i = 0; i < rv.size(); ++i) {
            Eigen::RowVectorXd d = probs.row(static_cast<Eigen::Index>(i));
            d(tv[i]) -= 1.0;
            g.row(rv[i]) += s * d;
        }
        p.accumulate(g);
    });
}

bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace emo::ag
