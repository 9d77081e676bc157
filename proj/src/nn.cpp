#include "emo/nn.h"

#include "emo/errors.h"

#include <cmath>

namespace emo::nn {

Mat randn(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
    return m;
}

Mat rand_uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
    return m;
}

Linear::Linear(int in, int out, Rng& rng, bool bias, double init_std) {
    if (in < 1 || out < 1) throw ConfigError("Linear: dimensions must be positive");
    const double sd = init_std > 0 ? init_std : 1.0 / std::sqrt(double(in));
    weight_ = Var::leaf(randn(in, out, sd, rng));
    if (bias) bias_ = Var::leaf(Mat::Zero(1, out));
}

Var Linear::forward(const Var& x) const {
    Var y = ag::matmul(x, weight_);
    if (bias_.defined()) y = ag::add_row(y, bias_);
    if (adapter_) {
        Var low = ag::matmul_t(x, adapter_->a);         // tokens x rank
        Var up = ag::matmul_t(low, adapter_->b);        // tokens x out
        y = ag::add(y, ag::scale(up, adapter_->scale));
    }
    return y;
}

void Linear::attach_adapter(int rank, double alpha, Rng& rng) {
    const int in = in_features();
    const int out = out_features();
    if (rank < 1) throw ConfigError("adapter rank must be >= 1");
    if (rank > std::min(in, out)) {
        throw ConfigError("adapter rank " + std::to_string(rank) + " exceeds min weight dimension " +
                          std::to_string(std::min(in, out)));
    }
    LoraAdapter ad;
    // Kaiming-uniform style bound for A; B zero so the adapted map starts equal to the base.
    ad.a = Var::leaf(rand_uniform(rank, in, 1.0 / std::sqrt(double(in)), rng));
    ad.b = Var::leaf(Mat::Zero(out, rank));
    ad.scale = alpha / double(rank);
    adapter_ = std::move(ad);
}

void Linear::zero() {
    weight_.mutable_value().setZero();
    if (bias_.defined()) bias_.mutable_value().setZero();
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight_});
    if (bias_.defined()) out.push_back({prefix + ".bias", bias_});
}

void Linear::collect_adapter(ParamList& out, const std::string& prefix) const {
    if (!adapter_) return;
    out.push_back({prefix + ".lora_a", adapter_->a});
    out.push_back({prefix + ".lora_b", adapter_->b});
}

LayerNorm::LayerNorm(int width)
    : gamma_(Var::leaf(Mat::Ones(1, width))), beta_(Var::leaf(Mat::Zero(1, width))) {}

Var LayerNorm::forward(const Var& x) const { return ag::layer_norm(x, gamma_, beta_); }

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma_});
    out.push_back({prefix + ".beta", beta_});
}

Mlp::Mlp(std::vector<int> widths, Rng& rng) {
    if (widths.size() < 2) throw ConfigError("Mlp needs at least input and output widths");
    for (size_t i = 0; i + 1 < widths.size(); ++i) layers_.emplace_back(widths[i], widths[i + 1], rng);
}

Var Mlp::forward(const Var& x) const {
    Var h = x;
    for (size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i].forward(h);
        if (i + 1 < layers_.size()) h = ag::gelu(h);
    }
    return h;
}

void Mlp::collect(ParamList& out, const std::string& prefix) const {
    for (size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + "." + std::to_string(i));
}

MultiHeadAttention::MultiHeadAttention(int width, int heads, Rng& rng)
    : width_(width), heads_(heads), q_(width, width, rng), k_(width, width, rng), v_(width, width, rng),
      o_(width, width, rng) {
    if (heads < 1 || width % heads != 0) {
        throw ConfigError("attention width " + std::to_string(width) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
}

void MultiHeadAttention::check_inputs(const Var& queries, const Var& keys_values) const {
    if (queries.cols() != width_ || keys_values.cols() != width_) {
        throw ConfigError("attention: channel width mismatch");
    }
    if (keys_values.rows() == 0) throw InputError("attention: empty key/value set");
}

Var MultiHeadAttention::forward(const Var& queries, const Var& keys_values, const ag::Mask* mask,
                                AttentionTrace* trace) const {
    if (mask) return forward_mask_mean(queries, keys_values, std::span<const ag::Mask>(mask, 1), trace);
    check_inputs(queries, keys_values);
    const Var q = q_.forward(queries);
    const Var k = k_.forward(keys_values);
    const Var v = v_.forward(keys_values);
    const int dh = width_ / heads_;
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));
    std::vector<Var> outs;
    outs.reserve(heads_);
    for (int h = 0; h < heads_; ++h) {
        Var qh = ag::slice_cols(q, h * dh, dh);
        Var kh = ag::slice_cols(k, h * dh, dh);
        Var vh = ag::slice_cols(v, h * dh, dh);
        Var p = ag::softmax_rows(ag::scale(ag::matmul_t(qh, kh), inv_sqrt));
        if (trace) trace->probs.push_back(p.value());
        outs.push_back(ag::matmul(p, vh));
    }
    Var merged = heads_ == 1 ? outs.front() : ag::concat_cols(outs);
    return o_.forward(merged);
}

Var MultiHeadAttention::forward_mask_mean(const Var& queries, const Var& keys_values,
                                          std::span<const ag::Mask> masks, AttentionTrace* trace) const {
    check_inputs(queries, keys_values);
    if (masks.empty()) throw InputError("attention: no masks given");
    for (const auto& m : masks) {
        if (m.rows() != queries.rows() || m.cols() != keys_values.rows()) {
            throw InputError("attention: mask shape does not match queries x keys");
        }
    }
    const Var q = q_.forward(queries);
    const Var k = k_.forward(keys_values);
    const Var v = v_.forward(keys_values);
    const int dh = width_ / heads_;
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));
    const double inv_masks = 1.0 / double(masks.size());
    std::vector<Var> outs;
    outs.reserve(heads_);
    for (int h = 0; h < heads_; ++h) {
        Var qh = ag::slice_cols(q, h * dh, dh);
        Var kh = ag::slice_cols(k, h * dh, dh);
        Var vh = ag::slice_cols(v, h * dh, dh);
        Var scores = ag::scale(ag::matmul_t(qh, kh), inv_sqrt);
        Var acc;
        for (const auto& m : masks) {
            Var p = ag::softmax_rows(scores, &m);
            if (trace) trace->probs.push_back(p.value());
            Var r = ag::matmul(p, vh);
            acc = acc.defined() ? ag::add(acc, r) : r;
        }
        outs.push_back(masks.size() == 1 ? acc : ag::scale(acc, inv_masks));
    }
    Var merged = heads_ == 1 ? outs.front() : ag::concat_cols(outs);
    return o_.forward(merged);
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) const {
    q_.collect(out, prefix + ".q");
    k_.collect(out, prefix + ".k");
    v_.collect(out, prefix + ".v");
    o_.collect(out, prefix + ".o");
}

ag::Mask causal_mask(Eigen::Index n) {
    ag::Mask m(n, n);
    for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < n; ++c) m(r, c) = c <= r;
    return m;
}

void set_requires_grad(const ParamList& params, bool on) {
    for (const auto& p : params) {
        Var v = p.var;
        v.set_requires_grad(on);
    }
}

size_t parameter_count(const ParamList& params) {
    size_t n = 0;
    for (const auto& p : params) n += static_cast<size_t>(p.var.value().size());
    return n;
}

}  // namespace emo::nn
