#pragma once

// Small neural-network building blocks over the autograd tape: linear layers
// with optional low-rank adapters, layer norm, MLPs, and multi-head attention.
// Activations are row-major token matrices (tokens x channels).

#include "emo/autograd.h"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace emo::nn {

using ag::Mat;
using ag::Var;

using Rng = std::mt19937_64;

Mat randn(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);
Mat rand_uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng);

struct NamedParam {
    std::string name;
    Var var;
};

using ParamList = std::vector<NamedParam>;

/// Low-rank residual B*A added to a frozen weight; B starts at zero.
struct LoraAdapter {
    Var a;  // rank x in
    Var b;  // out x rank
    double scale = 1.0;
};

class Linear {
public:
    Linear() = default;
    Linear(int in, int out, Rng& rng, bool bias = true, double init_std = -1.0);

    Var forward(const Var& x) const;

    int in_features() const { return static_cast<int>(weight_.rows()); }
    int out_features() const { return static_cast<int>(weight_.cols()); }

    /// in x out, applied as x * W.
    Var& weight() { return weight_; }
    const Var& weight() const { return weight_; }
    Var& bias() { return bias_; }
    const Var& bias() const { return bias_; }
    bool has_bias() const { return bias_.defined(); }

    /// Attaches a zero-initialized adapter; rank must not exceed min(in, out).
    void attach_adapter(int rank, double alpha, Rng& rng);
    bool has_adapter() const { return adapter_.has_value(); }
    const std::optional<LoraAdapter>& adapter() const { return adapter_; }
    std::optional<LoraAdapter>& adapter() { return adapter_; }

    void zero();
    void collect(ParamList& out, const std::string& prefix) const;
    void collect_adapter(ParamList& out, const std::string& prefix) const;

private:
    Var weight_;
    Var bias_;
    std::optional<LoraAdapter> adapter_;
};

class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(int width);
    Var forward(const Var& x) const;
    void collect(ParamList& out, const std::string& prefix) const;

private:
    Var gamma_;
    Var beta_;
};

/// Stack of linear layers with GELU between them. Depth 1 is a single affine map.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<int> widths, Rng& rng);
    Var forward(const Var& x) const;
    std::vector<Linear>& layers() { return layers_; }
    const std::vector<Linear>& layers() const { return layers_; }
    void collect(ParamList& out, const std::string& prefix) const;
    int in_features() const { return layers_.front().in_features(); }
    int out_features() const { return layers_.back().out_features(); }

private:
    std::vector<Linear> layers_;
};

/// Per-head attention probabilities recorded during a forward pass.
struct AttentionTrace {
    std::vector<Mat> probs;  // one (queries x keys) matrix per head
};

/// Multi-head scaled dot-product attention. Returns the output projection of
/// the attended values, without any residual; callers add their own.
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(int width, int heads, Rng& rng);

    Var forward(const Var& queries, const Var& keys_values, const ag::Mask* mask = nullptr,
                AttentionTrace* trace = nullptr) const;
    /// Mean of the outputs obtained under each mask in turn. Projections are
    /// computed once; the output map is affine so averaging before it is exact.
    Var forward_mask_mean(const Var& queries, const Var& keys_values, std::span<const ag::Mask> masks,
                          AttentionTrace* trace = nullptr) const;

    int heads() const { return heads_; }
    int width() const { return width_; }
    Linear& q() { return q_; }
    Linear& k() { return k_; }
    Linear& v() { return v_; }
    Linear& o() { return o_; }
    const Linear& q() const { return q_; }
    const Linear& k() const { return k_; }
    const Linear& v() const { return v_; }
    const Linear& o() const { return o_; }

    void collect(ParamList& out, const std::string& prefix) const;

private:
    void check_inputs(const Var& queries, const Var& keys_values) const;

    int width_ = 0;
    int heads_ = 1;
    Linear q_, k_, v_, o_;
};

/// Causal mask for self-attention over a sequence of length n.
ag::Mask causal_mask(Eigen::Index n);

void set_requires_grad(const ParamList& params, bool on);
size_t parameter_count(const ParamList& params);

}  // namespace emo::nn
