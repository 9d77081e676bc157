#pragma once

// Small causal decoder used as the language model: learned positions,
// pre-LN blocks, and an output head tied to the token embedding table.

#include "emo/nn.h"

#include <span>

namespace emo {

struct LlmConfig {
    int vocab_size = 0;
    int width = 64;  // D
    int layers = 2;
    int heads = 4;
    int max_length = 512;
    int ffn_mult = 4;
    std::uint64_t seed = 23;
};

struct AdapterConfig {
    int rank = 16;
    double alpha = 32.0;
};

class TinyLlm {
public:
    TinyLlm() = default;
    explicit TinyLlm(const LlmConfig& cfg);

    ag::Var embed(std::span<const int> ids) const;
    /// L x D input embeddings -> L x V next-token logits (causal).
    ag::Var forward(const ag::Var& embeddings) const;

    /// Adds zero-initialized low-rank adapters to every attention projection
    /// and feed-forward weight. Throws ConfigError if rank exceeds a weight's smaller side.
    void inject_adapters(const AdapterConfig& adapters, nn::Rng& rng);
    bool has_adapters() const { return adapted_; }

    void collect_base(nn::ParamList& out, const std::string& prefix) const;
    void collect_adapters(nn::ParamList& out, const std::string& prefix) const;
    const LlmConfig& config() const { return cfg_; }

private:
    struct Block {
        nn::LayerNorm ln1, ln2;
        nn::MultiHeadAttention attn;
        nn::Linear up, down;
    };

    std::vector<nn::Linear*> adapter_sites();

    LlmConfig cfg_;
    ag::Var token_table_;  // V x D
    ag::Var positions_;    // max_length x D
    std::vector<Block> blocks_;
    nn::LayerNorm final_ln_;
    bool adapted_ = false;
};

}  // namespace emo
