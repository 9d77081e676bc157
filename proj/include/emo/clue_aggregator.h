#pragma once

// Instruction-aware query extraction and the per-frame compressed context token.

#include "emo/nn.h"

#include <span>

namespace emo {

struct ClueAggregatorConfig {
    int width = 64;
    int queries = 32;
    int blocks = 2;
    int heads = 4;
    int vocab_size = 0;  // instruction embedding table size; shares the LLM tokenizer ids
};

/// Q-Former style stack. Each block: self-attention over the queries, cross
/// attention to the instruction tokens, cross attention to visual+facial
/// tokens, then a feed-forward layer. All sub-layers are pre-LN residual.
class ClueAggregator {
public:
    ClueAggregator() = default;
    ClueAggregator(const ClueAggregatorConfig& cfg, nn::Rng& rng);

    /// Instruction token ids -> L x C embeddings from the aggregator's own table.
    ag::Var embed_instruction(std::span<const int> ids) const;

    /// Returns the instruction-conditioned queries Q_t (M x C). `instruction`
    /// may have zero rows; `facial` may be undefined when the facial branch is off.
    ag::Var aggregate_queries(const ag::Var& instruction, const ag::Var& visual, const ag::Var& facial) const;

    const ag::Var& queries() const { return queries_; }
    ag::Var& queries() { return queries_; }
    const ClueAggregatorConfig& config() const { return cfg_; }

    /// Zeroes every residual-branch output projection so the stack is the identity on Q.
    void zero_branch_outputs();

    void collect(nn::ParamList& out, const std::string& prefix) const;

private:
    struct Block {
        nn::LayerNorm ln_self, ln_instr_q, ln_instr_kv, ln_vis_q, ln_vis_kv, ln_ffn;
        nn::MultiHeadAttention self_attn, instr_attn, vis_attn;
        nn::Mlp ffn;
    };

    ClueAggregatorConfig cfg_;
    ag::Var queries_;
    ag::Var instr_table_;
    std::vector<Block> blocks_;
};

/// Pool_M(Softmax_N(Q X^T) X): attention of every query over the visual
/// tokens, then mean over queries. Optionally returns the M x N weights.
ag::Var context_token(const ag::Var& queries, const ag::Var& visual, ag::Mat* weights = nullptr);

}  // namespace emo
