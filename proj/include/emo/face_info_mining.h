#pragma once

// Enhances general visual tokens with whole-face and AU-region facial
// attention and pools them into one enhanced visual token per frame.

#include "emo/nn.h"

namespace emo {

struct FaceInfoMiningConfig {
    int width = 64;
    int heads = 4;
    int depth = 1;
    bool local_attention = true;  // off: only the global-face branch feeds the output
};

/// Pre-LN cross-attention sub-layer: queries from one stream, keys/values from another.
struct CrossAttentionUnit {
    nn::LayerNorm ln_q, ln_kv;
    nn::MultiHeadAttention attn;
};

struct FaceInfoMiningBlock {
    nn::LayerNorm ln_self;
    nn::MultiHeadAttention self_attn;
    CrossAttentionUnit global;
    CrossAttentionUnit local;
    nn::LayerNorm ln_ffn;
    nn::Mlp ffn;
};

class FaceInfoMining {
public:
    FaceInfoMining() = default;
    FaceInfoMining(const FaceInfoMiningConfig& cfg, nn::Rng& rng);

    /// x + MHA(LN x): shape preserved.
    ag::Var self_attn(const ag::Var& x, int block = 0, nn::AttentionTrace* trace = nullptr) const;
    /// s + MHA(LN s, LN F) over every facial token.
    ag::Var global_face_attn(const ag::Var& s, const ag::Var& facial, int block = 0,
                             nn::AttentionTrace* trace = nullptr) const;
    /// s + mean over regions of MHA(LN s, LN F) restricted to the region's
    /// facial tokens. `regions` is R x N^F. An empty region row is widened to
    /// the whole face and reported through `widened`.
    ag::Var local_face_attn(const ag::Var& s, const ag::Var& facial, const ag::Mask& regions, int block = 0,
                            nn::AttentionTrace* trace = nullptr, bool* widened = nullptr) const;
    /// g + MLP(LN g)
    ag::Var feed_forward(const ag::Var& g, int block = 0) const;

    /// Token-level output of the stacked blocks before pooling (N x C).
    ag::Var mine_tokens(const ag::Var& visual, const ag::Var& facial, const ag::Mask& regions,
                        bool* widened = nullptr) const;
    /// Mean over rows of mine_tokens: the enhanced visual token (1 x C).
    ag::Var mine(const ag::Var& visual, const ag::Var& facial, const ag::Mask& regions,
                 bool* widened = nullptr) const;

    /// Facial branch switched off: each block is FFN(SAttn(x)), then mean pooled.
    ag::Var mine_visual_only(const ag::Var& visual) const;

    std::vector<FaceInfoMiningBlock>& blocks() { return blocks_; }
    const std::vector<FaceInfoMiningBlock>& blocks() const { return blocks_; }
    const FaceInfoMiningConfig& config() const { return cfg_; }
    void set_local_attention(bool on) { cfg_.local_attention = on; }

    void collect(nn::ParamList& out, const std::string& prefix) const;

private:
    const FaceInfoMiningBlock& at(int block) const;

    FaceInfoMiningConfig cfg_;
    std::vector<FaceInfoMiningBlock> blocks_;
};

/// Ablation baseline: [mean(visual); mean(facial)] as a 2 x C matrix.
ag::Var pool_and_concat_baseline(const ag::Var& visual, const ag::Var& facial);

}  // namespace emo
