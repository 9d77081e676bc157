#include "emo/llm.h"

#include "emo/errors.h"

#include <cmath>

namespace emo {

TinyLlm::TinyLlm(const LlmConfig& cfg) : cfg_(cfg) {
    if (cfg.vocab_size < 4) throw ConfigError("language model vocabulary is too small");
    if (cfg.layers < 1 || cfg.width < 1 || cfg.max_length < 1) throw ConfigError("bad language model dimensions");
    nn::Rng rng(cfg.seed);
    // Unit-variance initial logits through the tied head.
    token_table_ = ag::Var::leaf(nn::randn(cfg.vocab_size, cfg.width, 1.0 / std::sqrt(double(cfg.width)), rng));
    positions_ = ag::Var::leaf(nn::randn(cfg.max_length, cfg.width, 0.1, rng));
    for (int i = 0; i < cfg.layers; ++i) {
        Block b;
        b.ln1 = nn::LayerNorm(cfg.width);
        b.ln2 = nn::LayerNorm(cfg.width);
        b.attn = nn::MultiHeadAttention(cfg.width, cfg.heads, rng);
        b.up = nn::Linear(cfg.width, cfg.ffn_mult * cfg.width, rng);
        b.down = nn::Linear(cfg.ffn_mult * cfg.width, cfg.width, rng);
        blocks_.push_back(std::move(b));
    }
    final_ln_ = nn::LayerNorm(cfg.width);
}

ag::Var TinyLlm::embed(std::span<const int> ids) const {
    for (int id : ids)
        if (id < 0 || id >= cfg_.vocab_size) throw InputError("token id outside the vocabulary");
    return ag::gather_rows(token_table_, ids);
}

ag::Var TinyLlm::forward(const ag::Var& embeddings) const {
    const auto len = embeddings.rows();
    if (len == 0) throw InputError("empty sequence");
    if (len > cfg_.max_length) {
        throw InputError("sequence length " + std::to_string(len) + " exceeds max_length " +
                         std::to_string(cfg_.max_length));
    }
    if (embeddings.cols() != cfg_.width) throw ConfigError("embedding width differs from the model width");
    const ag::Mask mask = nn::causal_mask(len);
    ag::Var h = embeddings + ag::slice_rows(positions_, 0, len);
    for (const auto& b : blocks_) {
        ag::Var n = b.ln1.forward(h);
        h = h + b.attn.forward(n, n, &mask);
        h = h + b.down.forward(ag::gelu(b.up.forward(b.ln2.forward(h))));
    }
    return ag::matmul_t(final_ln_.forward(h), token_table_);
}

std::vector<nn::Linear*> TinyLlm::adapter_sites() {
    std::vector<nn::Linear*> sites;
    for (auto& b : blocks_) {
        for (nn::Linear* l : {&b.attn.q(), &b.attn.k(), &b.attn.v(), &b.attn.o(), &b.up, &b.down}) sites.push_back(l);
    }
    return sites;
}

void TinyLlm::inject_adapters(const AdapterConfig& adapters, nn::Rng& rng) {
    if (adapted_) throw ConfigError("adapters already injected");
    // Validate every site before touching any so a failure leaves the model unchanged.
    for (nn::Linear* l : adapter_sites()) {
        if (adapters.rank < 1 || adapters.rank > std::min(l->in_features(), l->out_features())) {
            throw ConfigError("adapter rank " + std::to_string(adapters.rank) + " exceeds min weight dimension " +
                              std::to_string(std::min(l->in_features(), l->out_features())));
        }
    }
    for (nn::Linear* l : adapter_sites()) l->attach_adapter(adapters.rank, adapters.alpha, rng);
    adapted_ = true;
}

void TinyLlm::collect_base(nn::ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".token_table", token_table_});
    out.push_back({prefix + ".positions", positions_});
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const auto& b = blocks_[i];
        const std::string p = prefix + ".block" + std::to_string(i);
        b.ln1.collect(out, p + ".ln1");
        b.ln2.collect(out, p + ".ln2");
        b.attn.collect(out, p + ".attn");
        b.up.collect(out, p + ".up");
        b.down.collect(out, p + ".down");
    }
    final_ln_.collect(out, prefix + ".final_ln");
}

void TinyLlm::collect_adapters(nn::ParamList& out, const std::string& prefix) const {
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const auto& b = blocks_[i];
        const std::string p = prefix + ".block" + std::to_string(i);
        b.attn.q().collect_adapter(out, p + ".attn.q");
        b.attn.k().collect_adapter(out, p + ".attn.k");
        b.attn.v().collect_adapter(out, p + ".attn.v");
        b.attn.o().collect_adapter(out, p + ".attn.o");
        b.up.collect_adapter(out, p + ".up");
        b.down.collect_adapter(out, p + ".down");
    }
}

}  // namespace emo
