#include "emo/clue_aggregator.h"

#include "emo/errors.h"

namespace emo {

ClueAggregator::ClueAggregator(const ClueAggregatorConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
    if (cfg.width < 1 || cfg.queries < 1 || cfg.blocks < 0) throw ConfigError("clue aggregator: bad dimensions");
    if (cfg.vocab_size < 1) throw ConfigError("clue aggregator: vocab_size must be positive");
    queries_ = ag::Var::leaf(nn::randn(cfg.queries, cfg.width, 1.0, rng));
    instr_table_ = ag::Var::leaf(nn::randn(cfg.vocab_size, cfg.width, 0.5, rng));
    const int c = cfg.width;
    for (int i = 0; i < cfg.blocks; ++i) {
        Block b;
        b.ln_self = nn::LayerNorm(c);
        b.ln_instr_q = nn::LayerNorm(c);
        b.ln_instr_kv = nn::LayerNorm(c);
        b.ln_vis_q = nn::LayerNorm(c);
        b.ln_vis_kv = nn::LayerNorm(c);
        b.ln_ffn = nn::LayerNorm(c);
        b.self_attn = nn::MultiHeadAttention(c, cfg.heads, rng);
        b.instr_attn = nn::MultiHeadAttention(c, cfg.heads, rng);
        b.vis_attn = nn::MultiHeadAttention(c, cfg.heads, rng);
        b.ffn = nn::Mlp({c, 2 * c, c}, rng);
        blocks_.push_back(std::move(b));
    }
}

ag::Var ClueAggregator::embed_instruction(std::span<const int> ids) const {
    for (int id : ids) {
        if (id < 0 || id >= cfg_.vocab_size) throw InputError("instruction token id out of range");
    }
    return ag::gather_rows(instr_table_, ids);
}

ag::Var ClueAggregator::aggregate_queries(const ag::Var& instruction, const ag::Var& visual,
                                          const ag::Var& facial) const {
    const int c = cfg_.width;
    if (visual.cols() != c) throw ConfigError("clue aggregator: visual width differs from model width");
    if (facial.defined() && facial.cols() != c) {
        throw ConfigError("clue aggregator: facial width differs from model width");
    }
    if (instruction.defined() && instruction.rows() > 0 && instruction.cols() != c) {
        throw ConfigError("clue aggregator: instruction width differs from model width");
    }
    ag::Var memory = visual;
    if (facial.defined() && facial.rows() > 0) {
        const ag::Var parts[] = {visual, facial};
        memory = ag::concat_rows(parts);
    }
    const bool has_instruction = instruction.defined() && instruction.rows() > 0;

    ag::Var q = queries_;
    for (const auto& b : blocks_) {
        ag::Var n = b.ln_self.forward(q);
        q = q + b.self_attn.forward(n, n);
        if (has_instruction) {
            q = q + b.instr_attn.forward(b.ln_instr_q.forward(q), b.ln_instr_kv.forward(instruction));
        }
        q = q + b.vis_attn.forward(b.ln_vis_q.forward(q), b.ln_vis_kv.forward(memory));
        q = q + b.ffn.forward(b.ln_ffn.forward(q));
    }
    return q;
}

void ClueAggregator::zero_branch_outputs() {
    for (auto& b : blocks_) {
        b.self_attn.o().zero();
        b.instr_attn.o().zero();
        b.vis_attn.o().zero();
        b.ffn.layers().back().zero();
    }
}

void ClueAggregator::collect(nn::ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".queries", queries_});
    out.push_back({prefix + ".instr_table", instr_table_});
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const auto& b = blocks_[i];
        const std::string p = prefix + ".block" + std::to_string(i);
        b.ln_self.collect(out, p + ".ln_self");
        b.ln_instr_q.collect(out, p + ".ln_instr_q");
        b.ln_instr_kv.collect(out, p + ".ln_instr_kv");
        b.ln_vis_q.collect(out, p + ".ln_vis_q");
        b.ln_vis_kv.collect(out, p + ".ln_vis_kv");
        b.ln_ffn.collect(out, p + ".ln_ffn");
        b.self_attn.collect(out, p + ".self_attn");
        b.instr_attn.collect(out, p + ".instr_attn");
        b.vis_attn.collect(out, p + ".vis_attn");
        b.ffn.collect(out, p + ".ffn");
    }
}

ag::Var context_token(const ag::Var& queries, const ag::Var& visual, ag::Mat* weights) {
    if (visual.rows() == 0) throw InputError("context_token: no visual tokens");
    if (queries.rows() == 0) throw InputError("context_token: no queries");
    if (queries.cols() != visual.cols()) throw ConfigError("context_token: channel width mismatch");
    ag::Var p = ag::softmax_rows(ag::matmul_t(queries, visual));
    if (weights) *weights = p.value();
    return ag::mean_rows(ag::matmul(p, visual));
}

}  // namespace emo
