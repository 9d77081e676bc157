#include "emo/face_info_mining.h"

#include "emo/errors.h"

namespace emo {

namespace {

CrossAttentionUnit make_cross(int width, int heads, nn::Rng& rng) {
    CrossAttentionUnit u;
    u.ln_q = nn::LayerNorm(width);
    u.ln_kv = nn::LayerNorm(width);
    u.attn = nn::MultiHeadAttention(width, heads, rng);
    return u;
}

void check_facial(const ag::Var& s, const ag::Var& facial) {
    if (!facial.defined() || facial.rows() == 0) throw InputError("face attention: empty facial embedding");
    if (facial.cols() != s.cols()) throw ConfigError("face attention: channel width mismatch");
}

}  // namespace

FaceInfoMining::FaceInfoMining(const FaceInfoMiningConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
    if (cfg.depth < 1) throw ConfigError("face info mining depth must be >= 1");
    const int c = cfg.width;
    for (int i = 0; i < cfg.depth; ++i) {
        FaceInfoMiningBlock b;
        b.ln_self = nn::LayerNorm(c);
        b.self_attn = nn::MultiHeadAttention(c, cfg.heads, rng);
        b.global = make_cross(c, cfg.heads, rng);
        b.local = make_cross(c, cfg.heads, rng);
        b.ln_ffn = nn::LayerNorm(c);
        b.ffn = nn::Mlp({c, 2 * c, c}, rng);
        blocks_.push_back(std::move(b));
    }
}

const FaceInfoMiningBlock& FaceInfoMining::at(int block) const {
    if (block < 0 || block >= static_cast<int>(blocks_.size())) throw ConfigError("face info mining: no such block");
    return blocks_[block];
}

ag::Var FaceInfoMining::self_attn(const ag::Var& x, int block, nn::AttentionTrace* trace) const {
    if (x.rows() == 0) throw InputError("self attention: no tokens");
    const auto& b = at(block);
    ag::Var n = b.ln_self.forward(x);
    return x + b.self_attn.forward(n, n, nullptr, trace);
}

ag::Var FaceInfoMining::global_face_attn(const ag::Var& s, const ag::Var& facial, int block,
                                         nn::AttentionTrace* trace) const {
    check_facial(s, facial);
    const auto& u = at(block).global;
    return s + u.attn.forward(u.ln_q.forward(s), u.ln_kv.forward(facial), nullptr, trace);
}

ag::Var FaceInfoMining::local_face_attn(const ag::Var& s, const ag::Var& facial, const ag::Mask& regions,
                                        int block, nn::AttentionTrace* trace, bool* widened) const {
    check_facial(s, facial);
    if (regions.rows() == 0) throw InputError("local face attention: no regions");
    if (regions.cols() != facial.rows()) {
        throw InputError("local face attention: region mask width " + std::to_string(regions.cols()) +
                         " != facial tokens " + std::to_string(facial.rows()));
    }
    std::vector<ag::Mask> masks;
    masks.reserve(regions.rows());
    for (Eigen::Index r = 0; r < regions.rows(); ++r) {
        ag::Mask row = regions.row(r);
        if (!row.any()) {
            row.setConstant(true);
            if (widened) *widened = true;
        }
        masks.push_back(row.replicate(s.rows(), 1));
    }
    const auto& u = at(block).local;
    return s + u.attn.forward_mask_mean(u.ln_q.forward(s), u.ln_kv.forward(facial), masks, trace);
}

ag::Var FaceInfoMining::feed_forward(const ag::Var& g, int block) const {
    const auto& b = at(block);
    return g + b.ffn.forward(b.ln_ffn.forward(g));
}

ag::Var FaceInfoMining::mine_tokens(const ag::Var& visual, const ag::Var& facial, const ag::Mask& regions,
                                    bool* widened) const {
    if (visual.rows() == 0) throw InputError("face info mining: no visual tokens");
    ag::Var x = visual;
    for (int i = 0; i < static_cast<int>(blocks_.size()); ++i) {
        ag::Var s = self_attn(x, i);
        ag::Var out = feed_forward(global_face_attn(s, facial, i), i);
        if (cfg_.local_attention) {
            // The local branch is added without its residual copy of s, which the
            // global branch already carries.
            out = out + (local_face_attn(s, facial, regions, i, nullptr, widened) - s);
        }
        x = out;
    }
    return x;
}

ag::Var FaceInfoMining::mine(const ag::Var& visual, const ag::Var& facial, const ag::Mask& regions,
                             bool* widened) const {
    return ag::mean_rows(mine_tokens(visual, facial, regions, widened));
}

ag::Var FaceInfoMining::mine_visual_only(const ag::Var& visual) const {
    if (visual.rows() == 0) throw InputError("face info mining: no visual tokens");
    ag::Var x = visual;
    for (int i = 0; i < static_cast<int>(blocks_.size()); ++i) x = feed_forward(self_attn(x, i), i);
    return ag::mean_rows(x);
}

void FaceInfoMining::collect(nn::ParamList& out, const std::string& prefix) const {
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const auto& b = blocks_[i];
        const std::string p = prefix + ".block" + std::to_string(i);
        b.ln_self.collect(out, p + ".ln_self");
        b.self_attn.collect(out, p + ".self_attn");
        b.global.ln_q.collect(out, p + ".global.ln_q");
        b.global.ln_kv.collect(out, p + ".global.ln_kv");
        b.global.attn.collect(out, p + ".global.attn");
        b.local.ln_q.collect(out, p + ".local.ln_q");
        b.local.ln_kv.collect(out, p + ".local.ln_kv");
        b.local.attn.collect(out, p + ".local.attn");
        b.ln_ffn.collect(out, p + ".ln_ffn");
        b.ffn.collect(out, p + ".ffn");
    }
}

ag::Var pool_and_concat_baseline(const ag::Var& visual, const ag::Var& facial) {
    if (visual.rows() == 0 || facial.rows() == 0) throw InputError("pool and concat: empty embedding");
    if (visual.cols() != facial.cols()) throw ConfigError("pool and concat: channel width mismatch");
    const ag::Var parts[] = {ag::mean_rows(visual), ag::mean_rows(facial)};
    return ag::concat_rows(parts);
}

}  // namespace emo
