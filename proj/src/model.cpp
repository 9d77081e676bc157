#include "emo/model.h"

#include "emo/errors.h"
#include "emo/util.h"

#include <cstring>
#include <fstream>
#include <set>

namespace emo {

using nlohmann::json;

std::string to_string(FimStrategy s) { return s == FimStrategy::PoolConcat ? "pool-concat" : "face-info-mining"; }

FimStrategy parse_fim_strategy(const std::string& s) {
    if (s == "face-info-mining" || s == "fim") return FimStrategy::FaceInfoMining;
    if (s == "pool-concat") return FimStrategy::PoolConcat;
    throw ConfigError("unknown fim strategy '" + s + "'");
}

namespace {

// Reads known keys from a JSON object and rejects anything else.
class Reader {
public:
    Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
    }
    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }
    const json* sub(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace

void to_json(json& j, const ModelToggles& t) {
    j = json{{"facial_embedding", t.facial_embedding},
             {"landmark_token", t.landmark_token},
             {"agr_prompt", t.agr_prompt},
             {"lfattn", t.lfattn},
             {"fim_strategy", to_string(t.fim)}};
}

void from_json(const json& j, ModelToggles& t) {
    Reader r(j, "toggles");
    r.get("facial_embedding", t.facial_embedding);
    r.get("landmark_token", t.landmark_token);
    r.get("agr_prompt", t.agr_prompt);
    r.get("lfattn", t.lfattn);
    std::string fim = to_string(t.fim);
    r.get("fim_strategy", fim);
    t.fim = parse_fim_strategy(fim);
    r.finish();
}

void to_json(json& j, const ModelConfig& c) {
    json expert{{"weights", c.expert_weights},
                {"input_size", c.expert.input_size},
                {"patch_size", c.expert.patch_size},
                {"cell_size", c.expert.cell_size},
                {"coarse_block", c.expert.coarse_block},
                {"channels", c.expert.channels},
                {"seed", c.expert.seed}};
    if (c.expert.scripted_agr) {
        const auto& a = *c.expert.scripted_agr;
        expert["scripted_agr"] = {a.age_bucket, a.gender, a.race};
    }
    j = json{{"width", c.width},
             {"queries", c.queries},
             {"aggregator_blocks", c.aggregator_blocks},
             {"heads", c.heads},
             {"fim_depth", c.fim_depth},
             {"projector_depth", c.projector_depth},
             {"fps", c.fps},
             {"seed", c.seed},
             {"vision",
              {{"input_size", c.vision.input_size},
               {"patch_size", c.vision.patch_size},
               {"layers", c.vision.layers},
               {"heads", c.vision.heads},
               {"seed", c.vision.seed},
               {"trainable", c.train_vision}}},
             {"expert", expert},
             {"llm",
              {{"width", c.llm.width},
               {"layers", c.llm.layers},
               {"heads", c.llm.heads},
               {"max_length", c.llm.max_length},
               {"ffn_mult", c.llm.ffn_mult},
               {"seed", c.llm.seed}}},
             {"adapters", {{"enabled", c.use_adapters}, {"rank", c.adapters.rank}, {"alpha", c.adapters.alpha}}},
             {"toggles", c.toggles}};
}

void from_json(const json& j, ModelConfig& c) {
    Reader r(j, "model");
    r.get("width", c.width);
    r.get("queries", c.queries);
    r.get("aggregator_blocks", c.aggregator_blocks);
    r.get("heads", c.heads);
    r.get("fim_depth", c.fim_depth);
    r.get("projector_depth", c.projector_depth);
    r.get("fps", c.fps);
    r.get("seed", c.seed);
    if (const json* v = r.sub("vision")) {
        Reader s(*v, "model.vision");
        s.get("input_size", c.vision.input_size);
        s.get("patch_size", c.vision.patch_size);
        s.get("layers", c.vision.layers);
        s.get("heads", c.vision.heads);
        s.get("seed", c.vision.seed);
        s.get("trainable", c.train_vision);
        s.finish();
    }
    if (const json* v = r.sub("expert")) {
        Reader s(*v, "model.expert");
        s.get("weights", c.expert_weights);
        s.get("input_size", c.expert.input_size);
        s.get("patch_size", c.expert.patch_size);
        s.get("cell_size", c.expert.cell_size);
        s.get("coarse_block", c.expert.coarse_block);
        s.get("channels", c.expert.channels);
        s.get("seed", c.expert.seed);
        std::vector<std::string> agr;
        s.get("scripted_agr", agr);
        if (!agr.empty()) {
            if (agr.size() != 3) throw ConfigError("model.expert.scripted_agr: expected [age, gender, race]");
            c.expert.scripted_agr = AGRAttributes{agr[0], agr[1], agr[2], {1.0, 1.0, 1.0}};
        }
        s.finish();
    }
    if (const json* v = r.sub("llm")) {
        Reader s(*v, "model.llm");
        s.get("width", c.llm.width);
        s.get("layers", c.llm.layers);
        s.get("heads", c.llm.heads);
        s.get("max_length", c.llm.max_length);
        s.get("ffn_mult", c.llm.ffn_mult);
        s.get("seed", c.llm.seed);
        s.finish();
    }
    if (const json* v = r.sub("adapters")) {
        Reader s(*v, "model.adapters");
        s.get("enabled", c.use_adapters);
        s.get("rank", c.adapters.rank);
        s.get("alpha", c.adapters.alpha);
        s.finish();
    }
    if (const json* v = r.sub("toggles")) c.toggles = v->get<ModelToggles>();
    r.finish();
}

bool MediaFeatures::face_fallback() const {
    for (const auto& f : frames)
        if (f.face_fallback) return true;
    return false;
}

namespace {

VisionConfig vision_config(const ModelConfig& cfg) {
    VisionConfig v = cfg.vision;
    v.width = cfg.width;
    return v;
}

LlmConfig llm_config(const ModelConfig& cfg, const Tokenizer& tok) {
    LlmConfig l = cfg.llm;
    l.vocab_size = tok.size();
    return l;
}

}  // namespace

EmoLlama::EmoLlama(const ModelConfig& cfg, Tokenizer tokenizer)
    : cfg_(cfg),
      tok_(std::move(tokenizer)),
      backbone_(vision_config(cfg)),
      expert_(make_expert(cfg.expert_weights, cfg.expert)),
      llm_(llm_config(cfg, tok_)) {
    if (cfg.fps <= 0) throw ConfigError("fps must be positive");
    cropper_ = std::make_shared<FaceCropper>(std::make_shared<BlobFaceDetector>(), expert_->input_size());
    nn::Rng rng(cfg.seed);
    if (expert_->channels() != cfg.width) {
        align_ = nn::Linear(expert_->channels(), cfg.width, rng);
        has_align_ = true;
    }
    aggregator_ = ClueAggregator({cfg.width, cfg.queries, cfg.aggregator_blocks, cfg.heads, tok_.size()}, rng);
    fim_ = FaceInfoMining({cfg.width, cfg.heads, cfg.fim_depth, cfg.toggles.lfattn}, rng);
    const int visual_in = cfg.toggles.fim == FimStrategy::PoolConcat ? 2 * cfg.width : cfg.width;
    projector_ = FrameProjector({cfg.width, visual_in, expert_->landmark_count(), cfg.llm.width, cfg.projector_depth},
                                rng);
    if (cfg.use_adapters) llm_.inject_adapters(cfg.adapters, rng);
    nn::set_requires_grad(frozen(), false);
    nn::set_requires_grad(trainable(), true);
}

MediaFeatures EmoLlama::extract(const std::filesystem::path& media, Modality modality,
                                const std::string& media_id) const {
    MediaFeatures out;
    for (const auto& frame : load_frames(media, modality, cfg_.fps)) {
        FrameFeatures f;
        f.visual = backbone_.encode_frame(frame).tokens;
        if (cfg_.train_vision) {
            f.vision_input = resize_image(frame.pixels, cfg_.vision.input_size, cfg_.vision.input_size);
        }
        const FaceCrop crop = cropper_->crop_or_fallback(frame, media_id);
        f.face_fallback = crop.fallback;
        FacialEmbedding emb = expert_->encode(crop);
        auto [lm, agr] = expert_->decode(emb);
        f.facial = std::move(emb.tokens);
        f.regions = build_au_regions(lm, expert_->grid_rows(), expert_->grid_cols()).masks;
        f.landmarks = std::move(lm);
        f.agr = std::move(agr);
        out.frames.push_back(std::move(f));
    }
    return out;
}

const MediaFeatures& EmoLlama::features(const std::filesystem::path& media, Modality modality,
                                        const std::string& media_id) {
    {
        std::lock_guard lock(cache_mu_);
        auto it = cache_.find(media_id);
        if (it != cache_.end()) return it->second;
    }
    MediaFeatures f = extract(media, modality, media_id);
    std::lock_guard lock(cache_mu_);
    return cache_.emplace(media_id, std::move(f)).first->second;
}

ag::Var EmoLlama::aligned_facial(const FrameFeatures& f) const {
    ag::Var facial = ag::Var::constant(f.facial);
    return has_align_ ? align_.forward(facial) : facial;
}

ag::Var EmoLlama::enhanced_token(const FrameFeatures& f, const ag::Var& visual, const ag::Var& facial) const {
    if (cfg_.toggles.fim == FimStrategy::PoolConcat) {
        ag::Var face = facial.defined() ? facial : ag::Var::constant(ag::Mat::Zero(1, cfg_.width));
        return ag::flatten_row(pool_and_concat_baseline(visual, face));
    }
    if (!facial.defined()) return fim_.mine_visual_only(visual);
    return fim_.mine(visual, facial, f.regions);
}

std::vector<FrameTokenTriple> EmoLlama::frame_tokens(const MediaFeatures& media, const std::string& instruction) const {
    if (media.frames.empty()) throw InputError("media produced no frames");
    const auto ids = tok_.encode(instruction);
    const ag::Var instr = aggregator_.embed_instruction(ids);
    std::vector<FrameTokenTriple> out;
    for (const auto& f : media.frames) {
        const ag::Var visual =
            cfg_.train_vision ? backbone_.forward(f.vision_input) : ag::Var::constant(f.visual);
        const ag::Var facial = cfg_.toggles.facial_embedding ? aligned_facial(f) : ag::Var();
        const ag::Var q = aggregator_.aggregate_queries(instr, visual, facial);
        const ag::Var ctx = context_token(q, visual);
        out.push_back(projector_.project(ctx, enhanced_token(f, visual, facial),
                                         cfg_.toggles.landmark_token ? &f.landmarks : nullptr));
    }
    return out;
}

TokenSequence EmoLlama::build_sequence(const MediaFeatures& media, const std::vector<Turn>& turns,
                                       const std::string& description) const {
    if (turns.empty()) throw InputError("no turns");
    // The clue aggregator is conditioned on the opening question only.
    auto frames = frame_tokens(media, turns.front().text);
    // Attributes come from the first frame; the subject does not change within a clip.
    const std::string prompt = build_agr_prompt(media.frames.front().agr, cfg_.toggles.agr_prompt);
    return assemble_sequence(frames, prompt, turns, tok_,
                             [this](std::span<const int> ids) { return llm_.embed(ids); }, description);
}

ag::Var EmoLlama::loss(const MediaFeatures& media, const std::vector<Turn>& turns,
                       const std::string& description) const {
    const TokenSequence seq = build_sequence(media, turns, description);
    return autoregressive_loss(seq, llm_.forward(seq.embeddings));
}

std::string EmoLlama::generate(const MediaFeatures& media, const std::string& question,
                               const std::string& description, int max_new_tokens) const {
    const TokenSequence seq = build_sequence(media, {{"human", question}}, description);
    ag::Mat emb = seq.embeddings.value();
    std::vector<int> out;
    for (int step = 0; step < max_new_tokens && emb.rows() < llm_.config().max_length; ++step) {
        const ag::Mat logits = llm_.forward(ag::Var::constant(emb)).value();
        Eigen::RowVectorXd last = logits.row(logits.rows() - 1);
        for (int special : {Tokenizer::kPad, Tokenizer::kUnk, Tokenizer::kBos})
            last(special) = -std::numeric_limits<double>::infinity();
        Eigen::Index next = 0;
        last.maxCoeff(&next);
        if (next == Tokenizer::kEos) break;
        out.push_back(static_cast<int>(next));
        const int id = static_cast<int>(next);
        emb.conservativeResize(emb.rows() + 1, Eigen::NoChange);
        emb.row(emb.rows() - 1) = llm_.embed(std::span<const int>(&id, 1)).value();
    }
    return tok_.decode(out);
}

nn::ParamList EmoLlama::trainable() const {
    nn::ParamList p;
    if (cfg_.train_vision) backbone_.collect(p, "vision");
    if (has_align_) align_.collect(p, "align");
    aggregator_.collect(p, "aggregator");
    fim_.collect(p, "fim");
    projector_.collect(p, "projector");
    llm_.collect_adapters(p, "llm");
    return p;
}

nn::ParamList EmoLlama::frozen() const {
    nn::ParamList p;
    if (!cfg_.train_vision) backbone_.collect(p, "vision");
    llm_.collect_base(p, "llm");
    return p;
}

std::string EmoLlama::frozen_hash() const {
    std::vector<ag::Mat> extra;
    if (auto* toy = dynamic_cast<const ToyFacialExpert*>(expert_.get())) extra.push_back(toy->projection());
    return hash_params(frozen(), extra);
}

void EmoLlama::save_weights(const std::filesystem::path& path) const { write_params(path, trainable()); }

void EmoLlama::load_weights(const std::filesystem::path& path) { read_params(path, trainable()); }

namespace {

void append_raw(std::string& buf, const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }

void append_mat(std::string& buf, const ag::Mat& m) {
    const std::int64_t r = m.rows(), c = m.cols();
    append_raw(buf, &r, sizeof r);
    append_raw(buf, &c, sizeof c);
    append_raw(buf, m.data(), sizeof(double) * static_cast<size_t>(m.size()));
}

}  // namespace

std::string hash_params(const nn::ParamList& params, const std::vector<ag::Mat>& extra) {
    std::string buf;
    for (const auto& p : params) {
        buf += p.name;
        buf.push_back('\0');
        append_mat(buf, p.var.value());
    }
    for (const auto& m : extra) append_mat(buf, m);
    return sha256_hex(buf);
}

// Blob layout: "EMOW" u32 count, then per tensor u32 name length, name,
// i64 rows, i64 cols, column-major doubles.
void write_params(const std::filesystem::path& path, const nn::ParamList& params) {
    std::string buf = "EMOW";
    const auto count = static_cast<std::uint32_t>(params.size());
    append_raw(buf, &count, sizeof count);
    for (const auto& p : params) {
        const auto len = static_cast<std::uint32_t>(p.name.size());
        append_raw(buf, &len, sizeof len);
        buf += p.name;
        append_mat(buf, p.var.value());
    }
    write_file_atomic(path, buf);
}

void read_params(const std::filesystem::path& path, const nn::ParamList& params) {
    const std::string buf = read_file(path);
    size_t pos = 0;
    auto take = [&](void* dst, size_t n) {
        if (pos + n > buf.size()) throw IoError("truncated weights file " + path.string());
        std::memcpy(dst, buf.data() + pos, n);
        pos += n;
    };
    char magic[4];
    take(magic, 4);
    if (std::memcmp(magic, "EMOW", 4) != 0) throw IoError("not a weights file: " + path.string());
    std::uint32_t count = 0;
    take(&count, sizeof count);
    std::map<std::string, ag::Mat> stored;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t len = 0;
        take(&len, sizeof len);
        std::string name(len, '\0');
        take(name.data(), len);
        std::int64_t r = 0, c = 0;
        take(&r, sizeof r);
        take(&c, sizeof c);
        ag::Mat m(r, c);
        take(m.data(), sizeof(double) * static_cast<size_t>(r * c));
        stored.emplace(std::move(name), std::move(m));
    }
    for (const auto& p : params) {
        auto it = stored.find(p.name);
        if (it == stored.end()) throw IoError("weights file lacks tensor " + p.name);
        if (it->second.rows() != p.var.rows() || it->second.cols() != p.var.cols()) {
            throw IoError("shape mismatch for tensor " + p.name);
        }
        ag::Var v = p.var;
        v.mutable_value() = it->second;
    }
}

}  // namespace emo
