#include "emo/token_assembly.h"

#include "emo/errors.h"

namespace emo {

namespace {

std::vector<int> widths(int in, int out, int depth) {
    if (depth < 1) throw ConfigError("projector depth must be >= 1");
    std::vector<int> w{in};
    for (int i = 0; i < depth; ++i) w.push_back(out);
    return w;
}

}  // namespace

FrameProjector::FrameProjector(const ProjectorConfig& cfg, nn::Rng& rng)
    : cfg_(cfg),
      context_(widths(cfg.context_in, cfg.llm_width, cfg.depth), rng),
      visual_(widths(cfg.visual_in, cfg.llm_width, cfg.depth), rng),
      landmark_(widths(2 * cfg.landmark_count, cfg.llm_width, cfg.depth), rng) {}

FrameTokenTriple FrameProjector::project(const ag::Var& context, const ag::Var& enhanced,
                                         const LandmarkSet* landmarks) const {
    if (context.rows() != 1 || context.cols() != cfg_.context_in) {
        throw ConfigError("context token must be 1x" + std::to_string(cfg_.context_in));
    }
    if (enhanced.rows() != 1 || enhanced.cols() != cfg_.visual_in) {
        throw ConfigError("enhanced visual token must be 1x" + std::to_string(cfg_.visual_in));
    }
    FrameTokenTriple t;
    t.context = context_.forward(context);
    t.visual = visual_.forward(enhanced);
    if (landmarks) {
        if (landmarks->size() != cfg_.landmark_count) {
            throw ConfigError("expected " + std::to_string(cfg_.landmark_count) + " landmarks, got " +
                              std::to_string(landmarks->size()));
        }
        t.landmark = landmark_.forward(ag::Var::constant(flatten_landmarks(*landmarks)));
    }
    return t;
}

void FrameProjector::collect(nn::ParamList& out, const std::string& prefix) const {
    context_.collect(out, prefix + ".context");
    visual_.collect(out, prefix + ".visual");
    landmark_.collect(out, prefix + ".landmark");
}

ag::Mat flatten_landmarks(const LandmarkSet& lm) {
    ag::Mat row(1, 2 * lm.size());
    for (int i = 0; i < lm.size(); ++i) {
        row(0, 2 * i) = lm.points[i].x;
        row(0, 2 * i + 1) = lm.points[i].y;
    }
    return row;
}

const char* const kAgrPromptPrefix =
    "According to the specific question, you are allowed to use or partially use the following information:";

std::string build_agr_prompt(const AGRAttributes& agr, bool enabled) {
    if (!enabled) return {};
    return std::string(kAgrPromptPrefix) + " " + agr.age_bucket + ", " + agr.gender + ", " + agr.race + ".";
}

const char* to_string(Segment s) {
    switch (s) {
        case Segment::Frame: return "frame-token";
        case Segment::Prompt: return "prompt";
        case Segment::Question: return "question";
        case Segment::Answer: return "answer";
    }
    return "?";
}

int TokenSequence::count(Segment s) const {
    int n = 0;
    for (auto x : segment_map) n += x == s;
    return n;
}

TokenSequence assemble_sequence(const std::vector<FrameTokenTriple>& frames, const std::string& agr_prompt,
                                const std::vector<Turn>& turns, const Tokenizer& tok, const EmbedFn& embed,
                                const std::string& description) {
    if (frames.empty()) throw InputError("assemble_sequence needs at least one frame");
    if (turns.empty() || turns.front().role != "human") throw InputError("turns must start with a human turn");
    TokenSequence seq;
    std::vector<ag::Var> parts;
    for (const auto& f : frames) {
        for (const ag::Var* v : {&f.context, &f.visual, &f.landmark}) {
            if (!v->defined()) continue;
            parts.push_back(*v);
            seq.token_ids.push_back(-1);
            seq.answer_mask.push_back(false);
            seq.segment_map.push_back(Segment::Frame);
        }
    }
    std::vector<int> text_ids;
    auto append_text = [&](const std::vector<int>& ids, Segment seg) {
        for (int id : ids) {
            text_ids.push_back(id);
            seq.token_ids.push_back(id);
            seq.answer_mask.push_back(seg == Segment::Answer);
            seq.segment_map.push_back(seg);
        }
    };
    append_text(tok.encode(agr_prompt), Segment::Prompt);
    for (size_t i = 0; i < turns.size(); ++i) {
        const auto& t = turns[i];
        const bool human = i % 2 == 0;
        if (t.role != (human ? "human" : "assistant")) throw InputError("turns must alternate human/assistant");
        if (human) {
            append_text(tok.encode(t.text), Segment::Question);
            if (i == 0 && !description.empty()) append_text(tok.encode(description), Segment::Prompt);
        } else {
            auto ids = tok.encode(t.text);
            if (ids.empty()) throw InputError("assistant turn is empty");
            ids.push_back(Tokenizer::kEos);
            append_text(ids, Segment::Answer);
        }
    }
    if (!text_ids.empty()) parts.push_back(embed(text_ids));
    // Frame rows come first, text rows after, matching the bookkeeping order above.
    seq.embeddings = parts.size() == 1 ? parts.front() : ag::concat_rows(parts);
    return seq;
}

TokenSequence assemble_sequence(const std::vector<FrameTokenTriple>& frames, const std::string& agr_prompt,
                                const std::string& question, const std::optional<std::string>& answer,
                                const Tokenizer& tok, const EmbedFn& embed, const std::string& description) {
    std::vector<Turn> turns{{"human", question}};
    if (answer) {
        if (answer->empty()) throw InputError("training answer is empty");
        turns.push_back({"assistant", *answer});
    }
    return assemble_sequence(frames, agr_prompt, turns, tok, embed, description);
}

ag::Var autoregressive_loss(const TokenSequence& seq, const ag::Var& logits) {
    if (logits.rows() != seq.length()) throw InputError("logits rows do not match sequence length");
    std::vector<int> rows, targets;
    for (int j = 1; j < seq.length(); ++j) {
        if (!seq.answer_mask[static_cast<size_t>(j)]) continue;
        rows.push_back(j - 1);
        targets.push_back(seq.token_ids[static_cast<size_t>(j)]);
    }
    if (rows.empty()) throw InputError("sequence has no answer positions");
    return ag::cross_entropy_rows(logits, rows, targets);
}

}  // namespace emo
