#pragma once

// Projection of per-frame features into LLM token space, the attribute
// prompt, and assembly of the full autoregressive sequence with its answer mask.

#include "emo/facial_priors.h"
#include "emo/nn.h"
#include "emo/tokenizer.h"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace emo {

struct ProjectorConfig {
    int context_in = 64;   // C
    int visual_in = 64;    // C, or 2C for the pool-and-concat baseline
    int landmark_count = landmarks::kCount;
    int llm_width = 64;    // D
    int depth = 2;         // linear layers per projector
};

/// H^T, H^V, H^L for one frame, each 1 x D. `landmark` is undefined when the
/// landmark token is switched off.
struct FrameTokenTriple {
    ag::Var context;
    ag::Var visual;
    ag::Var landmark;
};

/// Three independent MLPs (no weight sharing).
class FrameProjector {
public:
    FrameProjector() = default;
    FrameProjector(const ProjectorConfig& cfg, nn::Rng& rng);

    FrameTokenTriple project(const ag::Var& context, const ag::Var& enhanced, const LandmarkSet* landmarks) const;

    nn::Mlp& context_mlp() { return context_; }
    nn::Mlp& visual_mlp() { return visual_; }
    nn::Mlp& landmark_mlp() { return landmark_; }
    const ProjectorConfig& config() const { return cfg_; }
    void collect(nn::ParamList& out, const std::string& prefix) const;

private:
    ProjectorConfig cfg_;
    nn::Mlp context_, visual_, landmark_;
};

/// Flattened K x 2 landmark matrix as a 1 x 2K row (x0, y0, x1, y1, ...).
ag::Mat flatten_landmarks(const LandmarkSet& lm);

extern const char* const kAgrPromptPrefix;

/// "<prefix> <age>, <gender>, <race>." or "" when disabled.
std::string build_agr_prompt(const AGRAttributes& agr, bool enabled = true);

enum class Segment { Frame, Prompt, Question, Answer };
const char* to_string(Segment s);

struct Turn {
    std::string role;  // "human" or "assistant"
    std::string text;
};

struct TokenSequence {
    ag::Var embeddings;             // L x D
    std::vector<int> token_ids;     // -1 at frame positions
    std::vector<bool> answer_mask;  // true on assistant tokens (including their <eos>)
    std::vector<Segment> segment_map;

    int length() const { return static_cast<int>(token_ids.size()); }
    int count(Segment s) const;
};

using EmbedFn = std::function<ag::Var(std::span<const int>)>;

/// Frames in timestamp order, then the attribute prompt, then the turns. A
/// description, when given, follows the first human turn and is tagged Prompt.
/// The final turn may be a human turn (inference: generation continues there).
TokenSequence assemble_sequence(const std::vector<FrameTokenTriple>& frames, const std::string& agr_prompt,
                                const std::vector<Turn>& turns, const Tokenizer& tok, const EmbedFn& embed,
                                const std::string& description = {});

/// Single question / optional answer form. Training callers pass an answer;
/// an empty answer string is an input error.
TokenSequence assemble_sequence(const std::vector<FrameTokenTriple>& frames, const std::string& agr_prompt,
                                const std::string& question, const std::optional<std::string>& answer,
                                const Tokenizer& tok, const EmbedFn& embed, const std::string& description = {});

/// Mean next-token negative log-likelihood over answer positions: logits row
/// j-1 predicts the token at position j.
ag::Var autoregressive_loss(const TokenSequence& seq, const ag::Var& logits);

}  // namespace emo
