#pragma once

// The assembled model: frozen vision backbone and facial expert feeding the
// trainable clue aggregator, face info mining and projectors, followed by the
// adapter-tuned language model.

#include "emo/clue_aggregator.h"
#include "emo/face_info_mining.h"
#include "emo/facial_priors.h"
#include "emo/llm.h"
#include "emo/token_assembly.h"
#include "emo/tokenizer.h"
#include "emo/vision.h"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace emo {

enum class FimStrategy { FaceInfoMining, PoolConcat };
std::string to_string(FimStrategy s);
FimStrategy parse_fim_strategy(const std::string& s);

/// Architecture switches; each one is an ablation axis.
struct ModelToggles {
    bool facial_embedding = true;
    bool landmark_token = true;
    bool agr_prompt = true;
    bool lfattn = true;
    FimStrategy fim = FimStrategy::FaceInfoMining;
};

struct ModelConfig {
    int width = 32;  // shared channel width C
    int queries = 32;
    int aggregator_blocks = 2;
    int heads = 4;
    int fim_depth = 1;
    int projector_depth = 2;
    double fps = 1.0;
    VisionConfig vision;
    bool train_vision = false;  // the backbone is frozen unless set
    ToyExpertConfig expert;
    std::string expert_weights = "toy";
    LlmConfig llm;  // vocab_size is taken from the tokenizer
    AdapterConfig adapters;
    bool use_adapters = true;
    std::uint64_t seed = 5;  // trainable-module initialization
    ModelToggles toggles;
};

void to_json(nlohmann::json& j, const ModelToggles& t);
void from_json(const nlohmann::json& j, ModelToggles& t);
void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Frozen per-frame inputs: backbone tokens and expert outputs.
struct FrameFeatures {
    ag::Mat visual;  // N x C
    Image vision_input;  // backbone input, kept only when the backbone trains
    ag::Mat facial;  // N^F x expert channels
    LandmarkSet landmarks;
    AGRAttributes agr;
    ag::Mask regions;  // R x N^F
    bool face_fallback = false;
};

struct MediaFeatures {
    std::vector<FrameFeatures> frames;
    bool face_fallback() const;
};

class EmoLlama {
public:
    EmoLlama(const ModelConfig& cfg, Tokenizer tokenizer);

    /// Decodes the media, samples frames and runs the frozen encoders.
    MediaFeatures extract(const std::filesystem::path& media, Modality modality, const std::string& media_id) const;
    /// extract() memoized by media id.
    const MediaFeatures& features(const std::filesystem::path& media, Modality modality, const std::string& media_id);

    /// Per-frame token triples; the instruction conditions the clue aggregator.
    std::vector<FrameTokenTriple> frame_tokens(const MediaFeatures& media, const std::string& instruction) const;

    TokenSequence build_sequence(const MediaFeatures& media, const std::vector<Turn>& turns,
                                 const std::string& description = {}) const;
    /// Mean answer-token NLL for a conversation whose last turn is the assistant's.
    ag::Var loss(const MediaFeatures& media, const std::vector<Turn>& turns, const std::string& description = {}) const;

    /// Greedy decoding after a single human question.
    std::string generate(const MediaFeatures& media, const std::string& question, const std::string& description = {},
                         int max_new_tokens = 8) const;

    nn::ParamList trainable() const;
    nn::ParamList frozen() const;
    /// SHA-256 over every frozen tensor (including the expert's fixed matrix).
    std::string frozen_hash() const;

    void save_weights(const std::filesystem::path& path) const;
    /// Loads trainable tensors by name; shapes must match.
    void load_weights(const std::filesystem::path& path);

    const ModelConfig& config() const { return cfg_; }
    const Tokenizer& tokenizer() const { return tok_; }
    const FacialExpert& expert() const { return *expert_; }
    FaceInfoMining& fim() { return fim_; }
    TinyLlm& llm() { return llm_; }

private:
    ag::Var aligned_facial(const FrameFeatures& f) const;
    ag::Var enhanced_token(const FrameFeatures& f, const ag::Var& visual, const ag::Var& facial) const;

    ModelConfig cfg_;
    Tokenizer tok_;
    VisionBackbone backbone_;
    std::unique_ptr<FacialExpert> expert_;
    std::shared_ptr<FaceCropper> cropper_;
    nn::Linear align_;  // expert channels -> C, only when they differ
    bool has_align_ = false;
    ClueAggregator aggregator_;
    FaceInfoMining fim_;
    FrameProjector projector_;
    TinyLlm llm_;

    std::mutex cache_mu_;
    std::map<std::string, MediaFeatures> cache_;
};

/// Hex SHA-256 of the names, shapes and raw values of the given tensors.
std::string hash_params(const nn::ParamList& params, const std::vector<ag::Mat>& extra = {});

void write_params(const std::filesystem::path& path, const nn::ParamList& params);
/// Overwrites matching tensors in `params`. Throws IoError on missing names or shape mismatches.
void read_params(const std::filesystem::path& path, const nn::ParamList& params);

}  // namespace emo
