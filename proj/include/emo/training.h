#pragma once

// Instruction tuning: inverse-frequency sampling of category data, AdamW over
// the trainable set, and checkpoints.

#include "emo/instruct_gen.h"
#include "emo/model.h"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace emo {

/// weight(i) = 1 / count(label(i)). Throws InputError on an empty list.
std::vector<double> compute_sampler_weights(const std::vector<std::string>& labels);

struct TrainConfig {
    int epochs = 1;
    double lr = 2e-4;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;
    int batch_size = 1;  // gradients are averaged over this many samples per step
    bool sampler = true;
    bool use_category = true;
    bool use_conversation = true;
    double category_share = 0.5;  // fraction of draws taken from the category stream
    int max_steps = -1;           // caps the epoch budget when >= 0
    int probe_samples = 32;       // samples used for the before/after loss probe
    std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Decoupled-weight-decay Adam over a fixed parameter list.
class AdamW {
public:
    AdamW(nn::ParamList params, const TrainConfig& cfg);
    /// Applies one update from the accumulated gradients and clears them.
    /// Returns the gradient norm before clipping.
    double step(double grad_scale = 1.0);
    long steps() const { return t_; }

private:
    nn::ParamList params_;
    TrainConfig cfg_;
    std::vector<ag::Mat> m_, v_;
    long t_ = 0;
};

struct TrainResult {
    std::vector<double> step_losses;
    double initial_loss = 0.0;  // mean loss over the probe set before training
    double final_loss = 0.0;    // same probe set after training
    long steps = 0;
    long samples_seen = 0;
    std::string frozen_hash_before;
    std::string frozen_hash_after;
};

void to_json(nlohmann::json& j, const TrainResult& r);

using StepCallback = std::function<void(long step, double loss)>;

/// Trains `model` on instruction samples whose media live under `ds.root`.
/// A non-finite loss aborts with NumericError after writing
/// nonfinite_batch.json into `dump_dir` (when given).
TrainResult train(EmoLlama& model, const DatasetIndex& ds, const std::vector<InstructionSample>& samples,
                  const TrainConfig& cfg, const std::filesystem::path& dump_dir = {},
                  const StepCallback& on_step = nullptr);

/// Mean loss over the given samples with no tape.
double mean_loss(EmoLlama& model, const DatasetIndex& ds, const std::vector<InstructionSample>& samples);

/// Checkpoint directory: weights.bin, tokenizer.json, config.json, manifest.json.
/// Written into a temp sibling and renamed into place.
void save_checkpoint(const std::filesystem::path& dir, const EmoLlama& model, const nlohmann::json& config_snapshot,
                     const nlohmann::json& extra_manifest = {});

struct LoadedCheckpoint {
    std::unique_ptr<EmoLlama> model;
    nlohmann::json config;
    nlohmann::json manifest;
};

/// Rebuilds the model from the snapshot, loads the trainable weights and
/// verifies the frozen-weight hash.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

/// Tokenizer covering every text the model will read or write.
Tokenizer build_tokenizer(const DatasetIndex& ds, const std::vector<InstructionSample>& samples);

}  // namespace emo
