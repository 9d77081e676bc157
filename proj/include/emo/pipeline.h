#pragma once

// End-to-end runs shared by the CLI and the acceptance checks: run
// configuration, train-then-checkpoint, evaluation into a run directory, and
// ablation sweeps over the feature toggles.

#include "emo/evaluation.h"
#include "emo/instruct_gen.h"
#include "emo/model.h"
#include "emo/training.h"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace emo {

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string dataset;       // dataset root (dataset.json + index.jsonl)
    std::string instructions;  // instruction JSONL
    bool with_description = false;
    std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Unknown keys are a ConfigError. `seed` also seeds the trainable modules and the sampler.
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// Toggle names accepted by set_toggle and sweeps.
const std::vector<std::string>& toggle_names();
/// facial-embedding, landmark-token, agr-prompt, lfattn, sampler, category,
/// conversation, description, pool-concat (the last flips the mining strategy).
void set_toggle(RunConfig& cfg, const std::string& name, bool on);
bool get_toggle(const RunConfig& cfg, const std::string& name);

struct TrainRun {
    std::unique_ptr<EmoLlama> model;
    TrainResult result;
};

/// Builds the tokenizer and model from the config and trains them. With a
/// non-empty run_dir, writes config.json, train_log.jsonl, checkpoint/ and manifest.json.
TrainRun train_run(const RunConfig& cfg, const DatasetIndex& ds, const std::vector<InstructionSample>& samples,
                   const std::filesystem::path& run_dir = {});

/// Evaluates and, with a non-empty out_dir, writes records.jsonl, report.json
/// and optionally recall.png.
EvalResult eval_run(Responder& responder, const DatasetIndex& ds, const EvalOptions& opts,
                    const std::filesystem::path& out_dir = {}, bool plot = false);

struct AblationRow {
    std::map<std::string, bool> toggles;
    MetricsReport report;
    double final_loss = 0.0;
};

/// One configuration per element of the cross product of `toggles` (on/off),
/// or the single base configuration when `toggles` is empty.
std::vector<RunConfig> sweep_configs(const RunConfig& base, const std::vector<std::string>& toggles);
/// Cumulative facial-prior rows: none, +facial embedding, +landmark token, +AGR prompt.
std::vector<RunConfig> facial_prior_sweep(const RunConfig& base);

std::vector<AblationRow> run_ablation(const std::vector<RunConfig>& configs, const DatasetIndex& ds,
                                      const std::vector<InstructionSample>& samples, const EvalOptions& eval_opts);

nlohmann::json ablation_table(const std::vector<AblationRow>& rows);

}  // namespace emo
