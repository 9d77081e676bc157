#include "emo/pipeline.h"

#include "emo/errors.h"
#include "emo/util.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>

namespace emo {

using nlohmann::json;

void to_json(json& j, const RunConfig& c) {
    j = json{{"model", c.model},
             {"train", c.train},
             {"dataset", c.dataset},
             {"instructions", c.instructions},
             {"with_description", c.with_description},
             {"seed", c.seed}};
}

void from_json(const json& j, RunConfig& c) {
    if (!j.is_object()) throw ConfigError("run config: expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        static const std::vector<std::string> known{"model", "train", "dataset", "instructions", "with_description",
                                                    "seed"};
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw ConfigError("run config: unknown key '" + it.key() + "'");
        }
    }
    try {
        if (j.contains("model")) from_json(j.at("model"), c.model);
        if (j.contains("train")) from_json(j.at("train"), c.train);
        c.dataset = j.value("dataset", c.dataset);
        c.instructions = j.value("instructions", c.instructions);
        c.with_description = j.value("with_description", c.with_description);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    c.model.seed = c.seed;
    c.train.seed = c.seed;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    return j.get<RunConfig>();
}

const std::vector<std::string>& toggle_names() {
    static const std::vector<std::string> names{"facial-embedding", "landmark-token", "agr-prompt",
                                                "lfattn",           "sampler",        "category",
                                                "conversation",     "description",    "pool-concat"};
    return names;
}

namespace {

bool* toggle_slot(RunConfig& cfg, const std::string& name) {
    if (name == "facial-embedding") return &cfg.model.toggles.facial_embedding;
    if (name == "landmark-token") return &cfg.model.toggles.landmark_token;
    if (name == "agr-prompt") return &cfg.model.toggles.agr_prompt;
    if (name == "lfattn") return &cfg.model.toggles.lfattn;
    if (name == "sampler") return &cfg.train.sampler;
    if (name == "category") return &cfg.train.use_category;
    if (name == "conversation") return &cfg.train.use_conversation;
    if (name == "description") return &cfg.with_description;
    return nullptr;
}

}  // namespace

void set_toggle(RunConfig& cfg, const std::string& name, bool on) {
    if (name == "pool-concat") {
        cfg.model.toggles.fim = on ? FimStrategy::PoolConcat : FimStrategy::FaceInfoMining;
        return;
    }
    bool* slot = toggle_slot(cfg, name);
    if (!slot) throw ConfigError("unknown toggle '" + name + "'");
    *slot = on;
}

bool get_toggle(const RunConfig& cfg, const std::string& name) {
    if (name == "pool-concat") return cfg.model.toggles.fim == FimStrategy::PoolConcat;
    bool* slot = toggle_slot(const_cast<RunConfig&>(cfg), name);
    if (!slot) throw ConfigError("unknown toggle '" + name + "'");
    return *slot;
}

TrainRun train_run(const RunConfig& cfg, const DatasetIndex& ds, const std::vector<InstructionSample>& samples,
                   const std::filesystem::path& run_dir) {
    TrainRun run;
    run.model = std::make_unique<EmoLlama>(cfg.model, build_tokenizer(ds, samples));
    std::ofstream log;
    if (!run_dir.empty()) {
        std::filesystem::create_directories(run_dir);
        write_file_atomic(run_dir / "config.json", json(cfg).dump(2) + "\n");
        log.open(run_dir / "train_log.jsonl");
    }
    run.result = train(*run.model, ds, samples, cfg.train, run_dir, [&](long step, double loss) {
        if (log) log << json{{"step", step}, {"loss", loss}}.dump() << "\n";
        if (step % 50 == 0) spdlog::info("step {} loss {:.4f}", step, loss);
    });
    if (!run_dir.empty()) {
        save_checkpoint(run_dir / "checkpoint", *run.model, json(cfg), json{{"train", run.result}});
        json manifest{{"kind", "train"},
                      {"config", "config.json"},
                      {"log", "train_log.jsonl"},
                      {"checkpoint", "checkpoint"},
                      {"result", run.result}};
        write_file_atomic(run_dir / "manifest.json", manifest.dump(2) + "\n");
    }
    return run;
}

EvalResult eval_run(Responder& responder, const DatasetIndex& ds, const EvalOptions& opts,
                    const std::filesystem::path& out_dir, bool plot) {
    EvalResult res = run_eval(responder, ds, opts);
    if (!out_dir.empty()) {
        write_records(out_dir / "records.jsonl", res.records);
        write_report(out_dir / "report.json", res.report);
        if (plot) write_recall_plot(out_dir / "recall.png", res.report);
    }
    return res;
}

std::vector<RunConfig> sweep_configs(const RunConfig& base, const std::vector<std::string>& toggles) {
    for (const auto& t : toggles) (void)get_toggle(base, t);  // validates the names
    std::vector<RunConfig> out;
    const size_t n = toggles.size();
    for (size_t mask = 0; mask < (size_t{1} << n); ++mask) {
        RunConfig c = base;
        // Row 0 has every requested toggle on, matching the full model first.
        for (size_t i = 0; i < n; ++i) set_toggle(c, toggles[i], !((mask >> (n - 1 - i)) & 1));
        out.push_back(c);
    }
    return out;
}

std::vector<RunConfig> facial_prior_sweep(const RunConfig& base) {
    std::vector<RunConfig> out;
    for (int level = 0; level < 4; ++level) {
        RunConfig c = base;
        set_toggle(c, "facial-embedding", level >= 1);
        set_toggle(c, "landmark-token", level >= 2);
        set_toggle(c, "agr-prompt", level >= 3);
        out.push_back(c);
    }
    return out;
}

std::vector<AblationRow> run_ablation(const std::vector<RunConfig>& configs, const DatasetIndex& ds,
                                      const std::vector<InstructionSample>& samples, const EvalOptions& eval_opts) {
    std::vector<AblationRow> rows;
    for (const auto& cfg : configs) {
        AblationRow row;
        for (const auto& t : toggle_names()) row.toggles[t] = get_toggle(cfg, t);
        TrainRun run = train_run(cfg, ds, samples);
        ModelResponder responder(*run.model);
        EvalOptions opts = eval_opts;
        opts.with_description = cfg.with_description;
        row.report = run_eval(responder, ds, opts).report;
        row.final_loss = run.result.final_loss;
        rows.push_back(std::move(row));
    }
    return rows;
}

json ablation_table(const std::vector<AblationRow>& rows) {
    json columns = toggle_names();
    for (const char* c : {"uar", "war", "acc", "unparseable", "final_loss"}) columns.push_back(c);
    json table = json::array();
    for (const auto& r : rows) {
        json row;
        for (const auto& [k, v] : r.toggles) row[k] = v;
        row["uar"] = r.report.uar;
        row["war"] = r.report.war;
        row["acc"] = r.report.acc;
        row["unparseable"] = r.report.unparseable_count;
        row["final_loss"] = r.final_loss;
        table.push_back(row);
    }
    return json{{"columns", columns}, {"rows", table}};
}

}  // namespace emo
