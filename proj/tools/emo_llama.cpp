// emo-llama: data generation, training, evaluation and ablation sweeps.
//
// Exit codes: 0 success, 2 config error, 3 runtime error, 4 partial
// completion (some evaluation samples failed). Errors are also printed to
// stderr as {"error": {"kind", "message"}}.

#include "emo/errors.h"
#include "emo/fixtures.h"
#include "emo/pipeline.h"
#include "emo/util.h"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emo;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitPartial = 4;

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

void ensure_writable_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
    const fs::path probe = dir / ".write-probe";
    {
        std::ofstream out(probe);
        if (!out) throw IoError("output directory " + dir.string() + " is not writable");
    }
    fs::remove(probe, ec);
}

void write_run_manifest(const fs::path& dir, const std::string& command, json body) {
    body["command"] = command;
    body["created_by"] = "emo-llama";
    write_file_atomic(dir / "manifest.json", body.dump(2) + "\n");
}

std::string now_tag() {
    using namespace std::chrono;
    return std::to_string(duration_cast<seconds>(system_clock::now().time_since_epoch()).count());
}

// --- gen --------------------------------------------------------------------------

struct GenArgs {
    std::string data, fixtures_preset, out = "data";
    bool mock = false;
    std::string replay, endpoint, api_key_env = "EMO_GEN_API_KEY";
    double rps = 2.0;
    int retries = 2, concurrency = 2;
    std::string kinds = "category,conversation";
    std::uint64_t seed = 1;
};

int cmd_gen(const GenArgs& a) {
    ensure_writable_dir(a.out);
    DatasetIndex ds;
    if (!a.fixtures_preset.empty()) {
        auto opts = fixtures::preset(a.fixtures_preset);
        opts.seed = a.seed;
        ds = fixtures::generate(fs::path(a.out) / "dataset", opts);
    } else if (!a.data.empty()) {
        ds = read_dataset(a.data);
    } else {
        throw ConfigError("gen needs --data or --fixtures");
    }
    std::unique_ptr<GenerationClient> client;
    const int sources = int(a.mock) + int(!a.replay.empty()) + int(!a.endpoint.empty());
    if (sources > 1) throw ConfigError("choose one of --mock, --replay, --endpoint");
    if (!a.replay.empty()) {
        client = std::make_unique<ReplayClient>(a.replay);
    } else if (!a.endpoint.empty()) {
        HttpClientConfig hc;
        hc.endpoint = a.endpoint;
        hc.api_key_env = a.api_key_env;
        hc.max_requests_per_second = a.rps;
        hc.retries = a.retries;
        client = std::make_unique<HttpClient>(hc);
    } else {
        client = std::make_unique<MockClient>(a.seed);
    }
    GenOptions go;
    go.category = go.conversation = false;
    for (const auto& k : split_list(a.kinds)) {
        if (parse_instruction_kind(k) == InstructionKind::Category) go.category = true;
        else go.conversation = true;
    }
    go.seed = a.seed;
    go.retries = a.retries;
    go.concurrency = a.concurrency;
    GenerationLog log;
    const auto samples = generate_instructions(ds, *client, go, &log);
    const Manifest m = validate_and_write(samples, ds.classes, fs::path(a.out) / "instructions.jsonl");
    json j = m;
    j["dataset"] = fs::absolute(ds.root).string();
    j["instructions"] = "instructions.jsonl";
    j["skipped"] = json::array();
    for (const auto& [id, why] : log.skipped) j["skipped"].push_back({{"id", id}, {"reason", why}});
    write_run_manifest(a.out, "gen", j);
    std::cout << j.dump(2) << "\n";
    return 0;
}

// --- train ------------------------------------------------------------------------

struct TrainArgs {
    std::string config, data, instructions, out;
    std::optional<std::uint64_t> seed;
    bool no_sampler = false;
    std::optional<int> epochs, max_steps;
    std::optional<double> lr;
    std::vector<std::string> disable;
};

RunConfig resolve_config(const std::string& config, const std::string& data, const std::string& instructions,
                         std::optional<std::uint64_t> seed) {
    RunConfig cfg = config.empty() ? RunConfig{} : load_run_config(config);
    if (!data.empty()) cfg.dataset = data;
    if (!instructions.empty()) cfg.instructions = instructions;
    if (seed) {
        cfg.seed = *seed;
        cfg.model.seed = *seed;
        cfg.train.seed = *seed;
    }
    if (cfg.dataset.empty()) throw ConfigError("no dataset: pass --data or set \"dataset\" in the config");
    return cfg;
}

std::vector<InstructionSample> load_samples(const RunConfig& cfg) {
    if (cfg.instructions.empty()) throw ConfigError("no instructions: pass --instructions or set it in the config");
    return read_instructions(cfg.instructions);
}

int cmd_train(const TrainArgs& a) {
    RunConfig cfg = resolve_config(a.config, a.data, a.instructions, a.seed);
    if (a.no_sampler) cfg.train.sampler = false;
    if (a.epochs) cfg.train.epochs = *a.epochs;
    if (a.max_steps) cfg.train.max_steps = *a.max_steps;
    if (a.lr) cfg.train.lr = *a.lr;
    for (const auto& t : a.disable) set_toggle(cfg, t, false);
    const fs::path out = a.out.empty() ? fs::path("runs") / ("train-" + now_tag()) : fs::path(a.out);
    ensure_writable_dir(out);
    const DatasetIndex ds = read_dataset(cfg.dataset);
    const auto samples = load_samples(cfg);
    TrainRun run = train_run(cfg, ds, samples, out);
    json j{{"run_dir", out.string()}, {"result", run.result}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

// --- eval -------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint, scripted, data, out, mode = "in-domain", split = "test";
    bool with_description = false, plot = false;
    std::uint64_t seed = 1;
};

int cmd_eval(const EvalArgs& a) {
    if (a.checkpoint.empty() == a.scripted.empty()) throw ConfigError("eval needs exactly one of --checkpoint, --scripted");
    EvalOptions opts;
    opts.mode = parse_eval_mode(a.mode);
    opts.with_description = a.with_description;
    opts.split = a.split;
    std::string data = a.data;
    std::unique_ptr<Responder> responder;
    LoadedCheckpoint ckpt;
    if (!a.checkpoint.empty()) {
        ckpt = load_checkpoint(a.checkpoint);
        if (data.empty()) data = ckpt.config.value("dataset", "");
        responder = std::make_unique<ModelResponder>(*ckpt.model);
    } else if (a.scripted == "oracle") {
        responder = std::make_unique<OracleResponder>();
    } else if (a.scripted == "random") {
        responder = std::make_unique<RandomResponder>(a.seed);
    } else if (a.scripted == "text-sensitive") {
        responder = std::make_unique<TextSensitiveResponder>();
    } else {
        throw ConfigError("unknown scripted model '" + a.scripted + "'");
    }
    if (data.empty()) throw ConfigError("eval needs --data");
    const fs::path out = a.out.empty() ? fs::path("runs") / ("eval-" + now_tag()) : fs::path(a.out);
    ensure_writable_dir(out);
    const DatasetIndex ds = read_dataset(data);
    EvalResult res = eval_run(*responder, ds, opts, out, a.plot);
    json snapshot{{"checkpoint", a.checkpoint}, {"scripted", a.scripted}, {"dataset", data},
                  {"mode", a.mode},             {"split", a.split},       {"with_description", a.with_description},
                  {"seed", a.seed}};
    write_file_atomic(out / "config.json", snapshot.dump(2) + "\n");
    json files = {"config.json", "records.jsonl", "report.json"};
    if (a.plot) files.push_back("recall.png");
    write_run_manifest(out, "eval", {{"files", files}, {"report", res.report}, {"failures", res.failures}});
    std::cout << json(res.report).dump(2) << "\n";
    if (res.failures > 0) {
        std::cerr << json{{"error", {{"kind", "partial"}, {"message", std::to_string(res.failures) +
                                                                          " samples could not be evaluated"}}}}
                         .dump()
                  << "\n";
        return kExitPartial;
    }
    return 0;
}

// --- ablate -----------------------------------------------------------------------

struct AblateArgs {
    std::string config, data, instructions, out, toggles, sweep, mode = "in-domain";
    std::optional<std::uint64_t> seed;
};

int cmd_ablate(const AblateArgs& a) {
    RunConfig base = resolve_config(a.config, a.data, a.instructions, a.seed);
    std::vector<RunConfig> configs;
    if (a.sweep == "facial-priors") {
        configs = facial_prior_sweep(base);
    } else if (!a.sweep.empty()) {
        throw ConfigError("unknown sweep '" + a.sweep + "'");
    } else {
        configs = sweep_configs(base, split_list(a.toggles));
    }
    const fs::path out = a.out.empty() ? fs::path("runs") / ("ablate-" + now_tag()) : fs::path(a.out);
    ensure_writable_dir(out);
    write_file_atomic(out / "config.json",
                      json{{"base", base}, {"toggles", split_list(a.toggles)}, {"sweep", a.sweep}, {"mode", a.mode}}
                              .dump(2) +
                          "\n");
    const DatasetIndex ds = read_dataset(base.dataset);
    EvalOptions opts;
    opts.mode = parse_eval_mode(a.mode);
    const auto rows = run_ablation(configs, ds, load_samples(base), opts);
    const json table = ablation_table(rows);
    write_file_atomic(out / "table.json", table.dump(2) + "\n");
    write_run_manifest(out, "ablate", {{"files", {"config.json", "table.json"}}, {"rows", rows.size()}});
    std::cout << table.dump(2) << "\n";
    return 0;
}

// --- fixtures ---------------------------------------------------------------------

int cmd_fixtures(const std::string& preset, const std::string& out, std::uint64_t seed) {
    ensure_writable_dir(out);
    auto opts = fixtures::preset(preset);
    opts.seed = seed;
    const DatasetIndex ds = fixtures::generate(out, opts);
    std::cout << json{{"dataset", out}, {"records", ds.records.size()}, {"classes", ds.classes}}.dump(2) << "\n";
    return 0;
}

int report_error(const char* kind, const std::string& msg, int code) {
    std::cerr << json{{"error", {{"kind", kind}, {"message", msg}}}}.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"emo-llama: facial-expression instruction tuning at desk scale"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate instruction data");
    g->add_option("--data", gen.data, "Existing dataset root");
    g->add_option("--fixtures", gen.fixtures_preset, "Generate a fixture dataset first (tiny, emotion7, imbalanced, video)");
    g->add_option("--out", gen.out, "Output directory");
    g->add_flag("--mock", gen.mock, "Use the offline template client (default)");
    g->add_option("--replay", gen.replay, "Directory of recorded responses");
    g->add_option("--endpoint", gen.endpoint, "Live generator endpoint URL");
    g->add_option("--api-key-env", gen.api_key_env, "Environment variable holding the API key");
    g->add_option("--rps", gen.rps, "Maximum requests per second for the live client");
    g->add_option("--retries", gen.retries, "Retries per request");
    g->add_option("--concurrency", gen.concurrency, "Requests in flight");
    g->add_option("--kinds", gen.kinds, "Comma list of category,conversation");
    g->add_option("--seed", gen.seed, "Seed");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Instruction-tune the model");
    t->add_option("--config", tr.config, "Run config JSON");
    t->add_option("--data", tr.data, "Dataset root");
    t->add_option("--instructions", tr.instructions, "Instruction JSONL");
    t->add_option("--out", tr.out, "Run directory");
    t->add_option("--seed", tr.seed, "Seed for trainable weights and sampling");
    t->add_flag("--no-sampler", tr.no_sampler, "Disable inverse-frequency sampling");
    t->add_option("--epochs", tr.epochs, "Epochs");
    t->add_option("--max-steps", tr.max_steps, "Step cap");
    t->add_option("--lr", tr.lr, "Learning rate");
    t->add_option("--disable", tr.disable, "Toggles to switch off")->delimiter(',');

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Closed-set evaluation");
    e->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory");
    e->add_option("--scripted", ev.scripted, "Scripted model: oracle, random, text-sensitive");
    e->add_option("--data", ev.data, "Dataset root");
    e->add_option("--out", ev.out, "Output directory");
    e->add_option("--mode", ev.mode, "in-domain, cross-image-to-video, cross-video-to-image, zero-shot-extra");
    e->add_option("--split", ev.split, "Dataset split");
    e->add_flag("--with-description", ev.with_description, "Inject media descriptions after the question");
    e->add_flag("--plot", ev.plot, "Write a per-class recall chart");
    e->add_option("--seed", ev.seed, "Seed for the random scripted model");

    AblateArgs ab;
    auto* a = app.add_subcommand("ablate", "Train and evaluate a cross product of toggles");
    a->add_option("--config", ab.config, "Base run config JSON");
    a->add_option("--data", ab.data, "Dataset root");
    a->add_option("--instructions", ab.instructions, "Instruction JSONL");
    a->add_option("--out", ab.out, "Output directory");
    a->add_option("--toggles", ab.toggles, "Comma list of toggles to sweep");
    a->add_option("--sweep", ab.sweep, "Named sweep: facial-priors");
    a->add_option("--mode", ab.mode, "Evaluation mode");
    a->add_option("--seed", ab.seed, "Seed");

    std::string fx_preset = "tiny", fx_out = "fixtures";
    std::uint64_t fx_seed = 1;
    auto* f = app.add_subcommand("fixtures", "Write a synthetic fixture dataset");
    f->add_option("--preset", fx_preset, "tiny, emotion7, imbalanced, video");
    f->add_option("--out", fx_out, "Output directory");
    f->add_option("--seed", fx_seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        return report_error("config", ex.what(), kExitConfig);
    }
    spdlog::set_default_logger(spdlog::stderr_color_mt("emo"));
    spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);

    try {
        if (*g) return cmd_gen(gen);
        if (*t) return cmd_train(tr);
        if (*e) return cmd_eval(ev);
        if (*a) return cmd_ablate(ab);
        if (*f) return cmd_fixtures(fx_preset, fx_out, fx_seed);
    } catch (const ConfigError& ex) {
        return report_error("config", ex.what(), kExitConfig);
    } catch (const Error& ex) {
        return report_error(ex.kind(), ex.what(), kExitRuntime);
    } catch (const std::exception& ex) {
        return report_error("runtime", ex.what(), kExitRuntime);
    }
    return 0;
}
