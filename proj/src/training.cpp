#include "emo/training.h"

#include "emo/errors.h"
#include "emo/evaluation.h"
#include "emo/util.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace emo {

using nlohmann::json;

std::vector<double> compute_sampler_weights(const std::vector<std::string>& labels) {
    if (labels.empty()) throw InputError("sampler weights need at least one sample");
    std::map<std::string, long> count;
    for (const auto& l : labels) ++count[l];
    std::vector<double> w;
    w.reserve(labels.size());
    for (const auto& l : labels) w.push_back(1.0 / static_cast<double>(count[l]));
    return w;
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"epochs", c.epochs},
             {"lr", c.lr},
             {"weight_decay", c.weight_decay},
             {"beta1", c.beta1},
             {"beta2", c.beta2},
             {"eps", c.eps},
             {"clip_norm", c.clip_norm},
             {"batch_size", c.batch_size},
             {"sampler", c.sampler},
             {"use_category", c.use_category},
             {"use_conversation", c.use_conversation},
             {"category_share", c.category_share},
             {"max_steps", c.max_steps},
             {"probe_samples", c.probe_samples},
             {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
    if (!j.is_object()) throw ConfigError("train: expected an object");
    static const std::vector<std::string> known{"epochs",     "lr",           "weight_decay",     "beta1",
                                                "beta2",      "eps",          "clip_norm",        "batch_size",
                                                "sampler",    "use_category", "use_conversation", "category_share",
                                                "max_steps",  "probe_samples", "seed"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("train: unknown key '" + it.key() + "'");
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.eps = j.value("eps", c.eps);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.sampler = j.value("sampler", c.sampler);
        c.use_category = j.value("use_category", c.use_category);
        c.use_conversation = j.value("use_conversation", c.use_conversation);
        c.category_share = j.value("category_share", c.category_share);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.probe_samples = j.value("probe_samples", c.probe_samples);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
    if (c.epochs < 0 || c.batch_size < 1 || c.lr <= 0 || c.category_share < 0 || c.category_share > 1) {
        throw ConfigError("train: epochs >= 0, batch_size >= 1, lr > 0 and category_share in [0,1] required");
    }
}

AdamW::AdamW(nn::ParamList params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.push_back(ag::Mat::Zero(p.var.rows(), p.var.cols()));
        v_.push_back(ag::Mat::Zero(p.var.rows(), p.var.cols()));
    }
}

double AdamW::step(double grad_scale) {
    double sq = 0.0;
    std::vector<ag::Mat> grads;
    grads.reserve(params_.size());
    for (const auto& p : params_) {
        grads.push_back(p.var.grad() * grad_scale);
        sq += grads.back().squaredNorm();
    }
    const double norm = std::sqrt(sq);
    const double clip = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        ag::Var v = params_[i].var;
        const ag::Mat g = grads[i] * clip;
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        ag::Mat& w = v.mutable_value();
        w *= 1.0 - cfg_.lr * cfg_.weight_decay;
        w.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
        v.zero_grad();
    }
    return norm;
}

void to_json(json& j, const TrainResult& r) {
    j = json{{"initial_loss", r.initial_loss},
             {"final_loss", r.final_loss},
             {"steps", r.steps},
             {"samples_seen", r.samples_seen},
             {"frozen_hash_before", r.frozen_hash_before},
             {"frozen_hash_after", r.frozen_hash_after}};
}

namespace {

const MediaFeatures& media_of(EmoLlama& model, const DatasetIndex& ds, const InstructionSample& s) {
    return model.features(ds.root / s.media, s.modality, s.media);
}

// Stops the tape from recording trainable parameters while alive.
class NoGrad {
public:
    explicit NoGrad(const EmoLlama& m) : params_(m.trainable()) { nn::set_requires_grad(params_, false); }
    ~NoGrad() { nn::set_requires_grad(params_, true); }

private:
    nn::ParamList params_;
};

std::vector<InstructionSample> probe_set(std::vector<InstructionSample> pool, int n) {
    std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    if (n <= 0 || static_cast<int>(pool.size()) <= n) return pool;
    std::vector<InstructionSample> out;
    const double stride = static_cast<double>(pool.size()) / n;
    for (int i = 0; i < n; ++i) out.push_back(pool[static_cast<size_t>(i * stride)]);
    return out;
}

// Draws from one instruction stream: weighted with replacement, or a
// reshuffled pass over the stream.
class Stream {
public:
    Stream(std::vector<const InstructionSample*> items, const std::vector<double>* weights)
        : items_(std::move(items)) {
        if (weights) dist_ = std::discrete_distribution<size_t>(weights->begin(), weights->end());
        weighted_ = weights != nullptr;
    }
    bool empty() const { return items_.empty(); }
    size_t size() const { return items_.size(); }
    const InstructionSample& next(std::mt19937_64& rng) {
        if (weighted_) return *items_[dist_(rng)];
        if (pos_ == order_.size()) {
            order_.resize(items_.size());
            std::iota(order_.begin(), order_.end(), size_t{0});
            std::shuffle(order_.begin(), order_.end(), rng);
            pos_ = 0;
        }
        return *items_[order_[pos_++]];
    }

private:
    std::vector<const InstructionSample*> items_;
    std::discrete_distribution<size_t> dist_;
    bool weighted_ = false;
    std::vector<size_t> order_;
    size_t pos_ = 0;
};

void dump_batch(const std::filesystem::path& dir, const std::vector<const InstructionSample*>& batch, long step,
                double loss) {
    if (dir.empty()) return;
    json j{{"step", step}, {"loss", std::isnan(loss) ? "nan" : (loss > 0 ? "inf" : "-inf")}};
    for (const auto* s : batch) j["samples"].push_back(*s);
    write_file_atomic(dir / "nonfinite_batch.json", j.dump(2) + "\n");
}

}  // namespace

double mean_loss(EmoLlama& model, const DatasetIndex& ds, const std::vector<InstructionSample>& samples) {
    if (samples.empty()) return 0.0;
    NoGrad guard(model);
    double total = 0.0;
    for (const auto& s : samples) total += model.loss(media_of(model, ds, s), s.turns).item();
    return total / static_cast<double>(samples.size());
}

TrainResult train(EmoLlama& model, const DatasetIndex& ds, const std::vector<InstructionSample>& samples,
                  const TrainConfig& cfg, const std::filesystem::path& dump_dir, const StepCallback& on_step) {
    std::vector<const InstructionSample*> cat, conv;
    std::vector<InstructionSample> used;
    for (const auto& s : samples) {
        if (s.kind == InstructionKind::Category && cfg.use_category) cat.push_back(&s);
        if (s.kind == InstructionKind::Conversation && cfg.use_conversation) conv.push_back(&s);
    }
    if (cat.empty() && conv.empty()) throw InputError("no instruction samples of the enabled kinds");
    for (const auto* s : cat) used.push_back(*s);
    for (const auto* s : conv) used.push_back(*s);

    std::vector<std::string> cat_labels;
    for (const auto* s : cat) cat_labels.push_back(s->label);
    std::vector<double> weights;
    if (cfg.sampler && !cat.empty()) weights = compute_sampler_weights(cat_labels);
    Stream cat_stream(cat, cfg.sampler && !cat.empty() ? &weights : nullptr);
    Stream conv_stream(conv, nullptr);

    TrainResult res;
    res.frozen_hash_before = model.frozen_hash();
    const auto probe = probe_set(used, cfg.probe_samples);
    res.initial_loss = mean_loss(model, ds, probe);

    const double share = conv.empty() ? 1.0 : (cat.empty() ? 0.0 : cfg.category_share);
    const long draws_per_epoch = static_cast<long>(cat.size() + conv.size());
    long total_draws = draws_per_epoch * cfg.epochs;
    if (cfg.max_steps >= 0) total_draws = std::min(total_draws, static_cast<long>(cfg.max_steps) * cfg.batch_size);

    std::mt19937_64 rng(cfg.seed);
    AdamW opt(model.trainable(), cfg);
    std::vector<const InstructionSample*> batch;
    double batch_loss = 0.0;
    for (long i = 0; i < total_draws; ++i) {
        // Deterministic interleave: draw i comes from the category stream when
        // the running category quota ticks over.
        const bool from_cat = std::floor((i + 1) * share) > std::floor(i * share);
        const InstructionSample& s = from_cat ? cat_stream.next(rng) : conv_stream.next(rng);
        batch.push_back(&s);
        ag::Var loss = model.loss(media_of(model, ds, s), s.turns);
        const double value = loss.item();
        if (!std::isfinite(value)) {
            dump_batch(dump_dir, batch, res.steps, value);
            throw NumericError("non-finite loss at step " + std::to_string(res.steps) + " on sample " + s.id);
        }
        loss.backward();
        batch_loss += value;
        ++res.samples_seen;
        if (static_cast<int>(batch.size()) == cfg.batch_size || i + 1 == total_draws) {
            const double n = static_cast<double>(batch.size());
            opt.step(1.0 / n);
            res.step_losses.push_back(batch_loss / n);
            if (on_step) on_step(res.steps, batch_loss / n);
            ++res.steps;
            batch.clear();
            batch_loss = 0.0;
        }
    }
    res.final_loss = mean_loss(model, ds, probe);
    res.frozen_hash_after = model.frozen_hash();
    if (res.frozen_hash_after != res.frozen_hash_before) throw Error("frozen weights changed during training");
    return res;
}

void save_checkpoint(const std::filesystem::path& dir, const EmoLlama& model, const json& config_snapshot,
                     const json& extra_manifest) {
    namespace fs = std::filesystem;
    auto tmp = dir;
    tmp += ".partial";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    model.save_weights(tmp / "weights.bin");
    model.tokenizer().save(tmp / "tokenizer.json");
    json cfg = config_snapshot;
    cfg["model"] = model.config();
    write_file_atomic(tmp / "config.json", cfg.dump(2) + "\n");
    json manifest = extra_manifest.is_object() ? extra_manifest : json::object();
    manifest["files"] = {"weights.bin", "tokenizer.json", "config.json"};
    manifest["frozen_hash"] = model.frozen_hash();
    manifest["trainable_parameters"] = nn::parameter_count(model.trainable());
    manifest["weights_sha256"] = sha256_hex(read_file(tmp / "weights.bin"));
    write_file_atomic(tmp / "manifest.json", manifest.dump(2) + "\n");
    std::error_code ec;
    fs::remove_all(dir, ec);
    fs::rename(tmp, dir, ec);
    if (ec) throw IoError("cannot move checkpoint into " + dir.string() + ": " + ec.message());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    LoadedCheckpoint out;
    try {
        out.config = json::parse(read_file(dir / "config.json"));
        out.manifest = json::parse(read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint " + dir.string() + ": " + e.what());
    }
    ModelConfig mc = out.config.at("model").get<ModelConfig>();
    out.model = std::make_unique<EmoLlama>(mc, Tokenizer::load(dir / "tokenizer.json"));
    out.model->load_weights(dir / "weights.bin");
    if (out.manifest.value("frozen_hash", "") != out.model->frozen_hash()) {
        throw IoError("checkpoint " + dir.string() + " was trained against different frozen weights");
    }
    return out;
}

Tokenizer build_tokenizer(const DatasetIndex& ds, const std::vector<InstructionSample>& samples) {
    std::vector<std::string> texts{kAgrPromptPrefix, kClosedSetGuidance, "My choice is:",
                                   default_question(Modality::Image), default_question(Modality::Video)};
    texts.insert(texts.end(), ds.classes.begin(), ds.classes.end());
    for (const auto* vocab : {&AgrVocabulary::ages(), &AgrVocabulary::genders(), &AgrVocabulary::races()})
        texts.insert(texts.end(), vocab->begin(), vocab->end());
    for (auto m : {Modality::Image, Modality::Video}) {
        const auto& pool = category_question_pool(m);
        texts.insert(texts.end(), pool.begin(), pool.end());
    }
    texts.push_back(build_closed_set_prompt(ds.classes, "").text());
    for (const auto& r : ds.records) {
        auto caps = ds.captions(r);
        texts.insert(texts.end(), caps.begin(), caps.end());
    }
    for (const auto& s : samples)
        for (const auto& t : s.turns) texts.push_back(t.text);
    Tokenizer tok;
    tok.fit(texts);
    return tok;
}

}  // namespace emo
