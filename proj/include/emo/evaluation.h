#pragma once

// Closed-set prompting, answer parsing, recall metrics and the evaluation loop.

#include "emo/dataset.h"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace emo {

class EmoLlama;

extern const char* const kClosedSetGuidance;
extern const char* const kUnparseable;

struct ClosedSetPrompt {
    std::vector<std::string> classes;
    std::string guidance;
    std::string question;

    /// "<question> Choose from the list: a, b, c. <guidance>"
    std::string text() const;
};

/// Throws InputError on an empty list or duplicate classes.
ClosedSetPrompt build_closed_set_prompt(const std::vector<std::string>& classes, const std::string& question);

/// Default question for evaluation prompts.
std::string default_question(Modality m);

/// Class after "My choice is:", else the single class mentioned as a whole
/// word, else kUnparseable. Matching is case-insensitive.
std::string parse_choice(const std::string& response, const std::vector<std::string>& classes);

struct PredictionRecord {
    std::string id;
    std::string response;
    std::string parsed;  // a class or kUnparseable
    std::string gold;
    std::string description;  // injected description, if any
    std::string error;        // set when the media could not be processed
};

void to_json(nlohmann::json& j, const PredictionRecord& r);
void from_json(const nlohmann::json& j, PredictionRecord& r);

struct MetricsReport {
    std::vector<std::string> classes;
    double acc = 0.0;
    double uar = 0.0;
    double war = 0.0;
    std::map<std::string, double> per_class_recall;  // classes with gold samples only
    /// (K+1) x (K+1): rows gold, columns predicted; index K is UNPARSEABLE.
    std::vector<std::vector<long>> confusion;
    long unparseable_count = 0;
    long total = 0;
    std::string mode;
};

void to_json(nlohmann::json& j, const MetricsReport& r);

/// Throws InputError on empty records or golds outside the class set.
MetricsReport compute_metrics(const std::vector<PredictionRecord>& records, const std::vector<std::string>& classes);

enum class EvalMode { InDomain, CrossImageToVideo, CrossVideoToImage, ZeroShotExtra };
std::string to_string(EvalMode m);
EvalMode parse_eval_mode(const std::string& s);

/// Anything that answers a closed-set prompt about one media record.
class Responder {
public:
    virtual ~Responder() = default;
    virtual std::string respond(const DatasetIndex& ds, const MediaRecord& rec, const std::string& prompt,
                                const std::string& description) = 0;
};

/// Always answers "My choice is: <gold>".
class OracleResponder final : public Responder {
public:
    std::string respond(const DatasetIndex&, const MediaRecord& rec, const std::string&, const std::string&) override;
};

/// Uniform random class, seeded.
class RandomResponder final : public Responder {
public:
    explicit RandomResponder(std::uint64_t seed) : rng_(seed) {}
    std::string respond(const DatasetIndex& ds, const MediaRecord&, const std::string&, const std::string&) override;

private:
    std::mt19937_64 rng_;
};

/// Answers the gold class only when a description was injected; otherwise the first class.
class TextSensitiveResponder final : public Responder {
public:
    std::string respond(const DatasetIndex& ds, const MediaRecord& rec, const std::string&,
                        const std::string& description) override;
};

class ModelResponder final : public Responder {
public:
    explicit ModelResponder(EmoLlama& model, int max_new_tokens = 8) : model_(model), max_new_(max_new_tokens) {}
    std::string respond(const DatasetIndex& ds, const MediaRecord& rec, const std::string& prompt,
                        const std::string& description) override;

private:
    EmoLlama& model_;
    int max_new_;
};

struct EvalOptions {
    EvalMode mode = EvalMode::InDomain;
    bool with_description = false;
    std::string split = "test";
    std::string question;  // empty: default_question per modality
};

struct EvalResult {
    MetricsReport report;
    std::vector<PredictionRecord> records;  // sorted by id
    long failures = 0;                      // media that could not be processed
};

/// Records of the split that the mode evaluates on.
std::vector<MediaRecord> select_records(const DatasetIndex& ds, const EvalOptions& opts);

EvalResult run_eval(Responder& responder, const DatasetIndex& ds, const EvalOptions& opts);

void write_records(const std::filesystem::path& path, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_records(const std::filesystem::path& path);
void write_report(const std::filesystem::path& path, const MetricsReport& report);
/// Per-class recall bar chart (PNG).
void write_recall_plot(const std::filesystem::path& path, const MetricsReport& report);

}  // namespace emo
