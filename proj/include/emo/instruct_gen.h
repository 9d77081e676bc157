#pragma once

// Instruction data: the JSONL sample format, generator clients (mock,
// replay, live HTTP), the image/video/category pipelines and the validating writer.

#include "emo/dataset.h"
#include "emo/image.h"
#include "emo/token_assembly.h"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace emo {

enum class InstructionKind { Category, Conversation };
std::string to_string(InstructionKind k);
InstructionKind parse_instruction_kind(const std::string& s);

struct InstructionSample {
    std::string id;
    Modality modality = Modality::Image;
    std::string media;  // relative to the dataset root
    std::string label;
    InstructionKind kind = InstructionKind::Category;
    std::vector<Turn> turns;
    std::optional<std::string> raw_generation;

    bool operator==(const InstructionSample& o) const;
};

void to_json(nlohmann::json& j, const InstructionSample& s);
/// Throws InputError on missing or mistyped fields.
void from_json(const nlohmann::json& j, InstructionSample& s);

/// Empty string when valid, otherwise the first violated rule.
std::string validate_sample(const InstructionSample& s, const std::vector<std::string>& classes);

struct GenerationRequest {
    std::string media_id;
    Modality modality = Modality::Image;
    std::string label;
    std::string template_id;
    std::vector<std::uint8_t> image_png;  // the image, or a video's central frame
    std::vector<std::string> captions;    // one per second, video only

    /// Prompt text sent to a generator.
    std::string prompt() const;
    /// Stable identity of the request (SHA-256 over every field).
    std::string key() const;
};

class GenerationClient {
public:
    virtual ~GenerationClient() = default;
    /// Raw generator text: "Human: ..." / "Assistant: ..." lines. Throws ClientError.
    virtual std::string complete(const GenerationRequest& req) = 0;
};

/// Deterministic label-conditioned templates; phrasing is seeded by (seed, media id).
class MockClient final : public GenerationClient {
public:
    explicit MockClient(std::uint64_t seed = 0) : seed_(seed) {}
    std::string complete(const GenerationRequest& req) override;

private:
    std::uint64_t seed_;
};

/// Serves recorded responses stored as <dir>/<request key>.txt.
class ReplayClient final : public GenerationClient {
public:
    explicit ReplayClient(std::filesystem::path dir) : dir_(std::move(dir)) {}
    std::string complete(const GenerationRequest& req) override;
    static void record(const std::filesystem::path& dir, const GenerationRequest& req, const std::string& response);

private:
    std::filesystem::path dir_;
};

struct HttpClientConfig {
    std::string endpoint;  // http(s)://host[:port]/path
    std::string api_key_env = "EMO_GEN_API_KEY";
    double max_requests_per_second = 2.0;
    int retries = 3;
    double backoff_seconds = 0.5;  // doubled after every failed attempt
    int timeout_seconds = 60;
};

/// POSTs {"prompt", "images": [base64 png], "template"} and reads {"text"} back.
/// Retries connection failures, 429 and 5xx with exponential backoff.
class HttpClient final : public GenerationClient {
public:
    explicit HttpClient(HttpClientConfig cfg);
    std::string complete(const GenerationRequest& req) override;

private:
    void wait_for_slot();

    HttpClientConfig cfg_;
    std::string scheme_host_;
    std::string path_;
    std::string api_key_;
    std::mutex mu_;
    std::chrono::steady_clock::time_point next_slot_{};
};

/// Parses "Human:" / "Assistant:" lines; continuation lines join the previous
/// turn. Throws InputError when the structure is not an alternating dialogue
/// that opens with a human turn and ends with an assistant turn.
std::vector<Turn> parse_turns(const std::string& raw);

struct GenerationLog {
    std::vector<std::pair<std::string, std::string>> skipped;  // (media id, reason)
};

/// Conversation samples for one image. Client failures are retried, then the
/// media is skipped and logged.
std::vector<InstructionSample> gen_image_instructions(const MediaRecord& rec, const Image& image,
                                                      GenerationClient& client, GenerationLog* log = nullptr,
                                                      int retries = 2);

/// Conversation samples for one video from its central frame and per-second
/// captions. With a known duration the caption count must be floor(duration), at least 1.
std::vector<InstructionSample> gen_video_instructions(const MediaRecord& rec, const Image& central_frame,
                                                      const std::vector<std::string>& captions,
                                                      GenerationClient& client, GenerationLog* log = nullptr,
                                                      int retries = 2, double duration = 0.0);

/// Question templates for category samples.
const std::vector<std::string>& category_question_pool(Modality m);

/// Closed-set question over `classes` whose answer is exactly the label.
InstructionSample gen_category_instructions(const MediaRecord& rec, const std::vector<std::string>& classes,
                                            std::mt19937_64& rng);

struct Manifest {
    long written = 0;
    long rejected = 0;
    long duplicates = 0;
    std::vector<std::pair<std::string, std::string>> rejections;  // (id, reason)
    std::map<std::string, long> per_modality, per_kind, per_class;
};

void to_json(nlohmann::json& j, const Manifest& m);

/// Drops duplicates (same media and turn texts), rejects invalid samples,
/// writes the rest as JSONL sorted by id and returns the counts.
Manifest validate_and_write(const std::vector<InstructionSample>& samples, const std::vector<std::string>& classes,
                            const std::filesystem::path& out_path);

std::vector<InstructionSample> read_instructions(const std::filesystem::path& path);

struct GenOptions {
    bool category = true;
    bool conversation = true;
    std::string split = "train";
    std::uint64_t seed = 1;
    int concurrency = 2;  // simultaneous client requests
    int retries = 2;
};

/// Runs every pipeline over the split. Category-only sources get no conversations.
std::vector<InstructionSample> generate_instructions(const DatasetIndex& ds, GenerationClient& client,
                                                     const GenOptions& opts, GenerationLog* log = nullptr);

}  // namespace emo
