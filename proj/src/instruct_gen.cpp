#include "emo/instruct_gen.h"

#include "emo/errors.h"
#include "emo/evaluation.h"
#include "emo/util.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

namespace emo {

using nlohmann::json;

std::string to_string(InstructionKind k) { return k == InstructionKind::Category ? "category" : "conversation"; }

InstructionKind parse_instruction_kind(const std::string& s) {
    if (s == "category") return InstructionKind::Category;
    if (s == "conversation") return InstructionKind::Conversation;
    throw InputError("unknown instruction kind '" + s + "'");
}

bool InstructionSample::operator==(const InstructionSample& o) const {
    if (turns.size() != o.turns.size()) return false;
    for (size_t i = 0; i < turns.size(); ++i)
        if (turns[i].role != o.turns[i].role || turns[i].text != o.turns[i].text) return false;
    return id == o.id && modality == o.modality && media == o.media && label == o.label && kind == o.kind &&
           raw_generation == o.raw_generation;
}

void to_json(json& j, const InstructionSample& s) {
    json turns = json::array();
    for (const auto& t : s.turns) turns.push_back({{"role", t.role}, {"text", t.text}});
    j = json{{"id", s.id},       {"modality", to_string(s.modality)}, {"media", s.media},
             {"label", s.label}, {"kind", to_string(s.kind)},         {"turns", turns}};
    if (s.raw_generation) j["raw_generation"] = *s.raw_generation;
}

void from_json(const json& j, InstructionSample& s) {
    try {
        s.id = j.at("id").get<std::string>();
        s.modality = parse_modality(j.at("modality").get<std::string>());
        s.media = j.at("media").get<std::string>();
        s.label = j.at("label").get<std::string>();
        s.kind = parse_instruction_kind(j.at("kind").get<std::string>());
        s.turns.clear();
        for (const auto& t : j.at("turns")) s.turns.push_back({t.at("role").get<std::string>(), t.at("text").get<std::string>()});
        s.raw_generation.reset();
        if (j.contains("raw_generation")) s.raw_generation = j.at("raw_generation").get<std::string>();
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed instruction sample: ") + e.what());
    } catch (const ConfigError& e) {
        throw InputError(std::string("malformed instruction sample: ") + e.what());
    }
}

std::string validate_sample(const InstructionSample& s, const std::vector<std::string>& classes) {
    if (s.id.empty()) return "empty id";
    if (s.media.empty()) return "empty media path";
    if (std::find(classes.begin(), classes.end(), s.label) == classes.end()) {
        return "label '" + s.label + "' outside the class set";
    }
    if (s.turns.empty()) return "no turns";
    if (s.turns.size() % 2 != 0) return "dialogue does not end with an assistant turn";
    for (size_t i = 0; i < s.turns.size(); ++i) {
        if (s.turns[i].role != (i % 2 == 0 ? "human" : "assistant")) return "turns do not alternate human/assistant";
        if (s.turns[i].text.empty()) return "empty turn text";
    }
    if (s.kind == InstructionKind::Category) {
        if (s.turns.size() != 2) return "category sample must be one question/answer pair";
        if (s.turns[1].text != s.label) return "category answer differs from the label";
    }
    return {};
}

// --- requests and clients ---------------------------------------------------------

std::string GenerationRequest::prompt() const {
    std::ostringstream p;
    if (modality == Modality::Video) {
        p << "You are shown the central frame of a video and a description of every second:\n";
        for (const auto& c : captions) p << "- " << c << "\n";
    } else {
        p << "You are shown a face image.\n";
    }
    p << "The facial expression label is '" << label << "'. Ask questions about the objects and the facial "
      << "details in the media and answer them consistently with the label. Write the dialogue as lines "
      << "starting with 'Human:' and 'Assistant:'.";
    return p.str();
}

std::string GenerationRequest::key() const {
    std::string buf = media_id + '\0' + to_string(modality) + '\0' + label + '\0' + template_id + '\0';
    buf.append(image_png.begin(), image_png.end());
    for (const auto& c : captions) buf += '\0' + c;
    return sha256_hex(buf);
}

namespace {

std::mt19937_64 seeded(std::uint64_t seed, const std::string& id) {
    const std::string h = sha256_hex(std::to_string(seed) + "/" + id);
    return std::mt19937_64(std::stoull(h.substr(0, 15), nullptr, 16));
}

template <class T>
const T& choose(const std::vector<T>& pool, std::mt19937_64& rng) {
    return pool[std::uniform_int_distribution<size_t>(0, pool.size() - 1)(rng)];
}

// "second 3: the person blinks" -> "the person blinks"
std::string caption_body(const std::string& c) {
    auto pos = c.find(':');
    if (pos == std::string::npos) return c;
    auto b = c.find_first_not_of(' ', pos + 1);
    return b == std::string::npos ? std::string() : c.substr(b);
}

}  // namespace

std::string MockClient::complete(const GenerationRequest& req) {
    if (req.label.empty()) throw ClientError("mock client: request without label");
    auto rng = seeded(seed_, req.media_id);
    std::ostringstream out;
    if (req.modality == Modality::Video) {
        static const std::vector<std::string> questions{
            "How does the expression of the person change over the clip?",
            "What happens on the face during the video?",
            "Describe the facial behaviour across the video.",
        };
        if (req.captions.empty()) throw ClientError("mock client: video request without captions");
        const std::string& cap = choose(req.captions, rng);
        out << "Human: " << choose(questions, rng) << "\n"
            << "Assistant: In the clip " << caption_body(cap) << ", and overall the face shows " << req.label
            << ".\n";
    } else {
        static const std::vector<std::string> questions{
            "What objects can you see around the person?",
            "What details of the face stand out?",
            "What does the face in this image tell you?",
        };
        static const std::vector<std::string> scenes{
            "The person is in front of a plain dark background",
            "The face is the only object in a dim, textured scene",
            "A single face fills the middle of the picture",
        };
        out << "Human: " << choose(questions, rng) << "\n"
            << "Assistant: " << choose(scenes, rng) << ", and the expression shows " << req.label << ".\n";
    }
    return out.str();
}

std::string ReplayClient::complete(const GenerationRequest& req) {
    const auto path = dir_ / (req.key() + ".txt");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ClientError("no recorded response for " + req.media_id);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void ReplayClient::record(const std::filesystem::path& dir, const GenerationRequest& req, const std::string& response) {
    write_file_atomic(dir / (req.key() + ".txt"), response);
}

std::vector<Turn> parse_turns(const std::string& raw) {
    std::vector<Turn> turns;
    std::istringstream in(raw);
    std::string line;
    auto starts = [](const std::string& s, const char* p) { return s.rfind(p, 0) == 0; };
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) continue;
        if (starts(line, "Human:")) {
            turns.push_back({"human", trim(line.substr(6))});
        } else if (starts(line, "Assistant:")) {
            turns.push_back({"assistant", trim(line.substr(10))});
        } else if (!turns.empty()) {
            turns.back().text += " " + line;
        } else {
            throw InputError("generator output does not start with a turn marker");
        }
    }
    if (turns.empty()) throw InputError("generator output has no turns");
    if (turns.size() % 2 != 0) throw InputError("generator output ends with an unanswered turn");
    for (size_t i = 0; i < turns.size(); ++i) {
        if (turns[i].role != (i % 2 == 0 ? "human" : "assistant")) throw InputError("turns do not alternate");
        if (turns[i].text.empty()) throw InputError("empty turn in generator output");
    }
    return turns;
}

namespace {

std::vector<InstructionSample> run_conversation(const MediaRecord& rec, const GenerationRequest& req,
                                                GenerationClient& client, GenerationLog* log, int retries) {
    std::string raw;
    for (int attempt = 0;; ++attempt) {
        try {
            raw = client.complete(req);
            break;
        } catch (const ClientError& e) {
            if (attempt >= retries) {
                spdlog::warn("generation for {} failed after {} attempts: {}", rec.id, attempt + 1, e.what());
                if (log) log->skipped.emplace_back(rec.id, e.what());
                return {};
            }
        }
    }
    InstructionSample s;
    try {
        s.turns = parse_turns(raw);
    } catch (const InputError& e) {
        spdlog::warn("skipping {}: {}", rec.id, e.what());
        if (log) log->skipped.emplace_back(rec.id, e.what());
        return {};
    }
    s.id = rec.id + "-conv";
    s.modality = rec.modality;
    s.media = rec.media;
    s.label = rec.label;
    s.kind = InstructionKind::Conversation;
    s.raw_generation = raw;
    return {s};
}

void check_label(const MediaRecord& rec) {
    if (rec.label.empty()) throw InputError("generation requires a label (" + rec.id + ")");
}

}  // namespace

std::vector<InstructionSample> gen_image_instructions(const MediaRecord& rec, const Image& image,
                                                      GenerationClient& client, GenerationLog* log, int retries) {
    check_label(rec);
    GenerationRequest req;
    req.media_id = rec.id;
    req.modality = Modality::Image;
    req.label = rec.label;
    req.template_id = "image-conversation-v1";
    req.image_png = encode_png(image);
    return run_conversation(rec, req, client, log, retries);
}

std::vector<InstructionSample> gen_video_instructions(const MediaRecord& rec, const Image& central_frame,
                                                      const std::vector<std::string>& captions,
                                                      GenerationClient& client, GenerationLog* log, int retries,
                                                      double duration) {
    check_label(rec);
    if (captions.empty()) throw InputError("video " + rec.id + " has no per-second captions");
    if (duration > 0) {
        const size_t want = std::max<size_t>(1, static_cast<size_t>(std::floor(duration + 1e-9)));
        if (captions.size() != want) {
            throw InputError("video " + rec.id + " has " + std::to_string(captions.size()) + " captions, expected " +
                             std::to_string(want));
        }
    }
    GenerationRequest req;
    req.media_id = rec.id;
    req.modality = Modality::Video;
    req.label = rec.label;
    req.template_id = "video-conversation-v1";
    req.image_png = encode_png(central_frame);
    req.captions = captions;
    return run_conversation(rec, req, client, log, retries);
}

const std::vector<std::string>& category_question_pool(Modality m) {
    static const std::vector<std::string> image{
        "What is the facial expression of the person in this image?",
        "Which emotion does the face in this image show?",
        "How does the person in this image feel?",
        "Identify the emotion expressed by this face.",
    };
    static const std::vector<std::string> video{
        "What is the facial expression of the person in this video?",
        "Which emotion does the face in this video show?",
        "How does the person in this video feel?",
        "Identify the emotion expressed in this clip.",
    };
    return m == Modality::Video ? video : image;
}

InstructionSample gen_category_instructions(const MediaRecord& rec, const std::vector<std::string>& classes,
                                            std::mt19937_64& rng) {
    if (std::find(classes.begin(), classes.end(), rec.label) == classes.end()) {
        throw InputError("label '" + rec.label + "' outside the class set");
    }
    const auto& q = choose(category_question_pool(rec.modality), rng);
    InstructionSample s;
    s.id = rec.id + "-cat";
    s.modality = rec.modality;
    s.media = rec.media;
    s.label = rec.label;
    s.kind = InstructionKind::Category;
    s.turns = {{"human", build_closed_set_prompt(classes, q).text()}, {"assistant", rec.label}};
    return s;
}

void to_json(json& j, const Manifest& m) {
    json rej = json::array();
    for (const auto& [id, why] : m.rejections) rej.push_back({{"id", id}, {"reason", why}});
    j = json{{"written", m.written},       {"rejected", m.rejected},       {"duplicates", m.duplicates},
             {"rejections", rej},          {"per_modality", m.per_modality}, {"per_kind", m.per_kind},
             {"per_class", m.per_class}};
}

Manifest validate_and_write(const std::vector<InstructionSample>& samples, const std::vector<std::string>& classes,
                            const std::filesystem::path& out_path) {
    Manifest m;
    std::set<std::string> seen;
    std::vector<InstructionSample> keep;
    for (const auto& s : samples) {
        if (auto why = validate_sample(s, classes); !why.empty()) {
            ++m.rejected;
            m.rejections.emplace_back(s.id, why);
            continue;
        }
        std::string key = s.media;
        for (const auto& t : s.turns) key += '\0' + t.role + '\0' + t.text;
        if (!seen.insert(key).second) {
            ++m.duplicates;
            continue;
        }
        keep.push_back(s);
    }
    std::stable_sort(keep.begin(), keep.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::string out;
    for (const auto& s : keep) {
        out += json(s).dump() + "\n";
        ++m.written;
        ++m.per_modality[to_string(s.modality)];
        ++m.per_kind[to_string(s.kind)];
        ++m.per_class[s.label];
    }
    write_file_atomic(out_path, out);
    return m;
}

std::vector<InstructionSample> read_instructions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<InstructionSample> out;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line).get<InstructionSample>());
        } catch (const json::exception& e) {
            throw InputError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

std::vector<InstructionSample> generate_instructions(const DatasetIndex& ds, GenerationClient& client,
                                                     const GenOptions& opts, GenerationLog* log) {
    std::vector<InstructionSample> out;
    const auto recs = ds.split(opts.split);
    if (opts.category) {
        std::mt19937_64 rng(opts.seed);
        for (const auto& r : recs) out.push_back(gen_category_instructions(r, ds.classes, rng));
    }
    if (!opts.conversation) return out;

    std::vector<const MediaRecord*> todo;
    for (const auto& r : recs)
        if (!r.category_only) todo.push_back(&r);
    // Bounded concurrency: at most opts.concurrency requests in flight. Each task
    // keeps its own log so the shared one is touched by this thread only.
    const size_t width = static_cast<size_t>(std::max(1, opts.concurrency));
    for (size_t start = 0; start < todo.size(); start += width) {
        std::vector<std::future<std::pair<std::vector<InstructionSample>, GenerationLog>>> batch;
        for (size_t i = start; i < std::min(todo.size(), start + width); ++i) {
            const MediaRecord* r = todo[i];
            batch.push_back(std::async(std::launch::async, [&, r] {
                GenerationLog local;
                std::vector<InstructionSample> got;
                try {
                    if (r->modality == Modality::Video) {
                        const VideoClip clip = open_video(ds.media_path(*r));
                        if (clip.frame_files.empty()) throw IoError("video has no frames");
                        const Image central = read_image(clip.frame_files[clip.frame_files.size() / 2]);
                        got = gen_video_instructions(*r, central, ds.captions(*r), client, &local, opts.retries,
                                                     clip.duration);
                    } else {
                        got = gen_image_instructions(*r, read_image(ds.media_path(*r)), client, &local, opts.retries);
                    }
                } catch (const Error& e) {
                    spdlog::warn("skipping {}: {}", r->id, e.what());
                    local.skipped.emplace_back(r->id, e.what());
                }
                return std::make_pair(std::move(got), std::move(local));
            }));
        }
        for (auto& f : batch) {
            auto [got, local] = f.get();
            out.insert(out.end(), got.begin(), got.end());
            if (log) log->skipped.insert(log->skipped.end(), local.skipped.begin(), local.skipped.end());
        }
    }
    return out;
}

}  // namespace emo
