#include "emo/evaluation.h"

#include "emo/errors.h"
#include "emo/model.h"
#include "emo/util.h"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

namespace emo {

using nlohmann::json;

const char* const kClosedSetGuidance =
    "PLEASE ENSURE that you start your answer with 'My choice is: ' FIRST and select ONLY ONE WORD from the "
    "provided list.";
const char* const kUnparseable = "UNPARSEABLE";

std::string ClosedSetPrompt::text() const {
    std::string s = question + " Choose from the list: ";
    for (size_t i = 0; i < classes.size(); ++i) s += (i ? ", " : "") + classes[i];
    return s + ". " + guidance;
}

ClosedSetPrompt build_closed_set_prompt(const std::vector<std::string>& classes, const std::string& question) {
    if (classes.empty()) throw InputError("closed-set prompt needs at least one class");
    std::set<std::string> seen;
    for (const auto& c : classes) {
        if (c.empty()) throw InputError("empty class name");
        if (!seen.insert(c).second) throw InputError("duplicate class '" + c + "'");
    }
    return {classes, kClosedSetGuidance, question};
}

std::string default_question(Modality m) {
    return m == Modality::Video ? "What is the facial expression of the person in this video?"
                                : "What is the facial expression of the person in this image?";
}

namespace {

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'; }

// Whole-word occurrence of `needle` in `hay` (both lowercase).
bool mentions(const std::string& hay, const std::string& needle) {
    for (size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
        const bool left = pos == 0 || !word_char(hay[pos - 1]);
        const size_t end = pos + needle.size();
        const bool right = end >= hay.size() || !word_char(hay[end]);
        if (left && right) return true;
    }
    return false;
}

std::string unique_mention(const std::string& text, const std::vector<std::string>& classes) {
    std::string found;
    int n = 0;
    for (const auto& c : classes)
        if (mentions(text, lower(c))) {
            found = c;
            ++n;
        }
    return n == 1 ? found : std::string();
}

}  // namespace

std::string parse_choice(const std::string& response, const std::vector<std::string>& classes) {
    const std::string text = lower(response);
    const std::string marker = "my choice is:";
    if (auto pos = text.find(marker); pos != std::string::npos) {
        std::string rest = text.substr(pos + marker.size());
        size_t b = 0;
        while (b < rest.size() && (std::isspace(static_cast<unsigned char>(rest[b])) || rest[b] == '\'' ||
                                   rest[b] == '"'))
            ++b;
        size_t e = b;
        while (e < rest.size() && word_char(rest[e])) ++e;
        const std::string word = rest.substr(b, e - b);
        for (const auto& c : classes)
            if (lower(c) == word) return c;
        // The word after the marker may be missing or misspelled; fall through to mentions.
    }
    std::string m = unique_mention(text, classes);
    return m.empty() ? kUnparseable : m;
}

void to_json(json& j, const PredictionRecord& r) {
    j = json{{"id", r.id}, {"response", r.response}, {"parsed", r.parsed}, {"gold", r.gold}};
    if (!r.description.empty()) j["description"] = r.description;
    if (!r.error.empty()) j["error"] = r.error;
}

void from_json(const json& j, PredictionRecord& r) {
    r.id = j.at("id").get<std::string>();
    r.response = j.at("response").get<std::string>();
    r.parsed = j.at("parsed").get<std::string>();
    r.gold = j.at("gold").get<std::string>();
    r.description = j.value("description", "");
    r.error = j.value("error", "");
}

void to_json(json& j, const MetricsReport& r) {
    j = json{{"classes", r.classes},   {"acc", r.acc},       {"uar", r.uar},
             {"war", r.war},           {"per_class_recall", r.per_class_recall},
             {"confusion", r.confusion}, {"unparseable_count", r.unparseable_count},
             {"total", r.total}};
    if (!r.mode.empty()) j["mode"] = r.mode;
}

MetricsReport compute_metrics(const std::vector<PredictionRecord>& records, const std::vector<std::string>& classes) {
    if (records.empty()) throw InputError("no prediction records");
    const size_t k = classes.size();
    std::map<std::string, size_t> index;
    for (size_t i = 0; i < k; ++i) index[classes[i]] = i;
    MetricsReport rep;
    rep.classes = classes;
    rep.confusion.assign(k + 1, std::vector<long>(k + 1, 0));
    for (const auto& r : records) {
        auto g = index.find(r.gold);
        if (g == index.end()) throw InputError("gold label '" + r.gold + "' outside the class set");
        auto p = index.find(r.parsed);
        const size_t col = p == index.end() ? k : p->second;
        if (col == k) ++rep.unparseable_count;
        ++rep.confusion[g->second][col];
    }
    rep.total = static_cast<long>(records.size());
    long correct = 0;
    double recall_sum = 0.0, weighted = 0.0;
    int present = 0;
    for (size_t c = 0; c < k; ++c) {
        long gold = 0;
        for (long v : rep.confusion[c]) gold += v;
        correct += rep.confusion[c][c];
        if (gold == 0) continue;
        const double recall = static_cast<double>(rep.confusion[c][c]) / static_cast<double>(gold);
        rep.per_class_recall[classes[c]] = recall;
        recall_sum += recall;
        weighted += static_cast<double>(gold) * recall;
        ++present;
    }
    rep.acc = static_cast<double>(correct) / static_cast<double>(rep.total);
    rep.uar = recall_sum / present;
    rep.war = weighted / static_cast<double>(rep.total);
    return rep;
}

std::string to_string(EvalMode m) {
    switch (m) {
        case EvalMode::InDomain: return "in-domain";
        case EvalMode::CrossImageToVideo: return "cross-image-to-video";
        case EvalMode::CrossVideoToImage: return "cross-video-to-image";
        case EvalMode::ZeroShotExtra: return "zero-shot-extra";
    }
    return "?";
}

EvalMode parse_eval_mode(const std::string& s) {
    for (auto m : {EvalMode::InDomain, EvalMode::CrossImageToVideo, EvalMode::CrossVideoToImage,
                   EvalMode::ZeroShotExtra})
        if (to_string(m) == s) return m;
    throw ConfigError("unknown eval mode '" + s + "'");
}

std::string OracleResponder::respond(const DatasetIndex&, const MediaRecord& rec, const std::string&,
                                     const std::string&) {
    return "My choice is: " + rec.label;
}

std::string RandomResponder::respond(const DatasetIndex& ds, const MediaRecord&, const std::string&,
                                     const std::string&) {
    std::uniform_int_distribution<size_t> pick(0, ds.classes.size() - 1);
    return "My choice is: " + ds.classes[pick(rng_)];
}

std::string TextSensitiveResponder::respond(const DatasetIndex& ds, const MediaRecord& rec, const std::string&,
                                            const std::string& description) {
    return "My choice is: " + (description.empty() ? ds.classes.front() : rec.label);
}

std::string ModelResponder::respond(const DatasetIndex& ds, const MediaRecord& rec, const std::string& prompt,
                                    const std::string& description) {
    const MediaFeatures& f = model_.features(ds.media_path(rec), rec.modality, rec.media);
    return model_.generate(f, prompt, description, max_new_);
}

std::vector<MediaRecord> select_records(const DatasetIndex& ds, const EvalOptions& opts) {
    std::vector<MediaRecord> out;
    for (const auto& r : ds.split(opts.split)) {
        if (opts.mode == EvalMode::CrossImageToVideo && r.modality != Modality::Video) continue;
        if (opts.mode == EvalMode::CrossVideoToImage && r.modality != Modality::Image) continue;
        out.push_back(r);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return out;
}

EvalResult run_eval(Responder& responder, const DatasetIndex& ds, const EvalOptions& opts) {
    const auto recs = select_records(ds, opts);
    if (recs.empty()) throw InputError("no records to evaluate for mode " + to_string(opts.mode));
    EvalResult res;
    for (const auto& r : recs) {
        PredictionRecord p;
        p.id = r.id;
        p.gold = r.label;
        try {
            if (opts.with_description) {
                for (const auto& c : ds.captions(r)) p.description += (p.description.empty() ? "" : " ") + c;
            }
            const std::string q = opts.question.empty() ? default_question(r.modality) : opts.question;
            p.response = responder.respond(ds, r, build_closed_set_prompt(ds.classes, q).text(), p.description);
            p.parsed = parse_choice(p.response, ds.classes);
        } catch (const Error& e) {
            p.parsed = kUnparseable;
            p.error = std::string(e.kind()) + ": " + e.what();
            ++res.failures;
        }
        res.records.push_back(std::move(p));
    }
    res.report = compute_metrics(res.records, ds.classes);
    res.report.mode = to_string(opts.mode);
    return res;
}

void write_records(const std::filesystem::path& path, const std::vector<PredictionRecord>& records) {
    auto sorted = records;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::string out;
    for (const auto& r : sorted) out += json(r).dump() + "\n";
    write_file_atomic(path, out);
}

std::vector<PredictionRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<PredictionRecord> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(json::parse(line).get<PredictionRecord>());
    return out;
}

void write_report(const std::filesystem::path& path, const MetricsReport& report) {
    write_file_atomic(path, json(report).dump(2) + "\n");
}

void write_recall_plot(const std::filesystem::path& path, const MetricsReport& report) {
    const int bar = 48, gap = 16, height = 240, top = 20, bottom = 60;
    const int n = static_cast<int>(report.classes.size());
    cv::Mat img(height + top + bottom, gap + n * (bar + gap), CV_8UC3, cv::Scalar(255, 255, 255));
    cv::line(img, {gap / 2, top + height}, {img.cols - gap / 2, top + height}, cv::Scalar(0, 0, 0));
    for (int i = 0; i < n; ++i) {
        auto it = report.per_class_recall.find(report.classes[static_cast<size_t>(i)]);
        const double r = it == report.per_class_recall.end() ? 0.0 : it->second;
        const int x = gap + i * (bar + gap);
        const int h = static_cast<int>(r * height);
        cv::rectangle(img, {x, top + height - h}, {x + bar, top + height}, cv::Scalar(180, 120, 40), cv::FILLED);
        cv::putText(img, report.classes[static_cast<size_t>(i)].substr(0, 7), {x, top + height + 18},
                    cv::FONT_HERSHEY_SIMPLEX, 0.35, cv::Scalar(0, 0, 0));
        char buf[16];
        std::snprintf(buf, sizeof buf, "%.2f", r);
        cv::putText(img, buf, {x + 6, top + height - h - 4}, cv::FONT_HERSHEY_SIMPLEX, 0.35, cv::Scalar(0, 0, 0));
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) throw IoError("cannot write plot " + path.string());
}

}  // namespace emo
