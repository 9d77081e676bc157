#include "emo/dataset.h"

#include "emo/errors.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

namespace emo {

std::vector<MediaRecord> DatasetIndex::split(const std::string& name) const {
    std::vector<MediaRecord> out;
    for (const auto& r : records)
        if (r.split == name) out.push_back(r);
    return out;
}

std::vector<std::string> DatasetIndex::captions(const MediaRecord& r) const {
    std::vector<std::string> out;
    // Images may carry a one-line sidecar next to the file.
    auto path = r.modality == Modality::Video ? media_path(r) / "captions.txt"
                                              : std::filesystem::path(media_path(r)).replace_extension(".txt");
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

void write_dataset(const DatasetIndex& ds) {
    std::filesystem::create_directories(ds.root);
    nlohmann::json meta{{"name", ds.name}, {"classes", ds.classes}, {"index", "index.jsonl"}};
    std::ofstream(ds.root / "dataset.json") << meta.dump(2) << "\n";
    std::ofstream out(ds.root / "index.jsonl");
    if (!out) throw IoError("cannot write dataset index under " + ds.root.string());
    for (const auto& r : ds.records) {
        nlohmann::json j{{"id", r.id},       {"modality", to_string(r.modality)}, {"media", r.media},
                         {"label", r.label}, {"split", r.split},                  {"category_only", r.category_only}};
        out << j.dump() << "\n";
    }
}

DatasetIndex read_dataset(const std::filesystem::path& root) {
    std::ifstream meta_in(root / "dataset.json");
    if (!meta_in) throw IoError("dataset.json not found under " + root.string());
    DatasetIndex ds;
    ds.root = root;
    try {
        nlohmann::json meta;
        meta_in >> meta;
        ds.name = meta.at("name").get<std::string>();
        ds.classes = meta.at("classes").get<std::vector<std::string>>();
        std::ifstream in(root / meta.value("index", std::string("index.jsonl")));
        if (!in) throw IoError("dataset index missing under " + root.string());
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line);
            MediaRecord r;
            r.id = j.at("id").get<std::string>();
            r.modality = parse_modality(j.at("modality").get<std::string>());
            r.media = j.at("media").get<std::string>();
            r.label = j.at("label").get<std::string>();
            r.split = j.value("split", std::string("train"));
            r.category_only = j.value("category_only", false);
            ds.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError("malformed dataset under " + root.string() + ": " + e.what());
    }
    std::set<std::string> classes(ds.classes.begin(), ds.classes.end());
    if (classes.size() != ds.classes.size() || classes.empty()) {
        throw InputError("dataset class list must be non-empty and unique");
    }
    for (const auto& r : ds.records)
        if (!classes.count(r.label)) throw InputError("record " + r.id + " has label outside the class set");
    return ds;
}

}  // namespace emo
