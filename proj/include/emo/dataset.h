#pragma once

// Media index: the list of labelled images/videos a dataset adapter exposes.
// Stored as dataset.json (name + class list) next to index.jsonl (one record per media).

#include "emo/vision.h"

#include <filesystem>
#include <string>
#include <vector>

namespace emo {

struct MediaRecord {
    std::string id;
    Modality modality = Modality::Image;
    std::string media;  // relative to the dataset root
    std::string label;
    std::string split = "train";
    /// Sources whose media are tiny grayscale crops get category data only.
    bool category_only = false;
};

struct DatasetIndex {
    std::string name;
    std::vector<std::string> classes;
    std::filesystem::path root;
    std::vector<MediaRecord> records;

    std::filesystem::path media_path(const MediaRecord& r) const { return root / r.media; }
    std::vector<MediaRecord> split(const std::string& name) const;
    /// Video: one caption per second (captions.txt in the frame directory).
    /// Image: lines of the optional <stem>.txt sidecar. Empty when absent.
    std::vector<std::string> captions(const MediaRecord& r) const;
};

void write_dataset(const DatasetIndex& ds);
DatasetIndex read_dataset(const std::filesystem::path& root);

}  // namespace emo
