#pragma once

// Face detection/cropping and the pluggable facial-analysis expert that
// produces facial embedding tokens, landmarks and age/gender/race attributes.

#include "emo/autograd.h"
#include "emo/image.h"
#include "emo/landmarks.h"
#include "emo/vision.h"

#include <array>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace emo {

struct FaceCrop {
    Image pixels;
    BBox bbox;  // in source-frame coordinates
    double detector_confidence = 0.0;
    /// Set when no face was found and the crop is the center-crop fallback.
    bool fallback = false;
};

/// N^F x C expert tokens.
struct FacialEmbedding {
    ag::Mat tokens;
};

struct LandmarkSet {
    std::vector<landmarks::Point> points;  // normalized to [0,1] within the crop
    std::vector<bool> visible;

    int size() const { return static_cast<int>(points.size()); }
    /// Row-major K x 2 matrix (x, y per row).
    ag::Mat as_matrix() const;
};

struct AGRAttributes {
    std::string age_bucket;
    std::string gender;
    std::string race;
    std::array<double, 3> confidences{1.0, 1.0, 1.0};
    bool operator==(const AGRAttributes&) const = default;
};

/// Fixed label vocabularies for AGR attributes.
struct AgrVocabulary {
    static const std::vector<std::string>& ages();
    static const std::vector<std::string>& genders();
    static const std::vector<std::string>& races();
    static bool valid(const AGRAttributes& agr);
};

// --- detection --------------------------------------------------------------

struct Detection {
    BBox box;
    double confidence = 0.0;
};

class FaceDetector {
public:
    virtual ~FaceDetector() = default;
    virtual std::vector<Detection> detect(const Image& img) const = 0;
};

/// Finds bright connected blobs against a dark background. Confidence is the
/// fraction of the bounding box covered by the blob.
class BlobFaceDetector final : public FaceDetector {
public:
    struct Options {
        double brightness_threshold = 64.0;  // mean channel value marking foreground
        long min_area = 64;
    };
    BlobFaceDetector() = default;
    explicit BlobFaceDetector(Options opts) : opts_(opts) {}
    std::vector<Detection> detect(const Image& img) const override;

private:
    Options opts_;
};

/// Returns a fixed list of detections regardless of input.
class ScriptedFaceDetector final : public FaceDetector {
public:
    explicit ScriptedFaceDetector(std::vector<Detection> script) : script_(std::move(script)) {}
    std::vector<Detection> detect(const Image& img) const override;

private:
    std::vector<Detection> script_;
};

/// One binary record per (media id, frame index). Writers race safely:
/// each write lands in a temp file and is renamed into place (last write wins).
class DetectionCache {
public:
    struct Record {
        bool found = false;
        BBox box;
        double confidence = 0.0;
    };

    explicit DetectionCache(std::filesystem::path dir);
    std::optional<Record> get(const std::string& media_id, int frame_index) const;
    void put(const std::string& media_id, int frame_index, const Record& rec) const;
    std::filesystem::path record_path(const std::string& media_id, int frame_index) const;

private:
    std::filesystem::path dir_;
};

class FaceCropper {
public:
    FaceCropper(std::shared_ptr<const FaceDetector> detector, int crop_size,
                std::shared_ptr<const DetectionCache> cache = nullptr);

    /// Highest-confidence face resized to the expert input size, or nullopt.
    std::optional<FaceCrop> detect_and_crop(const Frame& frame) const;

    /// Same as detect_and_crop but total: falls back to a flagged center crop.
    /// With a cache attached, detections are memoized per (media_id, frame index).
    FaceCrop crop_or_fallback(const Frame& frame, const std::string& media_id = {}) const;

    int crop_size() const { return crop_size_; }

private:
    FaceCrop make_crop(const Image& img, const BBox& box, double conf, bool fallback) const;

    std::shared_ptr<const FaceDetector> detector_;
    int crop_size_;
    std::shared_ptr<const DetectionCache> cache_;
};

/// Largest centered square, resized to crop_size, confidence 0, flagged.
FaceCrop center_fallback_crop(const Image& img, int crop_size);

// --- expert -------------------------------------------------------------------

class FacialExpert {
public:
    virtual ~FacialExpert() = default;
    virtual int input_size() const = 0;
    /// Width of the emitted embedding tokens (may differ from the model width).
    virtual int channels() const = 0;
    virtual int grid_rows() const = 0;
    virtual int grid_cols() const = 0;
    int token_count() const { return grid_rows() * grid_cols(); }
    virtual int landmark_count() const { return landmarks::kCount; }

    virtual FacialEmbedding encode(const FaceCrop& crop) const = 0;
    virtual std::pair<LandmarkSet, AGRAttributes> decode(const FacialEmbedding& embedding) const = 0;
};

struct ToyExpertConfig {
    int input_size = 32;
    int patch_size = 8;   // one token per patch
    int cell_size = 2;    // features are per-cell channel means inside a patch
    int coarse_block = 4; // landmark/AGR statistics use this coarser pixel block
    int channels = 64;
    std::uint64_t seed = 7;
    std::optional<AGRAttributes> scripted_agr;
};

/// Deterministic test expert: per-patch cell averages times a seeded matrix.
/// Landmarks are brightness centroids around canonical anchors, computed on a
/// coarse grid recovered from the embedding, so the expert is reflection-equivariant.
class ToyFacialExpert final : public FacialExpert {
public:
    explicit ToyFacialExpert(ToyExpertConfig cfg);
    ToyFacialExpert(ToyExpertConfig cfg, ag::Mat projection);

    int input_size() const override { return cfg_.input_size; }
    int channels() const override { return cfg_.channels; }
    int grid_rows() const override { return cfg_.input_size / cfg_.patch_size; }
    int grid_cols() const override { return cfg_.input_size / cfg_.patch_size; }

    FacialEmbedding encode(const FaceCrop& crop) const override;
    std::pair<LandmarkSet, AGRAttributes> decode(const FacialEmbedding& embedding) const override;

    /// features-per-patch x channels
    const ag::Mat& projection() const { return projection_; }
    int features_per_patch() const;
    const ToyExpertConfig& config() const { return cfg_; }

    void save(const std::filesystem::path& path) const;

private:
    ToyExpertConfig cfg_;
    ag::Mat projection_;
    ag::Mat unprojection_;  // channels x features, undoes projection_
};

/// "toy" builds a seeded ToyFacialExpert; anything else is read as a saved expert file.
std::unique_ptr<FacialExpert> make_expert(const std::string& weights, const ToyExpertConfig& cfg = {});

/// AU-region membership over the expert token grid (R x N^F).
struct AURegionMask {
    ag::Mask masks;
    /// Regions that had no landmark-covered token and were widened to the full face.
    std::vector<int> fallback_regions;
};

AURegionMask build_au_regions(const LandmarkSet& landmarks, int grid_rows, int grid_cols);

}  // namespace emo
