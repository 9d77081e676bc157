#pragma once

// Synthetic face media for tests, demos and the learning checks.
//
// Frames are dark blocky backgrounds with one bright square face aligned to a
// 4-pixel grid. Each class adds a signature that is zero-mean inside every
// 4x4 pixel block but varies between the 2x2 cells of the block. A 4x area
// downsample (the vision backbone's input path) therefore removes it exactly,
// as do the 4-pixel coarse statistics used for landmarks and attributes; only
// the facial expert, which averages 2x2 cells, can see it.

#include "emo/dataset.h"
#include "emo/image.h"
#include "emo/nn.h"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace emo::fixtures {

constexpr int kFrameSize = 112;
constexpr int kFaceSize = 32;
constexpr int kBlock = 4;

const std::vector<std::string>& basic_emotions();

/// Per-class signature: for each of the 2x2 cells of a block, an RGB offset in {-1, 0, 1}.
using Signature = std::array<std::array<int, 3>, 4>;
Signature class_signature(int class_index);
/// Mirror-symmetric signature (cells swap left/right unchanged).
Signature symmetric_signature();

struct FaceParams {
    int x = 40;  // top-left, multiple of kBlock
    int y = 40;
    std::array<int, 3> skin{170, 130, 110};
    /// Weighted sum of signatures, amplitude in pixel units.
    std::vector<std::pair<Signature, double>> signal;
    bool structure = true;  // darker eye/mouth blocks (class independent)
};

/// Renders one frame. `rng` drives only the background texture.
Image render_frame(const FaceParams& face, nn::Rng& rng, int size = kFrameSize);
/// The face square alone, as the expert would receive it after cropping.
Image render_face(const FaceParams& face);

struct FixtureOptions {
    std::string name = "fixture";
    std::vector<std::string> classes = basic_emotions();
    /// Per-class sample counts for train / test; a single entry applies to every class.
    std::vector<int> train_images{20};
    std::vector<int> test_images{10};
    int train_videos_per_class = 0;
    int test_videos_per_class = 0;
    int category_only_images = 0;  // grayscale, category-data-only extras in the train split
    double video_seconds = 3.0;
    double video_source_fps = 2.0;
    /// Two-class mixture mode: each face carries a*sig(1) + (1-a)*sig(0) with a
    /// drawn from a class-dependent range, so the classes overlap.
    bool overlapping = false;
    double amplitude = 36.0;
    std::uint64_t seed = 1;
};

/// Named presets: "tiny", "emotion7", "imbalanced", "video".
FixtureOptions preset(const std::string& name);

DatasetIndex generate(const std::filesystem::path& root, const FixtureOptions& opts);

}  // namespace emo::fixtures
