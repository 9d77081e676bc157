#pragma once

// General-purpose visual encoder (a small patch transformer standing in for a
// CLIP-style ViT) plus the media adapters that turn images and frame-directory
// videos into timestamped frames.

#include "emo/autograd.h"
#include "emo/image.h"
#include "emo/nn.h"

#include <filesystem>
#include <string>
#include <vector>

namespace emo {

enum class Modality { Image, Video };

std::string to_string(Modality m);
Modality parse_modality(const std::string& s);

struct Frame {
    Image pixels;
    int timestamp_index = 0;
};

/// N x C patch tokens for one frame.
struct VisualEmbedding {
    ag::Mat tokens;
    int patch_size = 0;
};

struct VisionConfig {
    int input_size = 28;  // square input resolution
    int patch_size = 7;
    int width = 64;       // shared channel width C
    int layers = 2;
    int heads = 4;
    std::uint64_t seed = 11;
};

class VisionBackbone {
public:
    explicit VisionBackbone(const VisionConfig& cfg);

    /// Resizes the frame to the configured resolution and encodes it.
    VisualEmbedding encode_frame(const Frame& frame) const;
    /// Differentiable forward for an image already at input resolution.
    ag::Var forward(const Image& resized) const;

    int token_count() const { return grid_ * grid_; }
    const VisionConfig& config() const { return cfg_; }
    void collect(nn::ParamList& out, const std::string& prefix) const;

private:
    struct Block {
        nn::LayerNorm ln1, ln2;
        nn::MultiHeadAttention attn;
        nn::Mlp ffn;
    };

    VisionConfig cfg_;
    int grid_ = 0;
    nn::Linear patch_embed_;
    ag::Var positions_;
    std::vector<Block> blocks_;
    nn::LayerNorm final_ln_;
};

/// Patch-major flattening of an image into (N x p*p*3), channel values scaled to [0,1].
ag::Mat patchify(const Image& img, int patch_size);

/// Frame-directory video: numbered image files plus meta.json with duration and fps.
struct VideoClip {
    std::filesystem::path dir;
    double duration = 0.0;    // seconds
    double source_fps = 0.0;
    std::vector<std::filesystem::path> frame_files;
};

VideoClip open_video(const std::filesystem::path& dir);
void write_video(const std::filesystem::path& dir, const std::vector<Image>& frames, double source_fps);

/// Sampling times k/fps for k = 0..max(1, floor(duration*fps))-1.
std::vector<double> sample_timestamps(double duration, double fps);

std::vector<Frame> sample_frames(const VideoClip& clip, double fps);

/// Unified entry: an image is the single-frame case of a video.
std::vector<Frame> load_frames(const std::filesystem::path& media, Modality modality, double fps);

}  // namespace emo
