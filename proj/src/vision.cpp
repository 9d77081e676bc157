#include "emo/vision.h"

#include "emo/errors.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace emo {

std::string to_string(Modality m) { return m == Modality::Image ? "image" : "video"; }

Modality parse_modality(const std::string& s) {
    if (s == "image") return Modality::Image;
    if (s == "video") return Modality::Video;
    throw InputError("unknown modality: " + s);
}

ag::Mat patchify(const Image& img, int p) {
    validate_image(img);
    if (img.height % p != 0 || img.width % p != 0) {
        throw ConfigError("resolution " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                          " not divisible by patch size " + std::to_string(p));
    }
    const int gh = img.height / p;
    const int gw = img.width / p;
    ag::Mat out(gh * gw, p * p * 3);
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px) {
            const int row = py * gw + px;
            int col = 0;
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x)
                    for (int c = 0; c < 3; ++c) out(row, col++) = img.at(py * p + y, px * p + x, c) / 255.0;
        }
    return out;
}

VisionBackbone::VisionBackbone(const VisionConfig& cfg) : cfg_(cfg) {
    if (cfg.patch_size < 1 || cfg.input_size % cfg.patch_size != 0) {
        throw ConfigError("vision input size " + std::to_string(cfg.input_size) +
                          " not divisible by patch size " + std::to_string(cfg.patch_size));
    }
    grid_ = cfg.input_size / cfg.patch_size;
    nn::Rng rng(cfg.seed);
    patch_embed_ = nn::Linear(cfg.patch_size * cfg.patch_size * 3, cfg.width, rng);
    positions_ = ag::Var::leaf(nn::randn(grid_ * grid_, cfg.width, 0.02, rng));
    for (int i = 0; i < cfg.layers; ++i) {
        Block b{nn::LayerNorm(cfg.width), nn::LayerNorm(cfg.width), nn::MultiHeadAttention(cfg.width, cfg.heads, rng),
                nn::Mlp({cfg.width, 4 * cfg.width, cfg.width}, rng)};
        blocks_.push_back(std::move(b));
    }
    final_ln_ = nn::LayerNorm(cfg.width);
}

ag::Var VisionBackbone::forward(const Image& resized) const {
    if (resized.height != cfg_.input_size || resized.width != cfg_.input_size) {
        throw InputError("vision forward expects " + std::to_string(cfg_.input_size) + "x" +
                         std::to_string(cfg_.input_size) + " input");
    }
    ag::Var x = patch_embed_.forward(ag::Var::constant(patchify(resized, cfg_.patch_size)));
    x = ag::add(x, positions_);
    for (const auto& b : blocks_) {
        ag::Var h = b.ln1.forward(x);
        x = ag::add(x, b.attn.forward(h, h));
        x = ag::add(x, b.ffn.forward(b.ln2.forward(x)));
    }
    return final_ln_.forward(x);
}

VisualEmbedding VisionBackbone::encode_frame(const Frame& frame) const {
    validate_image(frame.pixels);
    Image resized = resize_image(frame.pixels, cfg_.input_size, cfg_.input_size);
    return VisualEmbedding{forward(resized).value(), cfg_.patch_size};
}

void VisionBackbone::collect(nn::ParamList& out, const std::string& prefix) const {
    patch_embed_.collect(out, prefix + ".patch_embed");
    out.push_back({prefix + ".positions", positions_});
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const std::string p = prefix + ".blocks." + std::to_string(i);
        blocks_[i].ln1.collect(out, p + ".ln1");
        blocks_[i].ln2.collect(out, p + ".ln2");
        blocks_[i].attn.collect(out, p + ".attn");
        blocks_[i].ffn.collect(out, p + ".ffn");
    }
    final_ln_.collect(out, prefix + ".final_ln");
}

VideoClip open_video(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("video directory not found: " + dir.string());
    std::ifstream meta(dir / "meta.json");
    if (!meta) throw IoError("video metadata missing: " + (dir / "meta.json").string());
    nlohmann::json j;
    try {
        meta >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed video metadata in " + dir.string() + ": " + e.what());
    }
    VideoClip clip;
    clip.dir = dir;
    clip.duration = j.value("duration", 0.0);
    clip.source_fps = j.value("fps", 0.0);
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto ext = entry.path().extension().string();
        if (entry.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) {
            clip.frame_files.push_back(entry.path());
        }
    }
    std::sort(clip.frame_files.begin(), clip.frame_files.end());
    if (clip.duration <= 0.0 || clip.source_fps <= 0.0 || clip.frame_files.empty()) {
        throw IoError("unreadable video (no frames or non-positive duration/fps): " + dir.string());
    }
    return clip;
}

void write_video(const std::filesystem::path& dir, const std::vector<Image>& frames, double source_fps) {
    std::filesystem::create_directories(dir);
    for (size_t i = 0; i < frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%05zu.png", i);
        write_image(dir / name, frames[i]);
    }
    nlohmann::json j{{"duration", double(frames.size()) / source_fps}, {"fps", source_fps}};
    std::ofstream(dir / "meta.json") << j.dump(2) << "\n";
}

std::vector<double> sample_timestamps(double duration, double fps) {
    if (!(fps > 0.0)) throw InputError("sampling fps must be positive");
    if (!(duration > 0.0)) throw InputError("video duration must be positive");
    // Small epsilon keeps 5.0 s * 1 fps at 5 instead of 4.999...
    const auto n = std::max<long>(1, static_cast<long>(std::floor(duration * fps + 1e-9)));
    std::vector<double> ts;
    ts.reserve(static_cast<size_t>(n));
    for (long k = 0; k < n; ++k) ts.push_back(double(k) / fps);
    return ts;
}

std::vector<Frame> sample_frames(const VideoClip& clip, double fps) {
    std::vector<Frame> frames;
    const auto ts = sample_timestamps(clip.duration, fps);
    for (size_t i = 0; i < ts.size(); ++i) {
        auto idx = static_cast<size_t>(std::floor(ts[i] * clip.source_fps + 1e-9));
        idx = std::min(idx, clip.frame_files.size() - 1);
        frames.push_back(Frame{read_image(clip.frame_files[idx]), static_cast<int>(i)});
    }
    return frames;
}

std::vector<Frame> load_frames(const std::filesystem::path& media, Modality modality, double fps) {
    if (modality == Modality::Image) return {Frame{read_image(media), 0}};
    return sample_frames(open_video(media), fps);
}

}  // namespace emo
