#include "emo/fixtures.h"

#include "emo/errors.h"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace emo::fixtures {

namespace {

// Cell order: top-left, top-right, bottom-left, bottom-right.
constexpr std::array<int, 4> kHorizontal{1, 1, -1, -1};
constexpr std::array<int, 4> kVertical{1, -1, 1, -1};
constexpr std::array<int, 4> kDiagonal{1, -1, -1, 1};

Signature make_signature(const std::array<int, 4>& basis, int channel) {
    Signature s{};
    for (int cell = 0; cell < 4; ++cell) s[cell][channel] = basis[cell];
    return s;
}

const std::vector<std::string> kCaptionPool = {
    "the person looks toward the camera",   "the head turns slightly",
    "the lighting stays even on the face",  "the person blinks",
    "the mouth moves a little",             "the eyebrows shift",
    "the face stays near the frame center", "the person holds still",
};

int pick(const std::vector<int>& counts, size_t cls) {
    if (counts.empty()) return 0;
    return counts.size() == 1 ? counts[0] : counts.at(cls);
}

}  // namespace

const std::vector<std::string>& basic_emotions() {
    static const std::vector<std::string> v{"happiness", "sadness", "anger",  "surprise",
                                            "fear",      "disgust", "neutral"};
    return v;
}

Signature class_signature(int class_index) {
    switch (class_index % 7) {
        case 0: return make_signature(kHorizontal, 0);
        case 1: return make_signature(kVertical, 0);
        case 2: return make_signature(kDiagonal, 0);
        case 3: return make_signature(kHorizontal, 1);
        case 4: return make_signature(kVertical, 1);
        case 5: return make_signature(kDiagonal, 2);
        default: return make_signature(kVertical, 2);
    }
}

Signature symmetric_signature() { return make_signature(kHorizontal, 2); }

Image render_face(const FaceParams& face) {
    Image out(kFaceSize, kFaceSize);
    const int blocks = kFaceSize / kBlock;
    for (int by = 0; by < blocks; ++by)
        for (int bx = 0; bx < blocks; ++bx) {
            std::array<int, 3> base = face.skin;
            if (face.structure) {
                // Eyes on block row 2, mouth on block row 6; both symmetric about the midline.
                const bool eye = by == 2 && (bx == 2 || bx == blocks - 3);
                const bool mouth = by == 6 && bx >= 3 && bx <= blocks - 4;
                if (eye || mouth) base = {base[0] - 50, base[1] - 40, base[2] - 30};
            }
            for (int cy = 0; cy < 2; ++cy)
                for (int cx = 0; cx < 2; ++cx) {
                    std::array<double, 3> v{double(base[0]), double(base[1]), double(base[2])};
                    for (const auto& [sig, amp] : face.signal)
                        for (int c = 0; c < 3; ++c) v[c] += amp * sig[cy * 2 + cx][c];
                    for (int y = 0; y < 2; ++y)
                        for (int x = 0; x < 2; ++x)
                            for (int c = 0; c < 3; ++c) {
                                out.at(by * kBlock + cy * 2 + y, bx * kBlock + cx * 2 + x, c) =
                                    static_cast<std::uint8_t>(std::clamp(std::lround(v[c]), 0L, 255L));
                            }
                }
        }
    return out;
}

Image render_frame(const FaceParams& face, nn::Rng& rng, int size) {
    if (face.x % kBlock || face.y % kBlock || face.x < 0 || face.y < 0 || face.x + kFaceSize > size ||
        face.y + kFaceSize > size) {
        throw InputError("fixture face must be block aligned and inside the frame");
    }
    Image img(size, size);
    std::uniform_int_distribution<int> dark(0, 45);
    for (int by = 0; by < size; by += 8)
        for (int bx = 0; bx < size; bx += 8) {
            const std::array<int, 3> v{dark(rng), dark(rng), dark(rng)};
            for (int y = by; y < std::min(size, by + 8); ++y)
                for (int x = bx; x < std::min(size, bx + 8); ++x)
                    for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(v[c]);
        }
    const Image f = render_face(face);
    for (int y = 0; y < kFaceSize; ++y)
        for (int x = 0; x < kFaceSize; ++x)
            for (int c = 0; c < 3; ++c) img.at(face.y + y, face.x + x, c) = f.at(y, x, c);
    return img;
}

FixtureOptions preset(const std::string& name) {
    FixtureOptions o;
    o.name = name;
    if (name == "tiny") {
        o.train_images = {2};
        o.test_images = {1};
        o.train_videos_per_class = 1;
        o.test_videos_per_class = 0;
        o.category_only_images = 2;
        o.video_seconds = 2.0;
    } else if (name == "emotion7") {
        o.train_images = {24};
        o.test_images = {10};
    } else if (name == "imbalanced") {
        o.classes = {"neutral", "anger"};
        o.train_images = {114, 6};
        o.test_images = {30, 30};
        o.overlapping = true;
    } else if (name == "video") {
        o.train_images = {0};
        o.test_images = {0};
        o.train_videos_per_class = 2;
        o.test_videos_per_class = 2;
    } else {
        throw ConfigError("unknown fixture preset: " + name);
    }
    return o;
}

DatasetIndex generate(const std::filesystem::path& root, const FixtureOptions& opts) {
    if (opts.classes.empty()) throw ConfigError("fixture needs at least one class");
    if (opts.overlapping && opts.classes.size() != 2) throw ConfigError("overlapping fixtures are two-class");
    DatasetIndex ds;
    ds.name = opts.name;
    ds.classes = opts.classes;
    ds.root = root;
    nn::Rng rng(opts.seed);
    std::uniform_int_distribution<int> pos(0, (kFrameSize - kFaceSize) / kBlock);
    std::uniform_int_distribution<int> tone(-15, 15);
    std::uniform_real_distribution<double> jitter(0.85, 1.15);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto face_for = [&](size_t cls) {
        FaceParams f;
        f.x = pos(rng) * kBlock;
        f.y = pos(rng) * kBlock;
        const int shift = tone(rng);
        f.skin = {170 + shift + tone(rng) / 3, 130 + shift + tone(rng) / 3, 110 + shift + tone(rng) / 3};
        const double amp = opts.amplitude * jitter(rng);
        if (opts.overlapping) {
            // Class 0 draws a from [0, 0.62], class 1 from [0.38, 1].
            const double a = cls == 0 ? 0.62 * unit(rng) : 0.38 + 0.62 * unit(rng);
            f.signal = {{class_signature(0), amp * (1.0 - a)}, {class_signature(1), amp * a}};
        } else {
            f.signal = {{class_signature(static_cast<int>(cls)), amp}};
        }
        return f;
    };

    auto add_images = [&](const std::string& split, const std::vector<int>& counts) {
        for (size_t cls = 0; cls < opts.classes.size(); ++cls)
            for (int i = 0; i < pick(counts, cls); ++i) {
                char id[64];
                std::snprintf(id, sizeof(id), "%s-img-%s-%zu-%03d", opts.name.c_str(), split.c_str(), cls, i);
                const std::string rel = "images/" + std::string(id) + ".png";
                write_image(root / rel, render_frame(face_for(cls), rng));
                std::ofstream(root / "images" / (std::string(id) + ".txt"))
                    << kCaptionPool[rng() % kCaptionPool.size()] << "\n";
                ds.records.push_back({id, Modality::Image, rel, opts.classes[cls], split, false});
            }
    };
    auto add_videos = [&](const std::string& split, int per_class) {
        const int n_frames = std::max(1, static_cast<int>(std::lround(opts.video_seconds * opts.video_source_fps)));
        const int seconds = std::max(1, static_cast<int>(opts.video_seconds + 1e-9));
        for (size_t cls = 0; cls < opts.classes.size(); ++cls)
            for (int v = 0; v < per_class; ++v) {
                char id[64];
                std::snprintf(id, sizeof(id), "%s-vid-%s-%zu-%03d", opts.name.c_str(), split.c_str(), cls, v);
                FaceParams face = face_for(cls);
                std::vector<Image> frames;
                for (int k = 0; k < n_frames; ++k) {
                    FaceParams f = face;
                    // Slow drift along x, staying block aligned.
                    f.x = std::clamp(face.x + kBlock * ((k % 3) - 1), 0, kFrameSize - kFaceSize);
                    frames.push_back(render_frame(f, rng));
                }
                const std::string rel = "videos/" + std::string(id);
                write_video(root / rel, frames, opts.video_source_fps);
                std::ofstream cap(root / rel / "captions.txt");
                for (int s = 0; s < seconds; ++s) {
                    cap << "second " << s + 1 << ": " << kCaptionPool[rng() % kCaptionPool.size()] << "\n";
                }
                ds.records.push_back({id, Modality::Video, rel, opts.classes[cls], split, false});
            }
    };

    add_images("train", opts.train_images);
    add_images("test", opts.test_images);
    add_videos("train", opts.train_videos_per_class);
    add_videos("test", opts.test_videos_per_class);
    for (int i = 0; i < opts.category_only_images; ++i) {
        const size_t cls = static_cast<size_t>(i) % opts.classes.size();
        Image face = render_face(face_for(cls));
        // Tiny grayscale source, like low-resolution FER benchmarks.
        for (int y = 0; y < face.height; ++y)
            for (int x = 0; x < face.width; ++x) {
                const int g = (face.at(y, x, 0) + face.at(y, x, 1) + face.at(y, x, 2)) / 3;
                for (int c = 0; c < 3; ++c) face.at(y, x, c) = static_cast<std::uint8_t>(g);
            }
        char id[64];
        std::snprintf(id, sizeof(id), "%s-gray-%03d", opts.name.c_str(), i);
        const std::string rel = "images/" + std::string(id) + ".png";
        write_image(root / rel, face);
        ds.records.push_back({id, Modality::Image, rel, opts.classes[cls], "train", true});
    }
    write_dataset(ds);
    return ds;
}

}  // namespace emo::fixtures
