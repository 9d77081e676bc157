#include "emo/errors.h"
#include "emo/fixtures.h"
#include "emo/vision.h"

#include <gtest/gtest.h>

#include <filesystem>

using namespace emo;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("emo_test_vision_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

Image gradient_image(int h, int w) {
    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>((x * 7 + y * 3 + c * 50) % 256);
    return img;
}

}  // namespace

TEST(VisionBackbone, TokenCountFollowsPatchGrid) {
    VisionConfig big;
    big.input_size = 224;
    big.patch_size = 14;
    big.width = 8;
    big.layers = 1;
    big.heads = 2;
    VisionBackbone b(big);
    EXPECT_EQ(b.token_count(), 256);
    auto e = b.encode_frame(Frame{gradient_image(224, 224), 0});
    EXPECT_EQ(e.tokens.rows(), 256);
    EXPECT_EQ(e.tokens.cols(), 8);

    VisionConfig toy;
    toy.input_size = 28;
    toy.patch_size = 14;
    VisionBackbone t(toy);
    EXPECT_EQ(t.encode_frame(Frame{gradient_image(50, 60), 0}).tokens.rows(), 4);
}

TEST(VisionBackbone, IndivisibleResolutionIsConfigError) {
    VisionConfig c;
    c.input_size = 30;
    c.patch_size = 7;
    EXPECT_THROW(VisionBackbone{c}, ConfigError);
}

TEST(VisionBackbone, DeterministicAndFinite) {
    VisionBackbone b(VisionConfig{});
    Frame f{gradient_image(112, 112), 0};
    auto a = b.encode_frame(f);
    auto c = b.encode_frame(f);
    EXPECT_EQ((a.tokens - c.tokens).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_TRUE(a.tokens.allFinite());
    VisionBackbone again(VisionConfig{});
    EXPECT_EQ((again.encode_frame(f).tokens - a.tokens).cwiseAbs().maxCoeff(), 0.0);
}

TEST(VisionBackbone, FixtureClassSignalIsInvisible) {
    // Same face placement and skin, different class signatures: identical backbone input.
    VisionBackbone b(VisionConfig{});
    fixtures::FaceParams p0, p1;
    p0.signal = {{fixtures::class_signature(0), 40.0}};
    p1.signal = {{fixtures::class_signature(4), 40.0}};
    nn::Rng r0(5), r1(5);
    auto e0 = b.encode_frame(Frame{fixtures::render_frame(p0, r0), 0});
    auto e1 = b.encode_frame(Frame{fixtures::render_frame(p1, r1), 0});
    EXPECT_LT((e0.tokens - e1.tokens).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FrameSampling, TimestampCounts) {
    EXPECT_EQ(sample_timestamps(5.0, 1.0).size(), 5u);
    EXPECT_EQ(sample_timestamps(0.4, 1.0).size(), 1u);
    EXPECT_EQ(sample_timestamps(2.5, 2.0).size(), 5u);
    EXPECT_THROW(sample_timestamps(1.0, 0.0), InputError);
}

TEST(FrameSampling, TimestampsStrictlyIncrease) {
    for (double d : {0.3, 1.0, 2.7, 9.99, 30.0})
        for (double fps : {0.5, 1.0, 3.0}) {
            auto ts = sample_timestamps(d, fps);
            ASSERT_GE(ts.size(), 1u);
            EXPECT_EQ(ts[0], 0.0);
            for (size_t i = 1; i < ts.size(); ++i) EXPECT_GT(ts[i], ts[i - 1]);
        }
}

TEST(FrameSampling, VideoDirectoryAtOneFps) {
    auto dir = temp_dir("clip");
    std::vector<Image> frames;
    for (int i = 0; i < 10; ++i) frames.push_back(Image(16, 16, static_cast<std::uint8_t>(i * 20)));
    write_video(dir / "clip", frames, 2.0);
    auto out = load_frames(dir / "clip", Modality::Video, 1.0);
    ASSERT_EQ(out.size(), 5u);
    for (size_t i = 0; i < out.size(); ++i) {
        EXPECT_EQ(out[i].timestamp_index, static_cast<int>(i));
        EXPECT_EQ(out[i].pixels.at(0, 0, 0), static_cast<std::uint8_t>(i * 2 * 20));
    }
}

TEST(FrameSampling, ShortClipGivesOneFrame) {
    auto dir = temp_dir("short");
    write_video(dir / "c", {Image(8, 8, 9)}, 2.5);
    EXPECT_EQ(load_frames(dir / "c", Modality::Video, 1.0).size(), 1u);
}

TEST(FrameSampling, StillImageIsOneFrame) {
    auto dir = temp_dir("still");
    write_image(dir / "a.png", gradient_image(20, 30));
    auto out = load_frames(dir / "a.png", Modality::Image, 1.0);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].timestamp_index, 0);
    EXPECT_EQ(out[0].pixels.width, 30);
}

TEST(FrameSampling, UnreadableMediaIsIoError) {
    auto dir = temp_dir("bad");
    EXPECT_THROW(load_frames(dir / "missing.png", Modality::Image, 1.0), IoError);
    EXPECT_THROW(load_frames(dir / "nope", Modality::Video, 1.0), IoError);
}

TEST(Image, PngRoundTripIsLossless) {
    auto dir = temp_dir("png");
    Image img = gradient_image(13, 17);
    write_image(dir / "x.png", img);
    Image back = read_image(dir / "x.png");
    EXPECT_EQ(back.rgb, img.rgb);
}
