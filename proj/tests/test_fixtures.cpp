#include "emo/dataset.h"
#include "emo/errors.h"
#include "emo/fixtures.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <map>

using namespace emo;
namespace fs = std::filesystem;

TEST(Fixtures, SignaturesAreZeroMeanPerBlockAndDistinct) {
    for (int k = 0; k < 7; ++k) {
        auto s = fixtures::class_signature(k);
        for (int c = 0; c < 3; ++c) EXPECT_EQ(s[0][c] + s[1][c] + s[2][c] + s[3][c], 0);
        for (int j = 0; j < k; ++j) EXPECT_NE(s, fixtures::class_signature(j));
    }
}

TEST(Fixtures, TinyPresetWritesReadableDataset) {
    auto root = fs::temp_directory_path() / "emo_test_fixtures_tiny";
    fs::remove_all(root);
    auto ds = fixtures::generate(root, fixtures::preset("tiny"));
    auto back = read_dataset(root);
    EXPECT_EQ(back.classes, ds.classes);
    ASSERT_EQ(back.records.size(), ds.records.size());
    std::map<std::string, int> per_modality;
    for (const auto& r : back.records) {
        EXPECT_TRUE(fs::exists(back.media_path(r))) << r.media;
        per_modality[to_string(r.modality)]++;
        if (r.modality == Modality::Video) {
            auto frames = load_frames(back.media_path(r), r.modality, 1.0);
            EXPECT_EQ(frames.size(), 2u);
            EXPECT_EQ(back.captions(r).size(), 2u);
        }
    }
    EXPECT_EQ(per_modality["video"], 7);
    EXPECT_EQ(per_modality["image"], 7 * 3 + 2);
}

TEST(Fixtures, GenerationIsDeterministic) {
    auto a = fs::temp_directory_path() / "emo_test_fixtures_a";
    auto b = fs::temp_directory_path() / "emo_test_fixtures_b";
    fs::remove_all(a);
    fs::remove_all(b);
    auto o = fixtures::preset("tiny");
    auto da = fixtures::generate(a, o);
    auto db = fixtures::generate(b, o);
    ASSERT_EQ(da.records.size(), db.records.size());
    for (size_t i = 0; i < da.records.size(); ++i) {
        if (da.records[i].modality != Modality::Image) continue;
        EXPECT_EQ(read_image(da.media_path(da.records[i])).rgb, read_image(db.media_path(db.records[i])).rgb);
    }
}

TEST(Fixtures, UnknownPresetIsConfigError) { EXPECT_THROW(fixtures::preset("huge"), ConfigError); }

TEST(Dataset, LabelOutsideClassSetIsRejected) {
    auto root = fs::temp_directory_path() / "emo_test_dataset_bad";
    fs::remove_all(root);
    DatasetIndex ds;
    ds.name = "bad";
    ds.classes = {"a", "b"};
    ds.root = root;
    ds.records.push_back({"x", Modality::Image, "x.png", "c", "train", false});
    write_dataset(ds);
    EXPECT_THROW(read_dataset(root), InputError);
}
