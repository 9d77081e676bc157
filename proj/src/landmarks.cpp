#include "emo/landmarks.h"

namespace emo::landmarks {

namespace {

struct Layout {
    std::array<Point, kCount> shape{};
    std::array<int, kCount> mirror{};
};

Layout build_layout() {
    Layout l;
    for (int i = 0; i < kCount; ++i) l.mirror[i] = i;
    auto put = [&](int i, double x, double y) { l.shape[i] = {x, y}; };
    auto pair = [&](int a, int b, double x, double y) {
        l.shape[a] = {x, y};
        l.shape[b] = {1.0 - x, y};
        l.mirror[a] = b;
        l.mirror[b] = a;
    };

    // jaw
    pair(0, 16, 0.08, 0.30);
    pair(1, 15, 0.09, 0.42);
    pair(2, 14, 0.11, 0.54);
    pair(3, 13, 0.14, 0.65);
    pair(4, 12, 0.19, 0.75);
    pair(5, 11, 0.26, 0.84);
    pair(6, 10, 0.34, 0.91);
    pair(7, 9, 0.42, 0.95);
    put(8, 0.50, 0.97);
    // brows
    pair(17, 26, 0.16, 0.22);
    pair(18, 25, 0.22, 0.18);
    pair(19, 24, 0.29, 0.17);
    pair(20, 23, 0.36, 0.18);
    pair(21, 22, 0.43, 0.21);
    // nose bridge and nostrils
    put(27, 0.50, 0.30);
    put(28, 0.50, 0.38);
    put(29, 0.50, 0.46);
    put(30, 0.50, 0.54);
    pair(31, 35, 0.41, 0.60);
    pair(32, 34, 0.45, 0.62);
    put(33, 0.50, 0.63);
    // eyes
    pair(36, 45, 0.21, 0.32);
    pair(37, 44, 0.26, 0.29);
    pair(38, 43, 0.32, 0.29);
    pair(39, 42, 0.37, 0.33);
    pair(40, 47, 0.32, 0.35);
    pair(41, 46, 0.26, 0.35);
    // outer lip
    pair(48, 54, 0.33, 0.76);
    pair(49, 53, 0.39, 0.72);
    pair(50, 52, 0.45, 0.70);
    put(51, 0.50, 0.71);
    pair(59, 55, 0.38, 0.80);
    pair(58, 56, 0.44, 0.83);
    put(57, 0.50, 0.84);
    // inner lip
    pair(60, 64, 0.36, 0.76);
    pair(61, 63, 0.44, 0.74);
    put(62, 0.50, 0.75);
    pair(67, 65, 0.44, 0.78);
    put(66, 0.50, 0.78);
    return l;
}

const Layout& layout() {
    static const Layout l = build_layout();
    return l;
}

}  // namespace

const std::array<Point, kCount>& canonical_shape() { return layout().shape; }

const std::array<int, kCount>& mirror_index() { return layout().mirror; }

const std::vector<AuRegion>& au_regions() {
    static const std::vector<AuRegion> regions = {
        {"brows", {17, 18, 19, 20, 21, 22, 23, 24, 25, 26}},
        {"eyes", {36, 37, 38, 39, 40, 41, 42, 43, 44, 45, 46, 47}},
        {"nose", {27, 28, 29, 30, 31, 32, 33, 34, 35}},
        {"mouth_corners", {48, 54, 60, 64}},
        {"chin", {6, 7, 8, 9, 10, 57}},
        {"cheek_left", {1, 2, 3, 4, 31, 41}},
        {"cheek_right", {15, 14, 13, 12, 35, 46}},
        {"inter_brow", {21, 22, 27}},
    };
    return regions;
}

}  // namespace emo::landmarks
