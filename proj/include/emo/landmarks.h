#pragma once

// 68-point facial landmark layout (iBUG ordering) and the action-unit regions
// used by local face attention.

#include <array>
#include <string_view>
#include <vector>

namespace emo::landmarks {

inline constexpr int kCount = 68;

struct Point {
    double x;
    double y;
};

/// Mean face shape in crop-normalized coordinates, mirror-symmetric about x = 0.5.
const std::array<Point, kCount>& canonical_shape();

/// Index of the landmark that a horizontal flip maps landmark i onto.
const std::array<int, kCount>& mirror_index();

struct AuRegion {
    std::string_view name;
    std::vector<int> landmarks;
};

/// Brows, eyes, nose, mouth corners, chin, left cheek, right cheek, inter-brow.
const std::vector<AuRegion>& au_regions();

}  // namespace emo::landmarks
