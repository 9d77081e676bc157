#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace emo {

/// 8-bit RGB image, interleaved, row-major.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(int h, int w, std::uint8_t fill = 0);

    std::uint8_t& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    bool empty() const { return height == 0 || width == 0; }
    bool operator==(const Image&) const = default;
};

/// Axis-aligned rectangle in pixel coordinates.
struct BBox {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;

    double center_x() const { return x + width / 2.0; }
    double center_y() const { return y + height / 2.0; }
    long area() const { return static_cast<long>(width) * height; }
    bool inside(int img_w, int img_h) const {
        return x >= 0 && y >= 0 && width >= 1 && height >= 1 && x + width <= img_w && y + height <= img_h;
    }
    bool operator==(const BBox&) const = default;
};

/// Throws InputError for zero-sized images or buffers of the wrong length.
void validate_image(const Image& img);

/// Area interpolation when shrinking, bilinear when growing; identity when sizes match.
Image resize_image(const Image& img, int height, int width);
Image crop_image(const Image& img, const BBox& box);
Image flip_horizontal(const Image& img);

/// Decodes PNG/JPEG into RGB. Throws IoError when the file can't be read.
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& img);
std::vector<std::uint8_t> encode_png(const Image& img);

}  // namespace emo
