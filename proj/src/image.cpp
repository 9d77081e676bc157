#include "emo/image.h"

#include "emo/errors.h"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstring>

namespace emo {

namespace {

cv::Mat as_mat(const Image& img) {
    // OpenCV never writes through this header; the const_cast only satisfies its API.
    return cv::Mat(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.rgb.data()));
}

Image from_mat(const cv::Mat& m) {
    cv::Mat cont = m.isContinuous() ? m : m.clone();
    Image out(cont.rows, cont.cols);
    std::memcpy(out.rgb.data(), cont.data, out.rgb.size());
    return out;
}

}  // namespace

Image::Image(int h, int w, std::uint8_t fill)
    : height(h), width(w), rgb(static_cast<size_t>(h) * w * 3, fill) {}

void validate_image(const Image& img) {
    if (img.height < 1 || img.width < 1) throw InputError("image has zero size");
    if (img.rgb.size() != static_cast<size_t>(img.height) * img.width * 3) {
        throw InputError("image buffer length does not match " + std::to_string(img.height) + "x" +
                         std::to_string(img.width) + "x3");
    }
}

Image resize_image(const Image& img, int height, int width) {
    validate_image(img);
    if (height < 1 || width < 1) throw InputError("resize target must be positive");
    if (img.height == height && img.width == width) return img;
    const bool shrinking = height <= img.height && width <= img.width;
    cv::Mat dst;
    cv::resize(as_mat(img), dst, cv::Size(width, height), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
    return from_mat(dst);
}

Image crop_image(const Image& img, const BBox& box) {
    validate_image(img);
    if (!box.inside(img.width, img.height)) throw InputError("crop box outside image bounds");
    Image out(box.height, box.width);
    for (int y = 0; y < box.height; ++y) {
        const auto* src = &img.rgb[(static_cast<size_t>(y + box.y) * img.width + box.x) * 3];
        std::copy(src, src + static_cast<size_t>(box.width) * 3, &out.rgb[static_cast<size_t>(y) * box.width * 3]);
    }
    return out;
}

Image flip_horizontal(const Image& img) {
    validate_image(img);
    Image out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, img.width - 1 - x, c) = img.at(y, x, c);
    return out;
}

Image read_image(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw IoError("cannot read image: " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return from_mat(rgb);
}

void write_image(const std::filesystem::path& path, const Image& img) {
    validate_image(img);
    cv::Mat bgr;
    cv::cvtColor(as_mat(img), bgr, cv::COLOR_RGB2BGR);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image: " + path.string());
}

std::vector<std::uint8_t> encode_png(const Image& img) {
    validate_image(img);
    cv::Mat bgr;
    cv::cvtColor(as_mat(img), bgr, cv::COLOR_RGB2BGR);
    std::vector<std::uint8_t> buf;
    if (!cv::imencode(".png", bgr, buf)) throw IoError("png encoding failed");
    return buf;
}

}  // namespace emo
