#include "emo/facial_priors.h"

#include "emo/errors.h"
#include "emo/nn.h"

#include <nlohmann/json.hpp>
#include <openssl/sha.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace emo {

ag::Mat LandmarkSet::as_matrix() const {
    ag::Mat m(size(), 2);
    for (int i = 0; i < size(); ++i) {
        m(i, 0) = points[i].x;
        m(i, 1) = points[i].y;
    }
    return m;
}

const std::vector<std::string>& AgrVocabulary::ages() {
    static const std::vector<std::string> v{"child", "teen", "adult", "senior"};
    return v;
}
const std::vector<std::string>& AgrVocabulary::genders() {
    static const std::vector<std::string> v{"female", "male"};
    return v;
}
const std::vector<std::string>& AgrVocabulary::races() {
    static const std::vector<std::string> v{"group-A", "group-B", "group-C", "group-D"};
    return v;
}
bool AgrVocabulary::valid(const AGRAttributes& agr) {
    auto in = [](const std::vector<std::string>& v, const std::string& s) {
        return std::find(v.begin(), v.end(), s) != v.end();
    };
    for (double c : agr.confidences)
        if (!(c >= 0.0 && c <= 1.0)) return false;
    return in(ages(), agr.age_bucket) && in(genders(), agr.gender) && in(races(), agr.race);
}

// --- detection --------------------------------------------------------------

std::vector<Detection> BlobFaceDetector::detect(const Image& img) const {
    validate_image(img);
    const int H = img.height;
    const int W = img.width;
    std::vector<std::uint8_t> fg(static_cast<size_t>(H) * W, 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double mean = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
            fg[static_cast<size_t>(y) * W + x] = mean >= opts_.brightness_threshold;
        }

    std::vector<Detection> out;
    std::vector<std::uint8_t> seen(fg.size(), 0);
    std::deque<std::pair<int, int>> queue;
    for (int sy = 0; sy < H; ++sy)
        for (int sx = 0; sx < W; ++sx) {
            const size_t s = static_cast<size_t>(sy) * W + sx;
            if (!fg[s] || seen[s]) continue;
            long area = 0;
            int x0 = sx, x1 = sx, y0 = sy, y1 = sy;
            queue.emplace_back(sx, sy);
            seen[s] = 1;
            while (!queue.empty()) {
                auto [x, y] = queue.front();
                queue.pop_front();
                ++area;
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                const int nx[4] = {x + 1, x - 1, x, x};
                const int ny[4] = {y, y, y + 1, y - 1};
                for (int k = 0; k < 4; ++k) {
                    if (nx[k] < 0 || ny[k] < 0 || nx[k] >= W || ny[k] >= H) continue;
                    const size_t n = static_cast<size_t>(ny[k]) * W + nx[k];
                    if (fg[n] && !seen[n]) {
                        seen[n] = 1;
                        queue.emplace_back(nx[k], ny[k]);
                    }
                }
            }
            if (area < opts_.min_area) continue;
            BBox box{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
            out.push_back({box, double(area) / double(box.area())});
        }
    std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.box.area() > b.box.area();
    });
    return out;
}

std::vector<Detection> ScriptedFaceDetector::detect(const Image& img) const {
    validate_image(img);
    std::vector<Detection> out;
    for (const auto& d : script_) {
        if (d.box.inside(img.width, img.height)) out.push_back(d);
    }
    return out;
}

DetectionCache::DetectionCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::filesystem::path DetectionCache::record_path(const std::string& media_id, int frame_index) const {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(media_id.data()), media_id.size(), digest);
    std::ostringstream name;
    for (int i = 0; i < 8; ++i) name << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    name << std::dec << "_" << frame_index << ".det";
    return dir_ / name.str();
}

namespace {

constexpr char kCacheMagic[4] = {'E', 'M', 'O', 'D'};
constexpr std::uint32_t kCacheVersion = 1;
constexpr double kVisibleBrightness = 64.0 / 255.0;

}  // namespace

std::optional<DetectionCache::Record> DetectionCache::get(const std::string& media_id, int frame_index) const {
    std::ifstream in(record_path(media_id, frame_index), std::ios::binary);
    if (!in) return std::nullopt;
    char magic[4];
    std::uint32_t version = 0;
    std::uint8_t found = 0;
    std::int32_t box[4];
    double conf = 0.0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&found), 1);
    in.read(reinterpret_cast<char*>(box), sizeof(box));
    in.read(reinterpret_cast<char*>(&conf), sizeof(conf));
    if (!in || std::memcmp(magic, kCacheMagic, 4) != 0 || version != kCacheVersion) return std::nullopt;
    return Record{found != 0, BBox{box[0], box[1], box[2], box[3]}, conf};
}

void DetectionCache::put(const std::string& media_id, int frame_index, const Record& rec) const {
    static std::atomic<unsigned long> counter{0};
    const auto final_path = record_path(media_id, frame_index);
    std::ostringstream tmp_name;
    tmp_name << final_path.filename().string() << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id())
             << "." << counter.fetch_add(1);
    const auto tmp = dir_ / tmp_name.str();
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write detection cache record: " + tmp.string());
        const std::uint8_t found = rec.found ? 1 : 0;
        const std::int32_t box[4] = {rec.box.x, rec.box.y, rec.box.width, rec.box.height};
        out.write(kCacheMagic, 4);
        out.write(reinterpret_cast<const char*>(&kCacheVersion), sizeof(kCacheVersion));
        out.write(reinterpret_cast<const char*>(&found), 1);
        out.write(reinterpret_cast<const char*>(box), sizeof(box));
        out.write(reinterpret_cast<const char*>(&rec.confidence), sizeof(rec.confidence));
    }
    std::filesystem::rename(tmp, final_path);
}

FaceCropper::FaceCropper(std::shared_ptr<const FaceDetector> detector, int crop_size,
                         std::shared_ptr<const DetectionCache> cache)
    : detector_(std::move(detector)), crop_size_(crop_size), cache_(std::move(cache)) {
    if (!detector_) throw ConfigError("FaceCropper needs a detector");
    if (crop_size_ < 1) throw ConfigError("crop size must be positive");
}

FaceCrop FaceCropper::make_crop(const Image& img, const BBox& box, double conf, bool fallback) const {
    FaceCrop c;
    c.pixels = resize_image(crop_image(img, box), crop_size_, crop_size_);
    c.bbox = box;
    c.detector_confidence = std::clamp(conf, 0.0, 1.0);
    c.fallback = fallback;
    return c;
}

std::optional<FaceCrop> FaceCropper::detect_and_crop(const Frame& frame) const {
    validate_image(frame.pixels);
    auto dets = detector_->detect(frame.pixels);
    if (dets.empty()) return std::nullopt;
    // Single-subject assumption: keep only the most confident face.
    auto best = std::max_element(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        return a.confidence < b.confidence;
    });
    return make_crop(frame.pixels, best->box, best->confidence, false);
}

FaceCrop center_fallback_crop(const Image& img, int crop_size) {
    validate_image(img);
    const int side = std::min(img.height, img.width);
    BBox box{(img.width - side) / 2, (img.height - side) / 2, side, side};
    FaceCrop c;
    c.pixels = resize_image(crop_image(img, box), crop_size, crop_size);
    c.bbox = box;
    c.detector_confidence = 0.0;
    c.fallback = true;
    return c;
}

FaceCrop FaceCropper::crop_or_fallback(const Frame& frame, const std::string& media_id) const {
    validate_image(frame.pixels);
    if (cache_ && !media_id.empty()) {
        if (auto rec = cache_->get(media_id, frame.timestamp_index)) {
            if (rec->found && rec->box.inside(frame.pixels.width, frame.pixels.height)) {
                return make_crop(frame.pixels, rec->box, rec->confidence, false);
            }
            if (!rec->found) return center_fallback_crop(frame.pixels, crop_size_);
        }
    }
    auto crop = detect_and_crop(frame);
    if (cache_ && !media_id.empty()) {
        DetectionCache::Record rec;
        if (crop) rec = {true, crop->bbox, crop->detector_confidence};
        cache_->put(media_id, frame.timestamp_index, rec);
    }
    if (crop) return *crop;
    return center_fallback_crop(frame.pixels, crop_size_);
}

// --- toy expert -----------------------------------------------------------------

namespace {

void check_toy_config(const ToyExpertConfig& c) {
    if (c.patch_size < 1 || c.input_size % c.patch_size != 0) {
        throw ConfigError("toy expert: input size must be a multiple of the patch size");
    }
    if (c.cell_size < 1 || c.patch_size % c.cell_size != 0) {
        throw ConfigError("toy expert: patch size must be a multiple of the cell size");
    }
    if (c.coarse_block < c.cell_size || c.coarse_block % c.cell_size != 0 || c.input_size % c.coarse_block != 0) {
        throw ConfigError("toy expert: coarse block must be a multiple of the cell size dividing the input");
    }
}

}  // namespace

namespace {

ag::Mat seeded_projection(const ToyExpertConfig& c) {
    check_toy_config(c);
    nn::Rng rng(c.seed);
    const int cells = c.patch_size / c.cell_size;
    const int f = cells * cells * 3;
    return nn::randn(f, c.channels, 1.0 / std::sqrt(double(f)), rng);
}

}  // namespace

ToyFacialExpert::ToyFacialExpert(ToyExpertConfig cfg) : ToyFacialExpert(cfg, seeded_projection(cfg)) {}

ToyFacialExpert::ToyFacialExpert(ToyExpertConfig cfg, ag::Mat projection)
    : cfg_(std::move(cfg)), projection_(std::move(projection)) {
    check_toy_config(cfg_);
    const int f = features_per_patch();
    if (projection_.rows() != f || projection_.cols() != cfg_.channels) {
        throw ConfigError("toy expert: projection must be " + std::to_string(f) + "x" + std::to_string(cfg_.channels));
    }
    if (cfg_.channels < f) {
        throw ConfigError("toy expert: channels must be >= " + std::to_string(f) + " for landmark decoding");
    }
    // Right inverse: (x P) P^T (P P^T)^-1 = x for every feature row x.
    const ag::Mat gram = projection_ * projection_.transpose();
    unprojection_ = projection_.transpose() * gram.inverse();
}

int ToyFacialExpert::features_per_patch() const {
    const int cells = cfg_.patch_size / cfg_.cell_size;
    return cells * cells * 3;
}

FacialEmbedding ToyFacialExpert::encode(const FaceCrop& crop) const {
    validate_image(crop.pixels);
    if (crop.pixels.height != cfg_.input_size || crop.pixels.width != cfg_.input_size) {
        throw InputError("toy expert expects a " + std::to_string(cfg_.input_size) + "x" +
                         std::to_string(cfg_.input_size) + " crop");
    }
    const int grid = cfg_.input_size / cfg_.patch_size;
    const int cells = cfg_.patch_size / cfg_.cell_size;
    const double norm = 1.0 / (255.0 * cfg_.cell_size * cfg_.cell_size);
    ag::Mat feats(grid * grid, features_per_patch());
    for (int py = 0; py < grid; ++py)
        for (int px = 0; px < grid; ++px) {
            int col = 0;
            for (int cy = 0; cy < cells; ++cy)
                for (int cx = 0; cx < cells; ++cx)
                    for (int c = 0; c < 3; ++c) {
                        double sum = 0.0;
                        for (int y = 0; y < cfg_.cell_size; ++y)
                            for (int x = 0; x < cfg_.cell_size; ++x) {
                                const int iy = py * cfg_.patch_size + cy * cfg_.cell_size + y;
                                const int ix = px * cfg_.patch_size + cx * cfg_.cell_size + x;
                                sum += crop.pixels.at(iy, ix, c);
                            }
                        feats(py * grid + px, col++) = sum * norm;
                    }
        }
    return FacialEmbedding{feats * projection_};
}

std::pair<LandmarkSet, AGRAttributes> ToyFacialExpert::decode(const FacialEmbedding& embedding) const {
    const int grid = cfg_.input_size / cfg_.patch_size;
    if (embedding.tokens.rows() != grid * grid || embedding.tokens.cols() != cfg_.channels) {
        throw InputError("toy expert: embedding shape mismatch");
    }
    if (!embedding.tokens.allFinite()) throw NumericError("toy expert: non-finite embedding");

    const ag::Mat feats = embedding.tokens * unprojection_;
    const int cells = cfg_.patch_size / cfg_.cell_size;
    const int coarse = cfg_.input_size / cfg_.coarse_block;  // coarse grid side
    const int cells_per_block = cfg_.coarse_block / cfg_.cell_size;

    // Per-channel coarse block means.
    std::vector<std::array<double, 3>> block(static_cast<size_t>(coarse) * coarse, {0.0, 0.0, 0.0});
    for (int py = 0; py < grid; ++py)
        for (int px = 0; px < grid; ++px) {
            int col = 0;
            for (int cy = 0; cy < cells; ++cy)
                for (int cx = 0; cx < cells; ++cx)
                    for (int c = 0; c < 3; ++c) {
                        const int gy = (py * cells + cy) / cells_per_block;
                        const int gx = (px * cells + cx) / cells_per_block;
                        block[static_cast<size_t>(gy) * coarse + gx][c] += feats(py * grid + px, col++);
                    }
        }
    const double per_block = 1.0 / double(cells_per_block * cells_per_block);
    std::vector<double> brightness(block.size());
    std::array<double, 3> channel_mean{0.0, 0.0, 0.0};
    for (size_t i = 0; i < block.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            block[i][c] *= per_block;
            channel_mean[c] += block[i][c] / double(block.size());
        }
        brightness[i] = (block[i][0] + block[i][1] + block[i][2]) / 3.0;
    }

    LandmarkSet lm;
    // Gaussian-weighted brightness centroid around each anchor. The kernel is
    // continuous in position, so mirrored inputs give mirrored landmarks.
    const double sigma = 1.0 / coarse;
    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
    for (const auto& anchor : landmarks::canonical_shape()) {
        double wsum = 0.0, ksum = 0.0, sx = 0.0, sy = 0.0;
        for (int gy = 0; gy < coarse; ++gy)
            for (int gx = 0; gx < coarse; ++gx) {
                const double cx = (gx + 0.5) / coarse;
                const double cy = (gy + 0.5) / coarse;
                const double dx = cx - anchor.x, dy = cy - anchor.y;
                const double k = std::exp(-(dx * dx + dy * dy) * inv_two_var);
                const double w = k * std::max(0.0, brightness[static_cast<size_t>(gy) * coarse + gx]);
                ksum += k;
                wsum += w;
                sx += w * cx;
                sy += w * cy;
            }
        // Visible when the kernel-averaged brightness clears the detector's foreground level.
        const bool visible = wsum > kVisibleBrightness * ksum;
        landmarks::Point p = visible ? landmarks::Point{sx / wsum, sy / wsum} : anchor;
        p.x = std::clamp(p.x, 0.0, 1.0);
        p.y = std::clamp(p.y, 0.0, 1.0);
        lm.points.push_back(p);
        lm.visible.push_back(visible);
    }
    if (cfg_.scripted_agr) return {lm, *cfg_.scripted_agr};

    // Attributes from coarse colour statistics; bucket confidence is 1 at a
    // bucket centre and 0.5 on a boundary.
    auto bucket = [](double v, int n) {
        // Quantize first so rounding noise in the recovered features cannot flip a bucket.
        const double s = std::round(std::clamp(v, 0.0, 1.0) * n * 1e9) / 1e9;
        const int idx = std::min(n - 1, static_cast<int>(std::floor(s)));
        const double frac = s - idx;
        return std::pair<int, double>{idx, 1.0 - std::abs(frac - 0.5)};
    };
    const double mean = (channel_mean[0] + channel_mean[1] + channel_mean[2]) / 3.0;
    auto [age_idx, age_conf] = bucket(mean, 4);
    const double redness = channel_mean[0] - channel_mean[2];
    const double redness_q = std::round(redness * 1e9) / 1e9;
    const bool female = redness_q > 0.15;
    const double gender_conf = std::min(1.0, 0.5 + 2.0 * std::abs(redness_q - 0.15));
    auto [race_idx, race_conf] = bucket(channel_mean[1], 4);

    AGRAttributes agr;
    agr.age_bucket = AgrVocabulary::ages()[age_idx];
    agr.gender = female ? "female" : "male";
    agr.race = AgrVocabulary::races()[race_idx];
    agr.confidences = {age_conf, gender_conf, race_conf};
    return {lm, agr};
}

void ToyFacialExpert::save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["kind"] = "toy";
    j["input_size"] = cfg_.input_size;
    j["patch_size"] = cfg_.patch_size;
    j["cell_size"] = cfg_.cell_size;
    j["coarse_block"] = cfg_.coarse_block;
    j["channels"] = cfg_.channels;
    std::vector<std::vector<double>> rows(static_cast<size_t>(projection_.rows()));
    for (Eigen::Index r = 0; r < projection_.rows(); ++r)
        for (Eigen::Index c = 0; c < projection_.cols(); ++c) rows[r].push_back(projection_(r, c));
    j["projection"] = rows;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write expert weights: " + path.string());
    out << j.dump() << "\n";
}

std::unique_ptr<FacialExpert> make_expert(const std::string& weights, const ToyExpertConfig& cfg) {
    if (weights == "toy") return std::make_unique<ToyFacialExpert>(cfg);
    std::ifstream in(weights);
    if (!in) throw IoError("cannot read expert weights: " + weights);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed expert weights " + weights + ": " + e.what());
    }
    if (j.value("kind", "") != "toy") throw ConfigError("unsupported expert kind in " + weights);
    ToyExpertConfig c = cfg;
    c.input_size = j.at("input_size");
    c.patch_size = j.at("patch_size");
    c.cell_size = j.at("cell_size");
    c.coarse_block = j.at("coarse_block");
    c.channels = j.at("channels");
    const auto rows = j.at("projection").get<std::vector<std::vector<double>>>();
    ag::Mat p(static_cast<Eigen::Index>(rows.size()), c.channels);
    for (size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != static_cast<size_t>(c.channels)) throw ConfigError("expert projection row width mismatch");
        for (int k = 0; k < c.channels; ++k) p(static_cast<Eigen::Index>(r), k) = rows[r][k];
    }
    return std::make_unique<ToyFacialExpert>(c, std::move(p));
}

AURegionMask build_au_regions(const LandmarkSet& lm, int grid_rows, int grid_cols) {
    const auto& regions = landmarks::au_regions();
    AURegionMask out;
    out.masks = ag::Mask::Constant(static_cast<Eigen::Index>(regions.size()), grid_rows * grid_cols, false);
    for (size_t r = 0; r < regions.size(); ++r) {
        bool any = false;
        for (int idx : regions[r].landmarks) {
            if (idx >= lm.size() || !lm.visible[idx]) continue;
            const auto& p = lm.points[idx];
            const int row = std::min(grid_rows - 1, static_cast<int>(std::floor(p.y * grid_rows)));
            const int col = std::min(grid_cols - 1, static_cast<int>(std::floor(p.x * grid_cols)));
            out.masks(static_cast<Eigen::Index>(r), row * grid_cols + col) = true;
            any = true;
        }
        if (!any) {
            out.masks.row(static_cast<Eigen::Index>(r)).setConstant(true);
            out.fallback_regions.push_back(static_cast<int>(r));
        }
    }
    return out;
}

}  // namespace emo
