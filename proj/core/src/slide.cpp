#include "slidekit/slide.hpp"

#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "slidekit/common.hpp"
#include "slidekit/rng.hpp"

namespace slidekit {

namespace {

class MemoryPixelSource : public PixelSource {
public:
    explicit MemoryPixelSource(RgbImage image) : image_(std::move(image)) {}

    void read_window(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h,
                     std::uint8_t* out) const override {
        for (std::int64_t row = 0; row < h; ++row) {
            const std::uint8_t* src = image_.at(x, y + row);
            std::copy(src, src + w * 3, out + static_cast<std::size_t>(row) * w * 3);
        }
    }

    const RgbImage& image() const { return image_; }

private:
    RgbImage image_;
};

// Raw .rgb payload, windowed with pread so concurrent reads need no locking.
class RawFilePixelSource : public PixelSource {
public:
    RawFilePixelSource(const std::filesystem::path& path, std::int64_t width, std::int64_t height)
        : width_(width), height_(height) {
        file_ = std::fopen(path.string().c_str(), "rb");
        if (!file_) throw IoError("cannot open raw slide payload: " + path.string());
        auto expect = static_cast<std::uintmax_t>(width) * height * 3;
        std::error_code ec;
        auto size = std::filesystem::file_size(path, ec);
        if (ec || size != expect) {
            std::fclose(file_);
            file_ = nullptr;
            throw IoError("raw slide payload size mismatch: " + path.string());
        }
        fd_ = fileno(file_);
    }

    ~RawFilePixelSource() override {
        if (file_) std::fclose(file_);
    }

    void read_window(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h,
                     std::uint8_t* out) const override {
        for (std::int64_t row = 0; row < h; ++row) {
            std::int64_t offset = ((y + row) * width_ + x) * 3;
            ssize_t n = pread(fd_, out + static_cast<std::size_t>(row) * w * 3,
                              static_cast<std::size_t>(w) * 3, offset);
            if (n != w * 3) throw IoError("raw slide window read failed");
        }
    }

private:
    std::int64_t width_;
    std::int64_t height_;
    std::FILE* file_ = nullptr;
    int fd_ = -1;
};

nlohmann::json sidecar_json(const SlideRaster& slide) {
    nlohmann::ordered_json j;
    j["slide_id"] = slide.slide_id();
    j["width_px"] = slide.width_px();
    j["height_px"] = slide.height_px();
    j["base_magnification"] = slide.base_magnification();
    return j;
}

std::filesystem::path sidecar_path(const std::filesystem::path& payload) {
    std::filesystem::path p = payload;
    p += ".json";
    return p;
}

}  // namespace

SlideRaster::SlideRaster(std::string slide_id, std::int64_t width_px, std::int64_t height_px,
                         double base_magnification, std::shared_ptr<PixelSource> source)
    : slide_id_(std::move(slide_id)),
      width_px_(width_px),
      height_px_(height_px),
      base_magnification_(base_magnification),
      source_(std::move(source)) {
    if (width_px_ <= 0 || height_px_ <= 0) {
        throw InputError("slide dimensions must be positive");
    }
    if (!(base_magnification_ > 0.0)) {
        throw InputError("base magnification must be positive");
    }
}

RgbImage SlideRaster::read_window(std::int64_t x, std::int64_t y, std::int64_t w,
                                  std::int64_t h) const {
    if (w <= 0 || h <= 0) throw BoundsError("window dimensions must be positive");
    if (x < 0 || y < 0 || x + w > width_px_ || y + h > height_px_) {
        throw BoundsError("window [" + std::to_string(x) + "," + std::to_string(y) + " " +
                          std::to_string(w) + "x" + std::to_string(h) + "] outside slide " +
                          std::to_string(width_px_) + "x" + std::to_string(height_px_));
    }
    RgbImage out(w, h);
    source_->read_window(x, y, w, h, out.pixels.data());
    return out;
}

std::vector<Blob> sample_blobs(const SyntheticSlideSpec& spec) {
    if (spec.blob_radius_min < 1 || spec.blob_radius_max < spec.blob_radius_min) {
        throw InputError("invalid blob radius range");
    }
    auto rng = make_rng(derive_seed(spec.seed, "synthetic-blobs"));
    std::vector<Blob> blobs;
    blobs.reserve(static_cast<std::size_t>(spec.blob_count));
    const std::size_t radius_span =
        static_cast<std::size_t>(spec.blob_radius_max - spec.blob_radius_min + 1);
    for (int i = 0; i < spec.blob_count; ++i) {
        Blob b;
        b.cx = static_cast<std::int64_t>(next_index(rng, static_cast<std::size_t>(spec.width_px)));
        b.cy = static_cast<std::int64_t>(next_index(rng, static_cast<std::size_t>(spec.height_px)));
        b.rx = spec.blob_radius_min + static_cast<std::int64_t>(next_index(rng, radius_span));
        b.ry = spec.blob_radius_min + static_cast<std::int64_t>(next_index(rng, radius_span));
        blobs.push_back(b);
    }
    return blobs;
}

SlideRaster generate_synthetic_slide(const SyntheticSlideSpec& spec, double base_magnification,
                                     const std::string& slide_id) {
    if (spec.width_px < 512 || spec.height_px < 512) {
        throw InputError("synthetic slide dimensions must be at least 512 per axis");
    }
    if (spec.blob_count < 0) throw InputError("blob_count must be nonnegative");

    RgbImage image(spec.width_px, spec.height_px);
    for (std::size_t i = 0; i < image.pixels.size(); i += 3) {
        image.pixels[i] = spec.background_color.r;
        image.pixels[i + 1] = spec.background_color.g;
        image.pixels[i + 2] = spec.background_color.b;
    }

    for (const Blob& b : sample_blobs(spec)) {
        std::int64_t x0 = std::max<std::int64_t>(0, b.cx - b.rx);
        std::int64_t x1 = std::min<std::int64_t>(spec.width_px - 1, b.cx + b.rx);
        std::int64_t y0 = std::max<std::int64_t>(0, b.cy - b.ry);
        std::int64_t y1 = std::min<std::int64_t>(spec.height_px - 1, b.cy + b.ry);
        for (std::int64_t y = y0; y <= y1; ++y) {
            for (std::int64_t x = x0; x <= x1; ++x) {
                if (!b.contains(x, y)) continue;
                std::uint8_t* px = image.at(x, y);
                px[0] = spec.tissue_color.r;
                px[1] = spec.tissue_color.g;
                px[2] = spec.tissue_color.b;
            }
        }
    }

    std::string id = slide_id.empty() ? "synthetic-" + std::to_string(spec.seed) : slide_id;
    return SlideRaster(std::move(id), spec.width_px, spec.height_px, base_magnification,
                       std::make_shared<MemoryPixelSource>(std::move(image)));
}

void save_slide(const SlideRaster& slide, const std::filesystem::path& path) {
    RgbImage full = slide.read_window(0, 0, slide.width_px(), slide.height_px());
    std::string ext = path.extension().string();
    if (ext == ".png") {
        write_png(full, path);
    } else if (ext == ".rgb") {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open for writing: " + path.string());
        os.write(reinterpret_cast<const char*>(full.pixels.data()),
                 static_cast<std::streamsize>(full.pixels.size()));
        if (!os) throw IoError("short write: " + path.string());
    } else {
        throw InputError("unsupported slide extension (expected .rgb or .png): " + path.string());
    }
    std::ofstream meta(sidecar_path(path), std::ios::trunc);
    if (!meta) throw IoError("cannot write sidecar for: " + path.string());
    meta << sidecar_json(slide).dump(2) << "\n";
}

SlideRaster open_slide(const std::filesystem::path& path) {
    std::ifstream meta(sidecar_path(path));
    if (!meta) throw IoError("missing slide sidecar: " + sidecar_path(path).string());
    nlohmann::json j;
    try {
        meta >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad slide sidecar " + sidecar_path(path).string() + ": " + e.what());
    }
    std::string slide_id = j.at("slide_id").get<std::string>();
    auto width = j.at("width_px").get<std::int64_t>();
    auto height = j.at("height_px").get<std::int64_t>();
    double magnification = j.at("base_magnification").get<double>();

    std::string ext = path.extension().string();
    if (ext == ".png") {
        RgbImage image = read_png(path);
        if (image.width != width || image.height != height) {
            throw IoError("sidecar dimensions disagree with PNG payload: " + path.string());
        }
        return SlideRaster(slide_id, width, height, magnification,
                           std::make_shared<MemoryPixelSource>(std::move(image)));
    }
    if (ext == ".rgb") {
        return SlideRaster(slide_id, width, height, magnification,
                           std::make_shared<RawFilePixelSource>(path, width, height));
    }
    throw InputError("unsupported slide extension (expected .rgb or .png): " + path.string());
}

}  // namespace slidekit
