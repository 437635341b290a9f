#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace slidekit {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

/// Interleaved 8-bit RGB, row-major, no alpha.
struct RgbImage {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<std::uint8_t> pixels;  // width * height * 3

    RgbImage() = default;
    RgbImage(std::int64_t w, std::int64_t h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t* at(std::int64_t x, std::int64_t y) {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    const std::uint8_t* at(std::int64_t x, std::int64_t y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
};

/// Backing store for slide pixels. Implementations must support concurrent
/// read_window calls; the raster is read-only after construction.
class PixelSource {
public:
    virtual ~PixelSource() = default;
    virtual void read_window(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h,
                             std::uint8_t* out) const = 0;
};

/// An addressable RGB plane with magnification metadata. Window reads outside
/// the bounds are errors; there is no clamping.
class SlideRaster {
public:
    SlideRaster(std::string slide_id, std::int64_t width_px, std::int64_t height_px,
                double base_magnification, std::shared_ptr<PixelSource> source);

    const std::string& slide_id() const { return slide_id_; }
    std::int64_t width_px() const { return width_px_; }
    std::int64_t height_px() const { return height_px_; }
    double base_magnification() const { return base_magnification_; }

    RgbImage read_window(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h) const;

private:
    std::string slide_id_;
    std::int64_t width_px_;
    std::int64_t height_px_;
    double base_magnification_;
    std::shared_ptr<PixelSource> source_;
};

struct SyntheticSlideSpec {
    std::uint64_t seed = 0;
    std::int64_t width_px = 0;
    std::int64_t height_px = 0;
    int blob_count = 0;
    int blob_radius_min = 64;
    int blob_radius_max = 512;
    Rgb tissue_color{200, 90, 160};   // roughly H&E pink
    Rgb background_color{245, 245, 245};
};

/// Axis-aligned ellipse painted as tissue.
struct Blob {
    std::int64_t cx = 0, cy = 0;
    std::int64_t rx = 1, ry = 1;
    bool contains(std::int64_t x, std::int64_t y) const {
        double dx = static_cast<double>(x - cx) / static_cast<double>(rx);
        double dy = static_cast<double>(y - cy) / static_cast<double>(ry);
        return dx * dx + dy * dy <= 1.0;
    }
};

/// The blob geometry a spec deterministically expands to. Exposed so callers
/// can recompute tissue membership without scanning pixels.
std::vector<Blob> sample_blobs(const SyntheticSlideSpec& spec);

/// Builds an in-memory slide: background fill plus blob_count elliptical
/// tissue blobs. Byte-identical output for identical specs. Dimensions below
/// 512 per axis are rejected.
SlideRaster generate_synthetic_slide(const SyntheticSlideSpec& spec, double base_magnification = 40.0,
                                     const std::string& slide_id = "");

// Slide serialization: pixel payload as raw RGB (.rgb) or PNG (.png), plus a
// JSON sidecar <payload>.json with {slide_id, width_px, height_px,
// base_magnification}. open_slide picks the reader from the extension; raw
// files are windowed lazily, PNG is decoded up front.
void save_slide(const SlideRaster& slide, const std::filesystem::path& path);
SlideRaster open_slide(const std::filesystem::path& path);

RgbImage read_png(const std::filesystem::path& path);
void write_png(const RgbImage& image, const std::filesystem::path& path);

}  // namespace slidekit
