#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slidekit/slide.hpp"

namespace slidekit {

inline constexpr std::int64_t kRegionSize = 2048;
inline constexpr double kTissueFractionMin = 0.10;
inline constexpr int kTilesPerRegion = 21;  // 1 x 2048 + 4 x 1024 + 16 x 512

/// Boolean tissue grid over downsampled blocks. Cell (cx, cy) covers pixels
/// [cx*ds, min((cx+1)*ds, W)) x [cy*ds, min((cy+1)*ds, H)).
struct TissueMask {
    std::int64_t width = 0;
    std::int64_t height = 0;
    int downsample_factor = 1;
    std::vector<std::uint8_t> bits;  // width * height, 1 = tissue

    bool tissue(std::int64_t cx, std::int64_t cy) const {
        return bits[static_cast<std::size_t>(cy) * width + cx] != 0;
    }
};

struct Region {
    std::int64_t origin_x = 0;
    std::int64_t origin_y = 0;
    double tissue_fraction = 0.0;
};

struct RegionPlan {
    std::string slide_id;
    std::vector<Region> regions;
};

/// One manifest row; serialized as a JSON-lines record with fields in the
/// order {slide_id, region_x, region_y, scale, tile_x, tile_y,
/// tissue_fraction}. Coordinates are absolute base-magnification pixels.
struct TileRecord {
    std::string slide_id;
    std::int64_t region_x = 0;
    std::int64_t region_y = 0;
    int scale = 0;  // 512, 1024, or 2048
    std::int64_t tile_x = 0;
    std::int64_t tile_y = 0;
    double tissue_fraction = 0.0;

    bool operator==(const TileRecord&) const = default;
};

struct TileManifest {
    std::vector<TileRecord> tiles;
};

/// HSV saturation of an 8-bit RGB pixel: 0 when max channel is 0, else
/// (max - min) / max.
double pixel_saturation(std::uint8_t r, std::uint8_t g, std::uint8_t b);

/// Thresholds mean block saturation: a cell is tissue iff the mean HSV
/// saturation of its pixel block strictly exceeds saturation_threshold.
/// Accumulation is in double over pixels in row-major block order.
TissueMask segment_tissue(const SlideRaster& slide, int downsample_factor,
                          double saturation_threshold, int threads = 1);

/// Enumerates the full 2048-stride grid (partial edge candidates discarded),
/// computes each candidate's tissue fraction from the mask, and keeps
/// candidates with fraction strictly greater than min_tissue_fraction.
/// Requires the mask's downsample factor to divide 2048 so that region
/// fractions are exact cell counts.
RegionPlan plan_regions(const SlideRaster& slide, const TissueMask& mask,
                        double min_tissue_fraction = kTissueFractionMin);

/// Retention predicate applied by plan_regions; strict inequality.
inline bool keeps_region(double tissue_fraction, double min_tissue_fraction = kTissueFractionMin) {
    return tissue_fraction > min_tissue_fraction;
}

/// The 21-tile multi-scale subdivision of one region: scale descending
/// (2048, 1024, 512), row-major offsets within each scale.
std::vector<TileRecord> subdivide_region(const Region& region, const std::string& slide_id);

/// plan_regions + subdivide_region over every retained region.
TileManifest build_manifest(const SlideRaster& slide, const TissueMask& mask,
                            double min_tissue_fraction = kTissueFractionMin);

void save_manifest_jsonl(const TileManifest& manifest, const std::filesystem::path& path);
TileManifest load_manifest_jsonl(const std::filesystem::path& path);

/// Grid selection for patch-mode images: up to 3x3 sub-patch cells of
/// base_cell pixels plus an always-on global resized view.
struct AnyResGrid {
    int grid_rows = 1;
    int grid_cols = 1;
    std::int64_t cell_w = 0;
    std::int64_t cell_h = 0;
    bool includes_global_view = true;
};

/// Picks the pinpoint (rows, cols) in [1,3]^2 whose canvas keeps the most
/// effective resolution when the image is scaled (aspect preserved) to fit
/// r*c cells of base_cell, then wastes the least padded canvas area. Ties
/// after that break toward fewer cells, then rows <= cols.
AnyResGrid anyres_split(std::int64_t image_w, std::int64_t image_h, std::int64_t base_cell);

}  // namespace slidekit
