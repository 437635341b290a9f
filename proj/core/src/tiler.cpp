#include "slidekit/tiler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "slidekit/common.hpp"
#include "slidekit/parallel.hpp"

namespace slidekit {

double pixel_saturation(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    std::uint8_t maxc = std::max({r, g, b});
    if (maxc == 0) return 0.0;
    std::uint8_t minc = std::min({r, g, b});
    return static_cast<double>(maxc - minc) / static_cast<double>(maxc);
}

TissueMask segment_tissue(const SlideRaster& slide, int downsample_factor,
                          double saturation_threshold, int threads) {
    if (downsample_factor < 1) throw InputError("downsample_factor must be >= 1");
    if (saturation_threshold < 0.0 || saturation_threshold >= 1.0) {
        throw InputError("saturation_threshold must lie in [0, 1)");
    }
    if (slide.width_px() <= 0 || slide.height_px() <= 0) throw InputError("empty slide");

    const std::int64_t ds = downsample_factor;
    TissueMask mask;
    mask.downsample_factor = downsample_factor;
    mask.width = (slide.width_px() + ds - 1) / ds;
    mask.height = (slide.height_px() + ds - 1) / ds;
    mask.bits.assign(static_cast<std::size_t>(mask.width) * mask.height, 0);

    // One strip of cell rows per work item; each strip reads its own window.
    parallel_for(static_cast<std::size_t>(mask.height), threads, [&](std::size_t cy) {
        std::int64_t y0 = static_cast<std::int64_t>(cy) * ds;
        std::int64_t block_h = std::min(ds, slide.height_px() - y0);
        RgbImage strip = slide.read_window(0, y0, slide.width_px(), block_h);
        for (std::int64_t cx = 0; cx < mask.width; ++cx) {
            std::int64_t x0 = cx * ds;
            std::int64_t block_w = std::min(ds, slide.width_px() - x0);
            double sum = 0.0;
            for (std::int64_t y = 0; y < block_h; ++y) {
                const std::uint8_t* px = strip.at(x0, y);
                for (std::int64_t x = 0; x < block_w; ++x, px += 3) {
                    sum += pixel_saturation(px[0], px[1], px[2]);
                }
            }
            double mean = sum / static_cast<double>(block_w * block_h);
            if (mean > saturation_threshold) {
                mask.bits[cy * static_cast<std::size_t>(mask.width) + cx] = 1;
            }
        }
    });
    return mask;
}

RegionPlan plan_regions(const SlideRaster& slide, const TissueMask& mask,
                        double min_tissue_fraction) {
    const std::int64_t ds = mask.downsample_factor;
    if (ds < 1 || kRegionSize % ds != 0) {
        throw InputError("mask downsample factor must divide the region size");
    }
    if (mask.width * ds < slide.width_px() || mask.height * ds < slide.height_px()) {
        throw InputError("mask does not cover the slide");
    }

    const std::int64_t cells_per_side = kRegionSize / ds;
    const double cells_per_region = static_cast<double>(cells_per_side * cells_per_side);
    const std::int64_t nx = slide.width_px() / kRegionSize;
    const std::int64_t ny = slide.height_px() / kRegionSize;

    RegionPlan plan;
    plan.slide_id = slide.slide_id();
    for (std::int64_t ry = 0; ry < ny; ++ry) {
        for (std::int64_t rx = 0; rx < nx; ++rx) {
            std::int64_t cx0 = rx * cells_per_side;
            std::int64_t cy0 = ry * cells_per_side;
            std::int64_t tissue_cells = 0;
            for (std::int64_t cy = cy0; cy < cy0 + cells_per_side; ++cy) {
                for (std::int64_t cx = cx0; cx < cx0 + cells_per_side; ++cx) {
                    if (mask.tissue(cx, cy)) ++tissue_cells;
                }
            }
            double fraction = static_cast<double>(tissue_cells) / cells_per_region;
            if (keeps_region(fraction, min_tissue_fraction)) {
                plan.regions.push_back({rx * kRegionSize, ry * kRegionSize, fraction});
            }
        }
    }
    return plan;
}

std::vector<TileRecord> subdivide_region(const Region& region, const std::string& slide_id) {
    std::vector<TileRecord> tiles;
    tiles.reserve(kTilesPerRegion);
    for (int scale : {2048, 1024, 512}) {
        std::int64_t per_side = kRegionSize / scale;
        for (std::int64_t ty = 0; ty < per_side; ++ty) {
            for (std::int64_t tx = 0; tx < per_side; ++tx) {
                TileRecord rec;
                rec.slide_id = slide_id;
                rec.region_x = region.origin_x;
                rec.region_y = region.origin_y;
                rec.scale = scale;
                rec.tile_x = region.origin_x + tx * scale;
                rec.tile_y = region.origin_y + ty * scale;
                rec.tissue_fraction = region.tissue_fraction;
                tiles.push_back(std::move(rec));
            }
        }
    }
    return tiles;
}

TileManifest build_manifest(const SlideRaster& slide, const TissueMask& mask,
                            double min_tissue_fraction) {
    RegionPlan plan = plan_regions(slide, mask, min_tissue_fraction);
    TileManifest manifest;
    manifest.tiles.reserve(plan.regions.size() * kTilesPerRegion);
    for (const Region& region : plan.regions) {
        auto tiles = subdivide_region(region, plan.slide_id);
        manifest.tiles.insert(manifest.tiles.end(), tiles.begin(), tiles.end());
    }
    return manifest;
}

void save_manifest_jsonl(const TileManifest& manifest, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open manifest for writing: " + path.string());
    char fraction[64];
    for (const TileRecord& t : manifest.tiles) {
        // Hand-formatted to keep field order and float text stable.
        std::snprintf(fraction, sizeof(fraction), "%.17g", t.tissue_fraction);
        os << "{\"slide_id\":" << nlohmann::json(t.slide_id).dump() << ",\"region_x\":" << t.region_x
           << ",\"region_y\":" << t.region_y << ",\"scale\":" << t.scale
           << ",\"tile_x\":" << t.tile_x << ",\"tile_y\":" << t.tile_y
           << ",\"tissue_fraction\":" << fraction << "}\n";
    }
    if (!os) throw IoError("short write: " + path.string());
}

TileManifest load_manifest_jsonl(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest: " + path.string());
    TileManifest manifest;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        TileRecord t;
        t.slide_id = j.at("slide_id").get<std::string>();
        t.region_x = j.at("region_x").get<std::int64_t>();
        t.region_y = j.at("region_y").get<std::int64_t>();
        t.scale = j.at("scale").get<int>();
        t.tile_x = j.at("tile_x").get<std::int64_t>();
        t.tile_y = j.at("tile_y").get<std::int64_t>();
        t.tissue_fraction = j.at("tissue_fraction").get<double>();
        manifest.tiles.push_back(std::move(t));
    }
    return manifest;
}

AnyResGrid anyres_split(std::int64_t image_w, std::int64_t image_h, std::int64_t base_cell) {
    if (image_w < 1 || image_h < 1) throw InputError("anyres_split: image dims must be >= 1");
    if (base_cell < 1) throw InputError("anyres_split: base_cell must be >= 1");

    const double original_area = static_cast<double>(image_w) * static_cast<double>(image_h);
    int best_r = 1, best_c = 1;
    double best_effective = -1.0;
    double best_wasted = 0.0;
    // Candidates visited fewest-cells-first with rows ascending inside a cell
    // count, so strict improvement implements the tie-breaks (fewer cells,
    // then rows <= cols).
    for (int cells = 1; cells <= 9; ++cells) {
        for (int r = 1; r <= 3; ++r) {
            if (cells % r != 0) continue;
            int c = cells / r;
            if (c < 1 || c > 3) continue;
            double canvas_w = static_cast<double>(c) * static_cast<double>(base_cell);
            double canvas_h = static_cast<double>(r) * static_cast<double>(base_cell);
            double scale = std::min(canvas_w / static_cast<double>(image_w),
                                    canvas_h / static_cast<double>(image_h));
            double scaled_area = scale * static_cast<double>(image_w) * scale *
                                 static_cast<double>(image_h);
            double effective = std::min(scaled_area, original_area);
            double wasted = canvas_w * canvas_h - effective;
            if (effective > best_effective ||
                (effective == best_effective && wasted < best_wasted)) {
                best_effective = effective;
                best_wasted = wasted;
                best_r = r;
                best_c = c;
            }
        }
    }

    AnyResGrid grid;
    grid.grid_rows = best_r;
    grid.grid_cols = best_c;
    grid.cell_w = base_cell;
    grid.cell_h = base_cell;
    grid.includes_global_view = true;
    return grid;
}

}  // namespace slidekit
