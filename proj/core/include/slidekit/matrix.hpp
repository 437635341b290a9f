#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace slidekit {

enum class Provenance : std::uint32_t { tile = 0, region = 1, compressed = 2, text = 3 };

/// Dense row-major matrix of embedding vectors. Values are kept in double
/// in memory; the on-disk format is 32-bit floats (see save_feature_matrix).
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t dim = 0;
    Provenance provenance = Provenance::tile;
    std::vector<double> data;  // rows * dim, row-major

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t r, std::size_t d, Provenance p = Provenance::tile)
        : rows(r), dim(d), provenance(p), data(r * d, 0.0) {}

    std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

/// Throws NumericError if any entry is NaN or infinite.
void validate_finite(const FeatureMatrix& m, const std::string& context);

// Feature file format (the import path for features from external models):
//   16-byte header: magic "FMX1" (u32 LE), rows (u32 LE), dim (u32 LE),
//   provenance code (u32 LE), then rows*dim little-endian IEEE-754 binary32
//   values in row-major order.
inline constexpr std::uint32_t kFeatureMagic = 0x31584D46u;  // "FMX1"

void save_feature_matrix(const FeatureMatrix& m, const std::filesystem::path& path);
FeatureMatrix load_feature_matrix(const std::filesystem::path& path);

/// Header check used by resume logic: true iff the file exists, carries the
/// magic, and its payload length matches the declared shape.
bool feature_file_intact(const std::filesystem::path& path);

/// FNV-1a 64 over a file's bytes, hex-encoded. Used for resumable pipelines.
std::string file_content_hash(const std::filesystem::path& path);

}  // namespace slidekit
