#include "slidekit/matrix.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "slidekit/common.hpp"

namespace slidekit {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void validate_finite(const FeatureMatrix& m, const std::string& context) {
    for (double v : m.data) {
        if (!std::isfinite(v)) {
            throw NumericError(context + ": non-finite value in feature matrix");
        }
    }
}

void save_feature_matrix(const FeatureMatrix& m, const std::filesystem::path& path) {
    validate_finite(m, "save_feature_matrix(" + path.string() + ")");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    put_u32(os, kFeatureMagic);
    put_u32(os, static_cast<std::uint32_t>(m.rows));
    put_u32(os, static_cast<std::uint32_t>(m.dim));
    put_u32(os, static_cast<std::uint32_t>(m.provenance));
    std::vector<float> buf(m.data.size());
    for (std::size_t i = 0; i < m.data.size(); ++i) buf[i] = static_cast<float>(m.data[i]);
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * 4));
    if (!os) throw IoError("short write: " + path.string());
}

FeatureMatrix load_feature_matrix(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open feature file: " + path.string());
    std::uint32_t magic = get_u32(is);
    if (!is || magic != kFeatureMagic) {
        throw IoError("bad feature file magic: " + path.string());
    }
    std::uint32_t rows = get_u32(is);
    std::uint32_t dim = get_u32(is);
    std::uint32_t prov = get_u32(is);
    if (!is || prov > 3) throw IoError("bad feature file header: " + path.string());
    FeatureMatrix m(rows, dim, static_cast<Provenance>(prov));
    std::vector<float> buf(static_cast<std::size_t>(rows) * dim);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (static_cast<std::size_t>(is.gcount()) != buf.size() * 4) {
        throw IoError("truncated feature file: " + path.string());
    }
    for (std::size_t i = 0; i < buf.size(); ++i) m.data[i] = static_cast<double>(buf[i]);
    validate_finite(m, "load_feature_matrix(" + path.string() + ")");
    return m;
}

bool feature_file_intact(const std::filesystem::path& path) {
    std::error_code ec;
    auto size = std::filesystem::file_size(path, ec);
    if (ec) return false;
    std::ifstream is(path, std::ios::binary);
    if (!is) return false;
    std::uint32_t magic = get_u32(is);
    std::uint32_t rows = get_u32(is);
    std::uint32_t dim = get_u32(is);
    get_u32(is);
    if (!is || magic != kFeatureMagic) return false;
    return size == 16 + static_cast<std::uintmax_t>(rows) * dim * 4;
}

std::string file_content_hash(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot hash missing file: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[8192];
    while (is) {
        is.read(buf, sizeof(buf));
        std::streamsize n = is.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return std::string(out);
}

}  // namespace slidekit
