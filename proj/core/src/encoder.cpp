#include "slidekit/encoder.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "slidekit/common.hpp"
#include "slidekit/rng.hpp"
#include "slidekit/tiler.hpp"

namespace slidekit {

namespace {

constexpr int kStatCount = 8;

// Per-channel means and stddevs plus mean saturation and mean luma, all in
// [0, 1]. The stub encoder projects this vector.
std::array<double, kStatCount> channel_stats(const RgbImage& image) {
    const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
    double sum[3] = {0, 0, 0};
    double sum_sq[3] = {0, 0, 0};
    double sat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* px = image.pixels.data() + i * 3;
        for (int c = 0; c < 3; ++c) {
            double v = px[c] / 255.0;
            sum[c] += v;
            sum_sq[c] += v * v;
        }
        std::uint8_t maxc = std::max({px[0], px[1], px[2]});
        if (maxc > 0) {
            std::uint8_t minc = std::min({px[0], px[1], px[2]});
            sat += static_cast<double>(maxc - minc) / maxc;
        }
    }
    std::array<double, kStatCount> stats{};
    double inv_n = 1.0 / static_cast<double>(n);
    for (int c = 0; c < 3; ++c) {
        double mean = sum[c] * inv_n;
        stats[c] = mean;
        double var = std::max(0.0, sum_sq[c] * inv_n - mean * mean);
        stats[3 + c] = std::sqrt(var);
    }
    stats[6] = sat * inv_n;
    stats[7] = (sum[0] + sum[1] + sum[2]) * inv_n / 3.0;
    return stats;
}

}  // namespace

TileEncoder make_stub_encoder(std::uint64_t seed, int output_dim, int input_size_px,
                              const std::string& name) {
    if (output_dim < 1) throw InputError("stub encoder output_dim must be >= 1");
    auto rng = make_rng(derive_seed(seed, "stub-encoder"));
    auto projection = std::make_shared<std::vector<double>>();
    projection->resize(static_cast<std::size_t>(output_dim) * kStatCount);
    for (double& w : *projection) w = next_normal(rng);

    TileEncoder enc;
    enc.spec = {name, input_size_px, output_dim};
    enc.fn = [projection, output_dim](const RgbImage& image) {
        auto stats = channel_stats(image);
        std::vector<double> out(static_cast<std::size_t>(output_dim));
        for (int i = 0; i < output_dim; ++i) {
            double acc = 0.0;
            for (int s = 0; s < kStatCount; ++s) {
                acc += (*projection)[static_cast<std::size_t>(i) * kStatCount + s] * stats[s];
            }
            out[i] = acc;
        }
        return out;
    };
    return enc;
}

RgbImage resize_rgb(const RgbImage& image, std::int64_t out_w, std::int64_t out_h) {
    if (out_w < 1 || out_h < 1) throw InputError("resize target must be positive");
    if (image.width == out_w && image.height == out_h) return image;

    RgbImage out(out_w, out_h);
    const double sx = static_cast<double>(image.width) / static_cast<double>(out_w);
    const double sy = static_cast<double>(image.height) / static_cast<double>(out_h);
    for (std::int64_t y = 0; y < out_h; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(image.height - 1));
        std::int64_t y0 = static_cast<std::int64_t>(fy);
        std::int64_t y1 = std::min(y0 + 1, image.height - 1);
        double wy = fy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < out_w; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(image.width - 1));
            std::int64_t x0 = static_cast<std::int64_t>(fx);
            std::int64_t x1 = std::min(x0 + 1, image.width - 1);
            double wx = fx - static_cast<double>(x0);
            const std::uint8_t* p00 = image.at(x0, y0);
            const std::uint8_t* p10 = image.at(x1, y0);
            const std::uint8_t* p01 = image.at(x0, y1);
            const std::uint8_t* p11 = image.at(x1, y1);
            std::uint8_t* dst = out.at(x, y);
            for (int c = 0; c < 3; ++c) {
                double top = p00[c] * (1.0 - wx) + p10[c] * wx;
                double bottom = p01[c] * (1.0 - wx) + p11[c] * wx;
                double v = top * (1.0 - wy) + bottom * wy;
                dst[c] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
            }
        }
    }
    return out;
}

FeatureMatrix encode_tiles(const std::vector<RgbImage>& tiles, const TileEncoder& enc_a,
                           const TileEncoder& enc_b) {
    const std::size_t dim_a = static_cast<std::size_t>(enc_a.spec.output_dim);
    const std::size_t dim_b = static_cast<std::size_t>(enc_b.spec.output_dim);
    FeatureMatrix out(tiles.size(), dim_a + dim_b, Provenance::tile);

    for (std::size_t i = 0; i < tiles.size(); ++i) {
        std::vector<double> a, b;
        try {
            a = enc_a.fn(resize_rgb(tiles[i], enc_a.spec.input_size_px, enc_a.spec.input_size_px));
            b = enc_b.fn(resize_rgb(tiles[i], enc_b.spec.input_size_px, enc_b.spec.input_size_px));
        } catch (const std::exception& e) {
            throw InputError("encoder failed on tile " + std::to_string(i) + ": " + e.what());
        }
        if (a.size() != dim_a || b.size() != dim_b) {
            throw ShapeError("encoder returned wrong dimension on tile " + std::to_string(i));
        }
        auto row = out.row(i);
        std::copy(a.begin(), a.end(), row.begin());
        std::copy(b.begin(), b.end(), row.begin() + static_cast<std::ptrdiff_t>(dim_a));
    }
    validate_finite(out, "encode_tiles");
    return out;
}

std::vector<double> aggregate_region(const FeatureMatrix& tile_features, RegionPooling pooling) {
    if (tile_features.rows != static_cast<std::size_t>(kTilesPerRegion)) {
        throw ShapeError("aggregate_region expects exactly 21 tile rows, got " +
                         std::to_string(tile_features.rows));
    }
    const std::size_t dim = tile_features.dim;
    std::vector<double> out(dim, 0.0);

    if (pooling == RegionPooling::uniform) {
        for (std::size_t r = 0; r < tile_features.rows; ++r) {
            auto row = tile_features.row(r);
            for (std::size_t c = 0; c < dim; ++c) out[c] += row[c];
        }
        for (double& v : out) v /= 21.0;
        return out;
    }

    // scale_balanced: rows follow subdivide_region order (1 + 4 + 16).
    const std::size_t group_start[3] = {0, 1, 5};
    const std::size_t group_size[3] = {1, 4, 16};
    for (int g = 0; g < 3; ++g) {
        std::vector<double> mean(dim, 0.0);
        for (std::size_t r = group_start[g]; r < group_start[g] + group_size[g]; ++r) {
            auto row = tile_features.row(r);
            for (std::size_t c = 0; c < dim; ++c) mean[c] += row[c];
        }
        for (std::size_t c = 0; c < dim; ++c) out[c] += mean[c] / static_cast<double>(group_size[g]);
    }
    for (double& v : out) v /= 3.0;
    return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

double gelu_derivative(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
    return cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

ProjectorWeights make_projector(std::uint64_t seed, int in_dim, int hidden_dim, int out_dim,
                                Activation activation) {
    if (in_dim < 1 || hidden_dim < 1 || out_dim < 1) {
        throw InputError("projector dims must be >= 1");
    }
    ProjectorWeights w;
    w.in_dim = in_dim;
    w.hidden_dim = hidden_dim;
    w.out_dim = out_dim;
    w.activation = activation;
    auto rng = make_rng(derive_seed(seed, "projector"));
    w.w1.resize(static_cast<std::size_t>(in_dim) * hidden_dim);
    w.w2.resize(static_cast<std::size_t>(hidden_dim) * out_dim);
    w.b1.assign(static_cast<std::size_t>(hidden_dim), 0.0);
    w.b2.assign(static_cast<std::size_t>(out_dim), 0.0);
    for (double& v : w.w1) v = 0.02 * next_normal(rng);
    for (double& v : w.w2) v = 0.02 * next_normal(rng);
    return w;
}

FeatureMatrix project_forward(const FeatureMatrix& features, const ProjectorWeights& weights,
                              ProjectorCache* cache) {
    if (features.dim != static_cast<std::size_t>(weights.in_dim)) {
        throw ShapeError("projector in_dim " + std::to_string(weights.in_dim) +
                         " does not match feature dim " + std::to_string(features.dim));
    }
    const std::size_t rows = features.rows;
    const std::size_t hidden = static_cast<std::size_t>(weights.hidden_dim);
    const std::size_t out_dim = static_cast<std::size_t>(weights.out_dim);

    std::vector<double> pre(rows * hidden);
    std::vector<double> act(rows * hidden);
    for (std::size_t r = 0; r < rows; ++r) {
        auto x = features.row(r);
        for (std::size_t j = 0; j < hidden; ++j) {
            double acc = weights.b1[j];
            for (std::size_t i = 0; i < features.dim; ++i) {
                acc += x[i] * weights.w1[i * hidden + j];
            }
            pre[r * hidden + j] = acc;
            act[r * hidden + j] = weights.activation == Activation::gelu ? gelu(acc) : acc;
        }
    }

    FeatureMatrix out(rows, out_dim, features.provenance);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < out_dim; ++j) {
            double acc = weights.b2[j];
            for (std::size_t i = 0; i < hidden; ++i) {
                acc += act[r * hidden + i] * weights.w2[i * out_dim + j];
            }
            out.data[r * out_dim + j] = acc;
        }
    }

    if (cache) {
        cache->input = features;
        cache->pre_activation = std::move(pre);
        cache->hidden = std::move(act);
    }
    return out;
}

FeatureMatrix project(const FeatureMatrix& features, const ProjectorWeights& weights) {
    return project_forward(features, weights, nullptr);
}

ProjectorGrads project_backward(const ProjectorWeights& weights, const ProjectorCache& cache,
                                const FeatureMatrix& upstream) {
    const std::size_t rows = cache.input.rows;
    const std::size_t in_dim = static_cast<std::size_t>(weights.in_dim);
    const std::size_t hidden = static_cast<std::size_t>(weights.hidden_dim);
    const std::size_t out_dim = static_cast<std::size_t>(weights.out_dim);
    if (upstream.rows != rows || upstream.dim != out_dim) {
        throw ShapeError("projector upstream gradient shape mismatch");
    }

    ProjectorGrads g;
    g.w1.assign(in_dim * hidden, 0.0);
    g.b1.assign(hidden, 0.0);
    g.w2.assign(hidden * out_dim, 0.0);
    g.b2.assign(out_dim, 0.0);
    g.input_grad = FeatureMatrix(rows, in_dim, cache.input.provenance);

    std::vector<double> d_hidden(hidden);
    for (std::size_t r = 0; r < rows; ++r) {
        auto dy = upstream.row(r);
        const double* h = cache.hidden.data() + r * hidden;
        const double* z = cache.pre_activation.data() + r * hidden;
        auto x = cache.input.row(r);

        for (std::size_t j = 0; j < out_dim; ++j) {
            g.b2[j] += dy[j];
            for (std::size_t i = 0; i < hidden; ++i) {
                g.w2[i * out_dim + j] += h[i] * dy[j];
            }
        }
        for (std::size_t i = 0; i < hidden; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < out_dim; ++j) {
                acc += weights.w2[i * out_dim + j] * dy[j];
            }
            double dz = weights.activation == Activation::gelu ? acc * gelu_derivative(z[i]) : acc;
            d_hidden[i] = dz;
            g.b1[i] += dz;
        }
        for (std::size_t i = 0; i < in_dim; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < hidden; ++j) {
                g.w1[i * hidden + j] += x[i] * d_hidden[j];
                acc += weights.w1[i * hidden + j] * d_hidden[j];
            }
            g.input_grad.data[r * in_dim + i] = acc;
        }
    }
    return g;
}

}  // namespace slidekit
