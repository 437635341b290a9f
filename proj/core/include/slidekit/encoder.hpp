#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "slidekit/matrix.hpp"
#include "slidekit/slide.hpp"

namespace slidekit {

struct EncoderSpec {
    std::string name;
    int input_size_px = 224;
    int output_dim = 0;
};

/// A tile encoder receives an image already resized to spec.input_size_px and
/// returns spec.output_dim values. Implementations must be pure per tile.
struct TileEncoder {
    EncoderSpec spec;
    std::function<std::vector<double>(const RgbImage&)> fn;
};

/// Deterministic stand-in for a pretrained tower: seeded random projection of
/// per-channel statistics. Identical buffers map to identical vectors.
TileEncoder make_stub_encoder(std::uint64_t seed, int output_dim, int input_size_px = 224,
                              const std::string& name = "stub");

/// Bilinear resize to out_w x out_h; returns the input unchanged when the
/// size already matches.
RgbImage resize_rgb(const RgbImage& image, std::int64_t out_w, std::int64_t out_h);

/// Row i = concat(enc_a(tile_i), enc_b(tile_i)); dim = dimA + dimB. Tiles are
/// resized to each encoder's input size independently. A failing encoder
/// aborts the batch with the offending tile index in the error message.
FeatureMatrix encode_tiles(const std::vector<RgbImage>& tiles, const TileEncoder& enc_a,
                           const TileEncoder& enc_b);

enum class RegionPooling {
    uniform,         // unweighted mean over all 21 tiles
    scale_balanced,  // mean of per-scale means (2048 / 1024 / 512)
};

/// Pools the 21 multi-scale tile features of one region into a single
/// vector. Rows must follow subdivide_region order: row 0 the 2048 tile,
/// rows 1-4 the 1024 tiles, rows 5-20 the 512 tiles.
std::vector<double> aggregate_region(const FeatureMatrix& tile_features,
                                     RegionPooling pooling = RegionPooling::uniform);

enum class Activation { gelu, identity };

/// Two affine layers with a pointwise nonlinearity between them. Layout is
/// x_out = act(x * w1 + b1) * w2 + b2 with w1 in_dim x hidden_dim and w2
/// hidden_dim x out_dim, both row-major.
struct ProjectorWeights {
    int in_dim = 0;
    int hidden_dim = 0;
    int out_dim = 0;
    Activation activation = Activation::gelu;
    std::vector<double> w1, b1;
    std::vector<double> w2, b2;
};

ProjectorWeights make_projector(std::uint64_t seed, int in_dim, int hidden_dim, int out_dim,
                                Activation activation = Activation::gelu);

FeatureMatrix project(const FeatureMatrix& features, const ProjectorWeights& weights);

struct ProjectorCache {
    FeatureMatrix input;
    std::vector<double> pre_activation;  // rows x hidden
    std::vector<double> hidden;          // rows x hidden
};

FeatureMatrix project_forward(const FeatureMatrix& features, const ProjectorWeights& weights,
                              ProjectorCache* cache);

struct ProjectorGrads {
    std::vector<double> w1, b1;
    std::vector<double> w2, b2;
    FeatureMatrix input_grad;
};

/// Exact gradients of project_forward for the given upstream gradient.
ProjectorGrads project_backward(const ProjectorWeights& weights, const ProjectorCache& cache,
                                const FeatureMatrix& upstream);

double gelu(double x);
double gelu_derivative(double x);

}  // namespace slidekit
