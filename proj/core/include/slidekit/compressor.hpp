#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "slidekit/matrix.hpp"

namespace slidekit {

inline constexpr int kDefaultQueryTokens = 1152;
inline constexpr int kDefaultCompressorHeads = 8;

/// Learned query bank plus attention projections for fixed-length token
/// compression. A variable-length sequence of region features is pooled by
/// multi-head cross-attention onto num_queries output tokens. All linear maps
/// follow the x_out = x * W convention with row-major W.
struct CompressorState {
    int num_queries = kDefaultQueryTokens;
    int model_dim = 0;
    int num_heads = kDefaultCompressorHeads;
    int in_dim = 0;

    std::vector<double> query_bank;  // num_queries x model_dim
    std::vector<double> w_q, w_k, w_v, w_o;  // model_dim x model_dim each
    std::vector<double> adapter_w;  // in_dim x model_dim
    std::vector<double> adapter_b;  // model_dim

    int head_dim() const { return model_dim / num_heads; }
};

CompressorState make_compressor(std::uint64_t seed, int in_dim, int model_dim,
                                int num_queries = kDefaultQueryTokens,
                                int num_heads = kDefaultCompressorHeads);

struct CompressStats {
    double max_row_sum_err = 0.0;  // max |sum(softmax row) - 1|
};

/// Intermediates needed by the backward pass.
struct CompressCache {
    FeatureMatrix input;                 // N x in_dim
    std::vector<double> adapted;         // N x model_dim
    std::vector<double> queries;         // num_queries x model_dim (post W_q)
    std::vector<double> keys, values;    // N x model_dim
    std::vector<double> probs;           // num_heads x num_queries x N
    std::vector<double> pooled;          // num_queries x model_dim (pre W_o)
};

/// Cross-attention pooling: per head, softmax(Q K^T / sqrt(d_head)) V, heads
/// concatenated and projected through w_o. Output row count equals
/// num_queries regardless of the input length. Softmax uses max subtraction;
/// accumulation is in double throughout. Empty input is an error.
FeatureMatrix compress(const CompressorState& state, const FeatureMatrix& region_features,
                       CompressStats* stats = nullptr);

FeatureMatrix compress_forward(const CompressorState& state, const FeatureMatrix& region_features,
                               CompressCache& cache, CompressStats* stats = nullptr);

struct CompressorGrads {
    std::vector<double> query_bank;
    std::vector<double> w_q, w_k, w_v, w_o;
    std::vector<double> adapter_w, adapter_b;
    FeatureMatrix input_grad;
};

/// Exact analytic gradients of compress_forward.
CompressorGrads compress_backward(const CompressorState& state, const CompressCache& cache,
                                  const FeatureMatrix& upstream_grad);

// Checkpoint format: magic "SKC1" (u32 LE), version (u32), num_queries,
// model_dim, num_heads, in_dim (u32 each), then float32 LE tensors in order
// query_bank, w_q, w_k, w_v, w_o, adapter_w, adapter_b.
inline constexpr std::uint32_t kCompressorMagic = 0x31434B53u;  // "SKC1"

void save_compressor(const CompressorState& state, const std::filesystem::path& path);
CompressorState load_compressor(const std::filesystem::path& path);

}  // namespace slidekit
