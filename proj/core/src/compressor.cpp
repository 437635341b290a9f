#include "slidekit/compressor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "slidekit/common.hpp"
#include "slidekit/rng.hpp"

namespace slidekit {

namespace {

// y[r] = x[r] * W (+ b), x: rows x in, W: in x out, row-major.
void linear(const double* x, std::size_t rows, std::size_t in, const double* w, std::size_t out,
            const double* b, double* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        double* yr = y + r * out;
        if (b) {
            std::copy(b, b + out, yr);
        } else {
            std::fill(yr, yr + out, 0.0);
        }
        const double* xr = x + r * in;
        for (std::size_t i = 0; i < in; ++i) {
            double xi = xr[i];
            if (xi == 0.0) continue;
            const double* wrow = w + i * out;
            for (std::size_t j = 0; j < out; ++j) yr[j] += xi * wrow[j];
        }
    }
}

void check_state(const CompressorState& s) {
    if (s.num_queries < 1 || s.model_dim < 1 || s.num_heads < 1 || s.in_dim < 1) {
        throw InputError("compressor dimensions must be positive");
    }
    if (s.model_dim % s.num_heads != 0) {
        throw InputError("compressor model_dim must be divisible by num_heads");
    }
}

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

void write_tensor(std::ostream& os, const std::vector<double>& t) {
    std::vector<float> buf(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t[i]);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
}

void read_tensor(std::istream& is, std::vector<double>& t, std::size_t count,
                 const std::string& path) {
    std::vector<float> buf(count);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * 4));
    if (static_cast<std::size_t>(is.gcount()) != count * 4) {
        throw IoError("truncated compressor checkpoint: " + path);
    }
    t.resize(count);
    for (std::size_t i = 0; i < count; ++i) t[i] = static_cast<double>(buf[i]);
}

}  // namespace

CompressorState make_compressor(std::uint64_t seed, int in_dim, int model_dim, int num_queries,
                                int num_heads) {
    CompressorState s;
    s.num_queries = num_queries;
    s.model_dim = model_dim;
    s.num_heads = num_heads;
    s.in_dim = in_dim;
    check_state(s);

    const std::size_t md = static_cast<std::size_t>(model_dim);
    s.query_bank.resize(static_cast<std::size_t>(num_queries) * md);
    s.w_q.resize(md * md);
    s.w_k.resize(md * md);
    s.w_v.resize(md * md);
    s.w_o.resize(md * md);
    s.adapter_w.resize(static_cast<std::size_t>(in_dim) * md);
    s.adapter_b.assign(md, 0.0);

    auto rng = make_rng(derive_seed(seed, "compressor"));
    for (double& v : s.query_bank) v = 0.02 * next_normal(rng);
    for (double& v : s.w_q) v = 0.02 * next_normal(rng);
    for (double& v : s.w_k) v = 0.02 * next_normal(rng);
    for (double& v : s.w_v) v = 0.02 * next_normal(rng);
    for (double& v : s.w_o) v = 0.02 * next_normal(rng);
    for (double& v : s.adapter_w) v = 0.02 * next_normal(rng);
    return s;
}

static FeatureMatrix compress_impl(const CompressorState& state, const FeatureMatrix& x,
                                   CompressCache* cache, CompressStats* stats) {
    check_state(state);
    if (x.rows == 0) throw InputError("compress: empty input (softmax over zero keys undefined)");
    if (x.dim != static_cast<std::size_t>(state.in_dim)) {
        throw ShapeError("compress: input dim " + std::to_string(x.dim) +
                         " does not match adapter in_dim " + std::to_string(state.in_dim));
    }

    const std::size_t n = x.rows;
    const std::size_t md = static_cast<std::size_t>(state.model_dim);
    const std::size_t nq = static_cast<std::size_t>(state.num_queries);
    const std::size_t heads = static_cast<std::size_t>(state.num_heads);
    const std::size_t dh = md / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<double> adapted(n * md);
    linear(x.data.data(), n, x.dim, state.adapter_w.data(), md, state.adapter_b.data(),
           adapted.data());

    std::vector<double> queries(nq * md);
    std::vector<double> keys(n * md);
    std::vector<double> values(n * md);
    linear(state.query_bank.data(), nq, md, state.w_q.data(), md, nullptr, queries.data());
    linear(adapted.data(), n, md, state.w_k.data(), md, nullptr, keys.data());
    linear(adapted.data(), n, md, state.w_v.data(), md, nullptr, values.data());

    std::vector<double> pooled(nq * md, 0.0);
    if (cache) cache->probs.assign(heads * nq * n, 0.0);

    std::vector<double> row(n);
    double max_sum_err = 0.0;
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t q = 0; q < nq; ++q) {
            const double* qv = queries.data() + q * md + off;
            double max_logit = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                const double* kv = keys.data() + j * md + off;
                double dot = 0.0;
                for (std::size_t d = 0; d < dh; ++d) dot += qv[d] * kv[d];
                row[j] = dot * scale;
                max_logit = std::max(max_logit, row[j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] = std::exp(row[j] - max_logit);
                z += row[j];
            }
            double inv_z = 1.0 / z;
            double sum = 0.0;
            double* out = pooled.data() + q * md + off;
            for (std::size_t j = 0; j < n; ++j) {
                double p = row[j] * inv_z;
                row[j] = p;
                sum += p;
                const double* vv = values.data() + j * md + off;
                for (std::size_t d = 0; d < dh; ++d) out[d] += p * vv[d];
            }
            max_sum_err = std::max(max_sum_err, std::abs(sum - 1.0));
            if (cache) {
                std::copy(row.begin(), row.end(), cache->probs.begin() + (h * nq + q) * n);
            }
        }
    }
    if (stats) stats->max_row_sum_err = max_sum_err;

    FeatureMatrix out(nq, md, Provenance::compressed);
    linear(pooled.data(), nq, md, state.w_o.data(), md, nullptr, out.data.data());
    validate_finite(out, "compress");

    if (cache) {
        cache->input = x;
        cache->adapted = std::move(adapted);
        cache->queries = std::move(queries);
        cache->keys = std::move(keys);
        cache->values = std::move(values);
        cache->pooled = std::move(pooled);
    }
    return out;
}

FeatureMatrix compress(const CompressorState& state, const FeatureMatrix& region_features,
                       CompressStats* stats) {
    return compress_impl(state, region_features, nullptr, stats);
}

FeatureMatrix compress_forward(const CompressorState& state, const FeatureMatrix& region_features,
                               CompressCache& cache, CompressStats* stats) {
    return compress_impl(state, region_features, &cache, stats);
}

CompressorGrads compress_backward(const CompressorState& state, const CompressCache& cache,
                                  const FeatureMatrix& upstream_grad) {
    const std::size_t n = cache.input.rows;
    const std::size_t md = static_cast<std::size_t>(state.model_dim);
    const std::size_t nq = static_cast<std::size_t>(state.num_queries);
    const std::size_t heads = static_cast<std::size_t>(state.num_heads);
    const std::size_t dh = md / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    if (upstream_grad.rows != nq || upstream_grad.dim != md) {
        throw ShapeError("compress_backward: upstream gradient shape mismatch");
    }

    CompressorGrads g;
    g.query_bank.assign(nq * md, 0.0);
    g.w_q.assign(md * md, 0.0);
    g.w_k.assign(md * md, 0.0);
    g.w_v.assign(md * md, 0.0);
    g.w_o.assign(md * md, 0.0);
    g.adapter_w.assign(static_cast<std::size_t>(state.in_dim) * md, 0.0);
    g.adapter_b.assign(md, 0.0);
    g.input_grad = FeatureMatrix(n, cache.input.dim, cache.input.provenance);

    // out = pooled * w_o
    // d w_o = pooled^T * dOut ; d pooled = dOut * w_o^T
    std::vector<double> d_pooled(nq * md, 0.0);
    for (std::size_t r = 0; r < nq; ++r) {
        const double* dy = upstream_grad.data.data() + r * md;
        const double* pr = cache.pooled.data() + r * md;
        double* dp = d_pooled.data() + r * md;
        for (std::size_t i = 0; i < md; ++i) {
            const double* wo_row = state.w_o.data() + i * md;
            double* gwo_row = g.w_o.data() + i * md;
            double acc = 0.0;
            for (std::size_t j = 0; j < md; ++j) {
                gwo_row[j] += pr[i] * dy[j];
                acc += wo_row[j] * dy[j];
            }
            dp[i] = acc;
        }
    }

    std::vector<double> d_queries(nq * md, 0.0);
    std::vector<double> d_keys(n * md, 0.0);
    std::vector<double> d_values(n * md, 0.0);
    std::vector<double> d_probs(n);
    std::vector<double> d_logits(n);

    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t q = 0; q < nq; ++q) {
            const double* p = cache.probs.data() + (h * nq + q) * n;
            const double* dp = d_pooled.data() + q * md + off;

            // pooled_h[q] = sum_j p[j] * V_h[j]
            for (std::size_t j = 0; j < n; ++j) {
                const double* vv = cache.values.data() + j * md + off;
                double* dv = d_values.data() + j * md + off;
                double acc = 0.0;
                for (std::size_t d = 0; d < dh; ++d) {
                    acc += dp[d] * vv[d];
                    dv[d] += p[j] * dp[d];
                }
                d_probs[j] = acc;
            }

            // softmax backward: dl_j = p_j * (dp_j - sum_k dp_k p_k)
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += d_probs[j] * p[j];
            for (std::size_t j = 0; j < n; ++j) d_logits[j] = p[j] * (d_probs[j] - dot) * scale;

            // logits_j = scale * <Q_h[q], K_h[j]>
            const double* qv = cache.queries.data() + q * md + off;
            double* dq = d_queries.data() + q * md + off;
            for (std::size_t j = 0; j < n; ++j) {
                double dl = d_logits[j];
                if (dl == 0.0) continue;
                const double* kv = cache.keys.data() + j * md + off;
                double* dk = d_keys.data() + j * md + off;
                for (std::size_t d = 0; d < dh; ++d) {
                    dq[d] += dl * kv[d];
                    dk[d] += dl * qv[d];
                }
            }
        }
    }

    // queries = query_bank * w_q ; keys = adapted * w_k ; values = adapted * w_v
    std::vector<double> d_adapted(n * md, 0.0);
    for (std::size_t r = 0; r < nq; ++r) {
        const double* qb = state.query_bank.data() + r * md;
        const double* dq = d_queries.data() + r * md;
        double* dqb = g.query_bank.data() + r * md;
        for (std::size_t i = 0; i < md; ++i) {
            const double* wq_row = state.w_q.data() + i * md;
            double* gwq_row = g.w_q.data() + i * md;
            double acc = 0.0;
            for (std::size_t j = 0; j < md; ++j) {
                gwq_row[j] += qb[i] * dq[j];
                acc += wq_row[j] * dq[j];
            }
            dqb[i] = acc;
        }
    }
    for (std::size_t r = 0; r < n; ++r) {
        const double* ad = cache.adapted.data() + r * md;
        const double* dk = d_keys.data() + r * md;
        const double* dv = d_values.data() + r * md;
        double* da = d_adapted.data() + r * md;
        for (std::size_t i = 0; i < md; ++i) {
            const double* wk_row = state.w_k.data() + i * md;
            const double* wv_row = state.w_v.data() + i * md;
            double* gwk_row = g.w_k.data() + i * md;
            double* gwv_row = g.w_v.data() + i * md;
            double acc = 0.0;
            for (std::size_t j = 0; j < md; ++j) {
                gwk_row[j] += ad[i] * dk[j];
                gwv_row[j] += ad[i] * dv[j];
                acc += wk_row[j] * dk[j] + wv_row[j] * dv[j];
            }
            da[i] = acc;
        }
    }

    // adapted = input * adapter_w + adapter_b
    const std::size_t in_dim = cache.input.dim;
    for (std::size_t r = 0; r < n; ++r) {
        const double* xr = cache.input.data.data() + r * in_dim;
        const double* da = d_adapted.data() + r * md;
        double* dx = g.input_grad.data.data() + r * in_dim;
        for (std::size_t j = 0; j < md; ++j) g.adapter_b[j] += da[j];
        for (std::size_t i = 0; i < in_dim; ++i) {
            const double* wa_row = state.adapter_w.data() + i * md;
            double* gwa_row = g.adapter_w.data() + i * md;
            double acc = 0.0;
            for (std::size_t j = 0; j < md; ++j) {
                gwa_row[j] += xr[i] * da[j];
                acc += wa_row[j] * da[j];
            }
            dx[i] = acc;
        }
    }
    return g;
}

void save_compressor(const CompressorState& state, const std::filesystem::path& path) {
    check_state(state);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
    put_u32(os, kCompressorMagic);
    put_u32(os, 1u);
    put_u32(os, static_cast<std::uint32_t>(state.num_queries));
    put_u32(os, static_cast<std::uint32_t>(state.model_dim));
    put_u32(os, static_cast<std::uint32_t>(state.num_heads));
    put_u32(os, static_cast<std::uint32_t>(state.in_dim));
    write_tensor(os, state.query_bank);
    write_tensor(os, state.w_q);
    write_tensor(os, state.w_k);
    write_tensor(os, state.w_v);
    write_tensor(os, state.w_o);
    write_tensor(os, state.adapter_w);
    write_tensor(os, state.adapter_b);
    if (!os) throw IoError("short write: " + path.string());
}

CompressorState load_compressor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open compressor checkpoint: " + path.string());
    if (get_u32(is) != kCompressorMagic) {
        throw IoError("bad compressor checkpoint magic: " + path.string());
    }
    std::uint32_t version = get_u32(is);
    if (version != 1) {
        throw IoError("unsupported compressor checkpoint version " + std::to_string(version));
    }
    CompressorState s;
    s.num_queries = static_cast<int>(get_u32(is));
    s.model_dim = static_cast<int>(get_u32(is));
    s.num_heads = static_cast<int>(get_u32(is));
    s.in_dim = static_cast<int>(get_u32(is));
    if (!is) throw IoError("truncated compressor checkpoint: " + path.string());
    check_state(s);
    const std::size_t md = static_cast<std::size_t>(s.model_dim);
    read_tensor(is, s.query_bank, static_cast<std::size_t>(s.num_queries) * md, path.string());
    read_tensor(is, s.w_q, md * md, path.string());
    read_tensor(is, s.w_k, md * md, path.string());
    read_tensor(is, s.w_v, md * md, path.string());
    read_tensor(is, s.w_o, md * md, path.string());
    read_tensor(is, s.adapter_w, static_cast<std::size_t>(s.in_dim) * md, path.string());
    read_tensor(is, s.adapter_b, md, path.string());
    return s;
}

}  // namespace slidekit
