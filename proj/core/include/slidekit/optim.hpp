#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace slidekit {

/// Adam / AdamW moment state for one flat parameter tensor.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t t = 0;

    explicit AdamState(std::size_t size = 0) : m(size, 0.0), v(size, 0.0) {}
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    bool decoupled_weight_decay = false;  // true = AdamW, false = plain Adam
};

/// One Adam update over params given grads. With decoupled_weight_decay the
/// decay is applied directly to the weights (AdamW); otherwise a nonzero
/// weight_decay is added to the gradient (L2).
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg);

}  // namespace slidekit
