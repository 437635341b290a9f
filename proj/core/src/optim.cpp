#include "slidekit/optim.hpp"

#include <cmath>

#include "slidekit/common.hpp"

namespace slidekit {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw ShapeError("adam_step: parameter, gradient, and state sizes must match");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = grads[i];
        if (cfg.weight_decay != 0.0 && !cfg.decoupled_weight_decay) {
            g += cfg.weight_decay * params[i];
        }
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        double m_hat = state.m[i] / bc1;
        double v_hat = state.v[i] / bc2;
        if (cfg.weight_decay != 0.0 && cfg.decoupled_weight_decay) {
            params[i] -= cfg.lr * cfg.weight_decay * params[i];
        }
        params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

}  // namespace slidekit
