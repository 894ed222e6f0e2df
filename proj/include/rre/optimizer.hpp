#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rre/reranker.hpp"

namespace rre {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-2;
};

/// Moment accumulators mirror the parameter tensors; kept in 64-bit so the
/// update math is identical across storage precisions.
struct OptimizerState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step = 0;

    template <typename T>
    static OptimizerState like(const RerankerParams<T>& params) {
        OptimizerState s;
        for (const auto& view : tensor_views(params)) {
            s.first_moment.emplace_back(view.size, 0.0);
            s.second_moment.emplace_back(view.size, 0.0);
        }
        return s;
    }
};

/// Decoupled weight decay update:
///   theta <- theta - lr * (mhat / (sqrt(vhat) + eps) + weight_decay * theta)
template <typename T>
void adamw_step(RerankerParams<T>& params, const RerankerParams<T>& grads,
                OptimizerState& state, double step_lr, const AdamWConfig& cfg = {}) {
    auto pviews = tensor_views(params);
    auto gviews = tensor_views(grads);
    if (pviews.size() != state.first_moment.size() || pviews.size() != gviews.size())
        throw std::invalid_argument("adamw_step: state/params tensor count mismatch");

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);

    for (std::size_t i = 0; i < pviews.size(); ++i) {
        if (pviews[i].size != gviews[i].size)
            throw std::invalid_argument("adamw_step: gradient shape mismatch for " +
                                        pviews[i].name);
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        T* p = pviews[i].data;
        const T* g = gviews[i].data;
        for (std::size_t j = 0; j < pviews[i].size; ++j) {
            const double gj = static_cast<double>(g[j]);
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            const double update =
                mhat / (std::sqrt(vhat) + cfg.epsilon) + cfg.weight_decay * static_cast<double>(p[j]);
            p[j] = static_cast<T>(static_cast<double>(p[j]) - step_lr * update);
        }
    }
}

/// Linear decay, no warmup: lr(t) = lr0 * (1 - t / T) for t in [0, T).
inline double linear_decay_lr(double base_lr, std::uint64_t completed_steps,
                              std::uint64_t total_steps) {
    if (total_steps == 0) throw std::invalid_argument("linear_decay_lr: zero total steps");
    return base_lr *
           (1.0 - static_cast<double>(completed_steps) / static_cast<double>(total_steps));
}

}  // namespace rre
