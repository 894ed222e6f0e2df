#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace rre {

/// Softmax negative log-likelihood of the positive candidate,
/// -log(exp(s+) / sum_j exp(s_j)), max-subtracted, evaluated in 64-bit.
template <typename T>
double nll_loss(std::span<const T> scores, std::size_t positive_index) {
    if (scores.empty() || positive_index >= scores.size())
        throw std::invalid_argument("nll_loss: positive index out of range");
    double mx = static_cast<double>(scores[0]);
    for (const T& s : scores) {
        const double v = static_cast<double>(s);
        if (!std::isfinite(v)) throw std::invalid_argument("nll_loss: non-finite score");
        mx = std::max(mx, v);
    }
    double sum = 0.0;
    for (const T& s : scores) sum += std::exp(static_cast<double>(s) - mx);
    return (mx - static_cast<double>(scores[positive_index])) + std::log(sum);
}

/// d(nll_loss)/d(scores) = softmax(scores) - onehot(positive).
template <typename T>
std::vector<T> nll_loss_grad(std::span<const T> scores, std::size_t positive_index) {
    if (scores.empty() || positive_index >= scores.size())
        throw std::invalid_argument("nll_loss_grad: positive index out of range");
    double mx = static_cast<double>(scores[0]);
    for (const T& s : scores) mx = std::max(mx, static_cast<double>(s));
    double sum = 0.0;
    std::vector<double> e(scores.size());
    for (std::size_t j = 0; j < scores.size(); ++j) {
        e[j] = std::exp(static_cast<double>(scores[j]) - mx);
        sum += e[j];
    }
    std::vector<T> grad(scores.size());
    for (std::size_t j = 0; j < scores.size(); ++j) {
        double g = e[j] / sum;
        if (j == positive_index) g -= 1.0;
        grad[j] = static_cast<T>(g);
    }
    return grad;
}

}  // namespace rre
