#pragma once

#include <span>
#include <vector>

#include "rre/matrix.hpp"
#include "rre/reranker.hpp"

namespace rre {

namespace detail {

/// d(loss)/d(x) for y = (x - mean)/sqrt(var + eps) * gain + offset, row-wise.
/// Also accumulates gain/offset gradients. Row means accumulate in 64-bit.
template <typename T>
void layer_norm_backward(const Matrix<T>& x, const std::vector<double>& means,
                         const std::vector<double>& inv_stds, std::span<const T> gain,
                         const Matrix<T>& dy, Matrix<T>& dx, std::span<T> dgain,
                         std::span<T> doffset) {
    const std::size_t d = x.cols();
    std::vector<double> dgain_acc(d, 0.0), doffset_acc(d, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto xr = x.row(i);
        auto dyr = dy.row(i);
        auto dxr = dx.row(i);
        const double mean = means[i];
        const double inv_std = inv_stds[i];
        double sum_a = 0.0, sum_ax = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (static_cast<double>(xr[j]) - mean) * inv_std;
            const double a = static_cast<double>(dyr[j]) * static_cast<double>(gain[j]);
            sum_a += a;
            sum_ax += a * xhat;
            dgain_acc[j] += static_cast<double>(dyr[j]) * xhat;
            doffset_acc[j] += static_cast<double>(dyr[j]);
        }
        const double mean_a = sum_a / static_cast<double>(d);
        const double mean_ax = sum_ax / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (static_cast<double>(xr[j]) - mean) * inv_std;
            const double a = static_cast<double>(dyr[j]) * static_cast<double>(gain[j]);
            dxr[j] = static_cast<T>((a - mean_a - xhat * mean_ax) * inv_std);
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        dgain[j] = static_cast<T>(dgain[j] + dgain_acc[j]);
        doffset[j] = static_cast<T>(doffset[j] + doffset_acc[j]);
    }
}

/// dS = P .* (dP - rowsum(dP .* P)) for row-wise softmax P.
template <typename T>
void softmax_backward(const Matrix<T>& probs, const Matrix<T>& dprobs, Matrix<T>& dlogits) {
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        auto p = probs.row(i);
        auto dp = dprobs.row(i);
        auto dl = dlogits.row(i);
        double inner = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j)
            inner += static_cast<double>(dp[j]) * static_cast<double>(p[j]);
        for (std::size_t j = 0; j < p.size(); ++j)
            dl[j] = static_cast<T>(static_cast<double>(p[j]) *
                                   (static_cast<double>(dp[j]) - inner));
    }
}

template <typename T>
void write_head_slice(Matrix<T>& full, const Matrix<T>& part, std::size_t head,
                      std::size_t head_dim) {
    const std::size_t off = head * head_dim;
    for (std::size_t i = 0; i < part.rows(); ++i) {
        auto src = part.row(i);
        auto dst = full.row(i);
        for (std::size_t j = 0; j < head_dim; ++j) dst[off + j] = src[j];
    }
}

template <typename T>
void add_vector(std::span<T> dst, std::span<const T> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(dst[i] + src[i]);
}

}  // namespace detail

/// Exact gradients of the candidate scores w.r.t. every parameter tensor,
/// given d(loss)/d(score_j). The cache must come from the matching
/// score_candidates call.
template <typename T>
RerankerParams<T> backward(const RerankerParams<T>& params, const RerankerConfig& cfg,
                           const ScoreCache<T>& cache, std::span<const T> score_grads) {
    if (cache.output.rows() == 0)
        throw std::invalid_argument("backward: stale or empty cache");
    if (score_grads.size() != cache.n_candidates)
        throw std::invalid_argument("backward: score gradient count mismatch");
    if (cache.encoder.layers.size() != cfg.num_layers)
        throw std::invalid_argument("backward: cache/config layer count mismatch");

    const std::size_t m = cache.output.rows();
    const std::size_t d = cfg.model_dim;
    const std::size_t nh = cfg.num_heads;
    const std::size_t dh = cfg.head_dim();
    const std::size_t n_conv = cache.n_conversation;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    RerankerParams<T> grads = zeros_like(params);

    // Scoring head: gradient w.r.t. the encoder output.
    Matrix<T> dy(m, d);
    const Matrix<T>& out = cache.output;
    if (cfg.scoring_mode == ScoringMode::kInnerProduct) {
        auto conv_row = out.row(0);
        auto dconv = dy.row(0);
        std::vector<double> dconv_acc(d, 0.0);
        for (std::size_t j = 0; j < cache.n_candidates; ++j) {
            const double g = static_cast<double>(score_grads[j]);
            auto cand = out.row(n_conv + j);
            auto dcand = dy.row(n_conv + j);
            for (std::size_t t = 0; t < d; ++t) {
                dconv_acc[t] += g * static_cast<double>(cand[t]);
                dcand[t] = static_cast<T>(g * static_cast<double>(conv_row[t]));
            }
        }
        for (std::size_t t = 0; t < d; ++t) dconv[t] = static_cast<T>(dconv_acc[t]);
    } else {
        std::vector<double> dw(d, 0.0);
        double db = 0.0;
        for (std::size_t j = 0; j < cache.n_candidates; ++j) {
            const double g = static_cast<double>(score_grads[j]);
            auto cand = out.row(n_conv + j);
            auto dcand = dy.row(n_conv + j);
            for (std::size_t t = 0; t < d; ++t) {
                dcand[t] = static_cast<T>(g * static_cast<double>(params.w_proj[t]));
                dw[t] += g * static_cast<double>(cand[t]);
            }
            db += g;
        }
        for (std::size_t t = 0; t < d; ++t)
            grads.w_proj[t] = static_cast<T>(grads.w_proj[t] + dw[t]);
        grads.b_proj[0] = static_cast<T>(grads.b_proj[0] + db);
    }

    // Encoder layers, last to first.
    for (std::size_t li = cfg.num_layers; li-- > 0;) {
        const LayerParams<T>& lp = params.layers[li];
        LayerParams<T>& lg = grads.layers[li];
        const LayerCache<T>& lc = cache.encoder.layers[li];

        // Second layer norm.
        Matrix<T> dresid2(m, d);
        detail::layer_norm_backward(lc.resid2, lc.ln2_mean, lc.ln2_inv_std,
                                    std::span<const T>(lp.ln2_gain), dy, dresid2,
                                    std::span<T>(lg.ln2_gain), std::span<T>(lg.ln2_offset));

        // Feed-forward. resid2 = normed1 + ffn_out.
        Matrix<T> dnormed1 = dresid2;
        matmul_into(lg.w_ffn2, transposed(lc.ffn_act), dresid2, /*accumulate=*/true);
        add_column_sums(std::span<T>(lg.b_ffn2), dresid2);
        Matrix<T> dact = matmul(dresid2, transposed(lp.w_ffn2));
        Matrix<T> dffn_pre(dact.rows(), dact.cols());
        for (std::size_t i = 0; i < dact.size(); ++i)
            dffn_pre.data()[i] = static_cast<T>(
                static_cast<double>(dact.data()[i]) *
                gelu_grad(static_cast<double>(lc.ffn_pre.data()[i])));
        matmul_into(lg.w_ffn1, transposed(lc.normed1), dffn_pre, /*accumulate=*/true);
        add_column_sums(std::span<T>(lg.b_ffn1), dffn_pre);
        {
            Matrix<T> back = matmul(dffn_pre, transposed(lp.w_ffn1));
            for (std::size_t i = 0; i < dnormed1.size(); ++i)
                dnormed1.data()[i] = static_cast<T>(dnormed1.data()[i] + back.data()[i]);
        }

        // First layer norm.
        Matrix<T> dresid1(m, d);
        detail::layer_norm_backward(lc.resid1, lc.ln1_mean, lc.ln1_inv_std,
                                    std::span<const T>(lp.ln1_gain), dnormed1, dresid1,
                                    std::span<T>(lg.ln1_gain), std::span<T>(lg.ln1_offset));

        // Attention. resid1 = input + (attn_concat * W_o + b_o).
        Matrix<T> dx = dresid1;  // residual branch
        matmul_into(lg.w_o, transposed(lc.attn_concat), dresid1, /*accumulate=*/true);
        add_column_sums(std::span<T>(lg.b_o), dresid1);
        Matrix<T> dconcat = matmul(dresid1, transposed(lp.w_o));

        Matrix<T> dq(m, d), dk(m, d), dv(m, d);
        for (std::size_t h = 0; h < nh; ++h) {
            Matrix<T> doh = detail::head_slice(dconcat, h, dh);
            Matrix<T> qh = detail::head_slice(lc.q, h, dh);
            Matrix<T> kh = detail::head_slice(lc.k, h, dh);
            Matrix<T> vh = detail::head_slice(lc.v, h, dh);
            const Matrix<T>& probs = lc.attn_probs[h];

            Matrix<T> dprobs = matmul(doh, transposed(vh));
            Matrix<T> dvh = matmul(transposed(probs), doh);
            Matrix<T> dlogits(m, m);
            detail::softmax_backward(probs, dprobs, dlogits);
            for (std::size_t i = 0; i < dlogits.size(); ++i)
                dlogits.data()[i] =
                    static_cast<T>(static_cast<double>(dlogits.data()[i]) * inv_sqrt_dh);
            Matrix<T> dqh = matmul(dlogits, kh);
            Matrix<T> dkh = matmul(transposed(dlogits), qh);

            detail::write_head_slice(dq, dqh, h, dh);
            detail::write_head_slice(dk, dkh, h, dh);
            detail::write_head_slice(dv, dvh, h, dh);
        }

        const Matrix<T>& x = lc.input;
        Matrix<T> xt = transposed(x);
        matmul_into(lg.w_q, xt, dq, /*accumulate=*/true);
        matmul_into(lg.w_k, xt, dk, /*accumulate=*/true);
        matmul_into(lg.w_v, xt, dv, /*accumulate=*/true);
        add_column_sums(std::span<T>(lg.b_q), dq);
        add_column_sums(std::span<T>(lg.b_k), dk);
        add_column_sums(std::span<T>(lg.b_v), dv);

        {
            Matrix<T> back = matmul(dq, transposed(lp.w_q));
            for (std::size_t i = 0; i < dx.size(); ++i)
                dx.data()[i] = static_cast<T>(dx.data()[i] + back.data()[i]);
        }
        {
            Matrix<T> back = matmul(dk, transposed(lp.w_k));
            for (std::size_t i = 0; i < dx.size(); ++i)
                dx.data()[i] = static_cast<T>(dx.data()[i] + back.data()[i]);
        }
        {
            Matrix<T> back = matmul(dv, transposed(lp.w_v));
            for (std::size_t i = 0; i < dx.size(); ++i)
                dx.data()[i] = static_cast<T>(dx.data()[i] + back.data()[i]);
        }

        dy = std::move(dx);
    }
    return grads;
}

}  // namespace rre
