#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rre/matrix.hpp"
#include "rre/rng.hpp"
#include "rre/types.hpp"

namespace rre {

enum class InputMode { kConversationVector, kConversationTokens, kPassagesOnly };
enum class ScoringMode { kInnerProduct, kLinearProjection };

inline std::string to_string(InputMode m) {
    switch (m) {
        case InputMode::kConversationVector: return "conversation-vector";
        case InputMode::kConversationTokens: return "conversation-tokens";
        case InputMode::kPassagesOnly: return "passages-only";
    }
    return "?";
}

inline std::string to_string(ScoringMode m) {
    return m == ScoringMode::kInnerProduct ? "inner-product" : "linear-projection";
}

inline InputMode input_mode_from_string(const std::string& s) {
    if (s == "conversation-vector") return InputMode::kConversationVector;
    if (s == "conversation-tokens") return InputMode::kConversationTokens;
    if (s == "passages-only") return InputMode::kPassagesOnly;
    throw std::invalid_argument("unknown input_mode \"" + s + "\"");
}

inline ScoringMode scoring_mode_from_string(const std::string& s) {
    if (s == "inner-product") return ScoringMode::kInnerProduct;
    if (s == "linear-projection") return ScoringMode::kLinearProjection;
    throw std::invalid_argument("unknown scoring_mode \"" + s + "\"");
}

struct RerankerConfig {
    std::size_t num_layers = 1;
    std::size_t model_dim = 768;
    std::size_t num_heads = 8;
    std::size_t ffn_dim = 0;  // 0 means 4 * model_dim
    InputMode input_mode = InputMode::kConversationVector;
    ScoringMode scoring_mode = ScoringMode::kInnerProduct;
    std::size_t pool_size = 1000;
    std::size_t output_cut = 10;
    std::uint64_t seed = 0;

    std::size_t effective_ffn_dim() const { return ffn_dim != 0 ? ffn_dim : 4 * model_dim; }
    std::size_t head_dim() const { return model_dim / num_heads; }

    void validate() const {
        if (num_layers < 1) throw std::invalid_argument("num_layers must be >= 1");
        if (model_dim < 1) throw std::invalid_argument("model_dim must be >= 1");
        if (num_heads < 1 || model_dim % num_heads != 0)
            throw std::invalid_argument("model_dim must be divisible by num_heads");
        if (scoring_mode == ScoringMode::kInnerProduct && input_mode == InputMode::kPassagesOnly)
            throw std::invalid_argument(
                "inner-product scoring needs a conversation input; passages-only requires "
                "linear-projection");
        if (pool_size < 1) throw std::invalid_argument("pool_size must be >= 1");
        if (output_cut < 1) throw std::invalid_argument("output_cut must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const RerankerConfig& c) {
    j = nlohmann::json{{"num_layers", c.num_layers},
                       {"model_dim", c.model_dim},
                       {"num_heads", c.num_heads},
                       {"ffn_dim", c.ffn_dim},
                       {"input_mode", to_string(c.input_mode)},
                       {"scoring_mode", to_string(c.scoring_mode)},
                       {"pool_size", c.pool_size},
                       {"output_cut", c.output_cut},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, RerankerConfig& c) {
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.model_dim = j.at("model_dim").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    c.input_mode = input_mode_from_string(j.at("input_mode").get<std::string>());
    c.scoring_mode = scoring_mode_from_string(j.at("scoring_mode").get<std::string>());
    c.pool_size = j.at("pool_size").get<std::size_t>();
    c.output_cut = j.at("output_cut").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
}

template <typename T>
struct LayerParams {
    Matrix<T> w_q, w_k, w_v, w_o;            // d x d, applied as x * W
    std::vector<T> b_q, b_k, b_v, b_o;       // d
    std::vector<T> ln1_gain, ln1_offset;     // d
    Matrix<T> w_ffn1;                        // d x f
    std::vector<T> b_ffn1;                   // f
    Matrix<T> w_ffn2;                        // f x d
    std::vector<T> b_ffn2;                   // d
    std::vector<T> ln2_gain, ln2_offset;     // d
};

template <typename T>
struct RerankerParams {
    std::vector<LayerParams<T>> layers;
    std::vector<T> w_proj;  // d; present only for linear-projection scoring
    std::vector<T> b_proj;  // 1; ditto

    bool has_projection() const { return !w_proj.empty(); }
};

template <typename T>
struct TensorView {
    std::string name;
    T* data;
    std::size_t size;
    std::vector<std::size_t> shape;
};

namespace detail {

template <typename P, typename F>
void walk_tensors(P& params, F&& f) {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& lp = params.layers[l];
        const std::string pre = "layer" + std::to_string(l) + ".";
        f(pre + "w_q", lp.w_q);
        f(pre + "b_q", lp.b_q);
        f(pre + "w_k", lp.w_k);
        f(pre + "b_k", lp.b_k);
        f(pre + "w_v", lp.w_v);
        f(pre + "b_v", lp.b_v);
        f(pre + "w_o", lp.w_o);
        f(pre + "b_o", lp.b_o);
        f(pre + "ln1_gain", lp.ln1_gain);
        f(pre + "ln1_offset", lp.ln1_offset);
        f(pre + "w_ffn1", lp.w_ffn1);
        f(pre + "b_ffn1", lp.b_ffn1);
        f(pre + "w_ffn2", lp.w_ffn2);
        f(pre + "b_ffn2", lp.b_ffn2);
        f(pre + "ln2_gain", lp.ln2_gain);
        f(pre + "ln2_offset", lp.ln2_offset);
    }
    if (!params.w_proj.empty()) {
        f("w_proj", params.w_proj);
        f("b_proj", params.b_proj);
    }
}

}  // namespace detail

/// Flat views over every learnable tensor, in a fixed serialization order.
template <typename T>
std::vector<TensorView<T>> tensor_views(RerankerParams<T>& params) {
    std::vector<TensorView<T>> views;
    detail::walk_tensors(params, [&](const std::string& name, auto& t) {
        using Tensor = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<Tensor, Matrix<T>>)
            views.push_back({name, t.data(), t.size(), {t.rows(), t.cols()}});
        else
            views.push_back({name, t.data(), t.size(), {t.size()}});
    });
    return views;
}

template <typename T>
std::vector<TensorView<const T>> tensor_views(const RerankerParams<T>& params) {
    std::vector<TensorView<const T>> views;
    detail::walk_tensors(params, [&](const std::string& name, const auto& t) {
        using Tensor = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<Tensor, Matrix<T>>)
            views.push_back({name, t.data(), t.size(), {t.rows(), t.cols()}});
        else
            views.push_back({name, t.data(), t.size(), {t.size()}});
    });
    return views;
}

/// Same shapes as `like`, every value zero. Used for gradients.
template <typename T>
RerankerParams<T> zeros_like(const RerankerParams<T>& like) {
    RerankerParams<T> z;
    z.layers.resize(like.layers.size());
    for (std::size_t l = 0; l < like.layers.size(); ++l) {
        const auto& a = like.layers[l];
        auto& b = z.layers[l];
        b.w_q = Matrix<T>(a.w_q.rows(), a.w_q.cols());
        b.w_k = Matrix<T>(a.w_k.rows(), a.w_k.cols());
        b.w_v = Matrix<T>(a.w_v.rows(), a.w_v.cols());
        b.w_o = Matrix<T>(a.w_o.rows(), a.w_o.cols());
        b.b_q.assign(a.b_q.size(), T{});
        b.b_k.assign(a.b_k.size(), T{});
        b.b_v.assign(a.b_v.size(), T{});
        b.b_o.assign(a.b_o.size(), T{});
        b.ln1_gain.assign(a.ln1_gain.size(), T{});
        b.ln1_offset.assign(a.ln1_offset.size(), T{});
        b.w_ffn1 = Matrix<T>(a.w_ffn1.rows(), a.w_ffn1.cols());
        b.b_ffn1.assign(a.b_ffn1.size(), T{});
        b.w_ffn2 = Matrix<T>(a.w_ffn2.rows(), a.w_ffn2.cols());
        b.b_ffn2.assign(a.b_ffn2.size(), T{});
        b.ln2_gain.assign(a.ln2_gain.size(), T{});
        b.ln2_offset.assign(a.ln2_offset.size(), T{});
    }
    if (like.has_projection()) {
        z.w_proj.assign(like.w_proj.size(), T{});
        z.b_proj.assign(like.b_proj.size(), T{});
    }
    return z;
}

/// Glorot-uniform weights, zero biases and norm offsets, unit norm gains.
/// Draw order is fixed so a seed pins every tensor bit-for-bit.
template <typename T>
RerankerParams<T> init_params(const RerankerConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const std::size_t d = cfg.model_dim;
    const std::size_t f = cfg.effective_ffn_dim();

    auto glorot = [&rng](Matrix<T>& m, std::size_t fan_in, std::size_t fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (std::size_t i = 0; i < m.size(); ++i)
            m.data()[i] = static_cast<T>(uniform_range(rng, -limit, limit));
    };

    RerankerParams<T> p;
    p.layers.resize(cfg.num_layers);
    for (auto& lp : p.layers) {
        lp.w_q = Matrix<T>(d, d);
        lp.w_k = Matrix<T>(d, d);
        lp.w_v = Matrix<T>(d, d);
        lp.w_o = Matrix<T>(d, d);
        glorot(lp.w_q, d, d);
        glorot(lp.w_k, d, d);
        glorot(lp.w_v, d, d);
        glorot(lp.w_o, d, d);
        lp.b_q.assign(d, T{});
        lp.b_k.assign(d, T{});
        lp.b_v.assign(d, T{});
        lp.b_o.assign(d, T{});
        lp.ln1_gain.assign(d, T{1});
        lp.ln1_offset.assign(d, T{});
        lp.w_ffn1 = Matrix<T>(d, f);
        glorot(lp.w_ffn1, d, f);
        lp.b_ffn1.assign(f, T{});
        lp.w_ffn2 = Matrix<T>(f, d);
        glorot(lp.w_ffn2, f, d);
        lp.b_ffn2.assign(d, T{});
        lp.ln2_gain.assign(d, T{1});
        lp.ln2_offset.assign(d, T{});
    }
    if (cfg.scoring_mode == ScoringMode::kLinearProjection) {
        Matrix<T> w(1, d);
        glorot(w, d, 1);
        p.w_proj.assign(w.row(0).begin(), w.row(0).end());
        p.b_proj.assign(1, T{});
    }
    return p;
}

inline constexpr double kLayerNormEpsilon = 1e-5;

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476));
}

inline double gelu_grad(double x) {
    const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x * 0.7071067811865476)) + x * pdf;
}

template <typename T>
struct LayerCache {
    Matrix<T> input;                    // layer input
    Matrix<T> q, k, v;                  // m x d, post projection+bias
    std::vector<Matrix<T>> attn_probs;  // per head, m x m
    Matrix<T> attn_concat;              // m x d, heads concatenated, pre W_o
    Matrix<T> resid1;                   // input + attention output
    std::vector<double> ln1_mean, ln1_inv_std;
    Matrix<T> normed1;                  // after first layer norm
    Matrix<T> ffn_pre;                  // m x f, pre activation
    Matrix<T> ffn_act;                  // m x f, post GELU
    Matrix<T> resid2;                   // normed1 + ffn output
    std::vector<double> ln2_mean, ln2_inv_std;
    Matrix<T> output;
};

template <typename T>
struct ForwardCache {
    std::vector<LayerCache<T>> layers;
};

namespace detail {

/// Row-wise layer norm; statistics accumulate in 64-bit.
template <typename T>
void layer_norm(const Matrix<T>& x, std::span<const T> gain, std::span<const T> offset,
                Matrix<T>& out, std::vector<double>& means, std::vector<double>& inv_stds) {
    const std::size_t d = x.cols();
    means.resize(x.rows());
    inv_stds.resize(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto r = x.row(i);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) sum += static_cast<double>(r[j]);
        const double mean = sum / static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = static_cast<double>(r[j]) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv_std = 1.0 / std::sqrt(var + kLayerNormEpsilon);
        means[i] = mean;
        inv_stds[i] = inv_std;
        auto o = out.row(i);
        for (std::size_t j = 0; j < d; ++j)
            o[j] = static_cast<T>((static_cast<double>(r[j]) - mean) * inv_std *
                                      static_cast<double>(gain[j]) +
                                  static_cast<double>(offset[j]));
    }
}

/// Softmax over each row, max-subtracted, sums in 64-bit.
template <typename T>
void softmax_rows(Matrix<T>& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto r = m.row(i);
        T mx = r[0];
        for (std::size_t j = 1; j < r.size(); ++j) mx = std::max(mx, r[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < r.size(); ++j) {
            const double e = std::exp(static_cast<double>(r[j]) - static_cast<double>(mx));
            r[j] = static_cast<T>(e);
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < r.size(); ++j)
            r[j] = static_cast<T>(static_cast<double>(r[j]) * inv);
    }
}

template <typename T>
Matrix<T> head_slice(const Matrix<T>& m, std::size_t head, std::size_t head_dim) {
    Matrix<T> s(m.rows(), head_dim);
    const std::size_t off = head * head_dim;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto src = m.row(i);
        auto dst = s.row(i);
        for (std::size_t j = 0; j < head_dim; ++j) dst[j] = src[off + j];
    }
    return s;
}

}  // namespace detail

/// Post-norm encoder stack: self-attention -> residual -> norm -> GELU FFN ->
/// residual -> norm, repeated num_layers times. No positional encodings; the
/// candidate positions form a set.
template <typename T>
Matrix<T> encoder_forward(const RerankerParams<T>& params, const RerankerConfig& cfg,
                          const Matrix<T>& sequence, ForwardCache<T>* cache = nullptr) {
    cfg.validate();
    if (sequence.rows() < 1) throw std::invalid_argument("encoder_forward: empty sequence");
    if (sequence.cols() != cfg.model_dim)
        throw std::invalid_argument("encoder_forward: sequence width " +
                                    std::to_string(sequence.cols()) + " != model_dim " +
                                    std::to_string(cfg.model_dim));
    if (params.layers.size() != cfg.num_layers)
        throw std::invalid_argument("encoder_forward: params/config layer count mismatch");

    const std::size_t m = sequence.rows();
    const std::size_t d = cfg.model_dim;
    const std::size_t nh = cfg.num_heads;
    const std::size_t dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    if (cache) {
        cache->layers.clear();
        cache->layers.resize(cfg.num_layers);
    }

    Matrix<T> x = sequence;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const LayerParams<T>& lp = params.layers[l];
        LayerCache<T> local;
        LayerCache<T>& lc = cache ? cache->layers[l] : local;
        lc.input = x;

        lc.q = matmul(x, lp.w_q);
        add_row_bias(lc.q, std::span<const T>(lp.b_q));
        lc.k = matmul(x, lp.w_k);
        add_row_bias(lc.k, std::span<const T>(lp.b_k));
        lc.v = matmul(x, lp.w_v);
        add_row_bias(lc.v, std::span<const T>(lp.b_v));

        lc.attn_concat = Matrix<T>(m, d);
        lc.attn_probs.clear();
        lc.attn_probs.reserve(nh);
        for (std::size_t h = 0; h < nh; ++h) {
            Matrix<T> qh = detail::head_slice(lc.q, h, dh);
            Matrix<T> kh = detail::head_slice(lc.k, h, dh);
            Matrix<T> vh = detail::head_slice(lc.v, h, dh);
            Matrix<T> probs(m, m);
            for (std::size_t i = 0; i < m; ++i) {
                auto qr = qh.row(i);
                auto pr = probs.row(i);
                for (std::size_t j = 0; j < m; ++j)
                    pr[j] = static_cast<T>(dot(std::span<const T>(qr), std::span<const T>(kh.row(j))) *
                                           inv_sqrt_dh);
            }
            detail::softmax_rows(probs);
            Matrix<T> oh = matmul(probs, vh);
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < m; ++i) {
                auto src = oh.row(i);
                auto dst = lc.attn_concat.row(i);
                for (std::size_t j = 0; j < dh; ++j) dst[off + j] = src[j];
            }
            lc.attn_probs.push_back(std::move(probs));
        }

        Matrix<T> attn_out = matmul(lc.attn_concat, lp.w_o);
        add_row_bias(attn_out, std::span<const T>(lp.b_o));

        lc.resid1 = Matrix<T>(m, d);
        for (std::size_t i = 0; i < m * d; ++i)
            lc.resid1.data()[i] = static_cast<T>(x.data()[i] + attn_out.data()[i]);

        lc.normed1 = Matrix<T>(m, d);
        detail::layer_norm(lc.resid1, std::span<const T>(lp.ln1_gain),
                           std::span<const T>(lp.ln1_offset), lc.normed1, lc.ln1_mean,
                           lc.ln1_inv_std);

        lc.ffn_pre = matmul(lc.normed1, lp.w_ffn1);
        add_row_bias(lc.ffn_pre, std::span<const T>(lp.b_ffn1));
        lc.ffn_act = Matrix<T>(lc.ffn_pre.rows(), lc.ffn_pre.cols());
        for (std::size_t i = 0; i < lc.ffn_pre.size(); ++i)
            lc.ffn_act.data()[i] = static_cast<T>(gelu(static_cast<double>(lc.ffn_pre.data()[i])));

        Matrix<T> ffn_out = matmul(lc.ffn_act, lp.w_ffn2);
        add_row_bias(ffn_out, std::span<const T>(lp.b_ffn2));

        lc.resid2 = Matrix<T>(m, d);
        for (std::size_t i = 0; i < m * d; ++i)
            lc.resid2.data()[i] = static_cast<T>(lc.normed1.data()[i] + ffn_out.data()[i]);

        lc.output = Matrix<T>(m, d);
        detail::layer_norm(lc.resid2, std::span<const T>(lp.ln2_gain),
                           std::span<const T>(lp.ln2_offset), lc.output, lc.ln2_mean,
                           lc.ln2_inv_std);

        if (!lc.output.all_finite())
            throw std::runtime_error("encoder_forward: non-finite activation in layer " +
                                     std::to_string(l));
        x = lc.output;
    }
    return x;
}

template <typename T>
struct ScoreCache {
    ForwardCache<T> encoder;
    Matrix<T> sequence;
    Matrix<T> output;
    std::size_t n_conversation = 0;
    std::size_t n_candidates = 0;
};

/// Joint re-encoding of [conversation; candidates] followed by rescoring.
/// Inner-product mode scores against output position 0; linear-projection
/// mode applies the scoring head to each candidate position.
template <typename T>
std::vector<T> score_candidates(const RerankerParams<T>& params, const RerankerConfig& cfg,
                                const Matrix<T>& conversation, const Matrix<T>& candidates,
                                ScoreCache<T>* cache = nullptr) {
    cfg.validate();
    if (candidates.rows() == 0) throw std::invalid_argument("score_candidates: no candidates");
    if (candidates.cols() != cfg.model_dim)
        throw std::invalid_argument("score_candidates: candidate dim mismatch");
    switch (cfg.input_mode) {
        case InputMode::kConversationVector:
            if (conversation.rows() != 1)
                throw std::invalid_argument(
                    "score_candidates: conversation-vector mode needs exactly one row");
            break;
        case InputMode::kConversationTokens:
            if (conversation.rows() < 1)
                throw std::invalid_argument(
                    "score_candidates: conversation-tokens mode needs at least one row");
            break;
        case InputMode::kPassagesOnly:
            if (conversation.rows() != 0)
                throw std::invalid_argument(
                    "score_candidates: passages-only mode takes no conversation input");
            break;
    }
    if (conversation.rows() > 0 && conversation.cols() != cfg.model_dim)
        throw std::invalid_argument("score_candidates: conversation dim mismatch");

    const std::size_t n_conv = conversation.rows();
    const std::size_t k = candidates.rows();
    Matrix<T> seq(n_conv + k, cfg.model_dim);
    for (std::size_t i = 0; i < n_conv; ++i) {
        auto src = conversation.row(i);
        auto dst = seq.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    for (std::size_t i = 0; i < k; ++i) {
        auto src = candidates.row(i);
        auto dst = seq.row(n_conv + i);
        std::copy(src.begin(), src.end(), dst.begin());
    }

    ForwardCache<T> local_cache;
    ForwardCache<T>* enc_cache = cache ? &cache->encoder : nullptr;
    Matrix<T> out = encoder_forward(params, cfg, seq, enc_cache);

    std::vector<T> scores(k);
    if (cfg.scoring_mode == ScoringMode::kInnerProduct) {
        auto conv_out = out.row(0);
        for (std::size_t j = 0; j < k; ++j)
            scores[j] = static_cast<T>(
                dot(std::span<const T>(conv_out), std::span<const T>(out.row(n_conv + j))));
    } else {
        if (!params.has_projection())
            throw std::invalid_argument("score_candidates: params lack the scoring head");
        std::span<const T> w(params.w_proj);
        for (std::size_t j = 0; j < k; ++j)
            scores[j] = static_cast<T>(dot(w, std::span<const T>(out.row(n_conv + j))) +
                                       static_cast<double>(params.b_proj[0]));
    }

    if (cache) {
        cache->sequence = std::move(seq);
        cache->output = std::move(out);
        cache->n_conversation = n_conv;
        cache->n_candidates = k;
    }
    return scores;
}

/// Reorder a retrieved pool by new scores and cut to k_out. Never adds or
/// drops a candidate before the cut.
template <typename S>
RankedList rerank(const RankedList& ranked_in, std::span<const S> new_scores, std::size_t k_out) {
    if (new_scores.size() != ranked_in.candidates.size())
        throw std::invalid_argument("rerank: " + std::to_string(new_scores.size()) +
                                    " scores for " + std::to_string(ranked_in.candidates.size()) +
                                    " candidates");
    std::vector<std::size_t> order(ranked_in.candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (new_scores[a] != new_scores[b]) return new_scores[a] > new_scores[b];
        return ranked_in.candidates[a].passage_id < ranked_in.candidates[b].passage_id;
    });
    RankedList out;
    out.query_key = ranked_in.query_key;
    const std::size_t n = std::min<std::size_t>(k_out, order.size());
    out.candidates.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Candidate c = ranked_in.candidates[order[i]];
        c.score = static_cast<float>(new_scores[order[i]]);
        out.candidates.push_back(std::move(c));
    }
    return out;
}

}  // namespace rre
