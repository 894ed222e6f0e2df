#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rre/evaluation.hpp"
#include "rre/loss.hpp"
#include "rre/optimizer.hpp"
#include "rre/parallel.hpp"
#include "rre/reranker.hpp"
#include "rre/reranker_grad.hpp"
#include "rre/rng.hpp"
#include "rre/types.hpp"

namespace rre {

struct TrainConfig {
    double learning_rate = 5e-5;
    double weight_decay = 1e-2;
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    std::size_t candidates_per_query = 24;  // 1 positive + sampled negatives
    std::size_t patience = 3;               // early-stopping evaluations
    std::vector<std::size_t> eval_k_grid = {1, 3, 5, 10, 15, 20, 30, 50, 100, 250, 500, 750, 1000};
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
        if (candidates_per_query < 2)
            throw std::invalid_argument("candidates_per_query must be >= 2");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
        if (eval_k_grid.empty()) throw std::invalid_argument("eval_k_grid must be non-empty");
        if (!std::is_sorted(eval_k_grid.begin(), eval_k_grid.end()))
            throw std::invalid_argument("eval_k_grid must be ascending");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"learning_rate", c.learning_rate},
                       {"weight_decay", c.weight_decay},
                       {"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"candidates_per_query", c.candidates_per_query},
                       {"patience", c.patience},
                       {"eval_k_grid", c.eval_k_grid},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.candidates_per_query = j.value("candidates_per_query", c.candidates_per_query);
    c.patience = j.value("patience", c.patience);
    c.eval_k_grid = j.value("eval_k_grid", c.eval_k_grid);
    c.seed = j.value("seed", c.seed);
}

struct StepLogEntry {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct EpochLogEntry {
    std::size_t epoch = 0;
    double dev_mean_coverage = 0.0;
};

struct TrainingLog {
    std::vector<StepLogEntry> steps;
    std::vector<EpochLogEntry> epochs;
    std::size_t best_epoch = 0;
    double best_dev_coverage = 0.0;
    std::string stop_reason;
    std::size_t trained_queries = 0;
    std::size_t skipped_queries = 0;
};

inline void write_training_log(const TrainingLog& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& s : log.steps)
        out << nlohmann::json{{"step", s.step}, {"lr", s.lr}, {"loss", s.loss}}.dump() << "\n";
    for (const auto& e : log.epochs)
        out << nlohmann::json{{"epoch", e.epoch}, {"dev_mean_coverage", e.dev_mean_coverage}}.dump()
            << "\n";
    out << nlohmann::json{{"best_epoch", log.best_epoch},
                          {"best_dev_coverage", log.best_dev_coverage},
                          {"stop_reason", log.stop_reason},
                          {"trained_queries", log.trained_queries},
                          {"skipped_queries", log.skipped_queries}}
               .dump()
        << "\n";
}

struct TrainData {
    const PassageCorpus* corpus = nullptr;
    const EmbeddingMatrix* passage_embeddings = nullptr;
    const std::vector<ConversationExample>* train_examples = nullptr;
    const EmbeddingMatrix* train_query_embeddings = nullptr;
    const RaggedEmbeddings* train_query_tokens = nullptr;  // conversation-tokens mode only
    const std::vector<RankedList>* train_rankings = nullptr;
    const std::vector<ConversationExample>* dev_examples = nullptr;
    const EmbeddingMatrix* dev_query_embeddings = nullptr;
    const RaggedEmbeddings* dev_query_tokens = nullptr;
    const std::vector<RankedList>* dev_rankings = nullptr;
};

struct TrainResult {
    RerankerParams<float> params;
    TrainingLog log;
};

namespace detail {

template <typename T>
Matrix<T> gather_rows(const EmbeddingMatrix& emb, std::span<const std::size_t> rows) {
    Matrix<T> m(rows.size(), emb.dim());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto src = emb.values.row(rows[i]);
        auto dst = m.row(i);
        for (std::size_t j = 0; j < emb.dim(); ++j) dst[j] = static_cast<T>(src[j]);
    }
    return m;
}

template <typename T>
Matrix<T> conversation_input(const RerankerConfig& cfg, const ConversationExample& ex,
                             const EmbeddingMatrix& query_embeddings,
                             const RaggedEmbeddings* query_tokens) {
    switch (cfg.input_mode) {
        case InputMode::kConversationVector: {
            const std::size_t row[1] = {ex.conv_embedding_row};
            return gather_rows<T>(query_embeddings, row);
        }
        case InputMode::kConversationTokens: {
            if (!query_tokens)
                throw std::invalid_argument(
                    "conversation-tokens mode needs a token embedding file");
            const Matrix<float>& rec = query_tokens->records.at(ex.conv_embedding_row);
            Matrix<T> m(rec.rows(), rec.cols());
            for (std::size_t i = 0; i < rec.size(); ++i)
                m.data()[i] = static_cast<T>(rec.data()[i]);
            return m;
        }
        case InputMode::kPassagesOnly:
            return Matrix<T>();
    }
    return Matrix<T>();
}

/// 64-bit sum buffers over all tensors; queries are added in batch order.
struct GradAccumulator {
    std::vector<std::vector<double>> sums;

    explicit GradAccumulator(const RerankerParams<float>& like) {
        for (const auto& v : tensor_views(like)) sums.emplace_back(v.size, 0.0);
    }

    void add(const RerankerParams<float>& grads) {
        auto views = tensor_views(grads);
        for (std::size_t i = 0; i < views.size(); ++i)
            for (std::size_t j = 0; j < views[i].size; ++j)
                sums[i][j] += static_cast<double>(views[i].data[j]);
    }

    RerankerParams<float> mean(const RerankerParams<float>& like, std::size_t count) const {
        RerankerParams<float> out = zeros_like(like);
        auto views = tensor_views(out);
        const double inv = 1.0 / static_cast<double>(count);
        for (std::size_t i = 0; i < views.size(); ++i)
            for (std::size_t j = 0; j < views[i].size; ++j)
                views[i].data[j] = static_cast<float>(sums[i][j] * inv);
        return out;
    }

    void reset() {
        for (auto& s : sums) std::fill(s.begin(), s.end(), 0.0);
    }
};

}  // namespace detail

/// Rescore every pool with the current parameters and return mean coverage
/// over the k grid (gold-passage-id mode).
inline double evaluate_dev_coverage(const RerankerParams<float>& params,
                                    const RerankerConfig& rr_cfg, const TrainData& data,
                                    const std::vector<std::size_t>& k_grid,
                                    std::size_t workers = 1) {
    std::unordered_map<QueryKey, const ConversationExample*, QueryKeyHash> by_key;
    for (const auto& ex : *data.dev_examples) by_key.emplace(QueryKey{ex.conv_id, ex.turn}, &ex);

    const auto& rankings = *data.dev_rankings;
    std::vector<RankedList> reranked(rankings.size());
    parallel_for(rankings.size(), workers, [&](std::size_t i) {
        const RankedList& full = rankings[i];
        auto it = by_key.find(full.query_key);
        if (it == by_key.end())
            throw std::runtime_error("dev evaluation: no example for query (" +
                                     full.query_key.conv_id + ", turn " +
                                     std::to_string(full.query_key.turn) + ")");
        RankedList pool;
        pool.query_key = full.query_key;
        const std::size_t n = std::min(rr_cfg.pool_size, full.candidates.size());
        pool.candidates.assign(full.candidates.begin(),
                               full.candidates.begin() + static_cast<std::ptrdiff_t>(n));
        std::vector<std::size_t> rows(pool.candidates.size());
        for (std::size_t j = 0; j < pool.candidates.size(); ++j)
            rows[j] = pool.candidates[j].passage_index;
        Matrix<float> cands = detail::gather_rows<float>(*data.passage_embeddings, rows);
        Matrix<float> conv = detail::conversation_input<float>(
            rr_cfg, *it->second, *data.dev_query_embeddings, data.dev_query_tokens);
        std::vector<float> scores = score_candidates(params, rr_cfg, conv, cands);
        reranked[i] = rerank(pool, std::span<const float>(scores), pool.candidates.size());
    });

    CoverageTable table = coverage_at_k(reranked, *data.dev_examples,
                                        k_grid, CoverageMode::kGoldPassageId,
                                        data.corpus, workers);
    return mean_coverage(table);
}

/// DPR-style contrastive training over retrieved pools: the gold passage is
/// forced in, negatives are drawn uniformly without replacement from the
/// non-gold pool members, and the mean softmax NLL is minimized with AdamW
/// under linear learning-rate decay. Dev mean coverage drives early stopping
/// and best-checkpoint selection.
inline TrainResult train(const TrainData& data, const TrainConfig& cfg,
                         const RerankerConfig& rr_cfg, std::size_t workers = 1) {
    cfg.validate();
    rr_cfg.validate();

    struct Trainable {
        std::size_t example_index = 0;
        std::size_t gold_pool_position = 0;        // position of the forced positive
        std::vector<std::size_t> pool_rows;        // embedding rows, pool order
        std::vector<std::size_t> negative_positions;
    };

    std::unordered_map<QueryKey, const RankedList*, QueryKeyHash> ranking_by_key;
    for (const auto& r : *data.train_rankings) ranking_by_key.emplace(r.query_key, &r);

    const auto& examples = *data.train_examples;
    std::vector<Trainable> trainables;
    std::size_t skipped = 0;
    for (std::size_t e = 0; e < examples.size(); ++e) {
        const auto& ex = examples[e];
        auto it = ranking_by_key.find(QueryKey{ex.conv_id, ex.turn});
        if (it == ranking_by_key.end())
            throw std::runtime_error("train: no ranking for query (" + ex.conv_id + ", turn " +
                                     std::to_string(ex.turn) + ")");
        const auto& cands = it->second->candidates;
        const std::size_t pool_n = std::min(rr_cfg.pool_size, cands.size());
        Trainable t;
        t.example_index = e;
        std::optional<std::size_t> gold_pos;
        std::unordered_set<std::string_view> golds(ex.gold_passage_ids.begin(),
                                                   ex.gold_passage_ids.end());
        for (std::size_t p = 0; p < pool_n; ++p) {
            t.pool_rows.push_back(cands[p].passage_index);
            if (golds.count(cands[p].passage_id)) {
                if (!gold_pos) gold_pos = p;
            } else {
                t.negative_positions.push_back(p);
            }
        }
        if (!gold_pos || t.negative_positions.empty()) {
            ++skipped;
            continue;
        }
        t.gold_pool_position = *gold_pos;
        trainables.push_back(std::move(t));
    }
    if (trainables.empty()) throw std::runtime_error("train: no trainable queries");

    RerankerParams<float> params = init_params<float>(rr_cfg);
    OptimizerState opt_state = OptimizerState::like(params);
    AdamWConfig adamw;
    adamw.weight_decay = cfg.weight_decay;

    const std::size_t steps_per_epoch =
        (trainables.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * steps_per_epoch;

    TrainingLog log;
    log.trained_queries = trainables.size();
    log.skipped_queries = skipped;

    RerankerParams<float> best_params = params;
    double best_cov = -1.0;
    std::size_t non_improving = 0;
    std::size_t completed_steps = 0;
    bool diverged = false;

    detail::GradAccumulator accum(params);

    for (std::size_t epoch = 1; epoch <= cfg.epochs && !diverged; ++epoch) {
        // Seeded Fisher-Yates; std::shuffle is implementation-defined.
        std::vector<std::size_t> order(trainables.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

        for (std::size_t b0 = 0; b0 < order.size() && !diverged; b0 += cfg.batch_size) {
            const std::size_t bn = std::min(cfg.batch_size, order.size() - b0);
            accum.reset();
            double loss_sum = 0.0;
            for (std::size_t bi = 0; bi < bn; ++bi) {
                const Trainable& t = trainables[order[b0 + bi]];
                const auto& ex = examples[t.example_index];

                std::mt19937_64 sample_rng(mix_seed(cfg.seed, epoch, t.example_index));
                const std::size_t n_neg =
                    std::min(cfg.candidates_per_query - 1, t.negative_positions.size());
                std::vector<std::size_t> negs = t.negative_positions;
                for (std::size_t i = 0; i < n_neg; ++i) {
                    const std::size_t j = i + uniform_index(sample_rng, negs.size() - i);
                    std::swap(negs[i], negs[j]);
                }
                negs.resize(n_neg);

                std::vector<std::size_t> rows;
                rows.reserve(1 + n_neg);
                rows.push_back(t.pool_rows[t.gold_pool_position]);
                for (std::size_t p : negs) rows.push_back(t.pool_rows[p]);

                Matrix<float> cands = detail::gather_rows<float>(*data.passage_embeddings, rows);
                Matrix<float> conv = detail::conversation_input<float>(
                    rr_cfg, ex, *data.train_query_embeddings, data.train_query_tokens);

                try {
                    ScoreCache<float> cache;
                    std::vector<float> scores =
                        score_candidates(params, rr_cfg, conv, cands, &cache);
                    const double loss = nll_loss(std::span<const float>(scores), 0);
                    if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");
                    loss_sum += loss;
                    std::vector<float> dscores = nll_loss_grad(std::span<const float>(scores), 0);
                    accum.add(backward(params, rr_cfg, cache, std::span<const float>(dscores)));
                } catch (const std::runtime_error&) {
                    diverged = true;
                    break;
                }
            }
            if (diverged) break;

            const double step_lr =
                linear_decay_lr(cfg.learning_rate, completed_steps, total_steps);
            RerankerParams<float> grads = accum.mean(params, bn);
            adamw_step(params, grads, opt_state, step_lr, adamw);
            ++completed_steps;
            log.steps.push_back({completed_steps, step_lr, loss_sum / static_cast<double>(bn)});
        }
        if (diverged) break;

        const double cov = evaluate_dev_coverage(params, rr_cfg, data, cfg.eval_k_grid, workers);
        log.epochs.push_back({epoch, cov});
        if (cov > best_cov) {
            best_cov = cov;
            best_params = params;
            log.best_epoch = epoch;
            non_improving = 0;
        } else {
            ++non_improving;
        }
        if (non_improving >= cfg.patience) {
            log.stop_reason = "early-stop";
            break;
        }
    }

    if (diverged)
        log.stop_reason = "diverged";
    else if (log.stop_reason.empty())
        log.stop_reason = "max-epochs";
    log.best_dev_coverage = best_cov < 0.0 ? 0.0 : best_cov;

    TrainResult result;
    result.params = std::move(best_params);
    result.log = std::move(log);
    return result;
}

}  // namespace rre
