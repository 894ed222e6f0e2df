#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rre/matrix.hpp"
#include "rre/parallel.hpp"
#include "rre/types.hpp"

namespace rre {

/// Exact top-k maximum inner-product search over all passage rows.
/// Scores accumulate in 64-bit in row order and round once, so repeated and
/// partitioned runs agree bit-for-bit. Ties break on ascending passage id.
inline RankedList search(const EmbeddingMatrix& embeddings, const PassageCorpus& corpus,
                         std::span<const float> query, std::size_t k, QueryKey key = {}) {
    if (k == 0) throw std::invalid_argument("search: k must be >= 1");
    if (query.size() != embeddings.dim())
        throw std::invalid_argument("search: query dim " + std::to_string(query.size()) +
                                    " != index dim " + std::to_string(embeddings.dim()));
    if (corpus.size() != embeddings.count())
        throw std::invalid_argument("search: corpus has " + std::to_string(corpus.size()) +
                                    " passages but index has " +
                                    std::to_string(embeddings.count()) + " rows");

    const std::size_t n = embeddings.count();
    std::vector<float> scores(n);
    for (std::size_t i = 0; i < n; ++i)
        scores[i] = static_cast<float>(dot(query, std::span<const float>(embeddings.values.row(i))));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t take = std::min(k, n);
    const auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return corpus.at(a).id < corpus.at(b).id;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take),
                      order.end(), better);

    RankedList out;
    out.query_key = std::move(key);
    out.candidates.reserve(take);
    for (std::size_t i = 0; i < take; ++i)
        out.candidates.push_back({order[i], corpus.at(order[i]).id, scores[order[i]]});
    return out;
}

/// Element-wise equal to independent search() calls; per-query failures are
/// reported with the query index.
inline std::vector<RankedList> batch_search(const EmbeddingMatrix& embeddings,
                                            const PassageCorpus& corpus,
                                            const Matrix<float>& queries, std::size_t k,
                                            std::span<const QueryKey> keys = {},
                                            std::size_t workers = 1) {
    if (!keys.empty() && keys.size() != queries.rows())
        throw std::invalid_argument("batch_search: key count mismatch");
    std::vector<RankedList> results(queries.rows());
    parallel_for(queries.rows(), workers, [&](std::size_t i) {
        try {
            QueryKey key = keys.empty() ? QueryKey{} : keys[i];
            results[i] = search(embeddings, corpus, queries.row(i), k, std::move(key));
        } catch (const std::exception& e) {
            throw std::runtime_error("query " + std::to_string(i) + ": " + e.what());
        }
    });
    return results;
}

}  // namespace rre
