#pragma once

// Shared end-to-end fixture: synthetic corpus/queries plus retrieved pools.

#include <vector>

#include "rre/retriever.hpp"
#include "rre/synthetic.hpp"
#include "rre/training.hpp"

namespace rre::testing {

struct PipelineFixture {
    SyntheticFixture fx;
    std::vector<RankedList> train_rankings;
    std::vector<RankedList> dev_rankings;

    TrainData data() const {
        TrainData d;
        d.corpus = &fx.corpus;
        d.passage_embeddings = &fx.passage_embeddings;
        d.train_examples = &fx.train_examples;
        d.train_query_embeddings = &fx.train_query_embeddings;
        d.train_rankings = &train_rankings;
        d.dev_examples = &fx.dev_examples;
        d.dev_query_embeddings = &fx.dev_query_embeddings;
        d.dev_rankings = &dev_rankings;
        return d;
    }
};

inline std::vector<QueryKey> keys_of(const std::vector<ConversationExample>& examples) {
    std::vector<QueryKey> keys;
    for (const auto& ex : examples) keys.push_back({ex.conv_id, ex.turn});
    return keys;
}

inline PipelineFixture make_pipeline_fixture(const SyntheticSpec& spec, std::size_t pool_size) {
    PipelineFixture p;
    p.fx = gen_synthetic(spec);
    auto train_keys = keys_of(p.fx.train_examples);
    auto dev_keys = keys_of(p.fx.dev_examples);
    p.train_rankings =
        batch_search(p.fx.passage_embeddings, p.fx.corpus, p.fx.train_query_embeddings.values,
                     pool_size, train_keys);
    p.dev_rankings = batch_search(p.fx.passage_embeddings, p.fx.corpus,
                                  p.fx.dev_query_embeddings.values, pool_size, dev_keys);
    return p;
}

}  // namespace rre::testing
