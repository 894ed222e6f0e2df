#pragma once

// Umbrella header for the retrieve / rerank / evaluate engine.

#include "rre/checkpoint.hpp"
#include "rre/corpus_io.hpp"
#include "rre/embedding_io.hpp"
#include "rre/evaluation.hpp"
#include "rre/latency.hpp"
#include "rre/loss.hpp"
#include "rre/matrix.hpp"
#include "rre/optimizer.hpp"
#include "rre/parallel.hpp"
#include "rre/rankings_io.hpp"
#include "rre/reranker.hpp"
#include "rre/reranker_grad.hpp"
#include "rre/retriever.hpp"
#include "rre/rng.hpp"
#include "rre/synthetic.hpp"
#include "rre/training.hpp"
#include "rre/types.hpp"

namespace rre {
inline constexpr const char* kVersion = "0.1.0";
}
