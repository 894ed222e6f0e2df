#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "rre/matrix.hpp"
#include "rre/rng.hpp"
#include "rre/types.hpp"

namespace rre {

/// Fixture with a planted relevance structure: each query's gold passage is
/// the argmax of (A q)^T p over the corpus for a hidden matrix A. With a
/// random orthogonal A the raw inner product q^T p ranks the gold near
/// chance, so a reranker must recover A to win.
///
/// Coordinate 0 is a role marker (positive for queries, negative for
/// passages), mirroring the upstream dual encoder whose conversation and
/// passage embeddings occupy distinguishable regions. The marker is constant
/// per role, so it never affects the planted ranking.
struct SyntheticSpec {
    std::uint64_t seed = 7;
    std::size_t n_passages = 500;
    std::size_t n_train_queries = 200;
    std::size_t n_dev_queries = 100;
    std::size_t dim = 32;
    enum class Transform { kOrthogonal, kIdentity } transform = Transform::kOrthogonal;
};

struct SyntheticFixture {
    PassageCorpus corpus;
    EmbeddingMatrix passage_embeddings;
    std::vector<ConversationExample> train_examples;
    std::vector<ConversationExample> dev_examples;
    EmbeddingMatrix train_query_embeddings;
    EmbeddingMatrix dev_query_embeddings;
};

namespace detail {

inline std::string padded_id(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%05zu", prefix, i);
    return buf;
}

inline constexpr double kRoleMarker = 2.0;

/// v[0] becomes the role marker; the content coordinates are shifted to sum
/// to zero and the whole vector is scaled to norm sqrt(d). Within one role
/// every vector then has the same mean and norm, so layer normalization acts
/// on all of them identically.
inline void shape_vector(std::vector<double>& v, double marker) {
    const std::size_t d = v.size();
    double mean = 0.0;
    for (std::size_t i = 1; i < d; ++i) mean += v[i];
    mean /= static_cast<double>(d - 1);
    double norm2 = marker * marker;
    for (std::size_t i = 1; i < d; ++i) {
        v[i] -= mean;
        norm2 += v[i] * v[i];
    }
    v[0] = marker;
    const double scale = std::sqrt(static_cast<double>(d) / norm2);
    for (double& x : v) x *= scale;
}

/// Random orthogonal matrix via modified Gram-Schmidt on a Gaussian draw.
inline Matrix<double> random_orthogonal(std::size_t d, std::mt19937_64& rng) {
    GaussianSampler gauss(rng);
    Matrix<double> a(d, d);
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = gauss.next();
    for (std::size_t i = 0; i < d; ++i) {
        auto ri = a.row(i);
        for (std::size_t j = 0; j < i; ++j) {
            auto rj = a.row(j);
            double proj = 0.0;
            for (std::size_t t = 0; t < d; ++t) proj += ri[t] * rj[t];
            for (std::size_t t = 0; t < d; ++t) ri[t] -= proj * rj[t];
        }
        double norm = 0.0;
        for (std::size_t t = 0; t < d; ++t) norm += ri[t] * ri[t];
        norm = std::sqrt(norm);
        for (std::size_t t = 0; t < d; ++t) ri[t] /= norm;
    }
    return a;
}

}  // namespace detail

inline SyntheticFixture gen_synthetic(const SyntheticSpec& spec) {
    if (spec.dim < 2) throw std::invalid_argument("gen_synthetic: dim must be >= 2");
    if (spec.n_passages < 2)
        throw std::invalid_argument("gen_synthetic: need at least two passages");

    const std::size_t d = spec.dim;
    std::mt19937_64 rng(spec.seed);
    GaussianSampler gauss(rng);

    Matrix<double> planted(d, d);
    if (spec.transform == SyntheticSpec::Transform::kOrthogonal) {
        planted = detail::random_orthogonal(d, rng);
    } else {
        for (std::size_t i = 0; i < d; ++i) planted(i, i) = 1.0;
    }

    SyntheticFixture fx;
    Matrix<double> passages(spec.n_passages, d);
    fx.passage_embeddings.values = Matrix<float>(spec.n_passages, d);
    for (std::size_t i = 0; i < spec.n_passages; ++i) {
        std::vector<double> v(d);
        for (double& x : v) x = gauss.next();
        detail::shape_vector(v, -detail::kRoleMarker);
        for (std::size_t j = 0; j < d; ++j) {
            passages(i, j) = v[j];
            fx.passage_embeddings.values(i, j) = static_cast<float>(v[j]);
        }
        const std::string id = detail::padded_id("p", i);
        PassageRecord rec;
        rec.id = id;
        rec.title = "Synthetic passage " + id;
        rec.text = "Synthetic passage " + id + " carrying answer token ans" + id + ".";
        fx.corpus.add(std::move(rec));
    }

    auto make_queries = [&](const char* prefix, std::size_t n,
                            std::vector<ConversationExample>& examples, EmbeddingMatrix& emb) {
        emb.values = Matrix<float>(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> q(d);
            for (double& x : q) x = gauss.next();
            detail::shape_vector(q, detail::kRoleMarker);
            for (std::size_t j = 0; j < d; ++j) emb.values(i, j) = static_cast<float>(q[j]);

            // Gold = argmax over passages of (A q)^T p, first index on ties.
            std::vector<double> aq(d, 0.0);
            for (std::size_t r = 0; r < d; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < d; ++c) acc += planted(r, c) * q[c];
                aq[r] = acc;
            }
            std::size_t gold = 0;
            double best = -1e300;
            for (std::size_t p = 0; p < spec.n_passages; ++p) {
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) s += aq[c] * passages(p, c);
                if (s > best) {
                    best = s;
                    gold = p;
                }
            }

            ConversationExample ex;
            ex.conv_id = detail::padded_id(prefix, i);
            ex.turn = 0;
            ex.question = "which passage matches query " + ex.conv_id + "?";
            ex.conv_embedding_row = i;
            ex.gold_passage_ids = {detail::padded_id("p", gold)};
            ex.gold_answers = {"ans" + detail::padded_id("p", gold)};
            examples.push_back(std::move(ex));
        }
    };

    make_queries("train", spec.n_train_queries, fx.train_examples, fx.train_query_embeddings);
    make_queries("dev", spec.n_dev_queries, fx.dev_examples, fx.dev_query_embeddings);
    return fx;
}

}  // namespace rre
