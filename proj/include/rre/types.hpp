#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rre/matrix.hpp"

namespace rre {

struct PassageRecord {
    std::string id;
    std::string title;
    std::string text;
};

/// Ordered passage collection; record i corresponds to embedding row i.
class PassageCorpus {
public:
    PassageCorpus() = default;

    void add(PassageRecord record) {
        index_by_id_.emplace(record.id, records_.size());
        records_.push_back(std::move(record));
    }

    std::size_t size() const { return records_.size(); }
    const PassageRecord& at(std::size_t i) const { return records_[i]; }
    const std::vector<PassageRecord>& records() const { return records_; }

    std::optional<std::size_t> index_of(const std::string& id) const {
        auto it = index_by_id_.find(id);
        if (it == index_by_id_.end()) return std::nullopt;
        return it->second;
    }

private:
    std::vector<PassageRecord> records_;
    std::unordered_map<std::string, std::size_t> index_by_id_;
};

/// Dense n x d matrix of 32-bit values aligned by row with a text file.
struct EmbeddingMatrix {
    Matrix<float> values;

    std::size_t count() const { return values.rows(); }
    std::size_t dim() const { return values.cols(); }
};

/// Variable-length per-record matrices sharing one dim (token embeddings).
struct RaggedEmbeddings {
    std::vector<Matrix<float>> records;
    std::size_t dim = 0;

    std::size_t count() const { return records.size(); }
};

struct HistoryTurn {
    std::string question;
    std::string answer;
};

struct ConversationExample {
    std::string conv_id;
    std::uint32_t turn = 0;
    std::vector<HistoryTurn> history;
    std::string question;
    std::size_t conv_embedding_row = 0;
    std::vector<std::string> gold_passage_ids;
    std::vector<std::string> gold_answers;
};

struct QueryKey {
    std::string conv_id;
    std::uint32_t turn = 0;

    friend bool operator==(const QueryKey&, const QueryKey&) = default;
};

struct QueryKeyHash {
    std::size_t operator()(const QueryKey& k) const {
        return std::hash<std::string>{}(k.conv_id) * 1000003u ^ std::hash<std::uint32_t>{}(k.turn);
    }
};

struct Candidate {
    std::size_t passage_index = 0;
    std::string passage_id;
    float score = 0.0f;
};

/// Retrieval or rerank output, strictly ordered by (score desc, id asc).
struct RankedList {
    QueryKey query_key;
    std::vector<Candidate> candidates;
};

}  // namespace rre
