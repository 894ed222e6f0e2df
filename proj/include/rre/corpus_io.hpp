#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "rre/types.hpp"

namespace rre {

namespace detail {

inline std::ifstream open_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return in;
}

inline std::string line_context(const std::filesystem::path& path, std::size_t line_no) {
    return path.string() + ":" + std::to_string(line_no);
}

inline std::string require_string(const nlohmann::json& obj, const char* field,
                                  const std::string& where) {
    if (!obj.contains(field) || !obj[field].is_string())
        throw std::runtime_error(where + ": missing or non-string field \"" + field + "\"");
    return obj[field].get<std::string>();
}

}  // namespace detail

/// One JSON object per line: {id, title, text}. Line i becomes record i.
inline PassageCorpus load_passages(const std::filesystem::path& path) {
    auto in = detail::open_text(path);
    PassageCorpus corpus;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = detail::line_context(path, line_no);
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(where + ": malformed line: " + e.what());
        }
        PassageRecord rec;
        rec.id = detail::require_string(obj, "id", where);
        rec.title = detail::require_string(obj, "title", where);
        rec.text = detail::require_string(obj, "text", where);
        if (rec.id.empty()) throw std::runtime_error(where + ": empty passage id");
        if (!seen.insert(rec.id).second)
            throw std::runtime_error(where + ": duplicate passage id \"" + rec.id + "\"");
        corpus.add(std::move(rec));
    }
    return corpus;
}

inline void write_passages(const PassageCorpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& rec : corpus.records()) {
        nlohmann::json obj{{"id", rec.id}, {"title", rec.title}, {"text", rec.text}};
        out << obj.dump() << "\n";
    }
}

/// CANNOTANSWER / NOTRECOVERED ingest as UNANSWERABLE. Idempotent; duplicates
/// introduced by the mapping are dropped, order preserved.
inline std::vector<std::string> normalize_answer_labels(std::vector<std::string> answers) {
    for (auto& a : answers)
        if (a == "CANNOTANSWER" || a == "NOTRECOVERED") a = "UNANSWERABLE";
    std::vector<std::string> out;
    for (auto& a : answers)
        if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(std::move(a));
    return out;
}

/// Query file: one example per line, line i aligned with embedding row i.
inline std::vector<ConversationExample> load_dataset(const std::filesystem::path& path,
                                                     const EmbeddingMatrix& embeddings) {
    auto in = detail::open_text(path);
    std::vector<ConversationExample> examples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = detail::line_context(path, line_no);
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(where + ": malformed line: " + e.what());
        }
        ConversationExample ex;
        ex.conv_id = detail::require_string(obj, "conv_id", where);
        if (!obj.contains("turn") || !obj["turn"].is_number_unsigned())
            throw std::runtime_error(where + ": missing or non-integer field \"turn\"");
        ex.turn = obj["turn"].get<std::uint32_t>();
        ex.question = detail::require_string(obj, "question", where);
        if (obj.contains("history")) {
            for (const auto& h : obj["history"]) {
                HistoryTurn t;
                t.question = detail::require_string(h, "question", where + " history");
                t.answer = detail::require_string(h, "answer", where + " history");
                ex.history.push_back(std::move(t));
            }
        }
        if (!obj.contains("gold_passage_ids") || !obj["gold_passage_ids"].is_array())
            throw std::runtime_error(where + ": missing field \"gold_passage_ids\"");
        for (const auto& g : obj["gold_passage_ids"]) ex.gold_passage_ids.push_back(g.get<std::string>());
        if (!obj.contains("gold_answers") || !obj["gold_answers"].is_array())
            throw std::runtime_error(where + ": missing field \"gold_answers\"");
        for (const auto& g : obj["gold_answers"]) ex.gold_answers.push_back(g.get<std::string>());
        if (ex.gold_answers.empty())
            throw std::runtime_error(where + ": gold_answers must be non-empty");
        ex.gold_answers = normalize_answer_labels(std::move(ex.gold_answers));
        {
            std::unordered_set<std::string> dedup(ex.gold_passage_ids.begin(), ex.gold_passage_ids.end());
            if (dedup.size() != ex.gold_passage_ids.size())
                throw std::runtime_error(where + ": duplicate gold passage id");
        }
        ex.conv_embedding_row = examples.size();
        if (ex.conv_embedding_row >= embeddings.count())
            throw std::runtime_error(where + ": no embedding row for example " +
                                     std::to_string(ex.conv_embedding_row) + " (file has " +
                                     std::to_string(embeddings.count()) + " rows)");
        examples.push_back(std::move(ex));
    }
    if (examples.size() != embeddings.count())
        throw std::runtime_error(path.string() + ": " + std::to_string(examples.size()) +
                                 " examples but embedding file has " +
                                 std::to_string(embeddings.count()) + " rows");
    return examples;
}

inline void write_dataset(const std::vector<ConversationExample>& examples,
                          const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& ex : examples) {
        nlohmann::json hist = nlohmann::json::array();
        for (const auto& h : ex.history)
            hist.push_back({{"question", h.question}, {"answer", h.answer}});
        nlohmann::json obj{{"conv_id", ex.conv_id},
                           {"turn", ex.turn},
                           {"history", hist},
                           {"question", ex.question},
                           {"gold_passage_ids", ex.gold_passage_ids},
                           {"gold_answers", ex.gold_answers}};
        out << obj.dump() << "\n";
    }
}

}  // namespace rre
