#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "rre/corpus_io.hpp"
#include "rre/parallel.hpp"
#include "rre/types.hpp"

namespace rre {

enum class CoverageMode { kGoldPassageId, kGoldAnswerString };

inline std::string to_string(CoverageMode m) {
    return m == CoverageMode::kGoldPassageId ? "gold-passage-id" : "gold-answer-string";
}

inline CoverageMode coverage_mode_from_string(const std::string& s) {
    if (s == "gold-passage-id") return CoverageMode::kGoldPassageId;
    if (s == "gold-answer-string") return CoverageMode::kGoldAnswerString;
    throw std::invalid_argument("unknown coverage mode \"" + s + "\"");
}

struct CoverageTable {
    CoverageMode mode = CoverageMode::kGoldPassageId;
    std::vector<std::pair<std::size_t, double>> entries;  // (k, fraction), k ascending
    std::size_t query_count = 0;
};

inline double mean_coverage(const CoverageTable& table) {
    double sum = 0.0;
    for (const auto& [k, v] : table.entries) sum += v;
    return table.entries.empty() ? 0.0 : sum / static_cast<double>(table.entries.size());
}

/// SQuAD-style normalization: lowercase, strip punctuation, drop the
/// articles a/an/the, collapse whitespace.
inline std::string normalize_answer(std::string_view text) {
    std::string lowered;
    lowered.reserve(text.size());
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (u < 0x80 && std::isupper(u))
            lowered.push_back(static_cast<char>(std::tolower(u)));
        else
            lowered.push_back(c);
    }
    static constexpr std::string_view kPunct = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
    std::string stripped;
    stripped.reserve(lowered.size());
    for (char c : lowered)
        if (kPunct.find(c) == std::string_view::npos) stripped.push_back(c);
    std::istringstream words(stripped);
    std::string token, out;
    while (words >> token) {
        if (token == "a" || token == "an" || token == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out += token;
    }
    return out;
}

inline std::vector<std::string> normalized_tokens(std::string_view text) {
    std::istringstream words(normalize_answer(text));
    std::vector<std::string> tokens;
    std::string token;
    while (words >> token) tokens.push_back(token);
    return tokens;
}

/// EM = 1 iff the normalized prediction equals any normalized gold.
inline int exact_match(std::string_view prediction, std::span<const std::string> golds) {
    if (golds.empty()) throw std::invalid_argument("exact_match: empty golds");
    const std::string pred = normalize_answer(prediction);
    for (const auto& g : golds)
        if (pred == normalize_answer(g)) return 1;
    return 0;
}

/// Max over golds of the token-multiset F1. Both token lists empty -> 1,
/// exactly one empty -> 0.
inline double token_f1(std::string_view prediction, std::span<const std::string> golds) {
    if (golds.empty()) throw std::invalid_argument("token_f1: empty golds");
    const auto pred_tokens = normalized_tokens(prediction);
    std::unordered_map<std::string, std::size_t> pred_counts;
    for (const auto& t : pred_tokens) ++pred_counts[t];

    double best = 0.0;
    for (const auto& gold : golds) {
        const auto gold_tokens = normalized_tokens(gold);
        double f1;
        if (pred_tokens.empty() && gold_tokens.empty()) {
            f1 = 1.0;
        } else if (pred_tokens.empty() || gold_tokens.empty()) {
            f1 = 0.0;
        } else {
            std::unordered_map<std::string, std::size_t> gold_counts;
            for (const auto& t : gold_tokens) ++gold_counts[t];
            std::size_t overlap = 0;
            for (const auto& [t, c] : pred_counts) {
                auto it = gold_counts.find(t);
                if (it != gold_counts.end()) overlap += std::min(c, it->second);
            }
            if (overlap == 0) {
                f1 = 0.0;
            } else {
                const double precision =
                    static_cast<double>(overlap) / static_cast<double>(pred_tokens.size());
                const double recall =
                    static_cast<double>(overlap) / static_cast<double>(gold_tokens.size());
                f1 = 2.0 * precision * recall / (precision + recall);
            }
        }
        best = std::max(best, f1);
    }
    return best;
}

/// Fraction of queries whose gold appears within the top k, for each k in
/// the grid. Gold-passage-id mode matches ids; gold-answer-string mode does
/// normalized substring containment against passage texts (needs a corpus).
inline CoverageTable coverage_at_k(const std::vector<RankedList>& rankings,
                                   const std::vector<ConversationExample>& examples,
                                   std::vector<std::size_t> k_grid, CoverageMode mode,
                                   const PassageCorpus* corpus = nullptr,
                                   std::size_t workers = 1) {
    if (k_grid.empty()) throw std::invalid_argument("coverage_at_k: empty k grid");
    if (mode == CoverageMode::kGoldAnswerString && corpus == nullptr)
        throw std::invalid_argument("coverage_at_k: gold-answer-string mode needs the corpus");
    std::sort(k_grid.begin(), k_grid.end());
    k_grid.erase(std::unique(k_grid.begin(), k_grid.end()), k_grid.end());

    std::unordered_map<QueryKey, const ConversationExample*, QueryKeyHash> by_key;
    for (const auto& ex : examples) by_key.emplace(QueryKey{ex.conv_id, ex.turn}, &ex);

    // Normalized passage texts are shared across queries; fill the cache
    // up-front for the indices that can actually be hit.
    std::vector<std::string> normalized_texts;
    if (mode == CoverageMode::kGoldAnswerString) {
        normalized_texts.resize(corpus->size());
        std::vector<char> needed(corpus->size(), 0);
        for (const auto& list : rankings)
            for (const auto& c : list.candidates)
                if (c.passage_index < corpus->size()) needed[c.passage_index] = 1;
        parallel_for(corpus->size(), workers, [&](std::size_t i) {
            if (needed[i]) normalized_texts[i] = normalize_answer(corpus->at(i).text);
        });
    }

    // first_hit[q] = 1-based rank of the first gold hit, 0 if none.
    std::vector<std::size_t> first_hit(rankings.size(), 0);
    std::vector<const ConversationExample*> resolved(rankings.size(), nullptr);
    for (std::size_t q = 0; q < rankings.size(); ++q) {
        auto it = by_key.find(rankings[q].query_key);
        if (it == by_key.end())
            throw std::runtime_error("coverage_at_k: no example for query (" +
                                     rankings[q].query_key.conv_id + ", turn " +
                                     std::to_string(rankings[q].query_key.turn) + ")");
        resolved[q] = it->second;
    }
    parallel_for(rankings.size(), workers, [&](std::size_t q) {
        const auto& list = rankings[q];
        const auto& ex = *resolved[q];
        if (mode == CoverageMode::kGoldPassageId) {
            std::unordered_set<std::string_view> golds(ex.gold_passage_ids.begin(),
                                                       ex.gold_passage_ids.end());
            for (std::size_t r = 0; r < list.candidates.size(); ++r) {
                if (golds.count(list.candidates[r].passage_id)) {
                    first_hit[q] = r + 1;
                    break;
                }
            }
        } else {
            std::vector<std::string> norm_golds;
            for (const auto& g : ex.gold_answers) norm_golds.push_back(normalize_answer(g));
            for (std::size_t r = 0; r < list.candidates.size(); ++r) {
                const std::string& text = normalized_texts.at(list.candidates[r].passage_index);
                bool hit = false;
                for (const auto& g : norm_golds)
                    if (!g.empty() && text.find(g) != std::string::npos) {
                        hit = true;
                        break;
                    }
                if (hit) {
                    first_hit[q] = r + 1;
                    break;
                }
            }
        }
    });

    CoverageTable table;
    table.mode = mode;
    table.query_count = rankings.size();
    for (std::size_t k : k_grid) {
        std::size_t covered = 0;
        for (std::size_t q = 0; q < rankings.size(); ++q)
            if (first_hit[q] != 0 && first_hit[q] <= k) ++covered;
        const double frac = rankings.empty()
                                ? 0.0
                                : static_cast<double>(covered) / static_cast<double>(rankings.size());
        table.entries.emplace_back(k, frac);
    }
    return table;
}

struct QueryAnswerDetail {
    QueryKey key;
    int em = 0;
    double f1 = 0.0;
};

struct AnswerMetrics {
    double em = 0.0;
    double f1 = 0.0;
    std::vector<QueryAnswerDetail> details;
};

/// Mean EM / token-F1 over (prediction, example) pairs joined on query key.
inline AnswerMetrics evaluate_answers(
    const std::vector<std::pair<QueryKey, std::string>>& predictions,
    const std::vector<ConversationExample>& examples) {
    std::unordered_map<QueryKey, const ConversationExample*, QueryKeyHash> by_key;
    for (const auto& ex : examples) by_key.emplace(QueryKey{ex.conv_id, ex.turn}, &ex);
    AnswerMetrics metrics;
    double em_sum = 0.0, f1_sum = 0.0;
    for (const auto& [key, pred] : predictions) {
        auto it = by_key.find(key);
        if (it == by_key.end())
            throw std::runtime_error("evaluate_answers: no example for query (" + key.conv_id +
                                     ", turn " + std::to_string(key.turn) + ")");
        QueryAnswerDetail detail;
        detail.key = key;
        detail.em = exact_match(pred, it->second->gold_answers);
        detail.f1 = token_f1(pred, it->second->gold_answers);
        em_sum += detail.em;
        f1_sum += detail.f1;
        metrics.details.push_back(std::move(detail));
    }
    if (!predictions.empty()) {
        metrics.em = em_sum / static_cast<double>(predictions.size());
        metrics.f1 = f1_sum / static_cast<double>(predictions.size());
    }
    return metrics;
}

struct ReaderInputRecord {
    std::string question;
    std::vector<std::string> ctx_texts;
    std::vector<std::string> answers;
};

/// Reader-ready record: serialized history plus current question, the top
/// min(k, available) passages as "title: ... context: ..." blocks, and the
/// gold answers.
inline ReaderInputRecord assemble_reader_input(const ConversationExample& example,
                                               std::span<const PassageRecord* const> top_passages,
                                               std::size_t k) {
    if (k == 0) throw std::invalid_argument("assemble_reader_input: k must be >= 1");
    ReaderInputRecord rec;
    std::string q;
    for (const auto& turn : example.history) {
        if (!q.empty()) q.push_back(' ');
        q += "Q: " + turn.question + " A: " + turn.answer;
    }
    if (!q.empty()) q.push_back(' ');
    q += example.question;
    rec.question = std::move(q);
    const std::size_t take = std::min(k, top_passages.size());
    rec.ctx_texts.reserve(take);
    for (std::size_t i = 0; i < take; ++i)
        rec.ctx_texts.push_back("title: " + top_passages[i]->title +
                                " context: " + top_passages[i]->text);
    rec.answers = example.gold_answers;
    return rec;
}

inline void write_reader_inputs(const std::vector<ReaderInputRecord>& records,
                                const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& rec : records) {
        nlohmann::json ctxs = nlohmann::json::array();
        for (const auto& t : rec.ctx_texts) ctxs.push_back({{"text", t}});
        nlohmann::json obj{
            {"question", rec.question}, {"ctxs", ctxs}, {"answers", rec.answers}};
        out << obj.dump() << "\n";
    }
}

/// predictions.jsonl: {conv_id, turn, prediction} per line.
inline std::vector<std::pair<QueryKey, std::string>> load_predictions(
    const std::filesystem::path& path) {
    auto in = detail::open_text(path);
    std::vector<std::pair<QueryKey, std::string>> preds;
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
        QueryKey key{detail::require_string(obj, "conv_id", where),
                     obj.at("turn").get<std::uint32_t>()};
        preds.emplace_back(std::move(key), detail::require_string(obj, "prediction", where));
    }
    return preds;
}

}  // namespace rre
