#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rre/corpus_io.hpp"
#include "rre/types.hpp"

namespace rre {

struct RerankProvenance {
    std::string reranker_checkpoint;
    std::size_t k_in = 0;
    std::size_t k_out = 0;
};

/// rankings.jsonl: one line per query,
/// {conv_id, turn, candidates:[{passage_id, score}...]} in ranked order.
/// Reranked files carry an extra provenance object per line.
inline void write_rankings(const std::vector<RankedList>& rankings,
                           const std::filesystem::path& path,
                           const std::optional<RerankProvenance>& provenance = std::nullopt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& list : rankings) {
        nlohmann::json cands = nlohmann::json::array();
        for (const auto& c : list.candidates)
            cands.push_back({{"passage_id", c.passage_id}, {"score", c.score}});
        nlohmann::json obj{{"conv_id", list.query_key.conv_id},
                           {"turn", list.query_key.turn},
                           {"candidates", cands}};
        if (provenance)
            obj["provenance"] = {{"reranker_checkpoint", provenance->reranker_checkpoint},
                                 {"k_in", provenance->k_in},
                                 {"k_out", provenance->k_out}};
        out << obj.dump() << "\n";
    }
}

/// Loads a rankings file; when a corpus is supplied, passage ids resolve to
/// row indices (unknown ids are an error).
inline std::vector<RankedList> load_rankings(const std::filesystem::path& path,
                                             const PassageCorpus* corpus = nullptr) {
    auto in = detail::open_text(path);
    std::vector<RankedList> rankings;
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
        RankedList list;
        list.query_key.conv_id = detail::require_string(obj, "conv_id", where);
        list.query_key.turn = obj.at("turn").get<std::uint32_t>();
        for (const auto& c : obj.at("candidates")) {
            Candidate cand;
            cand.passage_id = c.at("passage_id").get<std::string>();
            cand.score = c.at("score").get<float>();
            if (corpus) {
                auto idx = corpus->index_of(cand.passage_id);
                if (!idx)
                    throw std::runtime_error(where + ": passage id \"" + cand.passage_id +
                                             "\" not in corpus");
                cand.passage_index = *idx;
            }
            list.candidates.push_back(std::move(cand));
        }
        rankings.push_back(std::move(list));
    }
    return rankings;
}

}  // namespace rre
