#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <random>
#include <thread>

#include "rre/evaluation.hpp"
#include "rre/latency.hpp"
#include "rre/rng.hpp"

namespace {

rre::ConversationExample example_with_gold(const std::string& conv_id,
                                           std::vector<std::string> gold_ids,
                                           std::vector<std::string> answers = {"x"}) {
    rre::ConversationExample ex;
    ex.conv_id = conv_id;
    ex.turn = 0;
    ex.question = "q";
    ex.gold_passage_ids = std::move(gold_ids);
    ex.gold_answers = std::move(answers);
    return ex;
}

rre::RankedList list_of(const std::string& conv_id, const std::vector<std::string>& ids) {
    rre::RankedList list;
    list.query_key = {conv_id, 0};
    float score = static_cast<float>(ids.size());
    std::size_t idx = 0;
    for (const auto& id : ids) list.candidates.push_back({idx++, id, score--});
    return list;
}

}  // namespace

TEST_CASE("coverage matches a hand count") {
    std::vector<rre::ConversationExample> examples{example_with_gold("a", {"g1"}),
                                                   example_with_gold("b", {"g2"})};
    std::vector<rre::RankedList> rankings{list_of("a", {"g1", "x1", "x2"}),
                                          list_of("b", {"x3", "x4", "g2"})};
    auto table = rre::coverage_at_k(rankings, examples, {1, 3},
                                    rre::CoverageMode::kGoldPassageId);
    REQUIRE(table.entries.size() == 2);
    REQUIRE(table.entries[0] == std::pair<std::size_t, double>{1, 0.5});
    REQUIRE(table.entries[1] == std::pair<std::size_t, double>{3, 1.0});
    REQUIRE(table.query_count == 2);
}

TEST_CASE("coverage at full pool size is permutation invariant") {
    std::vector<rre::ConversationExample> examples{example_with_gold("a", {"g"})};
    std::vector<rre::RankedList> original{list_of("a", {"x1", "x2", "g", "x3"})};
    std::vector<rre::RankedList> permuted{list_of("a", {"x3", "g", "x1", "x2"})};
    auto t1 = rre::coverage_at_k(original, examples, {4}, rre::CoverageMode::kGoldPassageId);
    auto t2 = rre::coverage_at_k(permuted, examples, {4}, rre::CoverageMode::kGoldPassageId);
    REQUIRE(t1.entries[0].second == t2.entries[0].second);
}

TEST_CASE("coverage agrees with an independently scripted counter") {
    // 100 queries with known planted gold ranks.
    std::mt19937_64 rng(123);
    const std::vector<std::size_t> grid{1, 3, 5, 10, 20, 50};
    std::vector<rre::ConversationExample> examples;
    std::vector<rre::RankedList> rankings;
    std::vector<std::size_t> planted_rank(100);
    for (std::size_t q = 0; q < 100; ++q) {
        const std::string conv = "q" + std::to_string(q);
        const std::size_t rank = 1 + rre::uniform_index(rng, 60);  // 1-based
        planted_rank[q] = rank;
        std::vector<std::string> ids;
        for (std::size_t r = 1; r <= 60; ++r)
            ids.push_back(r == rank ? "gold" + conv : "f" + conv + "_" + std::to_string(r));
        examples.push_back(example_with_gold(conv, {"gold" + conv}));
        rankings.push_back(list_of(conv, ids));
    }
    auto table =
        rre::coverage_at_k(rankings, examples, grid, rre::CoverageMode::kGoldPassageId);
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        std::size_t counted = 0;
        for (std::size_t q = 0; q < 100; ++q)
            if (planted_rank[q] <= grid[gi]) ++counted;
        REQUIRE(table.entries[gi].second == static_cast<double>(counted) / 100.0);
    }
    // Monotone in k.
    for (std::size_t gi = 1; gi < table.entries.size(); ++gi)
        REQUIRE(table.entries[gi].second >= table.entries[gi - 1].second);
}

TEST_CASE("gold-answer-string coverage uses normalized substring containment") {
    rre::PassageCorpus corpus;
    corpus.add({"p1", "T", "The Eiffel Tower is in Paris."});
    corpus.add({"p2", "T", "Nothing relevant here."});
    std::vector<rre::ConversationExample> examples{
        example_with_gold("a", {}, {"eiffel tower"}),
        example_with_gold("b", {}, {"colosseum"})};
    std::vector<rre::RankedList> rankings{list_of("a", {"p2", "p1"}), list_of("b", {"p1", "p2"})};
    for (auto& list : rankings)
        for (auto& c : list.candidates) c.passage_index = *corpus.index_of(c.passage_id);
    auto table = rre::coverage_at_k(rankings, examples, {1, 2},
                                    rre::CoverageMode::kGoldAnswerString, &corpus);
    REQUIRE(table.entries[0].second == 0.0);  // top-1 of "a" is p2
    REQUIRE(table.entries[1].second == 0.5);  // "a" hits at rank 2, "b" never
}

TEST_CASE("coverage argument validation") {
    std::vector<rre::ConversationExample> examples{example_with_gold("a", {"g"})};
    std::vector<rre::RankedList> rankings{list_of("mystery", {"g"})};
    REQUIRE_THROWS_WITH(rre::coverage_at_k(rankings, examples, {1},
                                           rre::CoverageMode::kGoldPassageId),
                        Catch::Matchers::ContainsSubstring("mystery"));
    std::vector<rre::RankedList> ok{list_of("a", {"g"})};
    REQUIRE_THROWS_AS(rre::coverage_at_k(ok, examples, {}, rre::CoverageMode::kGoldPassageId),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(rre::coverage_at_k(ok, examples, {1},
                                         rre::CoverageMode::kGoldAnswerString),
                      std::invalid_argument);
}

TEST_CASE("normalize_answer applies the four rules in order") {
    REQUIRE(rre::normalize_answer("The Eiffel Tower.") == "eiffel tower");
    REQUIRE(rre::normalize_answer("") == "");
    REQUIRE(rre::normalize_answer("an   Apple") == "apple");
    REQUIRE(rre::normalize_answer("A, B, and C!") == "b and c");
    REQUIRE(rre::normalize_answer("THE THEATER") == "theater");
    // Idempotent.
    REQUIRE(rre::normalize_answer(rre::normalize_answer("The Eiffel Tower.")) ==
            "eiffel tower");
}

TEST_CASE("exact match and token F1 on the reference cases") {
    std::vector<std::string> golds{"barack obama"};
    REQUIRE(rre::exact_match("Barack Obama", golds) == 1);
    REQUIRE(rre::token_f1("Barack Obama", golds) == 1.0);

    REQUIRE(rre::exact_match("obama", golds) == 0);
    REQUIRE_THAT(rre::token_f1("obama", golds),
                 Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-4));

    std::vector<std::string> unanswerable{"UNANSWERABLE"};
    REQUIRE(rre::exact_match("UNANSWERABLE", unanswerable) == 1);
    REQUIRE(rre::token_f1("UNANSWERABLE", unanswerable) == 1.0);

    REQUIRE_THROWS_AS(rre::exact_match("x", {}), std::invalid_argument);
    REQUIRE_THROWS_AS(rre::token_f1("x", {}), std::invalid_argument);
}

TEST_CASE("degenerate token lists follow the empty-side rules") {
    std::vector<std::string> empty_gold{"the a an"};  // normalizes to nothing
    REQUIRE(rre::token_f1("a the", empty_gold) == 1.0);
    REQUIRE(rre::token_f1("something", empty_gold) == 0.0);
    std::vector<std::string> word_gold{"word"};
    REQUIRE(rre::token_f1("", word_gold) == 0.0);
}

TEST_CASE("EM=1 implies F1=1 over random-token fuzz") {
    std::mt19937_64 rng(7);
    auto random_token = [&] {
        std::string t;
        const std::size_t len = 1 + rre::uniform_index(rng, 6);
        for (std::size_t i = 0; i < len; ++i)
            t.push_back(static_cast<char>('a' + rre::uniform_index(rng, 26)));
        return t;
    };
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::string> golds;
        const std::size_t n_golds = 1 + rre::uniform_index(rng, 3);
        for (std::size_t g = 0; g < n_golds; ++g) {
            std::string gold;
            const std::size_t n_tokens = 1 + rre::uniform_index(rng, 5);
            for (std::size_t t = 0; t < n_tokens; ++t) {
                if (!gold.empty()) gold.push_back(' ');
                gold += random_token();
            }
            golds.push_back(gold);
        }
        // Half the trials use a prediction equal to some gold modulo case,
        // punctuation and articles, which forces EM=1.
        std::string pred;
        if (trial % 2 == 0) {
            pred = "The " + golds[rre::uniform_index(rng, golds.size())] + "!";
        } else {
            pred = random_token() + " " + random_token();
        }
        const int em = rre::exact_match(pred, golds);
        const double f1 = rre::token_f1(pred, golds);
        REQUIRE((0.0 <= f1 && f1 <= 1.0));
        if (em == 1) REQUIRE(f1 == 1.0);
    }
}

TEST_CASE("token F1 is symmetric for single-gold inputs") {
    std::mt19937_64 rng(9);
    auto random_phrase = [&] {
        std::string s;
        const std::size_t n = 1 + rre::uniform_index(rng, 6);
        for (std::size_t i = 0; i < n; ++i) {
            if (!s.empty()) s.push_back(' ');
            const std::size_t len = 1 + rre::uniform_index(rng, 4);
            for (std::size_t c = 0; c < len; ++c)
                s.push_back(static_cast<char>('a' + rre::uniform_index(rng, 26)));
        }
        return s;
    };
    for (int trial = 0; trial < 200; ++trial) {
        const std::string a = random_phrase();
        const std::string b = random_phrase();
        REQUIRE_THAT(rre::token_f1(a, std::vector<std::string>{b}),
                     Catch::Matchers::WithinAbs(
                         rre::token_f1(b, std::vector<std::string>{a}), 1e-12));
    }
}

TEST_CASE("evaluate_answers aggregates per-query details") {
    std::vector<rre::ConversationExample> examples{
        example_with_gold("a", {}, {"barack obama"}),
        example_with_gold("b", {}, {"paris"})};
    std::vector<std::pair<rre::QueryKey, std::string>> preds{
        {{"a", 0}, "Barack Obama"}, {{"b", 0}, "rome"}};
    auto metrics = rre::evaluate_answers(preds, examples);
    REQUIRE(metrics.em == 0.5);
    REQUIRE(metrics.f1 == 0.5);
    REQUIRE(metrics.details.size() == 2);
    for (const auto& d : metrics.details)
        if (d.em == 1) REQUIRE(d.f1 == 1.0);
}

TEST_CASE("assemble_reader_input formats title and context") {
    rre::ConversationExample ex;
    ex.conv_id = "c";
    ex.question = "where is it?";
    ex.gold_answers = {"Rome"};
    rre::PassageRecord roma{"p1", "Roma", "Capital of Italy"};
    rre::PassageRecord other{"p2", "B", "other text"};
    std::vector<const rre::PassageRecord*> tops{&roma, &other};

    auto rec = rre::assemble_reader_input(ex, tops, 1);
    REQUIRE(rec.ctx_texts.size() == 1);
    REQUIRE(rec.ctx_texts[0] == "title: Roma context: Capital of Italy");
    REQUIRE(rec.question == "where is it?");  // empty history
    REQUIRE(rec.answers == std::vector<std::string>{"Rome"});

    ex.history = {{"who built it?", "the Romans"}};
    auto rec2 = rre::assemble_reader_input(ex, tops, 2);
    REQUIRE(rec2.question == "Q: who built it? A: the Romans where is it?");
    REQUIRE(rec2.ctx_texts.size() == 2);

    auto rec3 = rre::assemble_reader_input(ex, tops, 50);
    REQUIRE(rec3.ctx_texts.size() == 2);  // min(k, available)

    REQUIRE_THROWS_AS(rre::assemble_reader_input(ex, tops, 0), std::invalid_argument);
}

TEST_CASE("latency harness: constant workload gives unit ratios") {
    auto workload = [](std::size_t) {
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    };
    auto report = rre::bench_latency(workload, {10, 50}, 4, 5, 50);
    REQUIRE(report.rows.size() == 2);
    for (const auto& row : report.rows)
        REQUIRE_THAT(row.ratio_vs_baseline, Catch::Matchers::WithinAbs(1.0, 0.1));
}

TEST_CASE("latency harness: linear workload scales ratios with k") {
    auto workload = [](std::size_t k) {
        std::this_thread::sleep_for(std::chrono::microseconds(200 * k));
    };
    auto report = rre::bench_latency(workload, {10, 50}, 4, 5, 50);
    double ratio10 = 0.0;
    for (const auto& row : report.rows)
        if (row.k == 10) ratio10 = row.ratio_vs_baseline;
    REQUIRE_THAT(ratio10, Catch::Matchers::WithinAbs(0.2, 0.04));  // +-20%
}

TEST_CASE("latency harness input validation") {
    auto noop = [](std::size_t) {};
    REQUIRE_THROWS_AS(rre::bench_latency(nullptr, {50}, 4, 1), std::invalid_argument);
    REQUIRE_THROWS_AS(rre::bench_latency(noop, {}, 4, 1), std::invalid_argument);
    REQUIRE_THROWS_AS(rre::bench_latency(noop, {10}, 4, 1, 50), std::invalid_argument);
    REQUIRE_NOTHROW(rre::bench_latency(noop, {10}, 4, 1, std::nullopt));
}
