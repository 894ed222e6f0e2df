#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "rre/checkpoint.hpp"
#include "rre/corpus_io.hpp"
#include "rre/embedding_io.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto dir = fs::temp_directory_path() /
               ("rre_corpus_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("load_passages keeps line order") {
    auto dir = temp_dir();
    write_file(dir / "p.jsonl",
               R"({"id":"p1","title":"A","text":"ta"})"
               "\n"
               R"({"id":"p2","title":"B","text":"tb"})"
               "\n"
               R"({"id":"p3","title":"C","text":"tc"})"
               "\n");
    auto corpus = rre::load_passages(dir / "p.jsonl");
    REQUIRE(corpus.size() == 3);
    REQUIRE(corpus.at(0).id == "p1");
    REQUIRE(corpus.at(2).id == "p3");
    REQUIRE(corpus.index_of("p2") == 1);
    fs::remove_all(dir);
}

TEST_CASE("load_passages rejects duplicate ids naming the culprit") {
    auto dir = temp_dir();
    write_file(dir / "p.jsonl",
               R"({"id":"p1","title":"A","text":"t"})"
               "\n"
               R"({"id":"p1","title":"B","text":"t"})"
               "\n");
    REQUIRE_THROWS_WITH(rre::load_passages(dir / "p.jsonl"),
                        Catch::Matchers::ContainsSubstring("p1") &&
                            Catch::Matchers::ContainsSubstring("duplicate"));
    fs::remove_all(dir);
}

TEST_CASE("load_passages reports the malformed line number") {
    auto dir = temp_dir();
    write_file(dir / "p.jsonl",
               R"({"id":"p1","title":"A","text":"t"})"
               "\nnot json\n");
    REQUIRE_THROWS_WITH(rre::load_passages(dir / "p.jsonl"),
                        Catch::Matchers::ContainsSubstring(":2"));
    fs::remove_all(dir);
}

TEST_CASE("empty passage file loads as an empty corpus") {
    auto dir = temp_dir();
    write_file(dir / "p.jsonl", "");
    REQUIRE(rre::load_passages(dir / "p.jsonl").size() == 0);
    fs::remove_all(dir);
}

TEST_CASE("dense embedding file round-trips bit-exactly") {
    auto dir = temp_dir();
    rre::EmbeddingMatrix m;
    m.values = rre::Matrix<float>(2, 3);
    float vals[] = {0.5f, -1.25f, 3e-7f, -0.0f, 123456.75f, 1.0f};
    std::copy(std::begin(vals), std::end(vals), m.values.data());
    rre::save_embeddings(m, dir / "e.rre");
    auto loaded = rre::load_embeddings(dir / "e.rre");
    REQUIRE(loaded.count() == 2);
    REQUIRE(loaded.dim() == 3);
    REQUIRE(std::memcmp(loaded.values.data(), m.values.data(), sizeof(vals)) == 0);
    fs::remove_all(dir);
}

TEST_CASE("dense embedding header is exactly the documented layout") {
    auto dir = temp_dir();
    rre::EmbeddingMatrix m;
    m.values = rre::Matrix<float>(1, 2);
    m.values(0, 0) = 1.0f;
    m.values(0, 1) = 2.0f;
    rre::save_embeddings(m, dir / "e.rre");
    const std::string bytes = read_file(dir / "e.rre");
    REQUIRE(bytes.size() == 4 + 4 + 8 + 4 + 2 * 4);
    REQUIRE(bytes.substr(0, 4) == "RRE1");
    REQUIRE(static_cast<unsigned char>(bytes[4]) == 1);   // version LE
    REQUIRE(static_cast<unsigned char>(bytes[8]) == 1);   // count LE
    REQUIRE(static_cast<unsigned char>(bytes[16]) == 2);  // dim LE
    fs::remove_all(dir);
}

TEST_CASE("load_embeddings error paths") {
    auto dir = temp_dir();
    SECTION("bad magic") {
        write_file(dir / "bad.rre", "NOPE00000000");
        REQUIRE_THROWS_WITH(rre::load_embeddings(dir / "bad.rre"),
                            Catch::Matchers::ContainsSubstring("magic"));
    }
    SECTION("dim mismatch against expectation") {
        rre::EmbeddingMatrix m;
        m.values = rre::Matrix<float>(1, 64);
        rre::save_embeddings(m, dir / "e.rre");
        REQUIRE_THROWS_WITH(rre::load_embeddings(dir / "e.rre", 768),
                            Catch::Matchers::ContainsSubstring("768"));
    }
    SECTION("truncated payload") {
        rre::EmbeddingMatrix m;
        m.values = rre::Matrix<float>(4, 4);
        rre::save_embeddings(m, dir / "e.rre");
        auto bytes = read_file(dir / "e.rre");
        write_file(dir / "cut.rre", bytes.substr(0, bytes.size() - 5));
        REQUIRE_THROWS_WITH(rre::load_embeddings(dir / "cut.rre"),
                            Catch::Matchers::ContainsSubstring("truncated"));
    }
    SECTION("non-finite value") {
        rre::EmbeddingMatrix m;
        m.values = rre::Matrix<float>(1, 2);
        m.values(0, 1) = std::numeric_limits<float>::quiet_NaN();
        rre::save_embeddings(m, dir / "e.rre");
        REQUIRE_THROWS_WITH(rre::load_embeddings(dir / "e.rre"),
                            Catch::Matchers::ContainsSubstring("non-finite"));
    }
    fs::remove_all(dir);
}

TEST_CASE("ragged embedding file round-trips with varying lengths") {
    auto dir = temp_dir();
    rre::RaggedEmbeddings r;
    r.dim = 3;
    std::mt19937_64 rng(5);
    for (std::size_t len : {1u, 4u, 2u}) {
        rre::Matrix<float> rec(len, 3);
        for (std::size_t i = 0; i < rec.size(); ++i)
            rec.data()[i] = static_cast<float>(rre::uniform01(rng));
        r.records.push_back(std::move(rec));
    }
    rre::save_ragged_embeddings(r, dir / "t.rrt");
    auto loaded = rre::load_ragged_embeddings(dir / "t.rrt");
    REQUIRE(loaded.count() == 3);
    REQUIRE(loaded.records[1].rows() == 4);
    REQUIRE(loaded.records[2] == r.records[2]);
    fs::remove_all(dir);
}

TEST_CASE("load_dataset maps unanswerable labels and is idempotent") {
    auto dir = temp_dir();
    write_file(dir / "q.jsonl",
               R"({"conv_id":"c1","turn":0,"history":[],"question":"q?","gold_passage_ids":["p1"],"gold_answers":["CANNOTANSWER"]})"
               "\n"
               R"({"conv_id":"c1","turn":1,"history":[{"question":"q?","answer":"a"}],"question":"q2?","gold_passage_ids":[],"gold_answers":["Paris"]})"
               "\n"
               R"({"conv_id":"c2","turn":0,"history":[],"question":"q3?","gold_passage_ids":[],"gold_answers":["NOTRECOVERED","CANNOTANSWER"]})"
               "\n");
    rre::EmbeddingMatrix emb;
    emb.values = rre::Matrix<float>(3, 4);
    auto examples = rre::load_dataset(dir / "q.jsonl", emb);
    REQUIRE(examples.size() == 3);
    REQUIRE(examples[0].gold_answers == std::vector<std::string>{"UNANSWERABLE"});
    REQUIRE(examples[1].gold_answers == std::vector<std::string>{"Paris"});
    // Both labels map to the same target -> deduplicated.
    REQUIRE(examples[2].gold_answers == std::vector<std::string>{"UNANSWERABLE"});
    REQUIRE(examples[1].history.size() == 1);
    REQUIRE(examples[1].conv_embedding_row == 1);

    REQUIRE(rre::normalize_answer_labels({"UNANSWERABLE"}) ==
            std::vector<std::string>{"UNANSWERABLE"});
    fs::remove_all(dir);
}

TEST_CASE("load_dataset rejects row misalignment") {
    auto dir = temp_dir();
    std::string line =
        R"({"conv_id":"c","turn":0,"history":[],"question":"q","gold_passage_ids":[],"gold_answers":["x"]})"
        "\n";
    std::string five;
    for (int i = 0; i < 5; ++i) five += line;
    write_file(dir / "q.jsonl", five);
    rre::EmbeddingMatrix emb;
    emb.values = rre::Matrix<float>(4, 2);
    REQUIRE_THROWS_WITH(rre::load_dataset(dir / "q.jsonl", emb),
                        Catch::Matchers::ContainsSubstring("4"));
    fs::remove_all(dir);
}

TEST_CASE("load_dataset names missing fields") {
    auto dir = temp_dir();
    write_file(dir / "q.jsonl", R"({"conv_id":"c","turn":0,"question":"q"})"
                                "\n");
    rre::EmbeddingMatrix emb;
    emb.values = rre::Matrix<float>(1, 2);
    REQUIRE_THROWS_WITH(rre::load_dataset(dir / "q.jsonl", emb),
                        Catch::Matchers::ContainsSubstring("gold_passage_ids"));
    fs::remove_all(dir);
}

TEST_CASE("checkpoint round-trip is bit-identical") {
    auto dir = temp_dir();
    rre::RerankerConfig cfg;
    cfg.model_dim = 16;
    cfg.num_heads = 2;
    cfg.ffn_dim = 32;
    cfg.num_layers = 2;
    cfg.scoring_mode = rre::ScoringMode::kLinearProjection;
    cfg.seed = 99;
    auto params = rre::init_params<float>(cfg);
    rre::save_checkpoint(params, cfg, dir / "ckpt");
    auto [loaded, loaded_cfg] = rre::load_checkpoint(dir / "ckpt");

    auto a = rre::tensor_views(std::as_const(params));
    auto b = rre::tensor_views(std::as_const(loaded));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].name == b[i].name);
        REQUIRE(std::memcmp(a[i].data, b[i].data, a[i].size * sizeof(float)) == 0);
    }
    REQUIRE(loaded_cfg.model_dim == 16);
    REQUIRE(loaded_cfg.scoring_mode == rre::ScoringMode::kLinearProjection);
    REQUIRE(loaded_cfg.seed == 99);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint version and size mismatches are load errors") {
    auto dir = temp_dir();
    rre::RerankerConfig cfg;
    cfg.model_dim = 8;
    cfg.num_heads = 2;
    auto params = rre::init_params<float>(cfg);
    rre::save_checkpoint(params, cfg, dir / "ckpt");

    SECTION("format_version 99") {
        auto manifest = nlohmann::json::parse(read_file(dir / "ckpt" / "manifest.json"));
        manifest["format_version"] = 99;
        write_file(dir / "ckpt" / "manifest.json", manifest.dump());
        REQUIRE_THROWS_WITH(rre::load_checkpoint(dir / "ckpt"),
                            Catch::Matchers::ContainsSubstring("version"));
    }
    SECTION("tensor table smaller than payload") {
        auto manifest = nlohmann::json::parse(read_file(dir / "ckpt" / "manifest.json"));
        manifest["tensors"].back()["bytes"] = 4;
        write_file(dir / "ckpt" / "manifest.json", manifest.dump());
        REQUIRE_THROWS_WITH(rre::load_checkpoint(dir / "ckpt"),
                            Catch::Matchers::ContainsSubstring("size mismatch"));
    }
    SECTION("corrupted payload fails the checksum") {
        auto payload = read_file(dir / "ckpt" / "params.bin");
        payload[17] = static_cast<char>(payload[17] ^ 0x40);
        write_file(dir / "ckpt" / "params.bin", payload);
        REQUIRE_THROWS_WITH(rre::load_checkpoint(dir / "ckpt"),
                            Catch::Matchers::ContainsSubstring("checksum"));
    }
    fs::remove_all(dir);
}

TEST_CASE("save_checkpoint refuses non-finite tensors") {
    auto dir = temp_dir();
    rre::RerankerConfig cfg;
    cfg.model_dim = 8;
    cfg.num_heads = 2;
    auto params = rre::init_params<float>(cfg);
    params.layers[0].w_q(0, 0) = std::numeric_limits<float>::infinity();
    REQUIRE_THROWS_AS(rre::save_checkpoint(params, cfg, dir / "ckpt"),
                      std::invalid_argument);
    fs::remove_all(dir);
}
