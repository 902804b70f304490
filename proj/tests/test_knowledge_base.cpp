#include <doctest.h>

#include <fstream>
#include <random>

#include "avi/knowledge_base.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace avi;

TEST_CASE("plan_segments tiles with a remainder") {
    auto s = plan_segments(12.0, 5.0);
    REQUIRE(s.size() == 3);
    CHECK(s[0] == TimeRange{0, 5});
    CHECK(s[1] == TimeRange{5, 10});
    CHECK(s[2] == TimeRange{10, 12});
    CHECK(plan_segments(10.0, 5.0).size() == 2);
    CHECK_THROWS_AS(plan_segments(0.0, 5.0), InvalidArgument);
    CHECK_THROWS_AS(plan_segments(10.0, 0.0), InvalidArgument);
}

TEST_CASE("caption document parsing") {
    const TimeRange clip{0, 5};
    SUBCASE("well formed") {
        const auto d = parse_caption_document(
            R"({"clip_description": "a man enters", "subject_registry": {"m": {"name": "man", "first_seen": "00:09"}}})", clip);
        CHECK(d.caption == "a man enters");
        REQUIRE(d.registry.size() == 1);
        CHECK(d.registry[0].name == "man");
        CHECK(d.registry[0].first_seen == 5.0);
        CHECK(d.diagnostic.empty());
    }
    SUBCASE("prose around the object") {
        const auto d = parse_caption_document(
            "Here you go: {\"clip_description\": \"a man enters\", \"subject_registry\": {\"m\": {\"name\": \"man\"}}} thanks", clip);
        CHECK(d.caption == "a man enters");
        CHECK(d.registry.size() == 1);
    }
    SUBCASE("no braces") {
        const auto d = parse_caption_document("just words", clip);
        CHECK(d.caption == "just words");
        CHECK(d.registry.empty());
        CHECK_FALSE(d.diagnostic.empty());
    }
}

TEST_CASE("normalize_embedding maps zero to e1") {
    bool replaced = false;
    const auto e = normalize_embedding(Embedding::Zero(4), &replaced);
    CHECK(replaced);
    CHECK(e[0] == 1.0f);
    CHECK(e.tail(3).isZero());
    Embedding v(2);
    v << 3, 4;
    CHECK(normalize_embedding(v)[1] == doctest::Approx(0.8));
}

TEST_CASE("top_k_search agrees with brute force") {
    std::mt19937 rng(7);
    std::normal_distribution<float> g;
    const int n = 1000, dim = 32;
    EmbeddingMatrix rows(n, dim);
    std::vector<std::vector<float>> plain(n, std::vector<float>(dim));
    for (int i = 0; i < n; ++i) {
        Embedding v(dim);
        for (int d = 0; d < dim; ++d) v[d] = g(rng);
        v = normalize_embedding(v);
        rows.row(i) = v.transpose();
        for (int d = 0; d < dim; ++d) plain[i][d] = v[d];
    }
    for (int q = 0; q < 50; ++q) {
        Embedding query(dim);
        std::vector<float> qp(dim);
        for (int d = 0; d < dim; ++d) qp[d] = query[d] = g(rng);
        const auto hits = top_k_search(rows, query, 20);
        const auto want = oracle::cosine_ranking(plain, qp);
        REQUIRE(hits.size() == 20);
        for (int i = 0; i < 20; ++i) {
            CHECK(hits[i].clip_id == want[i].first);
            CHECK(hits[i].score == doctest::Approx(want[i].second).epsilon(1e-6));
        }
    }
    SUBCASE("self match") {
        const Embedding q = rows.row(123).transpose();
        const auto hits = top_k_search(rows, q, 3);
        CHECK(hits[0].clip_id == 123);
        CHECK(hits[0].score == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("k clamps to the corpus and dimension is checked") {
        CHECK(top_k_search(EmbeddingMatrix(rows.topRows(3)), Embedding(rows.row(0).transpose()), 16).size() == 3);
        CHECK_THROWS_AS(top_k_search(rows, Embedding::Ones(dim + 1), 3), InvalidArgument);
    }
}

TEST_CASE("ingest of the tiny fixture") {
    const auto kb = testing::ingest_fixture("tiny");
    CHECK(kb.manifest.clip_count == 3);
    CHECK(kb.embeddings.rows() == 3);
    CHECK(kb.embeddings.cols() == 256);
    CHECK(kb.graph.nodes.size() == 2);
    CHECK(kb.graph.edges.size() == 1);
    CHECK(kb.clips[1].caption == "the man gives a book to a girl");
    CHECK_FALSE(kb.manifest.db_cost.is_zero());
    for (int i = 0; i < 3; ++i) CHECK(kb.embeddings.row(i).norm() == doctest::Approx(1.0));
}

TEST_CASE("ingest retries a failing caption and keeps prose-wrapped documents") {
    const auto kb = testing::ingest_fixture("demo");
    CHECK(kb.clips[2].caption.find("SALE 50%") != std::string::npos);
    CHECK(kb.graph.nodes.count("woman_1"));
    // the null-id "Woman" subject merges into woman_1
    CHECK(kb.graph.nodes.size() == 3);
}

TEST_CASE("caption failure past the retry budget leaves an empty caption") {
    testing::TempDir dir("capfail");
    std::ofstream(dir.path / "video.json") << R"({"video_id": "v", "duration": 10})";
    std::ofstream(dir.path / "captions.jsonl") << R"({"t_start": 0, "raw": "fine"})" << "\n"
                                               << R"({"t_start": 5, "raw": "never", "fail": 9})" << "\n";
    const auto suite = make_mock_suite(dir.path, MockScript{}, 8);
    const auto kb = ingest_video({"v", "v", 10.0}, suite, EngineConfig{});
    REQUIRE(kb.clips.size() == 2);
    CHECK(kb.clips[1].caption.empty());
    CHECK(kb.embeddings.rows() == 2);
    CHECK(kb.embeddings(1, 0) == 1.0f);  // empty text embeds to e1
    CHECK_FALSE(kb.manifest.diagnostics.empty());
}

TEST_CASE("embedder dimension mismatch is fatal") {
    EngineConfig c;
    c.embed_dim = 64;
    const auto suite = make_mock_suite(testing::fixture("tiny"), MockScript{}, 256);
    CHECK_THROWS_AS(ingest_video({"tiny", "tiny", 15.0}, suite, c), IngestError);
}

TEST_CASE("save and load round trip") {
    std::mt19937 rng(11);
    for (int i = 0; i < 20; ++i) {
        const auto kb = testing::random_kb(rng);
        testing::TempDir dir("rt");
        save_kb(kb, dir.path / "kb");
        CHECK(same_kb(kb, load_kb(dir.path / "kb")));
    }
}

TEST_CASE("empty KB loads and searches to nothing") {
    KnowledgeBase kb;
    kb.manifest.video_id = kb.manifest.video_ref = "empty";
    kb.manifest.embed_dim = 8;
    kb.embeddings.resize(0, 8);
    testing::TempDir dir("empty");
    save_kb(kb, dir.path);
    const auto back = load_kb(dir.path);
    CHECK(back.manifest.clip_count == 0);
    CHECK(top_k_search(back, Embedding::Ones(8), 5).empty());
}

TEST_CASE("corruption and version errors") {
    std::mt19937 rng(3);
    auto kb = testing::random_kb(rng, 6);
    while (kb.clips.empty()) kb = testing::random_kb(rng, 6);
    testing::TempDir dir("corrupt");
    save_kb(kb, dir.path);

    SUBCASE("truncated embeddings") {
        const auto p = dir.path / "embeddings.bin";
        std::filesystem::resize_file(p, std::filesystem::file_size(p) - 4);
        CHECK_THROWS_AS(load_kb(dir.path), CorruptionError);
    }
    SUBCASE("schema version") {
        auto j = nlohmann::json::parse(std::ifstream(dir.path / "manifest.json"));
        j["schema_version"] = 99;
        std::ofstream(dir.path / "manifest.json") << j.dump();
        CHECK_THROWS_AS(load_kb(dir.path), VersionError);
    }
    SUBCASE("clip count disagrees with the manifest") {
        std::ofstream(dir.path / "clips.jsonl", std::ios::trunc) << "";
        CHECK_THROWS_AS(load_kb(dir.path), CorruptionError);
    }
    SUBCASE("missing directory") { CHECK_THROWS_AS(load_kb(dir.path / "nope"), CorruptionError); }
}

TEST_CASE("golden KB loads to its known manifest") {
    const auto kb = load_kb(testing::fixture("golden_kb"));
    CHECK(kb.manifest.video_id == "tiny");
    CHECK(kb.manifest.clip_count == 3);
    CHECK(kb.manifest.node_count == 2);
    CHECK(kb.manifest.embed_dim == 256);
    CHECK(kb.manifest.db_cost == Cost{9042, 210, 21060});
    CHECK(kb.graph.edges.at(0).description == "Subject_100 gives book to Subject_101");
    // a fresh mock ingest reproduces the frozen files exactly
    CHECK(same_kb(kb, testing::ingest_fixture("tiny")));
}
