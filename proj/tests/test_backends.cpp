#include <doctest.h>

#include <set>

#include "avi/http_backends.hpp"
#include "avi/mock_backends.hpp"
#include "avi/wire.hpp"
#include "support.hpp"

using namespace avi;
using nlohmann::json;

namespace {

ChatRequest request(const std::string& purpose, const std::string& tool_text = "") {
    ChatRequest r;
    r.purpose = purpose;
    r.messages.push_back({"user", "question", {}, ""});
    if (!tool_text.empty()) r.messages.push_back({"tool", tool_text, {}, "c0"});
    return r;
}

}  // namespace

TEST_CASE("scripted chat consumes replies per purpose") {
    ScriptedChat chat(MockScript::from_json({{"agent", {"one", "two"}}, {"summarize", {"s"}}}));
    CHECK(chat.chat(request("agent")).value.content == "one");
    CHECK(chat.chat(request("summarize")).value.content == "s");
    CHECK(chat.chat(request("agent")).value.content == "two");
    CHECK_THROWS_AS(chat.chat(request("agent")), BackendError);
    CHECK_THROWS_AS(chat.chat(request("extract")), BackendError);
    CHECK(chat.calls("agent") == 3);
    CHECK(chat.total_calls() == 5);
}

TEST_CASE("scripted chat repeat_last and usage") {
    auto s = MockScript::from_json({{"agent", {"only"}}});
    s.exhaustion = Exhaustion::repeat_last;
    ScriptedChat chat(s);
    chat.chat(request("agent"));
    const auto r = chat.chat(request("agent"));
    CHECK(r.value.content == "only");
    CHECK(r.usage.backend == "chat");
    CHECK(r.usage.cost.tokens_in == r.value.prompt_tokens);
    CHECK(r.usage.cost.tokens_out == r.value.completion_tokens);
    CHECK(r.usage.cost.micros > 0);
}

TEST_CASE("tool calls pass through with placeholders") {
    ScriptedChat chat(MockScript::from_json(
        {{"agent",
          {{{"content", "at {{match:located at \\[([0-9.]+)s}}"},
            {"tool_calls", {{{"name", "object_detect"}, {"arguments", {{"t_range", "{{match:\\[([0-9.]+)s}}"}}}}}}}}}}));
    const auto r = chat.chat(request("agent", "Event located at [11s-12.5s]")).value;
    CHECK(r.content == "at 11");
    REQUIRE(r.tool_calls.size() == 1);
    CHECK(r.tool_calls[0].name == "object_detect");
    CHECK(r.tool_calls[0].id == "call_agent_0_0");
    CHECK(r.tool_calls[0].arguments["t_range"] == "11");
    CHECK(r.tool_calls[0].arguments_ok());
}

TEST_CASE("hash embedder") {
    HashEmbedder e(64);
    CHECK(e.dimension() == 64);
    const auto a = e.embed_one("Red apple on the table");
    CHECK(a.norm() == doctest::Approx(1.0));
    CHECK(a == e.embed_one("red APPLE on the table"));
    CHECK(tokenize("Hi, there! x2") == std::vector<std::string>{"hi", "there", "x2"});

    const auto empty = e.embed_one("  ,, ");
    CHECK(empty[0] == 1.0f);
    CHECK(empty.tail(63).isZero());

    // token-disjoint texts are orthogonal unless their buckets collide
    const std::vector<std::string> left{"alpha", "bravo"}, right{"charlie", "delta"};
    std::set<std::uint64_t> lb, rb;
    for (const auto& t : left) lb.insert(fnv1a64(t) % 64);
    for (const auto& t : right) rb.insert(fnv1a64(t) % 64);
    bool collide = false;
    for (auto b : lb) collide = collide || rb.count(b);
    const double cos = e.embed_one("alpha bravo").dot(e.embed_one("charlie delta"));
    if (!collide) CHECK(cos == doctest::Approx(0.0));
    else CHECK(cos > 0.0);

    const auto batch = e.embed({"a", "b c"});
    CHECK(batch.value.size() == 2);
    CHECK(batch.usage.backend == "embed");
}

TEST_CASE("embed_checked rejects dimension drift") {
    HashEmbedder e(32);
    CHECK(embed_checked(e, {"x"}, 32).value.size() == 1);
    CHECK(embed_checked(e, {"x"}, 0).value.size() == 1);
    CHECK_THROWS_AS(embed_checked(e, {"x"}, 16), IngestError);
}

TEST_CASE("mock perception over the demo fixture") {
    MockPerception p(FixtureStore::load(testing::fixture("demo")));
    CHECK(p.store().duration == 30.0);
    CHECK_THROWS_AS(p.ocr("other", {10.0}), InvalidArgument);
    const auto ocr = p.ocr("demo", {10.0, 10.25, 27.0}).value;
    REQUIRE(ocr.size() == 2);
    CHECK(ocr[0].text == "SALE 50%");
    CHECK(ocr[1].text == "175C");
    CHECK(p.detect("demo", {5.0}, "apple").value.size() == 4);
    CHECK(p.detect("demo", {1.0}, "apple").value.empty());
    const auto sim = p.frame_sim("demo", {20.5}, "paper bag handed over").value;
    REQUIRE(sim.size() == 1);
    CHECK(sim[0].score == doctest::Approx(0.8));
    CHECK(p.analyze("demo", {3.0}, "anything").value == "A bakery kitchen with a wooden counter.");
    // the 10 s clip fails once before succeeding
    CHECK_THROWS_AS(p.caption("demo", {10, 15}, 2.0, 720), BackendError);
    CHECK(p.caption("demo", {10, 15}, 2.0, 360).value.find("SALE 50%") != std::string::npos);
    CHECK(p.last_caption_max_edge() == 360);
    CHECK(p.caption_log().size() == 2);
}

TEST_CASE("wire round trips") {
    ChatRequest r = request("extract", "obs");
    r.messages.push_back({"assistant", "", {{"c1", "clip_retrieve", {{"q_text", "x"}}, ""}}, ""});
    r.tools = json::array({{{"type", "function"}, {"function", {{"name", "clip_retrieve"}}}}});
    r.max_tokens = 64;
    const auto body = wire::chat_request(r, "m");
    CHECK(body["model"] == "m");
    CHECK(body["user"] == "avi:extract");
    const auto back = wire::parse_chat_request(body);
    CHECK(back.purpose == "extract");
    CHECK(back.messages == r.messages);
    CHECK(back.max_tokens == 64);

    ChatReply reply{"hi", {{"c9", "text_extract", {{"t_range", {1, 2}}}, ""}}, 12, 3};
    CHECK(wire::parse_chat_reply(wire::chat_reply(reply).dump()) == reply);

    const std::vector<Detection> dets{{{1, 2, 3, 4}, "apple", 0.9, 5.5}};
    CHECK(wire::parse_detect_response(wire::detect_response(dets).dump()) == dets);
    const std::vector<OcrItem> ocr{{10.0, "SALE"}};
    CHECK(wire::parse_ocr_response(wire::ocr_response(ocr).dump()) == ocr);
    const std::vector<FrameScore> fs{{1.5, 0.25}};
    CHECK(wire::parse_frame_sim_response(wire::frame_sim_response(fs).dump()) == fs);
    CHECK(wire::parse_caption_response(wire::caption_response("raw").dump()) == "raw");
    CHECK(wire::parse_analyze_response(wire::analyze_response("txt").dump()) == "txt");
    Embedding v(3);
    v << 0.5f, -0.25f, 1.0f;
    CHECK(wire::parse_embed_response(wire::embed_response({v}).dump()).at(0) == v);

    const auto cr = wire::parse_caption_request(wire::caption_request({"vid", {5, 10}, 1.0, 360}));
    CHECK(cr.video_ref == "vid");
    CHECK(cr.range == TimeRange{5, 10});
    CHECK(cr.max_edge == 360);
    const auto fr = wire::parse_frames_request(wire::frames_request({"vid", {1.0, 1.5}, "q"}, true), true);
    CHECK(fr.frame_times == std::vector<double>{1.0, 1.5});
    CHECK(fr.query == "q");
    CHECK(wire::parse_embed_request(wire::embed_request({"a", "b"})) == std::vector<std::string>{"a", "b"});
}

TEST_CASE("string tool arguments are decoded or flagged") {
    const auto ok = wire::parse_tool_call(
        {{"id", "c"}, {"type", "function"}, {"function", {{"name", "n"}, {"arguments", "{\"k\": 2}"}}}});
    CHECK(ok.arguments_ok());
    CHECK(ok.arguments["k"] == 2);
    const auto bad = wire::parse_tool_call(
        {{"id", "c"}, {"type", "function"}, {"function", {{"name", "n"}, {"arguments", "[1,"}}}});
    CHECK_FALSE(bad.arguments_ok());
    CHECK(bad.malformed_arguments == "[1,");
}

TEST_CASE("protocol errors keep the raw body") {
    for (const std::string body : {"not json", "{\"choices\": []}", "{\"choices\": [{}]}",
                                   "{\"choices\":[{\"message\":{\"content\":\"x\"}}],\"usage\":{\"prompt_tokens\":-1}}"}) {
        try {
            wire::parse_chat_reply(body);
            FAIL("accepted " << body);
        } catch (const ProtocolError& e) {
            CHECK(e.raw_body == body);
        }
    }
    CHECK_THROWS_AS(wire::parse_detect_response("{\"detections\": 3}"), ProtocolError);
}

TEST_CASE("http clients against the echo server") {
    testing::EchoServer server(testing::fixture("demo"), MockScript::from_json({{"agent", {"first", "second"}}}));
    auto endpoint = server.endpoint();

    SUBCASE("chat retries 5xx and records attempts") {
        server.fail_next_chat(2);
        HttpChat chat(endpoint, RetryPolicy{2, 0.0, [](double) {}});
        const auto r = chat.chat(request("agent"));
        CHECK(r.value.content == "first");
        CHECK(r.usage.attempts == 3);
        CHECK(server.requests() == 3);
    }
    SUBCASE("retry budget exhausted") {
        server.fail_next_chat(3);
        HttpChat chat(endpoint, RetryPolicy{2, 0.0, [](double) {}});
        CHECK_THROWS_AS(chat.chat(request("agent")), BackendError);
        CHECK(server.requests() == 3);
    }
    SUBCASE("backoff doubles") {
        server.fail_next_chat(2);
        std::vector<double> waits;
        HttpChat chat(endpoint, RetryPolicy{2, 0.5, [&](double s) { waits.push_back(s); }});
        chat.chat(request("agent"));
        CHECK(waits == std::vector<double>{0.5, 1.0});
    }
    SUBCASE("perception endpoints") {
        HttpPerception p(endpoint, RetryPolicy{2, 0.0, [](double) {}});
        CHECK(p.dimension() == 0);
        const auto emb = p.embed({"a b"});
        CHECK(p.dimension() == 256);
        CHECK(emb.value.at(0) == HashEmbedder(256).embed_one("a b"));
        CHECK(p.ocr("demo", {10.0}).value.at(0).text == "SALE 50%");
        CHECK(p.detect("demo", {5.0}, "apple").value.size() == 4);
        CHECK(p.analyze("demo", {1.0}, "q").value == "A bakery kitchen with a wooden counter.");
        const int before = server.requests();
        // unknown video: a client error, not retried
        CHECK_THROWS_AS(p.ocr("nope", {1.0}), BackendError);
        CHECK(server.requests() == before + 1);
    }
    SUBCASE("unreachable server") {
        endpoint.chat_url = "http://127.0.0.1:1";
        HttpChat chat(endpoint, RetryPolicy{1, 0.0, [](double) {}});
        CHECK_THROWS_AS(chat.chat(request("agent")), BackendError);
    }
}

TEST_CASE("ingest and ask over http match the mock run") {
    const auto dir = testing::fixture("tiny");
    testing::EchoServer server(dir, MockScript::load(dir / "ingest_script.json"));
    EngineConfig config;
    config.endpoints = server.endpoint();
    const auto suite = make_http_suite(config);
    const auto kb = ingest_video({"tiny", "tiny", 15.0}, suite, config);
    const auto local = testing::ingest_fixture("tiny");
    CHECK(kb.clips.size() == local.clips.size());
    for (std::size_t i = 0; i < kb.clips.size(); ++i) CHECK(kb.clips[i].caption == local.clips[i].caption);
    CHECK(kb.embeddings.isApprox(local.embeddings));
    CHECK(kb.graph.nodes.size() == local.graph.nodes.size());
    CHECK(kb.graph.edges.size() == local.graph.edges.size());

    testing::EchoServer ask_server(dir, MockScript::load(dir / "ask_script.json"));
    config.endpoints = ask_server.endpoint();
    const auto ask_suite = make_http_suite(config);
    const auto registry = default_registry();
    ManualClock clock;
    const auto remote = run_episode({kb, ask_suite, config, registry, clock}, "Who receives the book?", {});
    testing::EpisodeRig rig(local, "tiny", MockScript::load(dir / "ask_script.json"));
    const auto mock = rig.run("Who receives the book?");
    CHECK(remote.status == EpisodeStatus::answered);
    CHECK(remote.answer == mock.answer);
    CHECK(remote.iterations_used == mock.iterations_used);
}
