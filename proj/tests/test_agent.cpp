#include <doctest.h>

#include "avi/agent.hpp"
#include "avi/prompts.hpp"
#include "support.hpp"

using namespace avi;
using nlohmann::json;

namespace {

const KnowledgeBase& tiny_kb() {
    static const KnowledgeBase kb = testing::ingest_fixture("tiny");
    return kb;
}

json tool(const std::string& name, json args) {
    return {{"content", ""}, {"tool_calls", {{{"name", name}, {"arguments", std::move(args)}}}}};
}

MockScript agent_script(std::vector<json> replies, json forced = nullptr) {
    json j = {{"agent", replies}};
    if (!forced.is_null()) j["forced"] = forced;
    return MockScript::from_json(j);
}

}  // namespace

TEST_CASE("extract_answer") {
    CHECK(extract_answer("**Answer:**A") == ParsedAnswer{MultipleChoice{'A'}});
    CHECK(extract_answer("blah\n**Answer:** (C) because") == ParsedAnswer{MultipleChoice{'C'}});
    CHECK(extract_answer("**Answer:**[1.5s,12.5s]") == ParsedAnswer{TimeSpan{{1.5, 12.5}}});
    CHECK(extract_answer("**Answer:** [3, 4.25]") == ParsedAnswer{TimeSpan{{3, 4.25}}});
    CHECK_FALSE(extract_answer("**Answer:**[9s,3s]").has_value());
    CHECK(extract_answer("**Answer:** Apples are red") == ParsedAnswer{FreeText{"Apples are red"}});
    CHECK_FALSE(extract_answer("**Answer:**   ").has_value());
    CHECK_FALSE(extract_answer("no marker").has_value());
    CHECK(extract_answer("**Answer:**B\n**Answer:**C") == ParsedAnswer{MultipleChoice{'B'}});
}

TEST_CASE("render_answer") {
    CHECK(render_answer(MultipleChoice{'A'}) == "**Answer:**A");
    CHECK(render_answer(TimeSpan{{1.5, 12.5}}) == "**Answer:**[1.5s,12.5s]");
    CHECK(render_answer(FreeText{"red"}) == "**Answer:**red");
    CHECK(render_answer(Forced{"raw words"}) == "raw words");
}

TEST_CASE("parse_agent_reply") {
    const ToolCall call{"c1", "clip_retrieve", {{"q_text", "x"}}, ""};
    CHECK(parse_agent_reply("text [STAGE_SWITCH: review]", {call}, Phase::retrieve, false) == Action{call});
    CHECK(parse_agent_reply("I will look. [STAGE_SWITCH: perceive]", {}, Phase::retrieve, false) ==
          Action{PhaseSwitch{Phase::perceive}});
    CHECK(parse_agent_reply("**Answer:**C since", {}, Phase::review, false) ==
          Action{Output{MultipleChoice{'C'}}});
    CHECK(parse_agent_reply("plain prose", {}, Phase::retrieve, false) == Action{PhaseSwitch{Phase::perceive}});
    CHECK(parse_agent_reply("plain prose", {}, Phase::perceive, false) == Action{PhaseSwitch{Phase::review}});
    CHECK(parse_agent_reply("plain prose", {}, Phase::review, false) == Action{PhaseSwitch{Phase::perceive}});
    CHECK(std::holds_alternative<Violation>(parse_agent_reply("plain prose", {}, Phase::retrieve, true)));
    CHECK(std::holds_alternative<Violation>(parse_agent_reply("[STAGE_SWITCH: retrieve]", {}, Phase::review, false)));
    CHECK(std::holds_alternative<Violation>(parse_agent_reply("[STAGE_SWITCH: review]", {}, Phase::retrieve, false)));
    // an answer outside review is not an output
    CHECK(parse_agent_reply("**Answer:**A", {}, Phase::perceive, false) == Action{PhaseSwitch{Phase::review}});
}

TEST_CASE("legal transitions") {
    CHECK(legal_transition(Phase::retrieve, Phase::perceive));
    CHECK(legal_transition(Phase::perceive, Phase::review));
    CHECK(legal_transition(Phase::review, Phase::perceive));
    CHECK_FALSE(legal_transition(Phase::review, Phase::retrieve));
    CHECK_FALSE(legal_transition(Phase::perceive, Phase::retrieve));
    CHECK_FALSE(legal_transition(Phase::retrieve, Phase::review));
}

TEST_CASE("system prompt slots") {
    const auto reg = default_registry();
    const auto& m = tiny_kb().manifest;
    const auto retrieve = compose_system_prompt(Phase::retrieve, m, reg);
    CHECK(retrieve.find(std::string(prompts::kCoreProtocol)) != std::string::npos);
    CHECK(retrieve.find(std::string(prompts::kRetrieveInstruction)) != std::string::npos);
    CHECK(retrieve.find("**Current Stage: retrieve**") != std::string::npos);
    CHECK(retrieve.find(std::string(prompts::kDescClipRetrieve)) != std::string::npos);
    CHECK(retrieve.find(std::string(prompts::kDescObjectDetect)) == std::string::npos);
    CHECK(retrieve.find("Total video length: 15 seconds.") != std::string::npos);
    const auto perceive = compose_system_prompt(Phase::perceive, m, reg);
    CHECK(perceive.find(std::string(prompts::kDescObjectDetect)) != std::string::npos);
    CHECK(perceive.find(std::string(prompts::kDescClipRetrieve)) == std::string::npos);
    const auto review = compose_system_prompt(Phase::review, m, reg);
    CHECK(review.find("**Answer:**") != std::string::npos);
    CHECK(review.find("(no tools are available in this stage)") != std::string::npos);
}

TEST_CASE("five step episode") {
    testing::EpisodeRig rig(tiny_kb(), "tiny", testing::script_file(testing::fixture("tiny") / "ask_script.json"));
    const auto r = rig.run("Who receives the book?");
    CHECK(r.status == EpisodeStatus::answered);
    CHECK(r.answer == Answer{MultipleChoice{'A'}});
    CHECK(r.iterations_used == 5);
    CHECK_FALSE(r.forced);
    CHECK(r.phases == std::vector<Phase>{Phase::retrieve, Phase::retrieve, Phase::perceive, Phase::perceive, Phase::review});
}

TEST_CASE("never switching ends in a forced answer") {
    MockScript s = agent_script({tool("clip_retrieve", {{"q_text", "book"}})}, json::array({"I cannot tell."}));
    s.exhaustion = Exhaustion::repeat_last;
    testing::EpisodeRig rig(tiny_kb(), "tiny", s);
    const auto r = rig.run("q");
    CHECK(r.status == EpisodeStatus::forced);
    CHECK(r.forced);
    CHECK(r.iterations_used == 10);
    CHECK(r.answer == Answer{Forced{"I cannot tell."}});
    CHECK(r.ledger.entries.back().name == "forced");
}

TEST_CASE("parseable forced reply keeps its variant") {
    MockScript s = agent_script({"[STAGE_SWITCH: perceive]", "[STAGE_SWITCH: review]", "[STAGE_SWITCH: perceive]"},
                                json::array({"**Answer:**B"}));
    s.exhaustion = Exhaustion::repeat_last;
    EngineConfig c;
    c.n_max = 3;
    testing::EpisodeRig rig(tiny_kb(), "tiny", s, c);
    const auto r = rig.run("q");
    CHECK(r.status == EpisodeStatus::forced);
    CHECK(r.answer == Answer{MultipleChoice{'B'}});
}

TEST_CASE("grounding answer in review") {
    testing::EpisodeRig rig(tiny_kb(), "tiny",
                            agent_script({"[STAGE_SWITCH: perceive]", "[STAGE_SWITCH: review]", "**Answer:**[1.5s,12.5s]"}));
    const auto r = rig.run("When?");
    CHECK(r.answer == Answer{TimeSpan{{1.5, 12.5}}});
    CHECK(r.iterations_used == 3);
}

TEST_CASE("re-perception cycles") {
    testing::EpisodeRig rig(tiny_kb(), "tiny",
                            agent_script({"[STAGE_SWITCH: perceive]", "[STAGE_SWITCH: review]", "not sure [STAGE_SWITCH: perceive]",
                                          tool("text_extract", {{"t_range", {0, 2}}}), "[STAGE_SWITCH: review]",
                                          "[STAGE_SWITCH: perceive]", "[STAGE_SWITCH: review]", "**Answer:**D"}));
    const auto r = rig.run("q");
    CHECK(r.iterations_used == 8);
    CHECK(r.answer == Answer{MultipleChoice{'D'}});
    CHECK(r.phases == std::vector<Phase>{Phase::retrieve, Phase::perceive, Phase::review, Phase::perceive, Phase::perceive,
                                         Phase::review, Phase::perceive, Phase::review});
}

TEST_CASE("phase constraint and extra calls are violations") {
    json two = {{"content", ""},
                {"tool_calls",
                 {{{"name", "clip_retrieve"}, {"arguments", {{"q_text", "book"}}}},
                  {{"name", "graph_retrieve"}, {"arguments", {{"entity_query", "girl"}}}}}}};
    json bad_args = {{"content", ""}, {"tool_calls", {{{"name", "clip_retrieve"}, {"arguments", "{not json"}}}}};
    testing::EpisodeRig rig(tiny_kb(), "tiny",
                            agent_script({tool("object_detect", {{"t_range", {0, 1}}, {"q_obj", "book"}}), two, bad_args,
                                          tool("clip_retrieve", {{"k", 2}}), "[STAGE_SWITCH: perceive]",
                                          "[STAGE_SWITCH: review]", "**Answer:**A"}));
    auto ctx = rig.ctx();
    auto s = initial_state(ctx, "q");
    step(s, ctx);
    REQUIRE(s.messages.back().role == "tool");
    CHECK(s.messages.back().content == "protocol violation: tool not available in retrieve phase");
    CHECK(s.observations.empty());
    step(s, ctx);
    CHECK(s.observations.size() == 1);
    CHECK(s.observations[0].tool == "clip_retrieve");
    CHECK(s.messages.back().content.find("graph_retrieve was not executed") != std::string::npos);
    CHECK(s.messages.back().tool_call_id == "call_agent_1_1");
    step(s, ctx);
    CHECK(s.messages.back().content.rfind("protocol violation: malformed arguments", 0) == 0);
    step(s, ctx);
    CHECK(s.messages.back().content.find("protocol violation") == 0);
    CHECK(s.observations.size() == 1);
    CHECK(s.iteration == 4);
    CHECK(s.phase == Phase::retrieve);
}

TEST_CASE("tool runtime errors are observations") {
    testing::EpisodeRig rig(tiny_kb(), "tiny",
                            agent_script({"[STAGE_SWITCH: perceive]", tool("text_extract", {{"t_range", {40, 50}}})}));
    auto ctx = rig.ctx();
    auto s = initial_state(ctx, "q");
    step(s, ctx);
    step(s, ctx);
    REQUIRE(s.observations.size() == 1);
    CHECK_FALSE(s.observations[0].ok);
    CHECK(s.messages.back().content.rfind("error:", 0) == 0);
}

TEST_CASE("chat failure aborts") {
    testing::EpisodeRig rig(tiny_kb(), "tiny", agent_script({"[STAGE_SWITCH: perceive]"}));
    const auto r = rig.run("q");
    CHECK(r.status == EpisodeStatus::aborted);
    CHECK_FALSE(r.answer.has_value());
    CHECK(r.iterations_used == 1);
    CHECK(r.diagnostic.find("exhausted") != std::string::npos);
}

TEST_CASE("strict mode turns prose into violations") {
    EngineConfig c;
    c.strict_switch = true;
    MockScript s = agent_script({"thinking"}, json::array({"**Answer:**E"}));
    s.exhaustion = Exhaustion::repeat_last;
    testing::EpisodeRig rig(tiny_kb(), "tiny", s, c);
    const auto r = rig.run("q");
    CHECK(r.status == EpisodeStatus::forced);
    for (auto p : r.phases) CHECK(p == Phase::retrieve);
}

TEST_CASE("ledger and trace") {
    testing::EpisodeRig rig(tiny_kb(), "tiny", testing::script_file(testing::fixture("tiny") / "ask_script.json"));
    const Cost db = tiny_kb().manifest.db_cost;
    const auto r = rig.run("q", db);
    Cost events;
    for (const auto& e : r.trace) events += e.cost;
    CHECK(events == r.ledger.episode_total());
    CHECK(r.ledger.total() == db + r.ledger.episode_total());
    CHECK(r.ledger.llm_total() + r.ledger.tool_total() == r.ledger.episode_total());

    KbCostAccount account;
    CHECK(account.charge(tiny_kb().manifest) == db);
    CHECK(account.charge(tiny_kb().manifest).is_zero());

    const auto first = trace_jsonl(r.trace);
    testing::EpisodeRig again(tiny_kb(), "tiny", testing::script_file(testing::fixture("tiny") / "ask_script.json"));
    CHECK(trace_jsonl(again.run("q", db).trace) == first);

    const auto j = trace_event_json(r.trace.front());
    for (const char* key : {"iteration", "phase", "kind", "digest", "preview", "tokens_in", "tokens_out", "micros", "wall_micros"})
        CHECK(j.contains(key));

    testing::TempDir dir("trace");
    write_trace(r.trace, dir.path / "t.jsonl");
    const auto back = read_trace(dir.path / "t.jsonl");
    CHECK(back.size() == r.trace.size());
    CHECK(back.front()["kind"] == "thought");
}
