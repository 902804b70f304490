#include <doctest.h>

#include <random>

#include "avi/eval.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace avi;
using nlohmann::json;

namespace {

AnswerReport report_with(std::optional<Answer> answer, EpisodeStatus status = EpisodeStatus::answered) {
    AnswerReport r;
    r.answer = std::move(answer);
    r.status = status;
    r.iterations_used = 3;
    return r;
}

EvalItem mc(const std::string& id, char gold) { return {id, "v", "q?", {{'A', "x"}, {'B', "y"}}, MultipleChoice{gold}}; }
EvalItem span(const std::string& id, double s, double e) { return {id, "v", "when?", {}, TimeSpan{{s, e}}}; }

struct DemoRoot {
    testing::TempDir dir{"evalroot"};
    DemoRoot() { save_kb(testing::ingest_fixture("demo"), dir.path / "demo"); }
};

SuiteFactory demo_factory() {
    const auto fx = testing::fixture("demo");
    auto perception = std::make_shared<MockPerception>(FixtureStore::load(fx));
    return [fx, perception](const EvalItem& item) {
        return make_mock_suite(perception, MockScript::load(fx / "scripts" / (item.id + ".json")), 256);
    };
}

}  // namespace

TEST_CASE("eval item parsing and question text") {
    const auto a = eval_item_from_json(json::parse(
        R"({"id":"x","video_id":"v","question":"Which?","options":{"A":"red","B":"blue"},"gold":"B"})"));
    CHECK(a.options.size() == 2);
    CHECK(std::get<MultipleChoice>(a.gold).letter == 'B');
    CHECK(question_text(a) == "Which?\nOptions: A) red B) blue");
    const auto b = eval_item_from_json(json::parse(R"({"id":"y","video_id":"v","question":"When?","gold":[3,4.5]})"));
    CHECK(b.is_grounding());
    CHECK(question_text(b) == "When?");
    CHECK_THROWS(eval_item_from_json(json::parse(R"({"id":"z","video_id":"v","question":"q","gold":[5,1]})")));
}

TEST_CASE("temporal IoU examples and grid oracle") {
    CHECK(temporal_iou({20.5, 21.5}, {20, 21.5}) == doctest::Approx(2.0 / 3.0));
    CHECK(temporal_iou({0, 1}, {2, 3}) == 0.0);
    CHECK(temporal_iou({1, 4}, {1, 4}) == 1.0);
    CHECK(temporal_iou({2, 2}, {2, 2}) == 1.0);
    std::mt19937 rng(5);
    std::uniform_int_distribution<int> ms(0, 5000);
    for (int i = 0; i < 300; ++i) {
        int a = ms(rng), b = ms(rng), c = ms(rng), d = ms(rng);
        if (a > b) std::swap(a, b);
        if (c > d) std::swap(c, d);
        if (a == b && c == d) continue;
        const double want = oracle::grid_iou({a, b}, {c, d});
        CHECK(temporal_iou({a / 1000.0, b / 1000.0}, {c / 1000.0, d / 1000.0}) == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("scoring and summary") {
    std::vector<ItemRecord> recs;
    recs.push_back(score_item(mc("a", 'A'), report_with(Answer{MultipleChoice{'A'}})));
    recs.push_back(score_item(mc("b", 'B'), report_with(Answer{MultipleChoice{'A'}})));
    recs.push_back(score_item(mc("c", 'A'), report_with(Answer{Forced{"dunno"}}, EpisodeStatus::forced)));
    recs.push_back(score_item(span("d", 20, 21.5), report_with(Answer{TimeSpan{{20.5, 21.5}}})));
    recs.push_back(score_item(span("e", 0, 10), report_with(Answer{TimeSpan{{0, 4}}})));
    recs.push_back(score_item(span("f", 0, 10), report_with(Answer{MultipleChoice{'A'}})));
    ItemRecord broken;
    broken.id = "0err";
    broken.errored = true;
    broken.error = "kb missing";
    recs.push_back(broken);

    CHECK(recs[0].correct);
    CHECK_FALSE(recs[1].correct);
    CHECK_FALSE(recs[2].correct);
    CHECK(recs[3].correct);
    CHECK(recs[3].iou == doctest::Approx(2.0 / 3.0));
    CHECK_FALSE(recs[4].correct);
    CHECK(recs[5].iou == 0.0);

    const auto s = summarize(recs);
    CHECK(s.total == 7);
    CHECK(s.errors == 1);
    CHECK(s.ok == 6);
    CHECK(s.records.front().id == "0err");
    CHECK(s.mc_total == 3);
    CHECK(s.mc_correct == 1);
    CHECK(s.accuracy == doctest::Approx(1.0 / 3.0));
    CHECK(s.grounding_total == 3);
    CHECK(s.mean_iou == doctest::Approx((2.0 / 3.0 + 0.4 + 0.0) / 3.0));
    // recall reconciles with the per-item IoUs
    for (double theta : kRecallThresholds) {
        int hits = 0;
        for (const auto& r : s.records)
            if (!r.errored && r.grounding && r.iou >= theta) ++hits;
        CHECK(s.recall_at.at(theta) == doctest::Approx(hits / 3.0));
    }
    const auto j = summary_to_json(s);
    CHECK(j.contains("accuracy"));
    CHECK(record_to_json(s.records[1])["id"] == "a");
}

TEST_CASE("empty summary has zero rates") {
    const auto s = summarize({});
    CHECK(s.total == 0);
    CHECK(s.accuracy == 0.0);
    CHECK(s.mean_iou == 0.0);
}

TEST_CASE("demo evaluation") {
    DemoRoot root;
    const auto items = load_eval_items(testing::fixture("demo") / "items.jsonl");
    REQUIRE(items.size() == 10);
    EvalOptions opt;
    opt.simulated_clock = true;
    testing::TempDir traces("evaltraces");
    opt.trace_dir = traces.path;
    const auto s = run_eval(root.dir.path, items, demo_factory(), EngineConfig{}, opt);
    CHECK(s.ok == 10);
    CHECK(s.mc_correct == 8);
    CHECK(s.accuracy == 1.0);
    CHECK(s.grounding_total == 2);
    CHECK(s.mean_iou == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
    CHECK(s.recall_at.at(0.7) == 0.5);
    CHECK(std::filesystem::exists(traces.path / "q01.jsonl"));

    opt.jobs = 1;
    opt.trace_dir.reset();
    const auto serial = run_eval(root.dir.path, items, demo_factory(), EngineConfig{}, opt);
    CHECK(summary_to_json(serial).dump() == summary_to_json(s).dump());
}

TEST_CASE("missing KB errors the item only") {
    DemoRoot root;
    auto items = load_eval_items(testing::fixture("demo") / "items.jsonl");
    items.resize(2);
    items[1].video_id = "absent";
    EvalOptions opt;
    opt.simulated_clock = true;
    const auto s = run_eval(root.dir.path, items, demo_factory(), EngineConfig{}, opt);
    CHECK(s.errors == 1);
    CHECK(s.ok == 1);
    CHECK(s.mc_total == 1);
    CHECK(s.accuracy == 1.0);
}
