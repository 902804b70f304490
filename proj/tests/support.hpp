#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>

// Eigen before httplib: <resolv.h> defines a _res macro that breaks Eigen.
#include "avi/agent.hpp"
#include "avi/knowledge_base.hpp"
#include "avi/mock_backends.hpp"
#include "avi/wire.hpp"

#include <httplib.h>

namespace testing {

namespace fs = std::filesystem;

inline fs::path fixture(const std::string& name) { return fs::path(AVI_FIXTURES) / name; }

inline avi::MockScript script_file(const fs::path& p) { return avi::MockScript::load(p); }

// Mock ingest of a committed fixture directory.
inline avi::KnowledgeBase ingest_fixture(const std::string& name, avi::EngineConfig config = {}) {
    const auto dir = fixture(name);
    auto perception = std::make_shared<avi::MockPerception>(avi::FixtureStore::load(dir));
    avi::MockScript script;
    if (fs::exists(dir / "ingest_script.json")) script = avi::MockScript::load(dir / "ingest_script.json");
    const auto suite = avi::make_mock_suite(perception, script, 256);
    const auto& store = perception->store();
    return avi::ingest_video({store.video_id, store.video_id, store.duration}, suite, config);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               ("avi_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// Random but valid KB: unit embedding rows, clips tiling the duration, a
// graph with timelines, edges and (when large enough) one super-node.
inline avi::KnowledgeBase random_kb(std::mt19937& rng, int max_clips = 12, int dim = 16) {
    std::uniform_int_distribution<int> nclips(0, max_clips);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    avi::KnowledgeBase kb;
    const int n = nclips(rng);
    kb.manifest.video_id = "rand_" + std::to_string(rng() % 100000);
    kb.manifest.video_ref = kb.manifest.video_id;
    kb.manifest.clip_len = 5.0;
    kb.manifest.duration = n == 0 ? 0.0 : 5.0 * (n - 1) + 0.5 + 4.5 * unit(rng);
    kb.manifest.embed_dim = dim;
    kb.manifest.clip_count = n;
    kb.manifest.db_cost = {std::int64_t(rng() % 100000), std::int64_t(rng() % 1000), std::int64_t(rng() % 1000000)};
    if (rng() % 2) kb.manifest.diagnostics.push_back("clip 0: caption retried");
    const auto ranges = n == 0 ? std::vector<avi::TimeRange>{} : avi::plan_segments(kb.manifest.duration, 5.0);
    kb.embeddings.resize(n, dim);
    for (int i = 0; i < n; ++i) {
        avi::ClipRecord c;
        c.clip_id = i;
        c.range = ranges[std::size_t(i)];
        c.caption = "clip " + std::to_string(i) + (rng() % 3 == 0 ? " \"quoted\" caf\u00e9\n" : " plain");
        if (rng() % 2) c.subject_registry.push_back({"s1", "person " + std::to_string(i), {"hat"}, {}, c.range.start});
        kb.clips.push_back(c);
        avi::Embedding v(dim);
        for (int d = 0; d < dim; ++d) v[d] = gauss(rng);
        kb.embeddings.row(i) = avi::normalize_embedding(v).transpose();
    }
    const int nodes = n == 0 ? 0 : int(rng() % 7);
    std::vector<std::string> ids;
    for (int i = 0; i < nodes; ++i) {
        avi::EntityNode node;
        node.node_id = "N" + std::to_string(i);
        node.name = "entity " + std::to_string(i);
        node.attributes = {"attr" + std::to_string(rng() % 3)};
        const double a = unit(rng) * kb.manifest.duration;
        node.appearance_timeline = {{a, std::min(kb.manifest.duration, a + unit(rng) * 5.0)}};
        node.actions.push_back({"moves", node.appearance_timeline.front()});
        node.base_weight = unit(rng);
        ids.push_back(node.node_id);
        kb.graph.nodes[node.node_id] = node;
    }
    for (int e = 0; nodes > 1 && e < nodes; ++e) {
        const auto& a = ids[rng() % ids.size()];
        const auto& b = ids[rng() % ids.size()];
        if (a != b) kb.graph.edges.push_back({a, b, "meets", {0.0, kb.manifest.duration}});
    }
    if (nodes > 3) kb.graph.supernodes.push_back(avi::aggregate_supernode(kb.graph, {ids.begin(), ids.begin() + 4}, "Super_1"));
    kb.manifest.node_count = nodes;
    return kb;
}

// Episode on a KB with a scripted chat and fixture perception.
struct EpisodeRig {
    const avi::KnowledgeBase& kb;
    avi::BackendSuite suite;
    avi::EngineConfig config;
    avi::ToolRegistry registry = avi::default_registry();
    avi::ManualClock clock;

    EpisodeRig(const avi::KnowledgeBase& kb_, const std::string& fixture_name, avi::MockScript script,
               avi::EngineConfig cfg = {})
        : kb(kb_), suite(avi::make_mock_suite(fixture(fixture_name), std::move(script), kb_.manifest.embed_dim)),
          config(cfg) {}

    avi::EpisodeContext ctx() { return {kb, suite, config, registry, clock}; }
    avi::AnswerReport run(const std::string& question, avi::Cost db = {}) { return avi::run_episode(ctx(), question, db); }
};

// HTTP server speaking the backend wire contract, answering from mocks.
// Optional failure injection: the first `fail_chat` chat requests get a 500.
class EchoServer {
public:
    EchoServer(const fs::path& fixture_dir, avi::MockScript script, int dim = 256)
        : perception_(std::make_shared<avi::MockPerception>(avi::FixtureStore::load(fixture_dir))),
          chat_(std::make_shared<avi::ScriptedChat>(std::move(script))), embedder_(dim) {
        using nlohmann::json;
        auto guard = [this](auto&& fn) {
            return [this, fn](const httplib::Request& req, httplib::Response& res) {
                ++requests_;
                try {
                    res.set_content(fn(json::parse(req.body)).dump(), "application/json");
                } catch (const avi::InvalidArgument& e) {
                    res.status = 404;
                    res.set_content(json{{"error", e.what()}}.dump(), "application/json");
                } catch (const std::exception& e) {
                    res.status = 500;
                    res.set_content(json{{"error", e.what()}}.dump(), "application/json");
                }
            };
        };
        server_.Post("/v1/chat/completions", [this, guard](const httplib::Request& req, httplib::Response& res) {
            if (fail_chat_ > 0) {
                --fail_chat_;
                ++requests_;
                res.status = 500;
                res.set_content("{\"error\":\"injected\"}", "application/json");
                return;
            }
            guard([this](const json& body) {
                return avi::wire::chat_reply(chat_->chat(avi::wire::parse_chat_request(body)).value);
            })(req, res);
        });
        server_.Post("/caption", guard([this](const json& body) {
                         const auto r = avi::wire::parse_caption_request(body);
                         return avi::wire::caption_response(perception_->caption(r.video_ref, r.range, r.fps, r.max_edge).value);
                     }));
        server_.Post("/embed", guard([this](const json& body) {
                         return avi::wire::embed_response(embedder_.embed(avi::wire::parse_embed_request(body)).value);
                     }));
        server_.Post("/detect", guard([this](const json& body) {
                         const auto r = avi::wire::parse_frames_request(body, true);
                         return avi::wire::detect_response(perception_->detect(r.video_ref, r.frame_times, r.query).value);
                     }));
        server_.Post("/ocr", guard([this](const json& body) {
                         const auto r = avi::wire::parse_frames_request(body, false);
                         return avi::wire::ocr_response(perception_->ocr(r.video_ref, r.frame_times).value);
                     }));
        server_.Post("/frame_sim", guard([this](const json& body) {
                         const auto r = avi::wire::parse_frames_request(body, true);
                         return avi::wire::frame_sim_response(perception_->frame_sim(r.video_ref, r.frame_times, r.query).value);
                     }));
        server_.Post("/analyze", guard([this](const json& body) {
                         const auto r = avi::wire::parse_frames_request(body, true);
                         return avi::wire::analyze_response(perception_->analyze(r.video_ref, r.frame_times, r.query).value);
                     }));
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~EchoServer() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    void fail_next_chat(int n) { fail_chat_ = n; }
    int requests() const { return requests_; }

    avi::EndpointConfig endpoint() const {
        avi::EndpointConfig e;
        e.chat_url = url();
        e.chat_model = "scripted";
        e.perception_url = url();
        e.backoff_initial_s = 0.0;
        e.chat_timeout_s = 10.0;
        e.perception_timeout_s = 10.0;
        return e;
    }

private:
    std::shared_ptr<avi::MockPerception> perception_;
    std::shared_ptr<avi::ScriptedChat> chat_;
    avi::HashEmbedder embedder_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> fail_chat_{0};
    std::atomic<int> requests_{0};
};

}  // namespace testing
