#include "avi/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "avi/agent.hpp"
#include "avi/eval.hpp"
#include "avi/http_backends.hpp"
#include "avi/knowledge_base.hpp"
#include "avi/mock_backends.hpp"

namespace avi {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOptions {
    std::string config_path;
    bool mock = false;
    std::string fixture;
    bool json_output = false;
    std::string trace_dir;
    int jobs = 4;
    unsigned seed = 0;
    bool force = false;
    std::string script;
};

EngineConfig load_engine_config(const GlobalOptions& g) {
    EngineConfig c = g.config_path.empty() ? EngineConfig{} : load_config(g.config_path);
    if (!g.fixture.empty()) c.mock_fixture = g.fixture;
    return c;
}

int mock_dim(const EngineConfig& c) { return c.embed_dim > 0 ? c.embed_dim : 256; }

fs::path fixture_dir(const EngineConfig& c) {
    if (c.mock_fixture.empty()) throw InvalidArgument("--mock needs --fixture <dir> or mock_fixture in the config");
    return c.mock_fixture;
}

MockScript script_or_empty(const std::string& path) {
    if (path.empty() || !fs::exists(path)) return MockScript{};
    return MockScript::load(path);
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string cost_line(const Cost& c) {
    return "tokens_in=" + std::to_string(c.tokens_in) + " tokens_out=" + std::to_string(c.tokens_out) +
           " micros=" + std::to_string(c.micros);
}

std::string span(const TimeRange& r) { return "[" + format_seconds(r.start) + "s-" + format_seconds(r.end) + "s]"; }

// ---------------------------------------------------------------- ingest

int cmd_ingest(const GlobalOptions& g, const std::string& video_ref, const std::string& out_dir, double duration,
               std::string video_id, std::ostream& out) {
    const auto config = load_engine_config(g);
    if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !g.force) {
        throw InvalidArgument("output directory " + out_dir + " is not empty; pass --force to overwrite");
    }
    BackendSuite suite;
    IngestRequest req{video_ref, video_id.empty() ? video_ref : video_id, duration};
    if (g.mock) {
        const auto dir = fixture_dir(config);
        auto perception = std::make_shared<MockPerception>(FixtureStore::load(dir));
        if (video_ref != perception->store().video_id) {
            throw InvalidArgument("unknown video_ref '" + video_ref + "' for fixture " + dir.string());
        }
        if (req.duration <= 0.0) req.duration = perception->store().duration;
        const auto script = g.script.empty() ? (dir / "ingest_script.json").string() : g.script;
        suite = make_mock_suite(perception, script_or_empty(script), mock_dim(config));
    } else {
        if (req.duration <= 0.0) throw InvalidArgument("--duration is required outside mock mode");
        suite = make_http_suite(config);
    }
    const auto kb = ingest_video(req, suite, config);
    if (fs::exists(out_dir) && g.force) {
        for (const char* name : {"manifest.json", "clips.jsonl", "graph.json", "embeddings.bin"}) fs::remove(fs::path(out_dir) / name);
    }
    save_kb(kb, out_dir);
    if (g.json_output) {
        out << manifest_to_json(kb.manifest).dump(2) << "\n";
    } else {
        out << "ingested " << kb.manifest.video_id << ": clips=" << kb.manifest.clip_count
            << " nodes=" << kb.manifest.node_count << " edges=" << kb.graph.edges.size()
            << " supernodes=" << kb.graph.supernodes.size() << " embed_dim=" << kb.manifest.embed_dim << "\n";
        out << "db_cost " << cost_line(kb.manifest.db_cost) << "\n";
        for (const auto& d : kb.manifest.diagnostics) out << "diagnostic: " << d << "\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------- ask

int cmd_ask(const GlobalOptions& g, const std::string& kb_dir, const std::string& question, std::ostream& out) {
    const auto config = load_engine_config(g);
    const auto kb = load_kb(kb_dir);
    const auto suite = g.mock ? make_mock_suite(fixture_dir(config), script_or_empty(g.script), kb.manifest.embed_dim)
                              : make_http_suite(config);
    const auto registry = default_registry();
    std::unique_ptr<Clock> clock;
    if (g.mock) {
        clock = std::make_unique<ManualClock>();
    } else {
        clock = std::make_unique<SteadyClock>();
    }
    EpisodeContext ctx{kb, suite, config, registry, *clock};
    KbCostAccount account;
    const auto report = run_episode(ctx, question, account.charge(kb.manifest));

    const fs::path trace_dir = g.trace_dir.empty() ? fs::path("avi-traces") : fs::path(g.trace_dir);
    const auto trace_path = trace_dir / (kb.manifest.video_id + "-" + fnv1a_hex(question).substr(0, 8) + ".jsonl");
    write_trace(report.trace, trace_path);

    if (g.json_output) {
        auto j = report_to_json(report);
        j["trace"] = trace_path.string();
        out << j.dump(2) << "\n";
    } else {
        if (report.answer) out << render_answer(*report.answer) << "\n";
        out << "status: " << to_string(report.status) << (report.forced ? " (forced answer)" : "")
            << ", iterations: " << report.iterations_used << "\n";
        out << "cost: " << cost_line(report.ledger.total()) << "\n";
        if (!report.diagnostic.empty()) out << "diagnostic: " << report.diagnostic << "\n";
        out << "trace: " << trace_path.string() << "\n";
    }
    return report.status == EpisodeStatus::aborted ? kExitBackend : kExitOk;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const GlobalOptions& g, const std::string& kb_root, const std::string& items_file,
             const std::string& out_file, std::ostream& out) {
    const auto config = load_engine_config(g);
    const auto items = load_eval_items(items_file);
    SuiteFactory factory;
    if (g.mock) {
        const auto dir = fixture_dir(config);
        auto perception = std::make_shared<MockPerception>(FixtureStore::load(dir));
        const fs::path scripts = g.script.empty() ? dir / "scripts" : fs::path(g.script);
        const int dim = mock_dim(config);
        factory = [perception, scripts, dim](const EvalItem& item) {
            return make_mock_suite(perception, script_or_empty((scripts / (item.id + ".json")).string()), dim);
        };
    } else {
        auto suite = make_http_suite(config);
        factory = [suite](const EvalItem&) { return suite; };
    }
    EvalOptions options;
    options.jobs = g.jobs;
    options.simulated_clock = g.mock;
    if (!g.trace_dir.empty()) options.trace_dir = g.trace_dir;
    const auto summary = run_eval(kb_root, items, factory, config, options);
    if (!out_file.empty()) {
        std::ofstream f(out_file, std::ios::trunc);
        if (!f) throw InvalidArgument("cannot write " + out_file);
        for (const auto& r : summary.records) f << record_to_json(r).dump() << "\n";
        f << json{{"summary", summary_to_json(summary)}}.dump() << "\n";
    }
    if (g.json_output) {
        out << summary_to_json(summary).dump(2) << "\n";
    } else {
        for (const auto& r : summary.records) {
            out << r.id << ": ";
            if (r.errored) {
                out << "error (" << r.error << ")\n";
                continue;
            }
            out << (r.prediction ? render_answer(*r.prediction) : std::string("(no answer)")) << " "
                << (r.correct ? "correct" : "wrong");
            if (r.grounding) out << " iou=" << fixed(r.iou, 3);
            out << "\n";
        }
        out << "items=" << summary.total << " ok=" << summary.ok << " errors=" << summary.errors << "\n";
        out << "accuracy=" << fixed(summary.accuracy, 4) << " (" << summary.mc_correct << "/" << summary.mc_total << ")\n";
        out << "mIoU=" << fixed(summary.mean_iou, 4);
        for (const auto& [t, v] : summary.recall_at) out << " R@" << format_seconds(t) << "=" << fixed(v, 4);
        out << " (" << summary.grounding_total << " grounding)\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------- inspect

int inspect_clips(const GlobalOptions& g, const std::string& kb_dir, std::ostream& out) {
    const auto kb = load_kb(kb_dir);
    if (g.json_output) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& c : kb.clips) arr.push_back(clip_to_json(c));
        out << arr.dump(2) << "\n";
        return kExitOk;
    }
    out << "clip  range            subjects  caption\n";
    for (const auto& c : kb.clips) {
        char head[64];
        std::snprintf(head, sizeof head, "%-5d %-16s %-9zu ", c.clip_id, span(c.range).c_str(), c.subject_registry.size());
        out << head << truncate_text(c.caption, 100) << "\n";
    }
    return kExitOk;
}

int inspect_graph(const GlobalOptions& g, const std::string& kb_dir, std::ostream& out) {
    const auto kb = load_kb(kb_dir);
    if (g.json_output) {
        out << graph_to_json(kb.graph).dump(2) << "\n";
        return kExitOk;
    }
    const auto& graph = kb.graph;
    out << "nodes (" << graph.nodes.size() << "):\n";
    for (const auto& [id, n] : graph.nodes) {
        std::string seen;
        for (const auto& t : n.appearance_timeline) seen += (seen.empty() ? "" : " ") + span(t);
        out << "  " << id << " \"" << n.name << "\" weight=" << fixed(n.base_weight, 4) << " seen " << seen << "\n";
    }
    out << "edges (" << graph.edges.size() << "):\n";
    for (const auto& e : graph.edges) {
        out << "  " << e.src << " -> " << e.dst << " " << span(e.range) << " " << e.description << "\n";
    }
    out << "supernodes (" << graph.supernodes.size() << "):\n";
    for (const auto& s : graph.supernodes) {
        out << "  " << s.super_id << " " << s.label << " members=" << s.members.size() << "\n";
    }
    return kExitOk;
}

int inspect_search(const GlobalOptions& g, const std::string& kb_dir, const std::string& query, int k,
                   std::ostream& out) {
    const auto config = load_engine_config(g);
    const auto kb = load_kb(kb_dir);
    std::shared_ptr<Embedder> embedder;
    if (g.mock) {
        embedder = std::make_shared<HashEmbedder>(kb.manifest.embed_dim);
    } else {
        embedder = make_http_suite(config).embedder;
    }
    const auto q = embed_checked(*embedder, {query}, kb.manifest.embed_dim);
    const auto hits = top_k_search(kb, q.value.front(), k);
    if (g.json_output) {
        json arr = json::array();
        for (const auto& h : hits) arr.push_back({{"clip_id", h.clip_id}, {"score", h.score}});
        out << arr.dump(2) << "\n";
        return kExitOk;
    }
    for (const auto& h : hits) {
        const auto& c = kb.clips[static_cast<std::size_t>(h.clip_id)];
        out << h.clip_id << " " << span(c.range) << " score=" << fixed(h.score, 6) << " " << truncate_text(c.caption, 100)
            << "\n";
    }
    return kExitOk;
}

int inspect_trace(const std::string& path, std::ostream& out) {
    for (const auto& e : read_trace(path)) {
        char head[96];
        std::snprintf(head, sizeof head, "#%-3d %-9s %-12s in=%-6lld out=%-5lld us=%-8lld ", e.value("iteration", 0),
                      e.value("phase", "").c_str(), e.value("kind", "").c_str(),
                      static_cast<long long>(e.value("tokens_in", 0LL)), static_cast<long long>(e.value("tokens_out", 0LL)),
                      static_cast<long long>(e.value("micros", 0LL)));
        out << head << e.value("preview", "") << "\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------- synth

// Random caption fixture for load and property experiments.
int cmd_synth(const GlobalOptions& g, const std::string& dir, int clips, std::ostream& out) {
    if (clips < 1) throw InvalidArgument("--clips must be positive");
    static const char* subjects[] = {"man", "woman", "child", "dog", "chef", "driver", "player", "guard"};
    static const char* verbs[] = {"walks", "runs", "sits", "talks", "cooks", "waves", "reads", "jumps"};
    static const char* places[] = {"kitchen", "street", "park", "office", "beach", "garage", "stage", "hall"};
    std::mt19937 rng(g.seed);
    std::uniform_int_distribution<int> pick(0, 7);
    fs::create_directories(dir);
    const double duration = 5.0 * clips;
    std::ofstream(fs::path(dir) / "video.json") << json{{"video_id", "synth_" + std::to_string(g.seed)}, {"duration", duration}}.dump() << "\n";
    std::ofstream caps(fs::path(dir) / "captions.jsonl");
    for (int i = 0; i < clips; ++i) {
        const std::string text = std::string("a ") + subjects[pick(rng)] + " " + verbs[pick(rng)] + " in the " + places[pick(rng)];
        caps << json{{"t_start", 5.0 * i}, {"document", {{"clip_description", text}, {"subject_registry", json::object()}}}}.dump()
             << "\n";
    }
    out << "wrote synthetic fixture with " << clips << " clips to " << dir << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"avi: agentic video question answering engine"};
    app.fallthrough();
    app.require_subcommand(1);
    GlobalOptions g;
    app.add_option("--config", g.config_path, "Engine configuration JSON file");
    app.add_flag("--mock", g.mock, "Use in-process mock backends");
    app.add_option("--fixture", g.fixture, "Fixture directory backing the mock backends");
    app.add_flag("--json", g.json_output, "Machine-readable output");
    app.add_option("--trace-dir", g.trace_dir, "Directory for episode traces");
    app.add_option("--jobs", g.jobs, "Concurrent episodes during eval")->check(CLI::PositiveNumber);
    app.add_option("--seed", g.seed, "Seed for fixture generation utilities");
    app.add_flag("--force", g.force, "Overwrite an existing knowledge base");
    app.add_option("--script", g.script, "Mock chat script (a directory of per-item scripts for eval)");

    std::string video_ref, out_dir, video_id;
    double duration = 0.0;
    auto* ingest = app.add_subcommand("ingest", "Build a knowledge base for one video");
    ingest->add_option("video_ref", video_ref, "Video locator understood by the backends")->required();
    ingest->add_option("out_dir", out_dir, "Knowledge base directory to write")->required();
    ingest->add_option("--duration", duration, "Video duration in seconds (required outside mock mode)");
    ingest->add_option("--video-id", video_id, "Identifier stored in the manifest (defaults to video_ref)");

    std::string kb_dir, question;
    auto* ask = app.add_subcommand("ask", "Answer one question about an ingested video");
    ask->add_option("kb_dir", kb_dir, "Knowledge base directory")->required();
    ask->add_option("question", question, "Question text")->required();

    std::string kb_root, items_file, eval_out;
    auto* eval = app.add_subcommand("eval", "Run an items file and report accuracy, mIoU and recall");
    eval->add_option("kb_root", kb_root, "Directory holding one knowledge base per video_id")->required();
    eval->add_option("items", items_file, "JSONL file of evaluation items")->required();
    eval->add_option("--out", eval_out, "Per-item JSONL results file");

    auto* inspect = app.add_subcommand("inspect", "Look inside knowledge bases and traces");
    inspect->require_subcommand(1);
    std::string query, trace_file;
    int k = 16;
    auto* clips = inspect->add_subcommand("clips", "Clip table");
    clips->add_option("kb_dir", kb_dir)->required();
    auto* graph = inspect->add_subcommand("graph", "Nodes, edges and super-nodes");
    graph->add_option("kb_dir", kb_dir)->required();
    auto* search = inspect->add_subcommand("search", "Top-k clip search dry run");
    search->add_option("kb_dir", kb_dir)->required();
    search->add_option("query", query)->required();
    search->add_option("-k", k)->check(CLI::PositiveNumber);
    auto* trace = inspect->add_subcommand("trace", "Pretty-print a trace file");
    trace->add_option("file", trace_file)->required();

    std::string synth_dir;
    int synth_clips = 12;
    auto* synth = app.add_subcommand("synth", "Write a random caption fixture (uses --seed)");
    synth->add_option("dir", synth_dir)->required();
    synth->add_option("--clips", synth_clips);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*ingest) return cmd_ingest(g, video_ref, out_dir, duration, video_id, out);
        if (*ask) return cmd_ask(g, kb_dir, question, out);
        if (*eval) return cmd_eval(g, kb_root, items_file, eval_out, out);
        if (*synth) return cmd_synth(g, synth_dir, synth_clips, out);
        if (*clips) return inspect_clips(g, kb_dir, out);
        if (*graph) return inspect_graph(g, kb_dir, out);
        if (*search) return inspect_search(g, kb_dir, query, k, out);
        if (*trace) return inspect_trace(trace_file, out);
    } catch (const CorruptionError& e) {
        err << "knowledge base error: " << e.what() << "\n";
        return kExitKb;
    } catch (const VersionError& e) {
        err << "knowledge base error: " << e.what() << "\n";
        return kExitKb;
    } catch (const IngestError& e) {
        err << "ingest error: " << e.what() << "\n";
        return kExitKb;
    } catch (const BackendError& e) {
        err << "backend error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace avi
