#include "avi/tools.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>
#include <set>
#include <sstream>

#include "avi/prompts.hpp"

namespace avi {

using nlohmann::json;

std::string to_string(Phase p) {
    switch (p) {
        case Phase::retrieve: return "retrieve";
        case Phase::perceive: return "perceive";
        case Phase::review: return "review";
    }
    return "retrieve";
}

std::optional<Phase> phase_from_string(const std::string& s) {
    if (s == "retrieve") return Phase::retrieve;
    if (s == "perceive") return Phase::perceive;
    if (s == "review") return Phase::review;
    return std::nullopt;
}

Cost ToolResult::cost() const {
    Cost c;
    for (const auto& u : usage) c += u.cost;
    return c;
}

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string span(const TimeRange& r) { return "[" + format_seconds(r.start) + "s-" + format_seconds(r.end) + "s]"; }

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

json range_json(const TimeRange& r) { return json::array({r.start, r.end}); }

TimeRange range_arg(const json& j) { return make_range(j.at(0).get<double>(), j.at(1).get<double>()); }

json param_schema(const ToolParam& p) {
    json s;
    if (p.type == "range") {
        s = {{"type", "array"}, {"items", {{"type", "number"}}}, {"minItems", 2}, {"maxItems", 2}};
    } else if (p.type == "ranges") {
        s = {{"type", "array"},
             {"items", {{"type", "array"}, {"items", {{"type", "number"}}}, {"minItems", 2}, {"maxItems", 2}}}};
    } else if (p.type == "integers") {
        s = {{"type", "array"}, {"items", {{"type", "integer"}}}};
    } else {
        s = {{"type", p.type}};
    }
    s["description"] = p.description;
    return s;
}

bool is_range(const json& j) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) return false;
    const double a = j[0].get<double>();
    const double b = j[1].get<double>();
    return std::isfinite(a) && std::isfinite(b) && a >= 0.0 && a <= b;
}

bool is_integer(const json& j) {
    if (j.is_number_integer()) return true;
    return j.is_number_float() && std::floor(j.get<double>()) == j.get<double>();
}

// Clamp a requested range to the video; starting past the end is an error.
TimeRange within_video(const TimeRange& r, const KnowledgeBase& kb) {
    const double duration = kb.manifest.duration;
    if (r.start > duration) {
        throw InvalidArgument("range " + span(r) + " starts after the end of the video (" + format_seconds(duration) +
                              "s)");
    }
    return {r.start, std::min(r.end, duration)};
}

ToolResult failed(const std::string& tool, const std::string& message) {
    ToolResult r;
    r.tool = tool;
    r.ok = false;
    r.payload = "error: " + message;
    r.structured = {{"error", message}};
    return r;
}

}  // namespace

json ToolSpec::schema() const {
    json props = json::object();
    json required = json::array();
    for (const auto& p : params) {
        props[p.name] = param_schema(p);
        if (p.required) required.push_back(p.name);
    }
    return {{"type", "function"},
            {"function",
             {{"name", name},
              {"description", description},
              {"parameters", {{"type", "object"}, {"properties", props}, {"required", required}}}}}};
}

void validate_arguments(const ToolSpec& spec, const json& args) {
    if (!args.is_object()) throw ToolArgumentError(spec.name + ": arguments must be a JSON object");
    for (const auto& p : spec.params) {
        if (!args.contains(p.name) || args.at(p.name).is_null()) {
            if (p.required) throw ToolArgumentError(spec.name + ": missing required argument '" + p.name + "'");
            continue;
        }
        const auto& v = args.at(p.name);
        bool ok = true;
        if (p.type == "string") {
            ok = v.is_string() && !v.get<std::string>().empty();
        } else if (p.type == "integer") {
            ok = is_integer(v);
        } else if (p.type == "number") {
            ok = v.is_number();
        } else if (p.type == "range") {
            ok = is_range(v);
        } else if (p.type == "ranges") {
            ok = v.is_array() && !v.empty() && std::all_of(v.begin(), v.end(), is_range);
        } else if (p.type == "integers") {
            ok = v.is_array() && !v.empty() && std::all_of(v.begin(), v.end(), is_integer);
        }
        if (!ok) throw ToolArgumentError(spec.name + ": argument '" + p.name + "' must be a valid " + p.type);
    }
}

// ---------------------------------------------------------------- registry

void ToolRegistry::add(ToolSpec spec, ToolHandler handler) {
    if (spec.phase == Phase::review) throw InvalidArgument("no tools may be registered for the review phase");
    const auto name = spec.name;
    if (tools_.count(name)) throw InvalidArgument("duplicate tool name " + name);
    tools_.emplace(name, Entry{std::move(spec), std::move(handler)});
    order_.push_back(name);
}

const ToolSpec* ToolRegistry::find(const std::string& name) const {
    auto it = tools_.find(name);
    static const std::string suffix = "_tool";
    if (it == tools_.end() && name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
        it = tools_.find(name.substr(0, name.size() - suffix.size()));
    }
    return it == tools_.end() ? nullptr : &it->second.spec;
}

std::vector<const ToolSpec*> ToolRegistry::specs(Phase phase) const {
    std::vector<const ToolSpec*> out;
    for (const auto& name : order_) {
        const auto& spec = tools_.at(name).spec;
        if (spec.phase == phase) out.push_back(&spec);
    }
    return out;
}

json ToolRegistry::schemas(Phase phase) const {
    json out = json::array();
    for (const auto* s : specs(phase)) out.push_back(s->schema());
    return out;
}

ToolResult ToolRegistry::execute(const std::string& name, const json& args, const ToolContext& ctx) const {
    const auto* spec = find(name);
    if (!spec) throw ToolArgumentError("unknown tool " + name);
    validate_arguments(*spec, args);
    try {
        auto result = tools_.at(spec->name).handler(args, ctx);
        result.tool = spec->name;
        if (result.payload.empty()) result.payload = "no results";
        return result;
    } catch (const ToolArgumentError&) {
        throw;
    } catch (const InvalidArgument& e) {
        return failed(spec->name, e.what());
    } catch (const BackendError& e) {
        return failed(spec->name, e.what());
    } catch (const IngestError& e) {
        return failed(spec->name, e.what());
    }
}

ToolRegistry default_registry() {
    ToolRegistry r;
    r.add({"clip_retrieve",
           std::string(prompts::kDescClipRetrieve),
           {{"q_text", "string", "Text query describing the content to find.", true},
            {"k", "integer", "Number of clips to return (default 16).", false}},
           Phase::retrieve},
          [](const json& a, const ToolContext& ctx) {
              const int k = a.contains("k") && !a.at("k").is_null() ? static_cast<int>(a.at("k").get<double>())
                                                                    : ctx.config.top_k;
              return clip_retrieve(ctx, a.at("q_text").get<std::string>(), k);
          });
    r.add({"clip_merge",
           std::string(prompts::kDescClipMerge),
           {{"clip_ids", "integers", "Clip ids returned by clip_retrieve.", true}},
           Phase::retrieve},
          [](const json& a, const ToolContext& ctx) {
              std::vector<int> ids;
              for (const auto& v : a.at("clip_ids")) ids.push_back(static_cast<int>(v.get<double>()));
              return clip_merge(ctx, ids);
          });
    r.add({"global_explore",
           std::string(prompts::kDescGlobalExplore),
           {{"q_text", "string", "The question or topic to summarize the video for.", true}},
           Phase::retrieve},
          [](const json& a, const ToolContext& ctx) { return global_explore(ctx, a.at("q_text").get<std::string>()); });
    r.add({"graph_retrieve",
           std::string(prompts::kDescGraphRetrieve),
           {{"entity_query", "string", "Entity (subject) or event to look up.", true},
            {"second_entity", "string", "Optional second entity; a connecting path is returned.", false}},
           Phase::retrieve},
          [](const json& a, const ToolContext& ctx) {
              std::optional<std::string> second;
              if (a.contains("second_entity") && a.at("second_entity").is_string()) {
                  second = a.at("second_entity").get<std::string>();
              }
              return graph_retrieve(ctx, a.at("entity_query").get<std::string>(), second);
          });
    r.add({"object_detect",
           std::string(prompts::kDescObjectDetect),
           {{"t_range", "range", "[start, end] in seconds.", true},
            {"q_obj", "string", "Text description of the objects to detect.", true}},
           Phase::perceive},
          [](const json& a, const ToolContext& ctx) {
              return object_detect(ctx, range_arg(a.at("t_range")), a.at("q_obj").get<std::string>());
          });
    r.add({"boundary_detect",
           std::string(prompts::kDescBoundaryDetect),
           {{"t_range", "range", "[start, end] in seconds.", true},
            {"q_event", "string", "Description of the event to localize.", true}},
           Phase::perceive},
          [](const json& a, const ToolContext& ctx) {
              return boundary_detect(ctx, range_arg(a.at("t_range")), a.at("q_event").get<std::string>());
          });
    r.add({"text_extract",
           std::string(prompts::kDescTextExtract),
           {{"t_range", "range", "[start, end] in seconds.", true}},
           Phase::perceive},
          [](const json& a, const ToolContext& ctx) { return text_extract(ctx, range_arg(a.at("t_range"))); });
    r.add({"frame_analysis",
           std::string(prompts::kDescFrameAnalysis),
           {{"t_ranges", "ranges", "List of [start, end] ranges in seconds.", true},
            {"q_specific", "string", "The specific question to answer from the frames.", true}},
           Phase::perceive},
          [](const json& a, const ToolContext& ctx) {
              std::vector<TimeRange> ranges;
              for (const auto& r : a.at("t_ranges")) ranges.push_back(range_arg(r));
              return frame_analysis(ctx, ranges, a.at("q_specific").get<std::string>());
          });
    return r;
}

// ---------------------------------------------------------------- retrieve tools

ToolResult clip_retrieve(const ToolContext& ctx, const std::string& q_text, int k) {
    if (k < 1) throw InvalidArgument("k must be at least 1");
    ToolResult r;
    r.tool = "clip_retrieve";
    auto emb = embed_checked(*ctx.backends.embedder, {q_text}, ctx.kb.manifest.embed_dim);
    r.usage.push_back(emb.usage);
    const auto hits = top_k_search(ctx.kb, emb.value.front(), k);
    r.structured = {{"query", q_text}, {"hits", json::array()}};
    if (hits.empty()) {
        r.payload = "No clips found for " + quoted(q_text) + ".";
        return r;
    }
    std::string out = "Top " + std::to_string(hits.size()) + " clips for " + quoted(q_text) + ":\n";
    for (const auto& h : hits) {
        const auto& clip = ctx.kb.clips[static_cast<std::size_t>(h.clip_id)];
        out += span(clip.range) + " " + clip.caption + " (clip " + std::to_string(h.clip_id) + ", score " +
               fixed(h.score, 4) + ")\n";
        r.structured["hits"].push_back(
            {{"clip_id", h.clip_id}, {"t_start", clip.range.start}, {"t_end", clip.range.end}, {"score", h.score}});
    }
    r.payload = out;
    return r;
}

std::vector<MergedSegment> merge_clips(const KnowledgeBase& kb, std::vector<int> clip_ids, double max_gap,
                                       double min_coherence) {
    for (int id : clip_ids) {
        if (id < 0 || id >= static_cast<int>(kb.clips.size())) {
            throw InvalidArgument("unknown clip id " + std::to_string(id));
        }
    }
    std::sort(clip_ids.begin(), clip_ids.end(), [&](int a, int b) {
        const auto& ra = kb.clips[static_cast<std::size_t>(a)].range;
        const auto& rb = kb.clips[static_cast<std::size_t>(b)].range;
        return ra.start != rb.start ? ra.start < rb.start : a < b;
    });
    clip_ids.erase(std::unique(clip_ids.begin(), clip_ids.end()), clip_ids.end());
    auto coherence = [&](int a, int b) {
        const Eigen::VectorXd va = kb.embeddings.row(a).cast<double>().transpose();
        const Eigen::VectorXd vb = kb.embeddings.row(b).cast<double>().transpose();
        const double na = va.norm();
        const double nb = vb.norm();
        return na > 0.0 && nb > 0.0 ? va.dot(vb) / (na * nb) : 0.0;
    };
    std::vector<MergedSegment> out;
    for (int id : clip_ids) {
        const auto& clip = kb.clips[static_cast<std::size_t>(id)];
        if (!out.empty()) {
            auto& seg = out.back();
            const double gap = clip.range.start - seg.range.end;
            if (gap <= max_gap && coherence(seg.clip_ids.back(), id) >= min_coherence) {
                seg.range.end = std::max(seg.range.end, clip.range.end);
                seg.clip_ids.push_back(id);
                seg.caption_digests.push_back(fnv1a_hex(clip.caption));
                continue;
            }
        }
        out.push_back({clip.range, {id}, {fnv1a_hex(clip.caption)}});
    }
    return out;
}

ToolResult clip_merge(const ToolContext& ctx, const std::vector<int>& clip_ids) {
    const auto segments =
        merge_clips(ctx.kb, clip_ids, ctx.config.effective_merge_gap(), ctx.config.merge_coherence);
    ToolResult r;
    r.tool = "clip_merge";
    r.structured = {{"segments", json::array()}};
    std::string out = "Merged into " + std::to_string(segments.size()) + " segment(s):\n";
    for (const auto& s : segments) {
        std::string ids;
        std::string digests;
        for (std::size_t i = 0; i < s.clip_ids.size(); ++i) {
            ids += (i ? "," : "") + std::to_string(s.clip_ids[i]);
            digests += (i ? "," : "") + s.caption_digests[i].substr(0, 8);
        }
        out += span(s.range) + " clips " + ids + " (captions " + digests + ")\n";
        r.structured["segments"].push_back({{"t_start", s.range.start},
                                            {"t_end", s.range.end},
                                            {"clip_ids", s.clip_ids},
                                            {"caption_digests", s.caption_digests}});
    }
    r.payload = out;
    return r;
}

std::vector<TimeRange> parse_highlight_ranges(const std::string& reply, double duration) {
    static const std::regex line_re(R"(RANGE:\s*\[?\s*([0-9]+(?:\.[0-9]+)?)\s*s?\s*[,\s-]\s*([0-9]+(?:\.[0-9]+)?)\s*s?)",
                                    std::regex::icase);
    std::vector<TimeRange> out;
    std::istringstream in(reply);
    std::string line;
    while (std::getline(in, line)) {
        std::smatch m;
        if (!std::regex_search(line, m, line_re)) continue;
        double a = std::stod(m[1].str());
        double b = std::stod(m[2].str());
        if (a > b) std::swap(a, b);
        out.push_back(clamp_range({a, b}, 0.0, duration));
    }
    return out;
}

std::string strip_highlight_lines(const std::string& reply) {
    static const std::regex line_re(R"(RANGE:)", std::regex::icase);
    std::istringstream in(reply);
    std::string line;
    std::string out;
    while (std::getline(in, line)) {
        if (std::regex_search(line, line_re)) continue;
        out += line + "\n";
    }
    const auto end = out.find_last_not_of(" \t\r\n");
    return end == std::string::npos ? std::string() : out.substr(0, end + 1);
}

ToolResult global_explore(const ToolContext& ctx, const std::string& q_text) {
    ToolResult r;
    r.tool = "global_explore";
    const auto& clips = ctx.kb.clips;
    if (clips.empty()) {
        r.payload = "The video has no clips to explore.";
        r.structured = {{"summary", ""}, {"ranges", json::array()}};
        return r;
    }
    const auto windows = plan_windows(clips.size(), ctx.config.window_size, ctx.config.window_overlap);
    std::vector<std::string> partials;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        ChatRequest req;
        req.purpose = "summarize";
        std::string user = "Question: " + q_text + "\n\nCaptions:\n";
        for (std::size_t i = windows[w].first; i < windows[w].second; ++i) {
            user += span(clips[i].range) + " " + clips[i].caption + "\n";
        }
        req.messages = {{"system", std::string(prompts::kWindowSummary), {}, {}}, {"user", user, {}, {}}};
        try {
            auto reply = ctx.backends.chat->chat(req);
            r.usage.push_back(reply.usage);
            partials.push_back(reply.value.content);
        } catch (const BackendError& e) {
            r.diagnostics.push_back("window " + std::to_string(w) + " skipped: " + e.what());
        }
    }
    if (partials.empty()) {
        auto f = failed("global_explore", "every summarization window failed");
        f.usage = std::move(r.usage);
        f.diagnostics = std::move(r.diagnostics);
        return f;
    }
    ChatRequest req;
    req.purpose = "summarize";
    std::string user = "Question: " + q_text + "\nTotal video length: " + format_seconds(ctx.kb.manifest.duration) +
                       " seconds.\n\nPartial summaries:\n";
    for (std::size_t i = 0; i < partials.size(); ++i) user += std::to_string(i + 1) + ". " + partials[i] + "\n";
    req.messages = {{"system", std::string(prompts::kFinalSummary), {}, {}}, {"user", user, {}, {}}};
    std::string final_reply;
    try {
        auto reply = ctx.backends.chat->chat(req);
        r.usage.push_back(reply.usage);
        final_reply = reply.value.content;
    } catch (const BackendError& e) {
        auto f = failed("global_explore", std::string("final summary failed: ") + e.what());
        f.usage = std::move(r.usage);
        f.diagnostics = std::move(r.diagnostics);
        return f;
    }
    const auto ranges = parse_highlight_ranges(final_reply, ctx.kb.manifest.duration);
    const auto summary = strip_highlight_lines(final_reply);
    r.structured = {{"summary", summary}, {"ranges", json::array()}};
    std::string out = "Summary: " + (summary.empty() ? std::string("(empty)") : summary) + "\n";
    if (ranges.empty()) {
        out += "No highlighted segments.\n";
    } else {
        out += "Highlighted segments:\n";
        for (const auto& rg : ranges) {
            out += span(rg) + "\n";
            r.structured["ranges"].push_back(range_json(rg));
        }
    }
    r.payload = out;
    return r;
}

ToolResult graph_retrieve(const ToolContext& ctx, const std::string& entity_query,
                          const std::optional<std::string>& second_entity) {
    ToolResult r;
    r.tool = "graph_retrieve";
    const auto& g = ctx.kb.graph;
    r.structured = {{"entities", json::array()}, {"relations", json::array()}};
    if (g.empty()) {
        r.payload = "No entities found in the knowledge graph.";
        return r;
    }
    GraphQuery q;
    q.entity_query = entity_query;
    q.second_entity = second_entity;
    q.max_hops = ctx.config.max_hops;
    q.seed_threshold = ctx.config.seed_threshold;
    q.seed_fallback = ctx.config.seed_fallback;
    q.result_cap = ctx.config.graph_result_cap;
    const auto res = query_graph(g, q, ctx.config.lambda, *ctx.backends.embedder, &r.usage);
    if (res.entities.empty()) {
        r.payload = "No entities found in the knowledge graph.";
        return r;
    }
    std::string out = "Entities (" + std::to_string(res.entities.size()) + "):\n";
    for (const auto& e : res.entities) {
        const auto& node = g.nodes.at(e.node_id);
        std::string seen;
        for (const auto& t : node.appearance_timeline) seen += (seen.empty() ? "" : ", ") + span(t);
        out += "- " + node.node_id + " " + quoted(node.name) + " (weight " + fixed(e.weight, 4) + ")";
        if (!node.attributes.empty()) {
            out += " attributes:";
            for (std::size_t i = 0; i < node.attributes.size(); ++i) out += (i ? ", " : " ") + node.attributes[i];
            out += ";";
        }
        out += " seen: " + (seen.empty() ? std::string("unknown") : seen) + "\n";
        for (const auto& a : node.actions) out += "    " + span(a.range) + " " + a.description + "\n";
        r.structured["entities"].push_back({{"node_id", node.node_id}, {"name", node.name}, {"weight", e.weight}});
    }
    if (!res.relations.empty()) {
        out += "Relations:\n";
        for (auto idx : res.relations) {
            const auto& edge = g.edges[idx];
            out += "- " + span(edge.range) + " " + edge.src + " -> " + edge.dst + ": " + edge.description + "\n";
            r.structured["relations"].push_back({{"src", edge.src},
                                                 {"dst", edge.dst},
                                                 {"description", edge.description},
                                                 {"t_start", edge.range.start},
                                                 {"t_end", edge.range.end}});
        }
    }
    std::set<std::string> shown;
    for (const auto& e : res.entities) shown.insert(e.node_id);
    for (const auto& s : g.supernodes) {
        if (std::none_of(s.members.begin(), s.members.end(), [&](const std::string& m) { return shown.count(m); })) {
            continue;
        }
        std::string spans;
        for (const auto& t : s.span) spans += (spans.empty() ? "" : ", ") + span(t);
        out += "Group " + s.super_id + " (" + s.label + ") spans " + spans + "\n";
    }
    if (second_entity) {
        if (res.path) {
            out += "Path:\n";
            json path = {{"nodes", res.path->nodes}, {"edges", json::array()}};
            if (res.path->nodes.size() == 1) out += "- " + res.path->nodes.front() + " (both queries match this entity)\n";
            for (std::size_t i = 0; i < res.path->edges.size(); ++i) {
                const auto& edge = g.edges[res.path->edges[i]];
                out += "- " + res.path->nodes[i] + " -> " + res.path->nodes[i + 1] + " via " + quoted(edge.description) +
                       " at " + span(edge.range) + "\n";
                path["edges"].push_back({{"description", edge.description},
                                         {"t_start", edge.range.start},
                                         {"t_end", edge.range.end}});
            }
            r.structured["path"] = path;
        } else {
            out += "No path connects the two entities.\n";
        }
    }
    r.payload = out;
    return r;
}

// ---------------------------------------------------------------- perceive tools

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    const double iw = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
    const double ih = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
    const double inter = iw * ih;
    const double area_a = std::max(0.0, a[2] - a[0]) * std::max(0.0, a[3] - a[1]);
    const double area_b = std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]);
    const double uni = area_a + area_b - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Detection> dedup_detections(std::vector<Detection> detections, double iou_threshold) {
    std::stable_sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
        if (time_key(a.frame_time) != time_key(b.frame_time)) return a.frame_time < b.frame_time;
        if (a.label != b.label) return a.label < b.label;
        return a.confidence > b.confidence;
    });
    std::vector<Detection> kept;
    std::size_t group_begin = 0;  // first kept detection of the current (frame, label) group
    for (const auto& d : detections) {
        if (kept.size() > group_begin && (time_key(kept[group_begin].frame_time) != time_key(d.frame_time) ||
                                          kept[group_begin].label != d.label)) {
            group_begin = kept.size();
        }
        const bool suppressed = std::any_of(kept.begin() + static_cast<std::ptrdiff_t>(group_begin), kept.end(),
                                            [&](const Detection& k) { return box_iou(k.box, d.box) > iou_threshold; });
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

std::vector<TextEntry> collapse_text(std::vector<OcrItem> items) {
    std::stable_sort(items.begin(), items.end(),
                     [](const OcrItem& a, const OcrItem& b) { return a.frame_time < b.frame_time; });
    std::vector<TextEntry> out;
    std::map<std::string, std::size_t> open;  // text -> entry index, for texts seen in the previous frame
    std::size_t i = 0;
    while (i < items.size()) {
        const auto key = time_key(items[i].frame_time);
        std::map<std::string, std::size_t> current;
        for (; i < items.size() && time_key(items[i].frame_time) == key; ++i) {
            const auto& text = items[i].text;
            if (text.find_first_not_of(" \t\r\n") == std::string::npos || current.count(text)) continue;
            const auto it = open.find(text);
            if (it != open.end()) {
                out[it->second].last_seen = items[i].frame_time;
                current[text] = it->second;
            } else {
                out.push_back({text, items[i].frame_time, items[i].frame_time});
                current[text] = out.size() - 1;
            }
        }
        open = std::move(current);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const TextEntry& a, const TextEntry& b) { return a.first_seen < b.first_seen; });
    return out;
}

Boundary locate_boundary(const std::vector<double>& frames, const std::vector<double>& scores, double fps,
                         const TimeRange& range) {
    if (frames.size() < 2 || scores.size() != frames.size()) {
        throw InvalidArgument("boundary detection needs at least two sampled frames");
    }
    Boundary b;
    const double max = *std::max_element(scores.begin(), scores.end());
    const double min = *std::min_element(scores.begin(), scores.end());
    if (max == min) {
        b.range = range;
        b.low_confidence = true;
        b.threshold = max;
        return b;
    }
    b.threshold = max - 0.2 * std::abs(max);
    std::size_t best_start = 0;
    std::size_t best_len = 0;
    for (std::size_t i = 0; i < scores.size();) {
        if (scores[i] < b.threshold) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < scores.size() && scores[j] >= b.threshold) ++j;
        if (j - i > best_len) {
            best_len = j - i;
            best_start = i;
        }
        i = j;
    }
    const double period = 1.0 / fps;
    double start = frames[best_start];
    const double end = std::min(round_time(frames[best_start + best_len - 1] + period), range.end);
    if (end <= start) start = std::max(range.start, round_time(end - period));
    b.range = {start, end};
    return b;
}

std::vector<double> downsample_frames(const std::vector<double>& frames, int budget) {
    const auto n = frames.size();
    if (budget < 1) return {};
    const auto b = static_cast<std::size_t>(budget);
    if (n <= b) return frames;
    std::vector<double> out;
    out.reserve(b);
    for (std::size_t i = 0; i < b; ++i) out.push_back(frames[i * n / b]);
    return out;
}

ToolResult object_detect(const ToolContext& ctx, const TimeRange& range_in, const std::string& q_obj) {
    const auto range = within_video(range_in, ctx.kb);
    const auto frames = sample_frames(range, ctx.kb.manifest.fps);
    ToolResult r;
    r.tool = "object_detect";
    auto res = ctx.backends.detector->detect(ctx.kb.video_ref(), frames, q_obj);
    r.usage.push_back(res.usage);
    const auto dets = dedup_detections(std::move(res.value), ctx.config.iou_threshold);

    std::map<std::string, int> max_count;
    std::map<long long, std::map<std::string, int>> per_frame;
    for (const auto& d : dets) ++per_frame[time_key(d.frame_time)][d.label];
    for (const auto& [_, labels] : per_frame) {
        for (const auto& [label, n] : labels) max_count[label] = std::max(max_count[label], n);
    }
    r.structured = {{"frames", frames.size()}, {"counts", max_count}, {"detections", json::array()}};
    if (dets.empty()) {
        r.payload = "No objects matching " + quoted(q_obj) + " detected in " + span(range) + " (" +
                    std::to_string(frames.size()) + " frames).";
        return r;
    }
    std::string out = "Detections for " + quoted(q_obj) + " in " + span(range) + " (" + std::to_string(frames.size()) +
                      " frames):\nMax count per frame:";
    for (const auto& [label, n] : max_count) out += " " + label + "=" + std::to_string(n);
    out += "\n";
    long long current = -1;
    for (const auto& d : dets) {
        const auto key = time_key(d.frame_time);
        if (key != current) {
            out += (current < 0 ? "" : "\n") + format_seconds(d.frame_time) + "s:";
            current = key;
        }
        out += " " + d.label + " " + fixed(d.confidence, 2) + " [" + fixed(d.box[0], 0) + "," + fixed(d.box[1], 0) +
               "," + fixed(d.box[2], 0) + "," + fixed(d.box[3], 0) + "];";
        r.structured["detections"].push_back({{"frame_time", d.frame_time},
                                              {"label", d.label},
                                              {"confidence", d.confidence},
                                              {"box", d.box}});
    }
    r.payload = out + "\n";
    return r;
}

ToolResult text_extract(const ToolContext& ctx, const TimeRange& range_in) {
    const auto range = within_video(range_in, ctx.kb);
    const auto frames = sample_frames(range, ctx.kb.manifest.fps);
    ToolResult r;
    r.tool = "text_extract";
    std::vector<OcrItem> items;
    try {
        auto res = ctx.backends.ocr->ocr(ctx.kb.video_ref(), frames);
        r.usage.push_back(res.usage);
        items = std::move(res.value);
    } catch (const BackendError&) {
        // fall back to one call per frame so a single bad frame costs only itself
        for (double t : frames) {
            try {
                auto res = ctx.backends.ocr->ocr(ctx.kb.video_ref(), {t});
                r.usage.push_back(res.usage);
                items.insert(items.end(), res.value.begin(), res.value.end());
            } catch (const BackendError& e) {
                r.diagnostics.push_back("frame " + format_seconds(t) + "s skipped: " + e.what());
            }
        }
    }
    const auto entries = collapse_text(std::move(items));
    r.structured = {{"entries", json::array()}, {"skipped_frames", r.diagnostics.size()}};
    std::string out;
    if (entries.empty()) {
        out = "No text found in " + span(range) + ".";
    } else {
        out = "Text found in " + span(range) + ":\n";
        for (const auto& e : entries) {
            out += quoted(e.text) + " first seen " + format_seconds(e.first_seen) + "s";
            if (e.last_seen > e.first_seen) out += " (until " + format_seconds(e.last_seen) + "s)";
            out += "\n";
            r.structured["entries"].push_back(
                {{"text", e.text}, {"first_seen", e.first_seen}, {"last_seen", e.last_seen}});
        }
    }
    if (!r.diagnostics.empty()) out += "\n" + std::to_string(r.diagnostics.size()) + " frame(s) could not be read.";
    r.payload = out;
    return r;
}

ToolResult boundary_detect(const ToolContext& ctx, const TimeRange& range_in, const std::string& q_event) {
    const auto range = within_video(range_in, ctx.kb);
    const double fps = ctx.kb.manifest.fps;
    const auto frames = sample_frames(range, fps);
    if (frames.size() < 2) throw InvalidArgument("range " + span(range) + " contains fewer than two frames");
    ToolResult r;
    r.tool = "boundary_detect";
    auto res = ctx.backends.frame_sim->frame_sim(ctx.kb.video_ref(), frames, q_event);
    r.usage.push_back(res.usage);
    std::map<long long, double> by_time;
    for (const auto& s : res.value) by_time[time_key(s.frame_time)] = s.score;
    std::vector<double> scores;
    for (double t : frames) {
        const auto it = by_time.find(time_key(t));
        scores.push_back(it == by_time.end() ? 0.0 : it->second);
    }
    const auto b = locate_boundary(frames, scores, fps, range);
    r.structured = {{"t_start", b.range.start},
                    {"t_end", b.range.end},
                    {"low_confidence", b.low_confidence},
                    {"threshold", b.threshold},
                    {"scores", scores}};
    r.payload = "Event " + quoted(q_event) + " located at " + span(b.range) +
                (b.low_confidence ? " (low confidence: frame scores are flat across the range)"
                                  : " (threshold " + fixed(b.threshold, 3) + ")");
    return r;
}

ToolResult frame_analysis(const ToolContext& ctx, const std::vector<TimeRange>& ranges, const std::string& q_specific) {
    if (ranges.empty()) throw InvalidArgument("frame_analysis needs at least one range");
    std::vector<TimeRange> clamped;
    for (const auto& rg : ranges) clamped.push_back(within_video(rg, ctx.kb));
    std::vector<double> frames;
    for (const auto& u : interval_union(clamped)) {
        for (double t : sample_frames(u, ctx.kb.manifest.fps)) {
            if (frames.empty() || time_key(frames.back()) != time_key(t)) frames.push_back(t);
        }
    }
    const auto chosen = downsample_frames(frames, ctx.config.max_frames);
    ToolResult r;
    r.tool = "frame_analysis";
    auto res = ctx.backends.frame_vlm->analyze(ctx.kb.video_ref(), chosen, q_specific);
    r.usage.push_back(res.usage);
    r.structured = {{"frames", chosen.size()}, {"candidates", frames.size()}};
    r.payload = res.value.empty() ? "The frame analysis returned no text." : res.value;
    return r;
}

}  // namespace avi
