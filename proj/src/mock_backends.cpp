#include "avi/mock_backends.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>

#include "avi/wire.hpp"

namespace avi {

using nlohmann::json;

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}


// ---------------------------------------------------------------- embedder

HashEmbedder::HashEmbedder(int dim) : dim_(dim) {
    if (dim < 1) throw InvalidArgument("embedding dimension must be positive");
}

Embedding HashEmbedder::embed_one(const std::string& text) const {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim_);
    for (const auto& tok : tokenize(text)) acc[static_cast<Eigen::Index>(fnv1a64(tok) % dim_)] += 1.0;
    const double norm = acc.norm();
    if (norm == 0.0) {
        Embedding e1 = Embedding::Zero(dim_);
        e1[0] = 1.0f;
        return e1;
    }
    return (acc / norm).cast<float>();
}

Metered<std::vector<Embedding>> HashEmbedder::embed(const std::vector<std::string>& texts) {
    Metered<std::vector<Embedding>> out;
    std::int64_t tokens = 0;
    for (const auto& t : texts) {
        out.value.push_back(embed_one(t));
        tokens += static_cast<std::int64_t>(tokenize(t).size());
    }
    out.usage = {"embed", {tokens, 0, 200 + 10 * static_cast<std::int64_t>(texts.size())}, 1};
    return out;
}

Metered<std::vector<Embedding>> embed_checked(Embedder& embedder, const std::vector<std::string>& texts,
                                              int expected_dim) {
    auto result = embedder.embed(texts);
    if (result.value.size() != texts.size()) {
        throw BackendError("embedder returned " + std::to_string(result.value.size()) + " vectors for " +
                           std::to_string(texts.size()) + " texts");
    }
    for (const auto& v : result.value) {
        if (expected_dim > 0 && v.size() != expected_dim) {
            throw IngestError("embedding dimension " + std::to_string(v.size()) + " does not match expected " +
                              std::to_string(expected_dim));
        }
        if (!v.allFinite()) throw BackendError("embedder returned non-finite components");
    }
    return result;
}

// ---------------------------------------------------------------- scripted chat

namespace {

ChatReply reply_from_json(const json& j) {
    if (j.is_string()) return ChatReply{j.get<std::string>(), {}, 0, 0};
    ChatReply r;
    r.content = j.value("content", "");
    if (j.contains("tool_calls")) {
        for (const auto& c : j.at("tool_calls")) {
            ToolCall call;
            call.name = c.at("name").get<std::string>();
            const json args = c.contains("arguments") ? c.at("arguments") : json::object();
            if (args.is_object()) {
                call.arguments = args;
            } else if (args.is_string()) {
                call.malformed_arguments = args.get<std::string>();
            } else {
                call.malformed_arguments = args.dump();
            }
            r.tool_calls.push_back(std::move(call));
        }
    }
    return r;
}

std::int64_t approx_tokens(std::size_t bytes) { return static_cast<std::int64_t>(bytes / 4 + 1); }

}  // namespace

MockScript MockScript::from_json(const json& j) {
    MockScript s;
    if (j.is_array()) {
        for (const auto& r : j) s.replies["agent"].push_back(reply_from_json(r));
        return s;
    }
    if (!j.is_object()) throw InvalidArgument("mock script must be an array or object");
    for (const auto& [key, value] : j.items()) {
        if (key == "exhaustion") {
            const auto policy = value.get<std::string>();
            if (policy == "repeat_last") {
                s.exhaustion = Exhaustion::repeat_last;
            } else if (policy == "fail") {
                s.exhaustion = Exhaustion::fail;
            } else {
                throw InvalidArgument("unknown exhaustion policy " + policy);
            }
            continue;
        }
        if (!value.is_array()) continue;
        for (const auto& r : value) s.replies[key].push_back(reply_from_json(r));
    }
    return s;
}

MockScript MockScript::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open mock script " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InvalidArgument("mock script " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

std::string expand_placeholders(const std::string& text, const ChatRequest& request) {
    static const std::string open = "{{match:";
    if (text.find(open) == std::string::npos) return text;
    const ChatMessage* last_tool = nullptr;
    for (const auto& m : request.messages) {
        if (m.role == "tool") last_tool = &m;
    }
    std::string out;
    std::size_t pos = 0;
    while (true) {
        const auto start = text.find(open, pos);
        if (start == std::string::npos) break;
        const auto stop = text.find("}}", start + open.size());
        if (stop == std::string::npos) break;
        out.append(text, pos, start - pos);
        const std::string pattern = text.substr(start + open.size(), stop - start - open.size());
        if (last_tool != nullptr) {
            std::smatch m;
            if (std::regex_search(last_tool->content, m, std::regex(pattern))) {
                out += m.size() > 1 ? m[1].str() : m[0].str();
            }
        }
        pos = stop + 2;
    }
    out.append(text, pos, std::string::npos);
    return out;
}

namespace {

void expand_strings(json& j, const ChatRequest& request) {
    if (j.is_string()) {
        j = expand_placeholders(j.get<std::string>(), request);
    } else if (j.is_structured()) {
        for (auto& v : j) expand_strings(v, request);
    }
}

}  // namespace

ScriptedChat::ScriptedChat(MockScript script) : script_(std::move(script)) {}

Metered<ChatReply> ScriptedChat::chat(const ChatRequest& request) {
    std::size_t index = 0;
    {
        std::lock_guard lock(mu_);
        index = cursor_[request.purpose]++;
    }
    const auto it = script_.replies.find(request.purpose);
    if (it == script_.replies.end() || it->second.empty()) {
        throw BackendError("mock script has no replies for purpose '" + request.purpose + "'");
    }
    const auto& list = it->second;
    if (index >= list.size()) {
        if (script_.exhaustion == Exhaustion::fail) {
            throw BackendError("mock script exhausted for purpose '" + request.purpose + "'");
        }
        index = list.size() - 1;
    }
    ChatReply reply = list[index];
    reply.content = expand_placeholders(reply.content, request);
    for (std::size_t i = 0; i < reply.tool_calls.size(); ++i) {
        auto& call = reply.tool_calls[i];
        call.id = "call_" + request.purpose + "_" + std::to_string(index) + "_" + std::to_string(i);
        if (call.malformed_arguments.empty()) expand_strings(call.arguments, request);
    }
    std::size_t prompt_bytes = 0;
    for (const auto& m : request.messages) prompt_bytes += m.content.size();
    std::size_t reply_bytes = reply.content.size();
    for (const auto& c : reply.tool_calls) reply_bytes += c.name.size() + wire::tool_call(c).dump().size();
    reply.prompt_tokens = approx_tokens(prompt_bytes);
    reply.completion_tokens = approx_tokens(reply_bytes);
    Metered<ChatReply> out;
    out.usage = {"chat", {reply.prompt_tokens, reply.completion_tokens, 1000 + 10 * reply.completion_tokens}, 1};
    out.value = std::move(reply);
    return out;
}

std::size_t ScriptedChat::calls(const std::string& purpose) const {
    std::lock_guard lock(mu_);
    const auto it = cursor_.find(purpose);
    return it == cursor_.end() ? 0 : it->second;
}

std::size_t ScriptedChat::total_calls() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [_, c] : cursor_) n += c;
    return n;
}

// ---------------------------------------------------------------- fixtures

namespace {

template <typename F>
void for_each_jsonl(const std::filesystem::path& path, F&& f) {
    std::ifstream in(path);
    if (!in) return;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            f(json::parse(line));
        } catch (const json::exception& e) {
            throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

std::optional<std::string> optional_string(const json& j, const char* key) {
    if (j.contains(key) && j.at(key).is_string()) return j.at(key).get<std::string>();
    return std::nullopt;
}

}  // namespace

FixtureStore FixtureStore::load(const std::filesystem::path& dir) {
    FixtureStore s;
    std::ifstream meta(dir / "video.json");
    if (!meta) throw InvalidArgument("fixture directory lacks video.json: " + dir.string());
    json vj;
    try {
        meta >> vj;
    } catch (const json::exception& e) {
        throw InvalidArgument("video.json: " + std::string(e.what()));
    }
    s.video_id = vj.at("video_id").get<std::string>();
    s.duration = vj.at("duration").get<double>();

    for_each_jsonl(dir / "captions.jsonl", [&](const json& j) {
        const auto key = time_key(j.at("t_start").get<double>());
        s.captions[key] = j.contains("document") ? j.at("document").dump() : j.value("raw", "");
        if (j.contains("fail")) s.caption_failures[key] = j.at("fail").get<int>();
    });
    for_each_jsonl(dir / "detections.jsonl", [&](const json& j) {
        DetectionEntry e;
        e.detection.frame_time = j.at("frame_time").get<double>();
        e.detection.box = j.at("box").get<std::array<double, 4>>();
        e.detection.label = j.at("label").get<std::string>();
        e.detection.confidence = j.at("confidence").get<double>();
        e.query = optional_string(j, "query");
        s.detections[time_key(e.detection.frame_time)].push_back(std::move(e));
    });
    for_each_jsonl(dir / "ocr.jsonl", [&](const json& j) {
        const auto key = time_key(j.at("frame_time").get<double>());
        if (j.value("fail", false)) {
            s.ocr_failures[key] = true;
        } else {
            s.ocr[key].push_back(j.at("text").get<std::string>());
        }
    });
    for_each_jsonl(dir / "framesim.jsonl", [&](const json& j) {
        s.frame_scores[time_key(j.at("frame_time").get<double>())].push_back(
            {j.at("score").get<double>(), optional_string(j, "query")});
    });
    for_each_jsonl(dir / "analyze.jsonl", [&](const json& j) {
        s.analyses.push_back({optional_string(j, "query"), j.at("text").get<std::string>()});
    });
    return s;
}

// ---------------------------------------------------------------- perception

MockPerception::MockPerception(FixtureStore store) : store_(std::move(store)) {}

void MockPerception::check_ref(const std::string& video_ref) const {
    if (video_ref != store_.video_id) throw InvalidArgument("unknown video_ref '" + video_ref + "'");
}

Metered<std::string> MockPerception::caption(const std::string& video_ref, const TimeRange& range, double fps,
                                             int max_edge) {
    check_ref(video_ref);
    const auto key = time_key(range.start);
    {
        std::lock_guard lock(mu_);
        caption_log_.emplace_back(range, fps);
        last_max_edge_ = max_edge;
        const int attempt = caption_attempts_[key]++;
        const auto fail = store_.caption_failures.find(key);
        if (fail != store_.caption_failures.end() && attempt < fail->second) {
            throw BackendError("captioner transient failure at " + format_seconds(range.start));
        }
    }
    Metered<std::string> out;
    const auto it = store_.captions.find(key);
    out.value = it == store_.captions.end() ? std::string() : it->second;
    const auto frames = static_cast<std::int64_t>(sample_frames(range, fps).size());
    out.usage = {"caption", {frames * 256, approx_tokens(out.value.size()), 5000 + 100 * frames}, 1};
    return out;
}

namespace {

bool label_matches(const std::string& label, const std::string& query) {
    const auto q = tokenize(query);
    const auto l = tokenize(label);
    if (l.empty()) return false;
    // every label token must appear in the query (plural 's' tolerated)
    return std::all_of(l.begin(), l.end(), [&](const std::string& tok) {
        return std::any_of(q.begin(), q.end(), [&](const std::string& qt) {
            return qt == tok || qt == tok + "s" || qt == tok + "es";
        });
    });
}

}  // namespace

Metered<std::vector<Detection>> MockPerception::detect(const std::string& video_ref,
                                                       const std::vector<double>& frame_times,
                                                       const std::string& query) {
    check_ref(video_ref);
    Metered<std::vector<Detection>> out;
    for (double t : frame_times) {
        const auto it = store_.detections.find(time_key(t));
        if (it == store_.detections.end()) continue;
        for (const auto& e : it->second) {
            const bool hit = e.query ? *e.query == query : label_matches(e.detection.label, query);
            if (hit) out.value.push_back(e.detection);
        }
    }
    const auto n = static_cast<std::int64_t>(frame_times.size());
    out.usage = {"detect", {0, 0, 2000 + 100 * n}, 1};
    return out;
}

Metered<std::vector<OcrItem>> MockPerception::ocr(const std::string& video_ref,
                                                  const std::vector<double>& frame_times) {
    check_ref(video_ref);
    Metered<std::vector<OcrItem>> out;
    for (double t : frame_times) {
        const auto key = time_key(t);
        if (store_.ocr_failures.count(key)) throw BackendError("ocr failure at frame " + format_seconds(t));
        const auto it = store_.ocr.find(key);
        if (it == store_.ocr.end()) continue;
        for (const auto& text : it->second) out.value.push_back({round_time(t), text});
    }
    const auto n = static_cast<std::int64_t>(frame_times.size());
    out.usage = {"ocr", {0, 0, 1500 + 100 * n}, 1};
    return out;
}

Metered<std::vector<FrameScore>> MockPerception::frame_sim(const std::string& video_ref,
                                                           const std::vector<double>& frame_times,
                                                           const std::string& query) {
    check_ref(video_ref);
    Metered<std::vector<FrameScore>> out;
    for (double t : frame_times) {
        const auto it = store_.frame_scores.find(time_key(t));
        if (it == store_.frame_scores.end()) continue;
        const FixtureStore::ScoreEntry* chosen = nullptr;
        for (const auto& e : it->second) {
            if (e.query && *e.query == query) {
                chosen = &e;
                break;
            }
            if (!e.query && chosen == nullptr) chosen = &e;
        }
        if (chosen != nullptr) out.value.push_back({round_time(t), chosen->score});
    }
    const auto n = static_cast<std::int64_t>(frame_times.size());
    out.usage = {"frame_sim", {approx_tokens(query.size()), 0, 1000 + 50 * n}, 1};
    return out;
}

Metered<std::string> MockPerception::analyze(const std::string& video_ref, const std::vector<double>& frame_times,
                                             const std::string& query) {
    check_ref(video_ref);
    Metered<std::string> out;
    const FixtureStore::AnalyzeEntry* fallback = nullptr;
    for (const auto& e : store_.analyses) {
        if (e.query && *e.query == query) {
            out.value = e.text;
            fallback = nullptr;
            break;
        }
        if (!e.query && fallback == nullptr) fallback = &e;
    }
    if (out.value.empty()) out.value = fallback != nullptr ? fallback->text : "No analysis available.";
    const auto n = static_cast<std::int64_t>(frame_times.size());
    out.usage = {"analyze", {n * 256 + approx_tokens(query.size()), approx_tokens(out.value.size()), 20000 + 200 * n}, 1};
    return out;
}

std::vector<std::pair<TimeRange, double>> MockPerception::caption_log() const {
    std::lock_guard lock(mu_);
    return caption_log_;
}

int MockPerception::last_caption_max_edge() const {
    std::lock_guard lock(mu_);
    return last_max_edge_;
}

BackendSuite make_mock_suite(std::shared_ptr<MockPerception> perception, MockScript script, int embed_dim) {
    BackendSuite s;
    s.chat = std::make_shared<ScriptedChat>(std::move(script));
    s.embedder = std::make_shared<HashEmbedder>(embed_dim);
    s.captioner = perception;
    s.detector = perception;
    s.ocr = perception;
    s.frame_sim = perception;
    s.frame_vlm = perception;
    return s;
}

BackendSuite make_mock_suite(const std::filesystem::path& fixture_dir, MockScript script, int embed_dim) {
    return make_mock_suite(std::make_shared<MockPerception>(FixtureStore::load(fixture_dir)), std::move(script),
                           embed_dim);
}

}  // namespace avi
