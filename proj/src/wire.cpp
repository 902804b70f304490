#include "avi/wire.hpp"

namespace avi::wire {

using nlohmann::json;

namespace {

json parse_body(const std::string& body) {
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("response is not JSON: ") + e.what(), body);
    }
}

template <typename F>
auto guarded(const std::string& body, F&& f) -> decltype(f(json{})) {
    const json j = parse_body(body);
    try {
        return f(j);
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("response does not match the contract: ") + e.what(), body);
    }
}

json times_json(const std::vector<double>& times) {
    json arr = json::array();
    for (double t : times) arr.push_back(round_time(t));
    return arr;
}

}  // namespace

json tool_call(const ToolCall& call) {
    const std::string args =
        call.malformed_arguments.empty() ? call.arguments.dump() : call.malformed_arguments;
    return {{"id", call.id},
            {"type", "function"},
            {"function", {{"name", call.name}, {"arguments", args}}}};
}

ToolCall parse_tool_call(const json& j) {
    ToolCall call;
    call.id = j.value("id", "");
    const json& fn = j.at("function");
    call.name = fn.at("name").get<std::string>();
    const json& args = fn.contains("arguments") ? fn.at("arguments") : json::object();
    if (args.is_string()) {
        const auto raw = args.get<std::string>();
        try {
            json parsed = raw.empty() ? json::object() : json::parse(raw);
            if (parsed.is_object()) {
                call.arguments = std::move(parsed);
            } else {
                call.malformed_arguments = raw;
            }
        } catch (const json::exception&) {
            call.malformed_arguments = raw.empty() ? std::string("<empty>") : raw;
        }
    } else if (args.is_object()) {
        call.arguments = args;
    } else {
        call.malformed_arguments = args.dump();
    }
    return call;
}

json chat_request(const ChatRequest& request, const std::string& model) {
    json messages = json::array();
    for (const auto& m : request.messages) {
        json jm = {{"role", m.role}, {"content", m.content}};
        if (!m.tool_calls.empty()) {
            json calls = json::array();
            for (const auto& c : m.tool_calls) calls.push_back(tool_call(c));
            jm["tool_calls"] = std::move(calls);
        }
        if (!m.tool_call_id.empty()) jm["tool_call_id"] = m.tool_call_id;
        messages.push_back(std::move(jm));
    }
    json body = {{"model", model},
                 {"messages", std::move(messages)},
                 {"temperature", request.temperature},
                 {"user", "avi:" + request.purpose}};
    if (!request.tools.empty()) body["tools"] = request.tools;
    if (request.max_tokens > 0) body["max_tokens"] = request.max_tokens;
    return body;
}

ChatRequest parse_chat_request(const json& body) {
    ChatRequest r;
    const std::string user = body.value("user", "");
    r.purpose = user.rfind("avi:", 0) == 0 ? user.substr(4) : "agent";
    r.temperature = body.value("temperature", 0.0);
    r.max_tokens = body.value("max_tokens", 0);
    if (body.contains("tools")) r.tools = body.at("tools");
    for (const auto& jm : body.at("messages")) {
        ChatMessage m;
        m.role = jm.at("role").get<std::string>();
        if (jm.contains("content") && jm.at("content").is_string()) m.content = jm.at("content");
        if (jm.contains("tool_calls")) {
            for (const auto& c : jm.at("tool_calls")) m.tool_calls.push_back(parse_tool_call(c));
        }
        m.tool_call_id = jm.value("tool_call_id", "");
        r.messages.push_back(std::move(m));
    }
    return r;
}

json chat_reply(const ChatReply& reply) {
    json message = {{"role", "assistant"}, {"content", reply.content}};
    if (!reply.tool_calls.empty()) {
        json calls = json::array();
        for (const auto& c : reply.tool_calls) calls.push_back(tool_call(c));
        message["tool_calls"] = std::move(calls);
    }
    return {{"object", "chat.completion"},
            {"choices", json::array({{{"index", 0}, {"message", message}, {"finish_reason", "stop"}}})},
            {"usage",
             {{"prompt_tokens", reply.prompt_tokens},
              {"completion_tokens", reply.completion_tokens},
              {"total_tokens", reply.prompt_tokens + reply.completion_tokens}}}};
}

ChatReply parse_chat_reply(const std::string& body) {
    return guarded(body, [&](const json& j) {
        const json& choices = j.at("choices");
        if (!choices.is_array() || choices.empty()) throw ProtocolError("no choices in reply", body);
        const json& message = choices.at(0).at("message");
        ChatReply reply;
        if (message.contains("content") && message.at("content").is_string()) {
            reply.content = message.at("content").get<std::string>();
        }
        if (message.contains("tool_calls") && message.at("tool_calls").is_array()) {
            for (const auto& c : message.at("tool_calls")) reply.tool_calls.push_back(parse_tool_call(c));
        }
        if (j.contains("usage") && j.at("usage").is_object()) {
            reply.prompt_tokens = j.at("usage").value("prompt_tokens", std::int64_t{0});
            reply.completion_tokens = j.at("usage").value("completion_tokens", std::int64_t{0});
        }
        if (reply.prompt_tokens < 0 || reply.completion_tokens < 0) {
            throw ProtocolError("negative usage counts", body);
        }
        return reply;
    });
}

json caption_request(const CaptionRequest& r) {
    return {{"video_ref", r.video_ref},
            {"t_start", round_time(r.range.start)},
            {"t_end", round_time(r.range.end)},
            {"fps", r.fps},
            {"max_edge", r.max_edge}};
}

CaptionRequest parse_caption_request(const json& j) {
    CaptionRequest r;
    r.video_ref = j.at("video_ref").get<std::string>();
    r.range = make_range(j.at("t_start").get<double>(), j.at("t_end").get<double>());
    r.fps = j.value("fps", 2.0);
    r.max_edge = j.value("max_edge", 720);
    return r;
}

json frames_request(const FramesRequest& r, bool with_query) {
    json j = {{"video_ref", r.video_ref}, {"frame_times", times_json(r.frame_times)}};
    if (with_query) j["query"] = r.query;
    return j;
}

FramesRequest parse_frames_request(const json& j, bool with_query) {
    FramesRequest r;
    r.video_ref = j.at("video_ref").get<std::string>();
    r.frame_times = j.at("frame_times").get<std::vector<double>>();
    if (with_query) r.query = j.at("query").get<std::string>();
    return r;
}

json embed_request(const std::vector<std::string>& texts) { return {{"texts", texts}}; }

std::vector<std::string> parse_embed_request(const json& j) {
    return j.at("texts").get<std::vector<std::string>>();
}

json caption_response(const std::string& raw) { return {{"raw", raw}}; }

json embed_response(const std::vector<Embedding>& vectors) {
    json arr = json::array();
    for (const auto& v : vectors) arr.push_back(std::vector<float>(v.data(), v.data() + v.size()));
    return {{"vectors", std::move(arr)}};
}

json detect_response(const std::vector<Detection>& detections) {
    json arr = json::array();
    for (const auto& d : detections) {
        arr.push_back({{"frame_time", round_time(d.frame_time)},
                       {"box", d.box},
                       {"label", d.label},
                       {"confidence", d.confidence}});
    }
    return {{"detections", std::move(arr)}};
}

json ocr_response(const std::vector<OcrItem>& items) {
    json arr = json::array();
    for (const auto& i : items) arr.push_back({{"frame_time", round_time(i.frame_time)}, {"text", i.text}});
    return {{"items", std::move(arr)}};
}

json frame_sim_response(const std::vector<FrameScore>& scores) {
    json arr = json::array();
    for (const auto& s : scores) arr.push_back({{"frame_time", round_time(s.frame_time)}, {"score", s.score}});
    return {{"scores", std::move(arr)}};
}

json analyze_response(const std::string& text) { return {{"text", text}}; }

std::string parse_caption_response(const std::string& body) {
    return guarded(body, [](const json& j) { return j.at("raw").get<std::string>(); });
}

std::vector<Embedding> parse_embed_response(const std::string& body) {
    return guarded(body, [](const json& j) {
        std::vector<Embedding> out;
        for (const auto& row : j.at("vectors")) {
            const auto values = row.get<std::vector<float>>();
            out.push_back(Eigen::Map<const Embedding>(values.data(), static_cast<Eigen::Index>(values.size())));
        }
        return out;
    });
}

std::vector<Detection> parse_detect_response(const std::string& body) {
    return guarded(body, [](const json& j) {
        std::vector<Detection> out;
        for (const auto& d : j.at("detections")) {
            Detection det;
            det.frame_time = d.at("frame_time").get<double>();
            det.box = d.at("box").get<std::array<double, 4>>();
            det.label = d.at("label").get<std::string>();
            det.confidence = d.at("confidence").get<double>();
            out.push_back(std::move(det));
        }
        return out;
    });
}

std::vector<OcrItem> parse_ocr_response(const std::string& body) {
    return guarded(body, [](const json& j) {
        std::vector<OcrItem> out;
        for (const auto& i : j.at("items")) {
            out.push_back({i.at("frame_time").get<double>(), i.at("text").get<std::string>()});
        }
        return out;
    });
}

std::vector<FrameScore> parse_frame_sim_response(const std::string& body) {
    return guarded(body, [](const json& j) {
        std::vector<FrameScore> out;
        for (const auto& s : j.at("scores")) {
            out.push_back({s.at("frame_time").get<double>(), s.at("score").get<double>()});
        }
        return out;
    });
}

std::string parse_analyze_response(const std::string& body) {
    return guarded(body, [](const json& j) { return j.at("text").get<std::string>(); });
}

std::string canonical(const json& j) {
    // nlohmann::json keeps object keys sorted, so dump() is already canonical.
    return j.dump();
}

}  // namespace avi::wire
