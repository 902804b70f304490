#pragma once

// JSON shapes of the backend wire contract. Both directions are provided so
// the client and any conformant server (including the test echo server)
// share one definition.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avi/backends.hpp"

namespace avi::wire {

// chat-completions
nlohmann::json chat_request(const ChatRequest& request, const std::string& model);
ChatRequest parse_chat_request(const nlohmann::json& body);
nlohmann::json chat_reply(const ChatReply& reply);
/// Throws ProtocolError (raw body preserved) on anything but a well-formed completion.
ChatReply parse_chat_reply(const std::string& body);
nlohmann::json tool_call(const ToolCall& call);
ToolCall parse_tool_call(const nlohmann::json& j);

// perception endpoints
struct CaptionRequest {
    std::string video_ref;
    TimeRange range;
    double fps = 2.0;
    int max_edge = 720;
};
struct FramesRequest {
    std::string video_ref;
    std::vector<double> frame_times;
    std::string query;  // empty for /ocr
};

nlohmann::json caption_request(const CaptionRequest& r);
CaptionRequest parse_caption_request(const nlohmann::json& j);
nlohmann::json frames_request(const FramesRequest& r, bool with_query);
FramesRequest parse_frames_request(const nlohmann::json& j, bool with_query);
nlohmann::json embed_request(const std::vector<std::string>& texts);
std::vector<std::string> parse_embed_request(const nlohmann::json& j);

nlohmann::json caption_response(const std::string& raw);
nlohmann::json embed_response(const std::vector<Embedding>& vectors);
nlohmann::json detect_response(const std::vector<Detection>& detections);
nlohmann::json ocr_response(const std::vector<OcrItem>& items);
nlohmann::json frame_sim_response(const std::vector<FrameScore>& scores);
nlohmann::json analyze_response(const std::string& text);

std::string parse_caption_response(const std::string& body);
std::vector<Embedding> parse_embed_response(const std::string& body);
std::vector<Detection> parse_detect_response(const std::string& body);
std::vector<OcrItem> parse_ocr_response(const std::string& body);
std::vector<FrameScore> parse_frame_sim_response(const std::string& body);
std::string parse_analyze_response(const std::string& body);

/// Canonical form for byte comparisons: sorted keys, floats as written by
/// nlohmann's shortest round-trip formatting.
std::string canonical(const nlohmann::json& j);

}  // namespace avi::wire
