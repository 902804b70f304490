#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "avi/common.hpp"

namespace avi {

using Embedding = Eigen::VectorXf;

struct ToolCall {
    std::string id;
    std::string name;
    nlohmann::json arguments = nlohmann::json::object();
    // Set when the backend sent an argument string that was not a JSON object.
    std::string malformed_arguments;
    bool arguments_ok() const { return malformed_arguments.empty() && arguments.is_object(); }
    bool operator==(const ToolCall&) const = default;
};

struct ChatMessage {
    std::string role;  // system | user | assistant | tool
    std::string content;
    std::vector<ToolCall> tool_calls;  // assistant only
    std::string tool_call_id;          // tool only
    bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
    // Routing tag: agent | forced | summarize | extract. Mocks key their
    // scripts on it; on the wire it travels in the "user" field.
    std::string purpose = "agent";
    std::vector<ChatMessage> messages;
    nlohmann::json tools = nlohmann::json::array();
    double temperature = 0.0;
    int max_tokens = 0;  // 0: server default
};

struct ChatReply {
    std::string content;
    std::vector<ToolCall> tool_calls;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    bool operator==(const ChatReply&) const = default;
};

struct Detection {
    std::array<double, 4> box{};  // x1, y1, x2, y2 in pixels
    std::string label;
    double confidence = 0.0;
    double frame_time = 0.0;
    bool operator==(const Detection&) const = default;
};

struct OcrItem {
    double frame_time = 0.0;
    std::string text;
    bool operator==(const OcrItem&) const = default;
};

struct FrameScore {
    double frame_time = 0.0;
    double score = 0.0;
    bool operator==(const FrameScore&) const = default;
};

template <typename T>
struct Metered {
    T value;
    CallUsage usage;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual Metered<ChatReply> chat(const ChatRequest& request) = 0;
};

class Captioner {
public:
    virtual ~Captioner() = default;
    /// Raw captioner reply for the clip (expected to hold a caption document).
    virtual Metered<std::string> caption(const std::string& video_ref, const TimeRange& range,
                                         double fps, int max_edge) = 0;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual Metered<std::vector<Embedding>> embed(const std::vector<std::string>& texts) = 0;
    /// Output dimension, or 0 while unknown (network embedders before the first call).
    virtual int dimension() const = 0;
};

class Detector {
public:
    virtual ~Detector() = default;
    virtual Metered<std::vector<Detection>> detect(const std::string& video_ref,
                                                   const std::vector<double>& frame_times,
                                                   const std::string& query) = 0;
};

class OcrBackend {
public:
    virtual ~OcrBackend() = default;
    virtual Metered<std::vector<OcrItem>> ocr(const std::string& video_ref,
                                              const std::vector<double>& frame_times) = 0;
};

class FrameSimilarity {
public:
    virtual ~FrameSimilarity() = default;
    virtual Metered<std::vector<FrameScore>> frame_sim(const std::string& video_ref,
                                                       const std::vector<double>& frame_times,
                                                       const std::string& query) = 0;
};

class FrameAnalyzer {
public:
    virtual ~FrameAnalyzer() = default;
    virtual Metered<std::string> analyze(const std::string& video_ref,
                                         const std::vector<double>& frame_times,
                                         const std::string& query) = 0;
};

/// The model roles the engine talks to. Handles are shareable across
/// episodes; an episode may swap in its own chat handle.
struct BackendSuite {
    std::shared_ptr<ChatBackend> chat;
    std::shared_ptr<Captioner> captioner;
    std::shared_ptr<Embedder> embedder;
    std::shared_ptr<Detector> detector;
    std::shared_ptr<OcrBackend> ocr;
    std::shared_ptr<FrameSimilarity> frame_sim;
    std::shared_ptr<FrameAnalyzer> frame_vlm;
};

/// Embeds and checks every vector against `expected_dim` (skipped when 0).
/// A mismatch is a fatal configuration error.
Metered<std::vector<Embedding>> embed_checked(Embedder& embedder,
                                              const std::vector<std::string>& texts,
                                              int expected_dim);

}  // namespace avi
