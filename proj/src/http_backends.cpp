#include "avi/http_backends.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>

#include "avi/wire.hpp"

namespace avi {

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host:port
    std::string prefix;  // path prefix without trailing slash
};

SplitUrl split_url(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw InvalidArgument("endpoint URL needs a scheme: " + url);
    if (url.compare(0, scheme, "http") != 0) throw InvalidArgument("only http endpoints are supported: " + url);
    const auto slash = url.find('/', scheme + 3);
    SplitUrl out;
    out.origin = url.substr(0, slash);
    out.prefix = slash == std::string::npos ? "" : url.substr(slash);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    return out;
}

std::int64_t elapsed_micros(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

HttpResult post_json(const std::string& base_url, const std::string& path, const std::string& body, double timeout_s,
                     const std::string& bearer, const RetryPolicy& policy) {
    const auto url = split_url(base_url);
    const auto started = std::chrono::steady_clock::now();
    httplib::Client client(url.origin);
    const auto secs = static_cast<time_t>(timeout_s);
    const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!bearer.empty()) headers.emplace("Authorization", "Bearer " + bearer);

    HttpResult result;
    std::string last_error;
    double backoff = policy.backoff_initial_s;
    for (int attempt = 0; attempt <= policy.max_retries; ++attempt) {
        if (attempt > 0) {
            if (policy.sleep) {
                policy.sleep(backoff);
            } else {
                std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
            }
            backoff *= 2.0;
        }
        result.attempts = attempt + 1;
        auto res = client.Post(url.prefix + path, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
            continue;
        }
        result.status = res->status;
        result.body = res->body;
        result.micros = elapsed_micros(started);
        if (res->status < 200 || res->status >= 300) {
            throw BackendError(path + " failed with HTTP " + std::to_string(res->status) + ": " + res->body);
        }
        return result;
    }
    throw BackendError(path + " failed after " + std::to_string(result.attempts) + " attempts: " + last_error);
}

// ---------------------------------------------------------------- chat

HttpChat::HttpChat(EndpointConfig endpoint, RetryPolicy policy)
    : endpoint_(std::move(endpoint)), policy_(std::move(policy)) {}

HttpChat::HttpChat(EndpointConfig endpoint)
    : HttpChat(endpoint, RetryPolicy{endpoint.max_retries, endpoint.backoff_initial_s, {}}) {}

Metered<ChatReply> HttpChat::chat(const ChatRequest& request) {
    const auto body = wire::chat_request(request, endpoint_.chat_model).dump();
    const auto res =
        post_json(endpoint_.chat_url, "/v1/chat/completions", body, endpoint_.chat_timeout_s, endpoint_.api_key, policy_);
    Metered<ChatReply> out;
    out.value = wire::parse_chat_reply(res.body);
    out.usage = {"chat", {out.value.prompt_tokens, out.value.completion_tokens, res.micros}, res.attempts};
    return out;
}

// ---------------------------------------------------------------- perception

HttpPerception::HttpPerception(EndpointConfig endpoint, RetryPolicy policy, int embed_dim)
    : endpoint_(std::move(endpoint)), policy_(std::move(policy)), dim_(embed_dim) {}

HttpPerception::HttpPerception(EndpointConfig endpoint, int embed_dim)
    : HttpPerception(endpoint, RetryPolicy{endpoint.max_retries, endpoint.backoff_initial_s, {}}, embed_dim) {}

HttpResult HttpPerception::call(const std::string& path, const std::string& body, const char*) {
    return post_json(endpoint_.perception_url, path, body, endpoint_.perception_timeout_s, endpoint_.api_key, policy_);
}

Metered<std::string> HttpPerception::caption(const std::string& video_ref, const TimeRange& range, double fps,
                                             int max_edge) {
    const auto res = call("/caption", wire::caption_request({video_ref, range, fps, max_edge}).dump(), "caption");
    return {wire::parse_caption_response(res.body), {"caption", {0, 0, res.micros}, res.attempts}};
}

Metered<std::vector<Embedding>> HttpPerception::embed(const std::vector<std::string>& texts) {
    const auto res = call("/embed", wire::embed_request(texts).dump(), "embed");
    auto vectors = wire::parse_embed_response(res.body);
    if (!vectors.empty()) {
        const auto d = static_cast<int>(vectors.front().size());
        for (const auto& v : vectors) {
            if (v.size() != d) throw ProtocolError("embedding rows of different dimension", res.body);
        }
        if (dim_ == 0) {
            dim_ = d;
        } else if (dim_ != d) {
            throw IngestError("embedder dimension changed from " + std::to_string(dim_) + " to " + std::to_string(d));
        }
    }
    return {std::move(vectors), {"embed", {0, 0, res.micros}, res.attempts}};
}

Metered<std::vector<Detection>> HttpPerception::detect(const std::string& video_ref,
                                                       const std::vector<double>& frame_times,
                                                       const std::string& query) {
    const auto res = call("/detect", wire::frames_request({video_ref, frame_times, query}, true).dump(), "detect");
    return {wire::parse_detect_response(res.body), {"detect", {0, 0, res.micros}, res.attempts}};
}

Metered<std::vector<OcrItem>> HttpPerception::ocr(const std::string& video_ref, const std::vector<double>& frame_times) {
    const auto res = call("/ocr", wire::frames_request({video_ref, frame_times, ""}, false).dump(), "ocr");
    return {wire::parse_ocr_response(res.body), {"ocr", {0, 0, res.micros}, res.attempts}};
}

Metered<std::vector<FrameScore>> HttpPerception::frame_sim(const std::string& video_ref,
                                                           const std::vector<double>& frame_times,
                                                           const std::string& query) {
    const auto res =
        call("/frame_sim", wire::frames_request({video_ref, frame_times, query}, true).dump(), "frame_sim");
    return {wire::parse_frame_sim_response(res.body), {"frame_sim", {0, 0, res.micros}, res.attempts}};
}

Metered<std::string> HttpPerception::analyze(const std::string& video_ref, const std::vector<double>& frame_times,
                                             const std::string& query) {
    const auto res = call("/analyze", wire::frames_request({video_ref, frame_times, query}, true).dump(), "analyze");
    return {wire::parse_analyze_response(res.body), {"analyze", {0, 0, res.micros}, res.attempts}};
}

BackendSuite make_http_suite(const EngineConfig& config) {
    if (config.endpoints.chat_url.empty() || config.endpoints.perception_url.empty()) {
        throw InvalidArgument("endpoints.chat_url and endpoints.perception_url must be configured");
    }
    BackendSuite s;
    s.chat = std::make_shared<HttpChat>(config.endpoints);
    auto perception = std::make_shared<HttpPerception>(config.endpoints, config.embed_dim);
    s.captioner = perception;
    s.embedder = perception;
    s.detector = perception;
    s.ocr = perception;
    s.frame_sim = perception;
    s.frame_vlm = perception;
    return s;
}

}  // namespace avi
