#pragma once

#include <functional>
#include <string>

#include "avi/backends.hpp"
#include "avi/config.hpp"

namespace avi {

struct RetryPolicy {
    int max_retries = 2;
    double backoff_initial_s = 0.5;  // then doubled: 0.5 s, 1 s
    std::function<void(double)> sleep;  // defaults to std::this_thread::sleep_for
};

struct HttpResult {
    int status = 0;
    std::string body;
    int attempts = 0;
    std::int64_t micros = 0;
};

/// POST a JSON body to base_url + path. Transport errors and 5xx responses
/// are retried per policy; the final failure raises BackendError. Other
/// non-2xx statuses fail immediately.
HttpResult post_json(const std::string& base_url, const std::string& path, const std::string& body,
                     double timeout_s, const std::string& bearer, const RetryPolicy& policy);

/// Client for any chat-completions compatible server (POST {base}/v1/chat/completions).
class HttpChat final : public ChatBackend {
public:
    HttpChat(EndpointConfig endpoint, RetryPolicy policy);
    explicit HttpChat(EndpointConfig endpoint);
    Metered<ChatReply> chat(const ChatRequest& request) override;

private:
    EndpointConfig endpoint_;
    RetryPolicy policy_;
};

/// Client for the perception adapter: /caption /embed /detect /ocr /frame_sim /analyze.
class HttpPerception final : public Captioner,
                             public Embedder,
                             public Detector,
                             public OcrBackend,
                             public FrameSimilarity,
                             public FrameAnalyzer {
public:
    HttpPerception(EndpointConfig endpoint, RetryPolicy policy, int embed_dim = 0);
    explicit HttpPerception(EndpointConfig endpoint, int embed_dim = 0);

    Metered<std::string> caption(const std::string& video_ref, const TimeRange& range, double fps,
                                 int max_edge) override;
    Metered<std::vector<Embedding>> embed(const std::vector<std::string>& texts) override;
    int dimension() const override { return dim_; }
    Metered<std::vector<Detection>> detect(const std::string& video_ref, const std::vector<double>& frame_times,
                                           const std::string& query) override;
    Metered<std::vector<OcrItem>> ocr(const std::string& video_ref, const std::vector<double>& frame_times) override;
    Metered<std::vector<FrameScore>> frame_sim(const std::string& video_ref, const std::vector<double>& frame_times,
                                               const std::string& query) override;
    Metered<std::string> analyze(const std::string& video_ref, const std::vector<double>& frame_times,
                                 const std::string& query) override;

private:
    HttpResult call(const std::string& path, const std::string& body, const char* role);

    EndpointConfig endpoint_;
    RetryPolicy policy_;
    int dim_;
};

BackendSuite make_http_suite(const EngineConfig& config);

}  // namespace avi
