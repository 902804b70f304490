#pragma once

// Deterministic in-process backends. Every result is a pure function of
// (script, fixtures, call sequence).

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avi/backends.hpp"

namespace avi {

/// Lowercased runs of alphanumeric bytes (non-ASCII bytes count as word bytes).
std::vector<std::string> tokenize(const std::string& text);

/// Bag-of-tokens hash embedding: each token adds 1 to component
/// fnv1a64(token) mod d, then the vector is L2-normalized. Texts without
/// tokens map to e1.
class HashEmbedder final : public Embedder {
public:
    explicit HashEmbedder(int dim = 256);
    Embedding embed_one(const std::string& text) const;
    Metered<std::vector<Embedding>> embed(const std::vector<std::string>& texts) override;
    int dimension() const override { return dim_; }

private:
    int dim_;
};

enum class Exhaustion { repeat_last, fail };

/// Canned chat replies per request purpose, consumed in order.
///
/// Reply content and tool-call argument strings may contain
/// `{{match:REGEX}}`; it is replaced by capture group 1 (or the whole match)
/// of REGEX searched in the most recent tool message of the request.
struct MockScript {
    std::map<std::string, std::vector<ChatReply>> replies;
    Exhaustion exhaustion = Exhaustion::fail;

    static MockScript from_json(const nlohmann::json& j);
    static MockScript load(const std::filesystem::path& path);
};

class ScriptedChat final : public ChatBackend {
public:
    explicit ScriptedChat(MockScript script);
    Metered<ChatReply> chat(const ChatRequest& request) override;
    std::size_t calls(const std::string& purpose) const;
    std::size_t total_calls() const;

private:
    MockScript script_;
    mutable std::mutex mu_;
    std::map<std::string, std::size_t> cursor_;
};

std::string expand_placeholders(const std::string& text, const ChatRequest& request);

/// Annotation store backing the mock perception backends. Keys are frame
/// times rounded to milliseconds.
struct FixtureStore {
    struct DetectionEntry {
        Detection detection;
        std::optional<std::string> query;
    };
    struct ScoreEntry {
        double score = 0.0;
        std::optional<std::string> query;
    };
    struct AnalyzeEntry {
        std::optional<std::string> query;
        std::string text;
    };

    std::string video_id;
    double duration = 0.0;
    std::map<long long, std::string> captions;  // keyed by clip start
    std::map<long long, int> caption_failures;  // transient failures before success
    std::map<long long, std::vector<DetectionEntry>> detections;
    std::map<long long, std::vector<std::string>> ocr;
    std::map<long long, bool> ocr_failures;
    std::map<long long, std::vector<ScoreEntry>> frame_scores;
    std::vector<AnalyzeEntry> analyses;

    /// Reads video.json plus the optional captions.jsonl, detections.jsonl,
    /// ocr.jsonl, framesim.jsonl and analyze.jsonl of a fixture directory.
    static FixtureStore load(const std::filesystem::path& dir);
};


/// Captioner, detector, OCR, frame similarity and frame analysis over a
/// FixtureStore. Unknown video_ref is an invalid argument; unkeyed frame
/// times yield empty results.
class MockPerception final : public Captioner,
                             public Detector,
                             public OcrBackend,
                             public FrameSimilarity,
                             public FrameAnalyzer {
public:
    explicit MockPerception(FixtureStore store);

    Metered<std::string> caption(const std::string& video_ref, const TimeRange& range, double fps,
                                 int max_edge) override;
    Metered<std::vector<Detection>> detect(const std::string& video_ref,
                                           const std::vector<double>& frame_times,
                                           const std::string& query) override;
    Metered<std::vector<OcrItem>> ocr(const std::string& video_ref,
                                      const std::vector<double>& frame_times) override;
    Metered<std::vector<FrameScore>> frame_sim(const std::string& video_ref,
                                               const std::vector<double>& frame_times,
                                               const std::string& query) override;
    Metered<std::string> analyze(const std::string& video_ref, const std::vector<double>& frame_times,
                                 const std::string& query) override;

    const FixtureStore& store() const { return store_; }
    /// Frame-time lists of every captioner call, in call order.
    std::vector<std::pair<TimeRange, double>> caption_log() const;
    int last_caption_max_edge() const;

private:
    void check_ref(const std::string& video_ref) const;

    FixtureStore store_;
    mutable std::mutex mu_;
    std::map<long long, int> caption_attempts_;
    std::vector<std::pair<TimeRange, double>> caption_log_;
    int last_max_edge_ = 0;
};

/// Suite of mocks over one fixture directory. `script` feeds the chat role.
BackendSuite make_mock_suite(const std::filesystem::path& fixture_dir, MockScript script, int embed_dim = 256);
BackendSuite make_mock_suite(std::shared_ptr<MockPerception> perception, MockScript script,
                             int embed_dim = 256);

}  // namespace avi
