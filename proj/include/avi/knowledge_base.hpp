#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "avi/backends.hpp"
#include "avi/common.hpp"
#include "avi/config.hpp"
#include "avi/entity_graph.hpp"

namespace avi {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

/// Row-major so each clip's vector is contiguous, matching embeddings.bin.
using EmbeddingMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SubjectEntry {
    std::string local_key;
    std::string name;
    std::vector<std::string> appearance;
    std::vector<std::string> identity;
    double first_seen = 0.0;
    bool operator==(const SubjectEntry&) const = default;
};

struct ClipRecord {
    int clip_id = 0;
    TimeRange range;
    std::string caption;
    std::vector<SubjectEntry> subject_registry;
    bool operator==(const ClipRecord&) const = default;
};

struct Manifest {
    int schema_version = kSchemaVersion;
    std::string video_id;
    std::string video_ref;
    double duration = 0.0;
    double clip_len = 5.0;
    double fps = 2.0;
    int embed_dim = 0;
    int clip_count = 0;
    int node_count = 0;
    Cost db_cost;  // one-time construction cost, charged once per session
    std::vector<std::string> diagnostics;
    bool operator==(const Manifest&) const = default;
};

struct KnowledgeBase {
    Manifest manifest;
    std::vector<ClipRecord> clips;
    EmbeddingMatrix embeddings;  // clips.size() x embed_dim, unit rows
    TemporalKnowledgeGraph graph;

    const std::string& video_ref() const { return manifest.video_ref; }
    std::vector<TimeRange> clip_ranges() const;
    std::vector<std::string> captions() const;
    /// Throws CorruptionError when counts or shapes disagree with the manifest.
    void validate() const;
};

/// Structural equality with bitwise comparison of the embedding matrix.
bool same_kb(const KnowledgeBase& a, const KnowledgeBase& b);

std::vector<TimeRange> plan_segments(double duration, double clip_len);

struct CaptionDocument {
    std::string caption;
    std::vector<SubjectEntry> registry;
    std::string diagnostic;  // empty when the reply parsed cleanly
};

/// Reads clip_description and subject_registry from a captioner reply.
/// first_seen values are clamped into `clip`.
CaptionDocument parse_caption_document(const std::string& raw_reply, const TimeRange& clip);

/// Unit-length copy; an all-zero (or non-finite) vector becomes e1 and
/// `replaced` is set.
Embedding normalize_embedding(const Embedding& v, bool* replaced = nullptr);

struct SearchHit {
    int clip_id = 0;
    double score = 0.0;
    bool operator==(const SearchHit&) const = default;
};

/// Exact cosine top-min(k, N), descending, ties by lower clip id.
std::vector<SearchHit> top_k_search(const EmbeddingMatrix& rows, const Embedding& query, int k);
std::vector<SearchHit> top_k_search(const KnowledgeBase& kb, const Embedding& query, int k);

nlohmann::ordered_json manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);
nlohmann::ordered_json clip_to_json(const ClipRecord& c);
ClipRecord clip_from_json(const nlohmann::json& j);

void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

/// Writes manifest.json, clips.jsonl, graph.json and embeddings.bin.
void save_kb(const KnowledgeBase& kb, const std::filesystem::path& dir);
/// VersionError on a schema mismatch, CorruptionError on missing or
/// inconsistent files.
KnowledgeBase load_kb(const std::filesystem::path& dir);

struct IngestRequest {
    std::string video_ref;
    std::string video_id;
    double duration = 0.0;
};

/// Full database construction: segment, caption (with retries), embed,
/// extract and assemble the graph, weight and cluster it. Every backend call
/// made here is summed into manifest.db_cost.
KnowledgeBase ingest_video(const IngestRequest& request, const BackendSuite& backends, const EngineConfig& config);

}  // namespace avi
