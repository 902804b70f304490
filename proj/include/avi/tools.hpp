#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avi/backends.hpp"
#include "avi/config.hpp"
#include "avi/knowledge_base.hpp"

namespace avi {

enum class Phase { retrieve, perceive, review };

std::string to_string(Phase p);
std::optional<Phase> phase_from_string(const std::string& s);

struct ToolParam {
    std::string name;
    std::string type;  // string | integer | number | range | ranges | integers
    std::string description;
    bool required = true;
};

struct ToolSpec {
    std::string name;
    std::string description;
    std::vector<ToolParam> params;
    Phase phase = Phase::retrieve;

    /// {"type":"function","function":{name, description, parameters}}
    nlohmann::json schema() const;
};

struct ToolResult {
    std::string tool;
    bool ok = true;
    std::string payload;         // rendered for the conversation, never empty
    nlohmann::json structured;   // kept in the trace
    UsageLog usage;              // one entry per backend call
    std::vector<std::string> diagnostics;

    Cost cost() const;
};

/// Raised for arguments that do not satisfy the tool's parameter schema.
struct ToolArgumentError : InvalidArgument {
    using InvalidArgument::InvalidArgument;
};

struct ToolContext {
    const KnowledgeBase& kb;
    const BackendSuite& backends;
    const EngineConfig& config;
};

using ToolHandler = std::function<ToolResult(const nlohmann::json& args, const ToolContext& ctx)>;

class ToolRegistry {
public:
    /// Throws InvalidArgument on a duplicate name.
    void add(ToolSpec spec, ToolHandler handler);
    /// Accepts the bare name or the name with a "_tool" suffix.
    const ToolSpec* find(const std::string& name) const;
    std::vector<const ToolSpec*> specs(Phase phase) const;
    nlohmann::json schemas(Phase phase) const;
    std::size_t size() const { return order_.size(); }

    /// Validates arguments (ToolArgumentError), then runs the handler. Backend
    /// and argument-value failures inside the handler become ok=false results.
    ToolResult execute(const std::string& name, const nlohmann::json& args, const ToolContext& ctx) const;

private:
    struct Entry {
        ToolSpec spec;
        ToolHandler handler;
    };
    std::map<std::string, Entry> tools_;
    std::vector<std::string> order_;
};

/// Registry with the four retrieve tools and the four perceive tools.
ToolRegistry default_registry();

void validate_arguments(const ToolSpec& spec, const nlohmann::json& args);

// ---------------------------------------------------------------- retrieve

struct MergedSegment {
    TimeRange range;
    std::vector<int> clip_ids;
    std::vector<std::string> caption_digests;
    bool operator==(const MergedSegment&) const = default;
};

/// Sorted by start; consecutive clips join when the gap is at most `max_gap`
/// and the boundary captions' embedding cosine is at least `min_coherence`.
/// Duplicate ids are ignored. Unknown ids raise InvalidArgument.
std::vector<MergedSegment> merge_clips(const KnowledgeBase& kb, std::vector<int> clip_ids, double max_gap,
                                       double min_coherence);

/// "RANGE: <start> <end>" lines of a summarizer reply, clamped to [0, duration].
std::vector<TimeRange> parse_highlight_ranges(const std::string& reply, double duration);
std::string strip_highlight_lines(const std::string& reply);

ToolResult clip_retrieve(const ToolContext& ctx, const std::string& q_text, int k);
ToolResult clip_merge(const ToolContext& ctx, const std::vector<int>& clip_ids);
ToolResult global_explore(const ToolContext& ctx, const std::string& q_text);
ToolResult graph_retrieve(const ToolContext& ctx, const std::string& entity_query,
                          const std::optional<std::string>& second_entity);

// ---------------------------------------------------------------- perceive

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b);
/// Greedy per frame and label: highest confidence first, drop boxes with
/// IoU > threshold against a kept one. Output sorted by (frame_time, label, -confidence).
std::vector<Detection> dedup_detections(std::vector<Detection> detections, double iou_threshold);

struct TextEntry {
    std::string text;
    double first_seen = 0.0;
    double last_seen = 0.0;
    bool operator==(const TextEntry&) const = default;
};
/// Frame-ordered entries; a string already present in the previous frame
/// extends its entry instead of starting a new one. Empty strings are dropped.
std::vector<TextEntry> collapse_text(std::vector<OcrItem> items);

struct Boundary {
    TimeRange range;
    bool low_confidence = false;
    double threshold = 0.0;
};
/// Longest run of frames scoring >= max - 0.2|max|, reported as
/// [first, min(last + 1/fps, range.end)]. Needs at least two frames.
Boundary locate_boundary(const std::vector<double>& frames, const std::vector<double>& scores, double fps,
                         const TimeRange& range);

/// Uniform selection of at most `budget` items: index floor(i * n / budget).
std::vector<double> downsample_frames(const std::vector<double>& frames, int budget);

ToolResult object_detect(const ToolContext& ctx, const TimeRange& range, const std::string& q_obj);
ToolResult text_extract(const ToolContext& ctx, const TimeRange& range);
ToolResult boundary_detect(const ToolContext& ctx, const TimeRange& range, const std::string& q_event);
ToolResult frame_analysis(const ToolContext& ctx, const std::vector<TimeRange>& ranges, const std::string& q_specific);

}  // namespace avi
