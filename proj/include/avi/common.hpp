#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace avi {

// Error kinds. Callers map these onto CLI exit codes and tool observations.
struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct CorruptionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IngestError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Endpoint answered but the body did not follow the contract.
struct ProtocolError : BackendError {
    ProtocolError(const std::string& what, std::string raw)
        : BackendError(what), raw_body(std::move(raw)) {}
    std::string raw_body;
};

struct TimeRange {
    double start = 0.0;
    double end = 0.0;

    double length() const { return end - start; }
    bool operator==(const TimeRange&) const = default;
};

// Throws InvalidArgument unless 0 <= start <= end and both finite.
TimeRange make_range(double start, double end);
bool is_valid(const TimeRange& r);

/// Sorted, non-overlapping union. Touching intervals are joined.
std::vector<TimeRange> interval_union(std::vector<TimeRange> ranges);
/// Intersection of two interval sets (each normalized first).
std::vector<TimeRange> interval_intersection(const std::vector<TimeRange>& a,
                                             const std::vector<TimeRange>& b);
double total_length(const std::vector<TimeRange>& ranges);
double overlap_length(const TimeRange& a, const TimeRange& b);
TimeRange clamp_range(TimeRange r, double lo, double hi);

/// Intersection over union of two time intervals. Two identical
/// zero-length intervals have IoU 1.
double temporal_iou(const TimeRange& pred, const TimeRange& gold);

/// Frame times start, start + 1/fps, ... never exceeding end, rounded to
/// 3 decimals (the key precision of the frame wire contract).
std::vector<double> sample_frames(const TimeRange& r, double fps);
double round_time(double t);
/// Millisecond key used to match frame times across backends and fixtures.
long long time_key(double t);

/// Integer cost units: additivity checks are exact.
struct Cost {
    std::int64_t tokens_in = 0;
    std::int64_t tokens_out = 0;
    std::int64_t micros = 0;

    Cost& operator+=(const Cost& o) {
        tokens_in += o.tokens_in;
        tokens_out += o.tokens_out;
        micros += o.micros;
        return *this;
    }
    friend Cost operator+(Cost a, const Cost& b) { return a += b; }
    bool operator==(const Cost&) const = default;
    bool is_zero() const { return tokens_in == 0 && tokens_out == 0 && micros == 0; }
};

/// One backend round trip as seen by the cost ledger.
struct CallUsage {
    std::string backend;  // chat, caption, embed, detect, ocr, frame_sim, analyze
    Cost cost;
    int attempts = 1;
    bool operator==(const CallUsage&) const = default;
};

// Formatting helpers shared by renderers and prompts.
std::string format_seconds(double t);  // "12.5", "10", "0.333"
std::string fnv1a_hex(const std::string& text);
std::uint64_t fnv1a64(const std::string& text);
std::string truncate_text(const std::string& text, std::size_t max_chars);

}  // namespace avi
