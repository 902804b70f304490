#include "avi/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace avi {

bool is_valid(const TimeRange& r) {
    return std::isfinite(r.start) && std::isfinite(r.end) && r.start >= 0.0 && r.start <= r.end;
}

TimeRange make_range(double start, double end) {
    TimeRange r{start, end};
    if (!is_valid(r)) {
        throw InvalidArgument("invalid time range [" + format_seconds(start) + ", " +
                              format_seconds(end) + "]");
    }
    return r;
}

std::vector<TimeRange> interval_union(std::vector<TimeRange> ranges) {
    std::sort(ranges.begin(), ranges.end(), [](const TimeRange& a, const TimeRange& b) {
        return a.start < b.start || (a.start == b.start && a.end < b.end);
    });
    std::vector<TimeRange> out;
    for (const auto& r : ranges) {
        if (!out.empty() && r.start <= out.back().end) {
            out.back().end = std::max(out.back().end, r.end);
        } else {
            out.push_back(r);
        }
    }
    return out;
}

std::vector<TimeRange> interval_intersection(const std::vector<TimeRange>& a,
                                             const std::vector<TimeRange>& b) {
    const auto ua = interval_union(a);
    const auto ub = interval_union(b);
    std::vector<TimeRange> out;
    std::size_t i = 0, j = 0;
    while (i < ua.size() && j < ub.size()) {
        const double lo = std::max(ua[i].start, ub[j].start);
        const double hi = std::min(ua[i].end, ub[j].end);
        if (lo <= hi) out.push_back({lo, hi});
        if (ua[i].end < ub[j].end) {
            ++i;
        } else {
            ++j;
        }
    }
    return interval_union(std::move(out));
}

double total_length(const std::vector<TimeRange>& ranges) {
    double sum = 0.0;
    for (const auto& r : interval_union(ranges)) sum += r.length();
    return sum;
}

double overlap_length(const TimeRange& a, const TimeRange& b) {
    return std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
}

TimeRange clamp_range(TimeRange r, double lo, double hi) {
    r.start = std::clamp(r.start, lo, hi);
    r.end = std::clamp(r.end, lo, hi);
    if (r.end < r.start) std::swap(r.start, r.end);
    return r;
}

double temporal_iou(const TimeRange& pred, const TimeRange& gold) {
    const double inter = overlap_length(pred, gold);
    const double uni = pred.length() + gold.length() - inter;
    if (uni <= 0.0) return pred == gold ? 1.0 : 0.0;
    return inter / uni;
}

double round_time(double t) { return std::round(t * 1000.0) / 1000.0; }

long long time_key(double t) { return std::llround(t * 1000.0); }

std::vector<double> sample_frames(const TimeRange& r, double fps) {
    if (!(fps > 0.0)) throw InvalidArgument("fps must be positive");
    std::vector<double> out;
    for (long i = 0;; ++i) {
        const double t = r.start + static_cast<double>(i) / fps;
        if (t > r.end + 1e-9) break;
        out.push_back(std::min(round_time(t), r.end));
    }
    return out;
}

std::string format_seconds(double t) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", t);
    std::string s(buf);
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    if (s == "-0") s = "0";
    return s;
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string fnv1a_hex(const std::string& text) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
    return buf;
}

std::string truncate_text(const std::string& text, std::size_t max_chars) {
    if (text.size() <= max_chars) return text;
    const std::string marker = "\n...[truncated " + std::to_string(text.size()) + " chars]";
    std::size_t keep = max_chars > marker.size() ? max_chars - marker.size() : 0;
    // do not split a UTF-8 sequence
    while (keep > 0 && (static_cast<unsigned char>(text[keep]) & 0xC0) == 0x80) --keep;
    return text.substr(0, keep) + marker;
}

}  // namespace avi
