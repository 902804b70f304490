#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "avi/backends.hpp"
#include "avi/config.hpp"
#include "avi/knowledge_base.hpp"
#include "avi/tools.hpp"

namespace avi {

// ---------------------------------------------------------------- answers

struct MultipleChoice {
    char letter = 'A';
    bool operator==(const MultipleChoice&) const = default;
};
struct TimeSpan {
    TimeRange range;
    bool operator==(const TimeSpan&) const = default;
};
struct FreeText {
    std::string text;
    bool operator==(const FreeText&) const = default;
};
struct Forced {
    std::string text;  // raw reply of an unparseable forced answer
    bool operator==(const Forced&) const = default;
};

using ParsedAnswer = std::variant<MultipleChoice, TimeSpan, FreeText>;
using Answer = std::variant<MultipleChoice, TimeSpan, FreeText, Forced>;

/// First "**Answer:**" marker: a letter A-E, "[<a>s,<b>s]" with a <= b, or
/// the rest of the line. nullopt when the marker is absent or the value is
/// unusable (empty text, reversed span).
std::optional<ParsedAnswer> extract_answer(const std::string& text);

/// "**Answer:**A", "**Answer:**[1.5s,12.5s]", "**Answer:**text" or the raw forced text.
std::string render_answer(const Answer& a);
nlohmann::json answer_to_json(const Answer& a);

// ---------------------------------------------------------------- actions

struct PhaseSwitch {
    Phase target;
    bool operator==(const PhaseSwitch&) const = default;
};
struct Output {
    ParsedAnswer answer;
    bool operator==(const Output&) const = default;
};
struct Violation {
    std::string detail;
    bool operator==(const Violation&) const = default;
};
using Action = std::variant<ToolCall, PhaseSwitch, Output, Violation>;

bool legal_transition(Phase from, Phase to);

/// Priority: tool calls, then a legal [STAGE_SWITCH: x] token, then an
/// answer marker (review only), then the lenient advance (or a violation in
/// strict mode).
Action parse_agent_reply(const std::string& text, const std::vector<ToolCall>& tool_calls, Phase phase,
                         bool strict_switch);

// ---------------------------------------------------------------- prompt

std::string compose_system_prompt(Phase phase, const Manifest& manifest, const ToolRegistry& registry);

// ---------------------------------------------------------------- costs and trace

/// Time source for trace wall-clock stamps.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::int64_t now_micros() = 0;
    /// Called after every backend call with its reported latency.
    virtual void advance(std::int64_t micros) = 0;
};

/// Real elapsed time since construction.
class SteadyClock final : public Clock {
public:
    SteadyClock();
    std::int64_t now_micros() override;
    void advance(std::int64_t) override {}

private:
    std::chrono::steady_clock::time_point origin_;
};

/// Simulated time: moves only by the latencies backends report, so mock
/// traces are byte-identical across runs.
class ManualClock final : public Clock {
public:
    std::int64_t now_micros() override { return now_; }
    void advance(std::int64_t micros) override { now_ += micros; }

private:
    std::int64_t now_ = 0;
};

struct LedgerEntry {
    std::string kind;  // llm | tool
    std::string name;  // purpose for llm calls, tool name for tool calls
    CallUsage usage;
};

struct CostLedger {
    Cost db_amortized;  // nonzero only for the first episode on a KB
    std::vector<LedgerEntry> entries;

    Cost llm_total() const;
    Cost tool_total() const;
    Cost episode_total() const;
    Cost total() const;
};

/// Hands out each knowledge base's construction cost once per session.
class KbCostAccount {
public:
    Cost charge(const Manifest& manifest);

private:
    std::mutex mu_;
    std::set<std::string> charged_;
};

struct TraceEvent {
    int iteration = 0;
    Phase phase = Phase::retrieve;
    std::string kind;  // thought | action | observation | switch | violation | answer
    std::string content;
    Cost cost;
    std::int64_t wall_micros = 0;
};

nlohmann::ordered_json trace_event_json(const TraceEvent& e);
std::string trace_jsonl(const std::vector<TraceEvent>& trace);
void write_trace(const std::vector<TraceEvent>& trace, const std::filesystem::path& path);
std::vector<nlohmann::json> read_trace(const std::filesystem::path& path);

// ---------------------------------------------------------------- episode

enum class EpisodeStatus { answered, forced, aborted };
std::string to_string(EpisodeStatus s);

struct AnswerReport {
    EpisodeStatus status = EpisodeStatus::aborted;
    std::optional<Answer> answer;  // empty only when aborted
    bool forced = false;
    int iterations_used = 0;
    std::vector<TraceEvent> trace;
    CostLedger ledger;
    std::vector<Phase> phases;  // phase of every step, in order
    std::string diagnostic;
};

nlohmann::ordered_json report_to_json(const AnswerReport& r);

struct AgentState {
    std::vector<ChatMessage> messages;  // [0] system prompt of the current phase, [1] question
    Phase phase = Phase::retrieve;
    int iteration = 0;
    std::vector<ToolResult> observations;
    CostLedger ledger;
    std::vector<TraceEvent> trace;
    std::vector<Phase> phases;
    std::optional<ParsedAnswer> answer;
    bool aborted = false;
    std::string diagnostic;

    bool terminal() const { return answer.has_value() || aborted; }
};

struct EpisodeContext {
    const KnowledgeBase& kb;
    const BackendSuite& backends;
    const EngineConfig& config;
    const ToolRegistry& registry;
    Clock& clock;
};

AgentState initial_state(const EpisodeContext& ctx, const std::string& question);
/// One chat call, one parsed action, its effect. Increments the iteration.
void step(AgentState& state, const EpisodeContext& ctx);
/// Final chat call after the budget is spent.
void forced_answer(AgentState& state, const EpisodeContext& ctx, AnswerReport& report);

AnswerReport run_episode(const EpisodeContext& ctx, const std::string& question, Cost db_charge = {});

}  // namespace avi
