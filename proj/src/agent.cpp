#include "avi/agent.hpp"

#include <fstream>
#include <regex>
#include <sstream>

#include "avi/prompts.hpp"

namespace avi {

using nlohmann::json;

namespace {

constexpr std::string_view kAnswerMarker = "**Answer:**";
constexpr std::size_t kPreviewChars = 160;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

// ---------------------------------------------------------------- answers

std::optional<ParsedAnswer> extract_answer(const std::string& text) {
    const auto pos = text.find(kAnswerMarker);
    if (pos == std::string::npos) return std::nullopt;
    std::string rest = text.substr(pos + kAnswerMarker.size());
    rest = rest.substr(0, rest.find('\n'));
    rest = trim(rest);

    static const std::regex span_re(R"(^\[\s*(\d+(?:\.\d+)?)\s*s?\s*,\s*(\d+(?:\.\d+)?)\s*s?\s*\])");
    static const std::regex letter_re(R"(^\(?([A-E])\)?(?![A-Za-z0-9]))");
    std::smatch m;
    if (std::regex_search(rest, m, span_re)) {
        const double a = std::stod(m[1].str());
        const double b = std::stod(m[2].str());
        if (a > b) return std::nullopt;
        return TimeSpan{{a, b}};
    }
    if (std::regex_search(rest, m, letter_re)) return MultipleChoice{m[1].str()[0]};
    if (rest.empty()) return std::nullopt;
    return FreeText{rest};
}

std::string render_answer(const Answer& a) {
    return std::visit(overloaded{
                          [](const MultipleChoice& v) { return std::string(kAnswerMarker) + v.letter; },
                          [](const TimeSpan& v) {
                              return std::string(kAnswerMarker) + "[" + format_seconds(v.range.start) + "s," +
                                     format_seconds(v.range.end) + "s]";
                          },
                          [](const FreeText& v) { return std::string(kAnswerMarker) + v.text; },
                          [](const Forced& v) { return v.text; },
                      },
                      a);
}

json answer_to_json(const Answer& a) {
    return std::visit(overloaded{
                          [](const MultipleChoice& v) -> json {
                              return {{"type", "multiple_choice"}, {"letter", std::string(1, v.letter)}};
                          },
                          [](const TimeSpan& v) -> json {
                              return {{"type", "time_span"}, {"t_start", v.range.start}, {"t_end", v.range.end}};
                          },
                          [](const FreeText& v) -> json { return {{"type", "free_text"}, {"text", v.text}}; },
                          [](const Forced& v) -> json { return {{"type", "forced"}, {"text", v.text}}; },
                      },
                      a);
}

// ---------------------------------------------------------------- actions

bool legal_transition(Phase from, Phase to) {
    return (from == Phase::retrieve && to == Phase::perceive) || (from == Phase::perceive && to == Phase::review) ||
           (from == Phase::review && to == Phase::perceive);
}

namespace {

Phase next_phase(Phase p) { return p == Phase::perceive ? Phase::review : Phase::perceive; }

}  // namespace

Action parse_agent_reply(const std::string& text, const std::vector<ToolCall>& tool_calls, Phase phase,
                         bool strict_switch) {
    if (!tool_calls.empty()) return tool_calls.front();
    static const std::regex switch_re(R"(\[STAGE_SWITCH:\s*([A-Za-z_]+)\s*\])");
    std::smatch m;
    if (std::regex_search(text, m, switch_re)) {
        const auto target = phase_from_string(m[1].str());
        if (target && legal_transition(phase, *target)) return PhaseSwitch{*target};
        return Violation{"illegal stage switch from " + to_string(phase) + " to " + m[1].str()};
    }
    if (phase == Phase::review) {
        if (auto answer = extract_answer(text)) return Output{*answer};
    }
    if (strict_switch) {
        return Violation{"reply has no tool call and no [STAGE_SWITCH: <stage>] directive"};
    }
    return PhaseSwitch{next_phase(phase)};
}

// ---------------------------------------------------------------- prompt

std::string compose_system_prompt(Phase phase, const Manifest& manifest, const ToolRegistry& registry) {
    std::string_view instruction = prompts::kRetrieveInstruction;
    if (phase == Phase::perceive) instruction = prompts::kPerceiveInstruction;
    if (phase == Phase::review) instruction = prompts::kReviewInstruction;
    std::string tools;
    for (const auto* spec : registry.specs(phase)) tools += spec->description + "\n";
    if (tools.empty()) tools = "(no tools are available in this stage)\n";
    std::string out(prompts::kSystemHeader);
    out += "\n\n**Current Stage: " + to_string(phase) + "**\n\n";
    out += prompts::kCoreProtocol;
    out += "\n\n";
    out += instruction;
    out += "\n\nHere are tools you can use:\n\n" + tools;
    out += "\nTotal video length: " + format_seconds(manifest.duration) + " seconds.";
    return out;
}

// ---------------------------------------------------------------- costs and trace

SteadyClock::SteadyClock() : origin_(std::chrono::steady_clock::now()) {}

std::int64_t SteadyClock::now_micros() {
    return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - origin_).count();
}

namespace {

Cost sum_kind(const std::vector<LedgerEntry>& entries, const char* kind) {
    Cost c;
    for (const auto& e : entries) {
        if (e.kind == kind) c += e.usage.cost;
    }
    return c;
}

}  // namespace

Cost CostLedger::llm_total() const { return sum_kind(entries, "llm"); }
Cost CostLedger::tool_total() const { return sum_kind(entries, "tool"); }
Cost CostLedger::episode_total() const { return llm_total() + tool_total(); }
Cost CostLedger::total() const { return db_amortized + episode_total(); }

Cost KbCostAccount::charge(const Manifest& manifest) {
    std::lock_guard lock(mu_);
    if (!charged_.insert(manifest.video_id).second) return {};
    return manifest.db_cost;
}

nlohmann::ordered_json trace_event_json(const TraceEvent& e) {
    std::string preview = truncate_text(e.content, kPreviewChars);
    for (auto& c : preview) {
        if (c == '\n' || c == '\r' || c == '\t') c = ' ';
    }
    nlohmann::ordered_json j;
    j["iteration"] = e.iteration;
    j["phase"] = to_string(e.phase);
    j["kind"] = e.kind;
    j["digest"] = fnv1a_hex(e.content);
    j["preview"] = preview;
    j["tokens_in"] = e.cost.tokens_in;
    j["tokens_out"] = e.cost.tokens_out;
    j["micros"] = e.cost.micros;
    j["wall_micros"] = e.wall_micros;
    return j;
}

std::string trace_jsonl(const std::vector<TraceEvent>& trace) {
    std::string out;
    for (const auto& e : trace) {
        out += trace_event_json(e).dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
    }
    return out;
}

void write_trace(const std::vector<TraceEvent>& trace, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("cannot write trace " + path.string());
    out << trace_jsonl(trace);
}

std::vector<json> read_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot read trace " + path.string());
    std::vector<json> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw InvalidArgument("trace " + path.string() + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------- episode

std::string to_string(EpisodeStatus s) {
    switch (s) {
        case EpisodeStatus::answered: return "answered";
        case EpisodeStatus::forced: return "forced";
        case EpisodeStatus::aborted: return "aborted";
    }
    return "aborted";
}

nlohmann::ordered_json report_to_json(const AnswerReport& r) {
    nlohmann::ordered_json j;
    j["status"] = to_string(r.status);
    j["answer"] = r.answer ? answer_to_json(*r.answer) : json(nullptr);
    j["rendered"] = r.answer ? render_answer(*r.answer) : "";
    j["forced"] = r.forced;
    j["iterations_used"] = r.iterations_used;
    auto cost_json = [](const Cost& c) {
        return nlohmann::ordered_json{{"tokens_in", c.tokens_in}, {"tokens_out", c.tokens_out}, {"micros", c.micros}};
    };
    j["ledger"] = {{"db_amortized", cost_json(r.ledger.db_amortized)},
                   {"llm", cost_json(r.ledger.llm_total())},
                   {"tools", cost_json(r.ledger.tool_total())},
                   {"total", cost_json(r.ledger.total())},
                   {"calls", r.ledger.entries.size()}};
    std::vector<std::string> phases;
    for (auto p : r.phases) phases.push_back(to_string(p));
    j["phases"] = phases;
    if (!r.diagnostic.empty()) j["diagnostic"] = r.diagnostic;
    return j;
}

namespace {

void emit(AgentState& s, const EpisodeContext& ctx, std::string kind, std::string content, Cost cost = {}) {
    s.trace.push_back({s.iteration, s.phase, std::move(kind), std::move(content), cost, ctx.clock.now_micros()});
}

void record(AgentState& s, const EpisodeContext& ctx, const char* kind, const std::string& name,
            const CallUsage& usage) {
    s.ledger.entries.push_back({kind, name, usage});
    ctx.clock.advance(usage.cost.micros);
}

std::string tool_message_text(const std::string& text, const EpisodeContext& ctx) {
    return truncate_text(text, ctx.config.payload_limit);
}

void violation(AgentState& s, const EpisodeContext& ctx, const std::string& detail, const std::string& tool_call_id) {
    emit(s, ctx, "violation", detail);
    const std::string text = "protocol violation: " + detail;
    if (tool_call_id.empty()) {
        s.messages.push_back({"user", text, {}, {}});
    } else {
        s.messages.push_back({"tool", text, {}, tool_call_id});
    }
}

void run_tool(AgentState& s, const EpisodeContext& ctx, const ToolCall& call) {
    emit(s, ctx, "action", call.name + " " + (call.arguments_ok() ? call.arguments.dump() : call.malformed_arguments));
    if (!call.arguments_ok()) {
        violation(s, ctx, "malformed arguments for " + call.name + ": " + call.malformed_arguments, call.id);
        return;
    }
    const auto* spec = ctx.registry.find(call.name);
    if (spec == nullptr) {
        violation(s, ctx, "unknown tool " + call.name, call.id);
        return;
    }
    if (spec->phase != s.phase) {
        violation(s, ctx, "tool not available in " + to_string(s.phase) + " phase", call.id);
        return;
    }
    ToolResult result;
    try {
        result = ctx.registry.execute(spec->name, call.arguments, ToolContext{ctx.kb, ctx.backends, ctx.config});
    } catch (const ToolArgumentError& e) {
        violation(s, ctx, e.what(), call.id);
        return;
    }
    for (const auto& u : result.usage) record(s, ctx, "tool", result.tool, u);
    emit(s, ctx, "observation", result.payload, result.cost());
    s.messages.push_back({"tool", tool_message_text(result.payload, ctx), {}, call.id});
    s.observations.push_back(std::move(result));
}

}  // namespace

AgentState initial_state(const EpisodeContext& ctx, const std::string& question) {
    AgentState s;
    s.phase = Phase::retrieve;
    s.messages.push_back({"system", compose_system_prompt(s.phase, ctx.kb.manifest, ctx.registry), {}, {}});
    s.messages.push_back({"user", question, {}, {}});
    return s;
}

void step(AgentState& s, const EpisodeContext& ctx) {
    if (s.terminal()) throw InvalidArgument("step on a terminal state");
    s.messages.front().content = compose_system_prompt(s.phase, ctx.kb.manifest, ctx.registry);
    ChatRequest req;
    req.purpose = "agent";
    req.messages = s.messages;
    req.tools = ctx.registry.schemas(s.phase);

    Metered<ChatReply> reply;
    try {
        reply = ctx.backends.chat->chat(req);
    } catch (const BackendError& e) {
        s.aborted = true;
        s.diagnostic = std::string("chat backend failed: ") + e.what();
        return;
    }
    ++s.iteration;
    s.phases.push_back(s.phase);
    record(s, ctx, "llm", req.purpose, reply.usage);
    emit(s, ctx, "thought", reply.value.content, reply.usage.cost);

    auto calls = reply.value.tool_calls;
    for (std::size_t i = 0; i < calls.size(); ++i) {
        if (calls[i].id.empty()) calls[i].id = "call_" + std::to_string(s.iteration) + "_" + std::to_string(i);
    }
    s.messages.push_back({"assistant", reply.value.content, calls, {}});

    const auto action = parse_agent_reply(reply.value.content, calls, s.phase, ctx.config.strict_switch);
    std::visit(overloaded{
                   [&](const ToolCall& call) {
                       run_tool(s, ctx, call);
                       for (std::size_t i = 1; i < calls.size(); ++i) {
                           violation(s, ctx,
                                     "exactly one tool call per response is allowed; " + calls[i].name +
                                         " was not executed",
                                     calls[i].id);
                       }
                   },
                   [&](const PhaseSwitch& sw) {
                       emit(s, ctx, "switch", to_string(s.phase) + " -> " + to_string(sw.target));
                       s.phase = sw.target;
                   },
                   [&](const Output& out) {
                       emit(s, ctx, "answer", render_answer(std::visit([](const auto& v) -> Answer { return v; }, out.answer)));
                       s.answer = out.answer;
                   },
                   [&](const Violation& v) { violation(s, ctx, v.detail, ""); },
               },
               action);
}

void forced_answer(AgentState& s, const EpisodeContext& ctx, AnswerReport& report) {
    ChatRequest req;
    req.purpose = "forced";
    req.messages = s.messages;
    req.messages.front().content = compose_system_prompt(s.phase, ctx.kb.manifest, ctx.registry);
    req.messages.push_back({"user", std::string(prompts::kForcedAnswer), {}, {}});
    Metered<ChatReply> reply;
    try {
        reply = ctx.backends.chat->chat(req);
    } catch (const BackendError& e) {
        s.aborted = true;
        s.diagnostic = std::string("forced answer call failed: ") + e.what();
        return;
    }
    record(s, ctx, "llm", req.purpose, reply.usage);
    emit(s, ctx, "thought", reply.value.content, reply.usage.cost);
    report.forced = true;
    if (auto parsed = extract_answer(reply.value.content)) {
        report.answer = std::visit([](const auto& v) -> Answer { return v; }, *parsed);
    } else {
        report.answer = Forced{reply.value.content};
    }
    emit(s, ctx, "answer", render_answer(*report.answer));
}

AnswerReport run_episode(const EpisodeContext& ctx, const std::string& question, Cost db_charge) {
    if (ctx.config.n_max < 1) throw InvalidArgument("n_max must be at least 1");
    AgentState s = initial_state(ctx, question);
    s.ledger.db_amortized = db_charge;
    while (!s.terminal() && s.iteration < ctx.config.n_max) step(s, ctx);

    AnswerReport report;
    if (s.answer) {
        report.status = EpisodeStatus::answered;
        report.answer = std::visit([](const auto& v) -> Answer { return v; }, *s.answer);
    } else if (!s.aborted) {
        forced_answer(s, ctx, report);
        report.status = s.aborted ? EpisodeStatus::aborted : EpisodeStatus::forced;
        if (s.aborted) report.answer.reset();
    }
    if (s.aborted) report.status = EpisodeStatus::aborted;
    report.iterations_used = s.iteration;
    report.trace = std::move(s.trace);
    report.ledger = std::move(s.ledger);
    report.phases = std::move(s.phases);
    report.diagnostic = std::move(s.diagnostic);
    return report;
}

}  // namespace avi
