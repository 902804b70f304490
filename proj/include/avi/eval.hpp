#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "avi/agent.hpp"

namespace avi {

struct EvalItem {
    std::string id;
    std::string video_id;
    std::string question;
    std::vector<std::pair<char, std::string>> options;  // present iff gold is multiple choice
    std::variant<MultipleChoice, TimeSpan> gold;

    bool is_grounding() const { return std::holds_alternative<TimeSpan>(gold); }
};

/// {"id","video_id","question","options":{"A":"..."} or [["A","..."]], "gold":"A" | [s,e]}
EvalItem eval_item_from_json(const nlohmann::json& j);
std::vector<EvalItem> load_eval_items(const std::filesystem::path& path);

/// The question with "Options: A) ... B) ..." appended for multiple choice.
std::string question_text(const EvalItem& item);

struct ItemRecord {
    std::string id;
    bool errored = false;
    std::string error;
    bool grounding = false;
    std::string status;  // answered | forced | aborted
    std::optional<Answer> prediction;
    bool correct = false;
    double iou = 0.0;  // grounding only
    int iterations = 0;
};

struct EvalSummary {
    int total = 0;
    int ok = 0;
    int errors = 0;
    int mc_total = 0;
    int mc_correct = 0;
    double accuracy = 0.0;
    int grounding_total = 0;
    double mean_iou = 0.0;
    std::map<double, double> recall_at;  // 0.3, 0.5, 0.7
    std::vector<ItemRecord> records;     // ordered by id
};

inline constexpr double kRecallThresholds[] = {0.3, 0.5, 0.7};
/// Grounding items count as correct at IoU >= 0.5.
inline constexpr double kGroundingCorrectIoU = 0.5;

/// Scores one finished episode against the item's gold answer.
ItemRecord score_item(const EvalItem& item, const AnswerReport& report);
/// Reduces per-item records (sorted by id first). Errored items are left out
/// of every denominator.
EvalSummary summarize(std::vector<ItemRecord> records);

nlohmann::ordered_json record_to_json(const ItemRecord& r);
nlohmann::ordered_json summary_to_json(const EvalSummary& s);

struct EvalOptions {
    int jobs = 4;
    bool simulated_clock = false;  // ManualClock per episode (mock runs)
    std::optional<std::filesystem::path> trace_dir;
};

/// Backend suite for one item (mocks hand each item its own chat script).
using SuiteFactory = std::function<BackendSuite(const EvalItem&)>;

/// Runs every item against kb_root/<video_id>. A KB that fails to load or a
/// suite that cannot be built marks the item as errored.
EvalSummary run_eval(const std::filesystem::path& kb_root, const std::vector<EvalItem>& items,
                     const SuiteFactory& suites, const EngineConfig& config, const EvalOptions& options);

}  // namespace avi
