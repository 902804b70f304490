#include "avi/eval.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <memory>
#include <mutex>
#include <thread>

namespace avi {

using nlohmann::json;

EvalItem eval_item_from_json(const json& j) {
    EvalItem item;
    try {
        item.id = j.at("id").get<std::string>();
        item.video_id = j.at("video_id").get<std::string>();
        item.question = j.at("question").get<std::string>();
        if (j.contains("options")) {
            const auto& opts = j.at("options");
            if (opts.is_object()) {
                for (const auto& [k, v] : opts.items()) {
                    if (k.size() != 1) throw InvalidArgument("option letters must be single characters");
                    item.options.emplace_back(k[0], v.get<std::string>());
                }
            } else {
                for (const auto& o : opts) item.options.emplace_back(o.at(0).get<std::string>().at(0), o.at(1).get<std::string>());
            }
        }
        const auto& gold = j.at("gold");
        if (gold.is_string()) {
            const auto s = gold.get<std::string>();
            if (s.size() != 1 || s[0] < 'A' || s[0] > 'E') throw InvalidArgument("gold letter must be one of A-E");
            item.gold = MultipleChoice{s[0]};
        } else {
            item.gold = TimeSpan{make_range(gold.at(0).get<double>(), gold.at(1).get<double>())};
        }
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("eval item: ") + e.what());
    }
    if (item.is_grounding() != item.options.empty()) {
        throw InvalidArgument("eval item " + item.id + ": options must be present exactly for multiple-choice gold");
    }
    return item;
}

std::vector<EvalItem> load_eval_items(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open items file " + path.string());
    std::vector<EvalItem> items;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            items.push_back(eval_item_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw InvalidArgument(path.string() + ": " + e.what());
        }
    }
    return items;
}

std::string question_text(const EvalItem& item) {
    if (item.options.empty()) return item.question;
    std::string out = item.question + "\nOptions:";
    for (const auto& [letter, text] : item.options) out += std::string(" ") + letter + ") " + text;
    return out;
}

ItemRecord score_item(const EvalItem& item, const AnswerReport& report) {
    ItemRecord r;
    r.id = item.id;
    r.grounding = item.is_grounding();
    r.status = to_string(report.status);
    r.prediction = report.answer;
    r.iterations = report.iterations_used;
    if (!report.answer) return r;
    if (const auto* gold = std::get_if<MultipleChoice>(&item.gold)) {
        const auto* pred = std::get_if<MultipleChoice>(&*report.answer);
        r.correct = pred != nullptr && pred->letter == gold->letter;
    } else {
        const auto& gold_span = std::get<TimeSpan>(item.gold);
        if (const auto* pred = std::get_if<TimeSpan>(&*report.answer)) r.iou = temporal_iou(pred->range, gold_span.range);
        r.correct = r.iou >= kGroundingCorrectIoU;
    }
    return r;
}

EvalSummary summarize(std::vector<ItemRecord> records) {
    std::sort(records.begin(), records.end(), [](const ItemRecord& a, const ItemRecord& b) { return a.id < b.id; });
    EvalSummary s;
    s.total = static_cast<int>(records.size());
    double iou_sum = 0.0;
    std::map<double, int> hits;
    for (double t : kRecallThresholds) hits[t] = 0;
    for (const auto& r : records) {
        if (r.errored) {
            ++s.errors;
            continue;
        }
        ++s.ok;
        if (r.grounding) {
            ++s.grounding_total;
            iou_sum += r.iou;
            for (double t : kRecallThresholds) {
                if (r.iou >= t) ++hits[t];
            }
        } else {
            ++s.mc_total;
            if (r.correct) ++s.mc_correct;
        }
    }
    s.accuracy = s.mc_total ? static_cast<double>(s.mc_correct) / s.mc_total : 0.0;
    s.mean_iou = s.grounding_total ? iou_sum / s.grounding_total : 0.0;
    for (double t : kRecallThresholds) {
        s.recall_at[t] = s.grounding_total ? static_cast<double>(hits[t]) / s.grounding_total : 0.0;
    }
    s.records = std::move(records);
    return s;
}

nlohmann::ordered_json record_to_json(const ItemRecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    if (r.errored) {
        j["error"] = r.error;
        return j;
    }
    j["kind"] = r.grounding ? "grounding" : "multiple_choice";
    j["status"] = r.status;
    j["prediction"] = r.prediction ? answer_to_json(*r.prediction) : json(nullptr);
    j["correct"] = r.correct;
    if (r.grounding) j["iou"] = r.iou;
    j["iterations"] = r.iterations;
    return j;
}

nlohmann::ordered_json summary_to_json(const EvalSummary& s) {
    nlohmann::ordered_json j;
    j["total"] = s.total;
    j["ok"] = s.ok;
    j["errors"] = s.errors;
    j["mc_total"] = s.mc_total;
    j["mc_correct"] = s.mc_correct;
    j["accuracy"] = s.accuracy;
    j["grounding_total"] = s.grounding_total;
    j["mean_iou"] = s.mean_iou;
    nlohmann::ordered_json recall;
    for (const auto& [t, v] : s.recall_at) recall["R@" + format_seconds(t)] = v;
    j["recall_at"] = recall;
    return j;
}

EvalSummary run_eval(const std::filesystem::path& kb_root, const std::vector<EvalItem>& items,
                     const SuiteFactory& suites, const EngineConfig& config, const EvalOptions& options) {
    const ToolRegistry registry = default_registry();
    KbCostAccount account;

    // Each KB is loaded once and shared read-only by every episode on it.
    std::map<std::string, std::shared_ptr<const KnowledgeBase>> kbs;
    std::map<std::string, std::string> kb_errors;
    for (const auto& item : items) {
        if (kbs.count(item.video_id) || kb_errors.count(item.video_id)) continue;
        try {
            kbs[item.video_id] = std::make_shared<const KnowledgeBase>(load_kb(kb_root / item.video_id));
        } catch (const std::exception& e) {
            kb_errors[item.video_id] = e.what();
        }
    }

    std::vector<ItemRecord> records(items.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < items.size(); i = next++) {
            const auto& item = items[i];
            ItemRecord rec;
            rec.id = item.id;
            rec.grounding = item.is_grounding();
            try {
                const auto it = kbs.find(item.video_id);
                if (it == kbs.end()) throw CorruptionError("knowledge base for " + item.video_id + ": " + kb_errors.at(item.video_id));
                const auto& kb = *it->second;
                const BackendSuite suite = suites(item);
                std::unique_ptr<Clock> clock;
                if (options.simulated_clock) {
                    clock = std::make_unique<ManualClock>();
                } else {
                    clock = std::make_unique<SteadyClock>();
                }
                EpisodeContext ctx{kb, suite, config, registry, *clock};
                const auto report = run_episode(ctx, question_text(item), account.charge(kb.manifest));
                if (options.trace_dir) write_trace(report.trace, *options.trace_dir / (item.id + ".jsonl"));
                rec = score_item(item, report);
            } catch (const std::exception& e) {
                rec.errored = true;
                rec.error = e.what();
            }
            records[i] = std::move(rec);
        }
    };
    const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(items.size())));
    std::vector<std::thread> threads;
    for (int t = 1; t < jobs; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    return summarize(std::move(records));
}

}  // namespace avi
