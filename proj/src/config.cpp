#include "avi/config.hpp"

#include <fstream>

#include "avi/common.hpp"

namespace avi {

namespace {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

}  // namespace

EngineConfig config_from_json(const nlohmann::json& j) {
    EngineConfig c;
    if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
    read_key(j, "n_max", c.n_max);
    read_key(j, "strict_switch", c.strict_switch);
    read_key(j, "payload_limit", c.payload_limit);
    read_key(j, "clip_len", c.clip_len);
    read_key(j, "fps", c.fps);
    read_key(j, "max_edge", c.max_edge);
    read_key(j, "caption_retries", c.caption_retries);
    read_key(j, "embed_dim", c.embed_dim);
    read_key(j, "top_k", c.top_k);
    read_key(j, "iou_threshold", c.iou_threshold);
    read_key(j, "max_frames", c.max_frames);
    read_key(j, "merge_gap", c.merge_gap);
    read_key(j, "merge_coherence", c.merge_coherence);
    read_key(j, "window_size", c.window_size);
    read_key(j, "window_overlap", c.window_overlap);
    read_key(j, "identity_threshold", c.identity_threshold);
    read_key(j, "seed_threshold", c.seed_threshold);
    read_key(j, "seed_fallback", c.seed_fallback);
    read_key(j, "max_hops", c.max_hops);
    read_key(j, "graph_result_cap", c.graph_result_cap);
    read_key(j, "cluster_seed", c.cluster_seed);
    read_key(j, "mock_fixture", c.mock_fixture);
    if (auto it = j.find("lambda"); it != j.end()) {
        if (!it->is_array() || it->size() != 3) throw InvalidArgument("lambda must be [l1, l2, l3]");
        c.lambda = {(*it)[0].get<double>(), (*it)[1].get<double>(), (*it)[2].get<double>()};
    }
    if (auto it = j.find("endpoints"); it != j.end() && it->is_object()) {
        const auto& e = *it;
        read_key(e, "chat_url", c.endpoints.chat_url);
        read_key(e, "chat_model", c.endpoints.chat_model);
        read_key(e, "perception_url", c.endpoints.perception_url);
        read_key(e, "api_key", c.endpoints.api_key);
        read_key(e, "chat_timeout_s", c.endpoints.chat_timeout_s);
        read_key(e, "perception_timeout_s", c.endpoints.perception_timeout_s);
        read_key(e, "max_retries", c.endpoints.max_retries);
        read_key(e, "backoff_initial_s", c.endpoints.backoff_initial_s);
    }
    if (c.n_max < 1) throw InvalidArgument("n_max must be >= 1");
    if (!(c.clip_len > 0.0) || !(c.fps > 0.0)) throw InvalidArgument("clip_len and fps must be positive");
    if (c.top_k < 1 || c.max_frames < 1) throw InvalidArgument("top_k and max_frames must be >= 1");
    if (c.window_size < 1 || c.window_overlap < 0 || c.window_overlap >= c.window_size)
        throw InvalidArgument("window_overlap must be in [0, window_size)");
    return c;
}

nlohmann::json config_to_json(const EngineConfig& c) {
    nlohmann::ordered_json j;
    j["n_max"] = c.n_max;
    j["strict_switch"] = c.strict_switch;
    j["payload_limit"] = c.payload_limit;
    j["clip_len"] = c.clip_len;
    j["fps"] = c.fps;
    j["max_edge"] = c.max_edge;
    j["caption_retries"] = c.caption_retries;
    j["embed_dim"] = c.embed_dim;
    j["top_k"] = c.top_k;
    j["iou_threshold"] = c.iou_threshold;
    j["max_frames"] = c.max_frames;
    j["merge_gap"] = c.merge_gap;
    j["merge_coherence"] = c.merge_coherence;
    j["window_size"] = c.window_size;
    j["window_overlap"] = c.window_overlap;
    j["lambda"] = {c.lambda.frequency, c.lambda.centrality, c.lambda.query};
    j["identity_threshold"] = c.identity_threshold;
    j["seed_threshold"] = c.seed_threshold;
    j["seed_fallback"] = c.seed_fallback;
    j["max_hops"] = c.max_hops;
    j["graph_result_cap"] = c.graph_result_cap;
    j["cluster_seed"] = c.cluster_seed;
    j["mock_fixture"] = c.mock_fixture;
    j["endpoints"] = {{"chat_url", c.endpoints.chat_url},
                      {"chat_model", c.endpoints.chat_model},
                      {"perception_url", c.endpoints.perception_url},
                      {"chat_timeout_s", c.endpoints.chat_timeout_s},
                      {"perception_timeout_s", c.endpoints.perception_timeout_s},
                      {"max_retries", c.endpoints.max_retries},
                      {"backoff_initial_s", c.endpoints.backoff_initial_s}};
    return nlohmann::json(j);
}

EngineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument("config " + path + ": " + e.what());
    }
    return config_from_json(j);
}

}  // namespace avi
