#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace avi {

/// Weights of the node importance score w = l1*freq + l2*centrality + l3*query_rel.
struct ImportanceWeights {
    double frequency = 0.4;
    double centrality = 0.3;
    double query = 0.3;
    bool operator==(const ImportanceWeights&) const = default;
};

struct EndpointConfig {
    std::string chat_url;        // base URL of a chat-completions server
    std::string chat_model;
    std::string perception_url;  // base URL of the perception adapter
    std::string api_key;         // forwarded as a bearer token when non-empty
    double chat_timeout_s = 120.0;
    double perception_timeout_s = 60.0;
    int max_retries = 2;
    double backoff_initial_s = 0.5;  // doubled per retry
};

/// Engine configuration. Every key is optional in the JSON file; missing
/// keys keep the defaults below.
struct EngineConfig {
    // agent loop
    int n_max = 10;
    bool strict_switch = false;
    std::size_t payload_limit = 4000;

    // database construction
    double clip_len = 5.0;
    double fps = 2.0;
    int max_edge = 720;
    int caption_retries = 2;
    int embed_dim = 0;  // 0: take the dimension reported by the embedder

    // tools
    int top_k = 16;
    double iou_threshold = 0.5;
    int max_frames = 64;
    double merge_gap = -1.0;         // < 0: one clip length
    double merge_coherence = 0.5;
    int window_size = 16;
    int window_overlap = 2;

    // graph
    ImportanceWeights lambda;
    double identity_threshold = 0.85;
    double seed_threshold = 0.35;
    int seed_fallback = 3;
    int max_hops = 2;
    int graph_result_cap = 32;
    unsigned cluster_seed = 0;

    EndpointConfig endpoints;
    std::string mock_fixture;  // fixture directory used by --mock

    double effective_merge_gap() const { return merge_gap < 0.0 ? clip_len : merge_gap; }
};

EngineConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const EngineConfig& c);
EngineConfig load_config(const std::string& path);

}  // namespace avi
