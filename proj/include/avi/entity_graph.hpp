#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "avi/backends.hpp"
#include "avi/common.hpp"
#include "avi/config.hpp"

namespace avi {

using UsageLog = std::vector<CallUsage>;

struct EntityAction {
    std::string description;
    TimeRange range;
    bool operator==(const EntityAction&) const = default;
};

struct EntityNode {
    std::string node_id;
    std::string name;
    std::vector<std::string> attributes;
    std::vector<EntityAction> actions;
    std::vector<TimeRange> appearance_timeline;  // sorted, non-overlapping
    double base_weight = 0.0;                    // lambda1*freq + lambda2*centrality
    bool operator==(const EntityNode&) const = default;
};

struct RelationEdge {
    std::string src;
    std::string dst;
    std::string description;
    TimeRange range;
    bool operator==(const RelationEdge&) const = default;
};

struct SuperNode {
    std::string super_id;
    std::vector<std::string> members;
    std::string label;
    std::vector<TimeRange> span;  // union of member timelines
    std::vector<std::string> common_attributes;
    bool operator==(const SuperNode&) const = default;
};

struct TemporalKnowledgeGraph {
    std::map<std::string, EntityNode> nodes;  // ordered by node_id
    std::vector<RelationEdge> edges;
    std::vector<SuperNode> supernodes;

    bool operator==(const TemporalKnowledgeGraph&) const = default;
    bool empty() const { return nodes.empty(); }
    std::vector<std::string> node_ids() const;
    /// Index of each node in node_ids() order (the row order of all matrices).
    std::map<std::string, int> index() const;
    /// Throws CorruptionError if an edge or super-node references a missing node.
    void validate() const;
};

// ---------------------------------------------------------------- extraction

struct RawSubject {
    std::optional<std::string> subject_id;
    std::string subject_name;
    std::vector<TimeRange> appearance_timeline;
    std::vector<std::string> attributes;
    std::vector<EntityAction> actions;
};

struct RawInteraction {
    std::vector<std::string> subjects_involved;
    std::string description;
    TimeRange range;
};

struct RawExtraction {
    std::vector<RawSubject> subjects;
    std::vector<RawInteraction> interactions;
    std::vector<std::string> diagnostics;
};

/// [begin, end) caption index windows of `size` with `overlap` shared captions.
std::vector<std::pair<std::size_t, std::size_t>> plan_windows(std::size_t count, int size, int overlap);

/// Seconds from a number, "12.5", "12.5s", "mm:ss" or "hh:mm:ss".
std::optional<double> parse_time_value(const nlohmann::json& value);

/// First '{' to its matching '}' (string-aware). nullopt without a balanced object.
std::optional<std::string> extract_json_object(const std::string& text);

/// Parses one extraction reply ({video_analysis, interactions}). Throws
/// InvalidArgument when no usable object can be recovered.
RawExtraction parse_extraction_reply(const std::string& reply);

/// Windowed extraction over the chronological captions. Each window gets one
/// retry; a window that still fails is skipped with a diagnostic.
/// Interactions whose participants cannot be resolved are dropped.
RawExtraction extract_entities(const std::vector<std::string>& captions, ChatBackend& chat, int window_size = 16,
                               int window_overlap = 2, UsageLog* usage = nullptr);

/// Drops interactions with fewer than two resolvable participants.
void drop_unresolved_interactions(RawExtraction& extraction);

/// Merges subjects into nodes and interactions into directed edges.
TemporalKnowledgeGraph assemble_graph(const RawExtraction& extraction, Embedder& embedder,
                                      double identity_threshold = 0.85, double duration = -1.0,
                                      UsageLog* usage = nullptr);

// ---------------------------------------------------------------- structure

/// Undirected simple-graph adjacency in node_ids() order, neighbours sorted.
std::vector<std::vector<int>> undirected_adjacency(const TemporalKnowledgeGraph& graph);
/// All-pairs BFS hop counts; -1 when unreachable.
std::vector<std::vector<int>> hop_distances(const std::vector<std::vector<int>>& adjacency);

/// "name; attr1, attr2" text used for node similarity.
std::string node_text(const EntityNode& node);

/// S_ij = max(0, cos(node text i, node text j)) when i and j are within two
/// undirected hops, else 0; S_ii = 1.
Eigen::MatrixXd similarity_matrix(const TemporalKnowledgeGraph& graph, Embedder& embedder, UsageLog* usage = nullptr);
Eigen::MatrixXd similarity_from_embeddings(const std::vector<Embedding>& unit_rows,
                                           const std::vector<std::vector<int>>& adjacency);

SuperNode aggregate_supernode(const TemporalKnowledgeGraph& graph, const std::vector<std::string>& members,
                              std::string super_id);

/// Spectral clustering of S; every cluster with more than three members
/// becomes a super-node. Returns the cluster labels (empty when skipped).
std::vector<int> cluster_supernodes(TemporalKnowledgeGraph& graph, const Eigen::MatrixXd& similarity,
                                    unsigned seed = 0, std::vector<std::string>* diagnostics = nullptr);

/// Brandes betweenness over an undirected adjacency (raw pair counts).
std::vector<double> betweenness_raw(const std::vector<std::vector<int>>& adjacency);
/// Normalized by the maximum (all zeros stay zeros).
std::map<std::string, double> betweenness(const TemporalKnowledgeGraph& graph);
std::map<std::string, double> degree_centrality(const TemporalKnowledgeGraph& graph);

// ---------------------------------------------------------------- importance

/// Clips (by index into clip_ranges) that each node appears in.
std::map<std::string, std::set<std::size_t>> clip_membership(const TemporalKnowledgeGraph& graph,
                                                             const std::vector<TimeRange>& clip_ranges);

double frequency_score(std::size_t clips_with_node, std::size_t total_clips, double visible_seconds);
double centrality_score(double degree_norm, double betweenness_norm);
double importance(const ImportanceWeights& w, double freq, double centrality, double query_rel);

struct ImportanceComponents {
    double freq = 0.0;
    double centrality = 0.0;
    double query_rel = 0.0;
    double weight = 0.0;
};

/// Query-independent components per node (query_rel = 0).
std::map<std::string, ImportanceComponents> base_components(const TemporalKnowledgeGraph& graph,
                                                            const std::vector<TimeRange>& clip_ranges,
                                                            const ImportanceWeights& weights);
/// Stores lambda1*freq + lambda2*centrality on every node.
void compute_base_weights(TemporalKnowledgeGraph& graph, const std::vector<TimeRange>& clip_ranges,
                          const ImportanceWeights& weights);
/// Full w(n) including the query term (0 when no query).
std::map<std::string, ImportanceComponents> score_importance(const TemporalKnowledgeGraph& graph,
                                                             const std::vector<TimeRange>& clip_ranges,
                                                             const std::optional<std::string>& query,
                                                             Embedder& embedder, const ImportanceWeights& weights,
                                                             UsageLog* usage = nullptr);

// ---------------------------------------------------------------- queries

struct GraphQuery {
    std::string entity_query;
    std::optional<std::string> second_entity;
    int max_hops = 2;
    double seed_threshold = 0.35;
    int seed_fallback = 3;
    int result_cap = 32;
};

struct RankedEntity {
    std::string node_id;
    double weight = 0.0;
    double query_rel = 0.0;
    double seed_score = 0.0;
    int hops = 0;  // distance from the nearest seed
};

struct GraphPath {
    std::vector<std::string> nodes;
    std::vector<std::size_t> edges;  // index into graph.edges per consecutive pair
};

struct GraphQueryResult {
    std::vector<RankedEntity> entities;  // by weight, descending
    std::vector<std::size_t> relations;  // edges touching a returned entity, by time
    std::optional<GraphPath> path;
};

/// Node vectors needed for query ranking, computed in one embedder call.
struct NodeVectors {
    std::vector<Embedding> name;  // node_ids() order
    std::vector<Embedding> text;  // name + attributes
};
NodeVectors embed_nodes(const TemporalKnowledgeGraph& graph, Embedder& embedder, UsageLog* usage = nullptr);

GraphQueryResult query_graph(const TemporalKnowledgeGraph& graph, const GraphQuery& query,
                             const ImportanceWeights& weights, Embedder& embedder, UsageLog* usage = nullptr);
/// Same traversal from precomputed vectors. Query vectors need not be normalized.
GraphQueryResult query_graph(const TemporalKnowledgeGraph& graph, const GraphQuery& query,
                             const ImportanceWeights& weights, const NodeVectors& nodes, const Embedding& query_vec,
                             const std::optional<Embedding>& second_vec);

std::optional<GraphPath> shortest_path(const TemporalKnowledgeGraph& graph, const std::string& from,
                                       const std::string& to);

// ---------------------------------------------------------------- persistence

nlohmann::ordered_json graph_to_json(const TemporalKnowledgeGraph& graph);
TemporalKnowledgeGraph graph_from_json(const nlohmann::json& j);

}  // namespace avi
