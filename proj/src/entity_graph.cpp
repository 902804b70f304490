#include "avi/entity_graph.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <numeric>
#include <sstream>

#include "avi/prompts.hpp"
#include "avi/spectral.hpp"

namespace avi {

using nlohmann::json;

namespace {

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double cosine(const Embedding& a, const Embedding& b) {
    const double na = a.cast<double>().norm();
    const double nb = b.cast<double>().norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.cast<double>().dot(b.cast<double>()) / (na * nb);
}

void append_unique(std::vector<std::string>& into, const std::vector<std::string>& from) {
    for (const auto& v : from) {
        if (std::find(into.begin(), into.end(), v) == into.end()) into.push_back(v);
    }
}

std::optional<TimeRange> parse_range(const json& j) {
    if (!j.is_array() || j.size() != 2) return std::nullopt;
    const auto a = parse_time_value(j[0]);
    const auto b = parse_time_value(j[1]);
    if (!a || !b) return std::nullopt;
    TimeRange r{std::min(*a, *b), std::max(*a, *b)};
    if (!is_valid(r)) return std::nullopt;
    return r;
}

std::vector<std::string> string_list(const json& j) {
    std::vector<std::string> out;
    if (!j.is_array()) return out;
    for (const auto& v : j) {
        if (v.is_string() && !trim(v.get<std::string>()).empty()) out.push_back(trim(v.get<std::string>()));
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------- graph basics

std::vector<std::string> TemporalKnowledgeGraph::node_ids() const {
    std::vector<std::string> ids;
    ids.reserve(nodes.size());
    for (const auto& [id, _] : nodes) ids.push_back(id);
    return ids;
}

std::map<std::string, int> TemporalKnowledgeGraph::index() const {
    std::map<std::string, int> idx;
    int i = 0;
    for (const auto& [id, _] : nodes) idx[id] = i++;
    return idx;
}

void TemporalKnowledgeGraph::validate() const {
    for (const auto& [id, node] : nodes) {
        if (id != node.node_id) throw CorruptionError("node key " + id + " does not match node_id " + node.node_id);
    }
    for (const auto& e : edges) {
        if (!nodes.count(e.src) || !nodes.count(e.dst)) {
            throw CorruptionError("edge " + e.src + "->" + e.dst + " references a missing node");
        }
        if (e.src == e.dst) throw CorruptionError("self edge on " + e.src);
    }
    for (const auto& s : supernodes) {
        for (const auto& m : s.members) {
            if (!nodes.count(m)) throw CorruptionError("super-node " + s.super_id + " references missing " + m);
        }
    }
}

// ---------------------------------------------------------------- extraction

std::vector<std::pair<std::size_t, std::size_t>> plan_windows(std::size_t count, int size, int overlap) {
    if (size < 1 || overlap < 0 || overlap >= size) throw InvalidArgument("bad window parameters");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const auto step = static_cast<std::size_t>(size - overlap);
    for (std::size_t begin = 0; begin < count; begin += step) {
        const std::size_t end = std::min(count, begin + static_cast<std::size_t>(size));
        out.emplace_back(begin, end);
        if (end == count) break;
    }
    return out;
}

std::optional<double> parse_time_value(const json& value) {
    if (value.is_number()) {
        const double v = value.get<double>();
        return std::isfinite(v) && v >= 0.0 ? std::optional<double>(v) : std::nullopt;
    }
    if (!value.is_string()) return std::nullopt;
    std::string s = trim(value.get<std::string>());
    if (!s.empty() && (s.back() == 's' || s.back() == 'S')) s.pop_back();
    if (s.empty()) return std::nullopt;
    double total = 0.0;
    std::stringstream ss(s);
    std::string part;
    int parts = 0;
    while (std::getline(ss, part, ':')) {
        if (part.empty() || ++parts > 3) return std::nullopt;
        char* end = nullptr;
        const double v = std::strtod(part.c_str(), &end);
        if (end == part.c_str() || *end != '\0' || !std::isfinite(v) || v < 0.0) return std::nullopt;
        total = total * 60.0 + v;
    }
    return total;
}

std::optional<std::string> extract_json_object(const std::string& text) {
    const auto open = text.find('{');
    if (open == std::string::npos) return std::nullopt;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return text.substr(open, i - open + 1);
        }
    }
    return std::nullopt;
}

RawExtraction parse_extraction_reply(const std::string& reply) {
    json root;
    try {
        root = json::parse(reply);
    } catch (const json::exception&) {
        const auto repaired = extract_json_object(reply);
        if (!repaired) throw InvalidArgument("extraction reply contains no JSON object");
        try {
            root = json::parse(*repaired);
        } catch (const json::exception& e) {
            throw InvalidArgument(std::string("extraction reply is not valid JSON: ") + e.what());
        }
    }
    if (!root.is_object() || (!root.contains("video_analysis") && !root.contains("interactions"))) {
        throw InvalidArgument("extraction reply lacks video_analysis/interactions");
    }
    RawExtraction out;
    if (root.contains("video_analysis") && root.at("video_analysis").is_array()) {
        for (const auto& s : root.at("video_analysis")) {
            if (!s.is_object()) continue;
            RawSubject subject;
            if (s.contains("subject_id") && s.at("subject_id").is_string() &&
                !trim(s.at("subject_id").get<std::string>()).empty()) {
                subject.subject_id = trim(s.at("subject_id").get<std::string>());
            }
            if (s.contains("subject_name") && s.at("subject_name").is_string()) {
                subject.subject_name = trim(s.at("subject_name").get<std::string>());
            }
            if (subject.subject_name.empty()) {
                if (!subject.subject_id) {
                    out.diagnostics.push_back("subject without id or name skipped");
                    continue;
                }
                subject.subject_name = *subject.subject_id;
            }
            if (s.contains("appearance_timeline") && s.at("appearance_timeline").is_array()) {
                for (const auto& r : s.at("appearance_timeline")) {
                    if (auto range = parse_range(r)) subject.appearance_timeline.push_back(*range);
                }
            }
            if (s.contains("attributes")) subject.attributes = string_list(s.at("attributes"));
            if (s.contains("actions_events") && s.at("actions_events").is_array()) {
                for (const auto& a : s.at("actions_events")) {
                    if (!a.is_object() || !a.contains("action") || !a.at("action").is_string()) continue;
                    const auto range = a.contains("timestamp") ? parse_range(a.at("timestamp")) : std::nullopt;
                    subject.actions.push_back({a.at("action").get<std::string>(), range.value_or(TimeRange{})});
                }
            }
            out.subjects.push_back(std::move(subject));
        }
    }
    if (root.contains("interactions") && root.at("interactions").is_array()) {
        for (const auto& i : root.at("interactions")) {
            if (!i.is_object()) continue;
            RawInteraction inter;
            if (i.contains("subjects_involved")) inter.subjects_involved = string_list(i.at("subjects_involved"));
            inter.description = i.value("interaction_description", "");
            const auto range = i.contains("timestamp") ? parse_range(i.at("timestamp")) : std::nullopt;
            if (!range) {
                out.diagnostics.push_back("interaction '" + inter.description + "' has no valid timestamp; skipped");
                continue;
            }
            inter.range = *range;
            out.interactions.push_back(std::move(inter));
        }
    }
    return out;
}

void drop_unresolved_interactions(RawExtraction& extraction) {
    std::set<std::string> known;
    for (const auto& s : extraction.subjects) {
        if (s.subject_id) known.insert(*s.subject_id);
        known.insert(lower(s.subject_name));
    }
    std::vector<RawInteraction> kept;
    for (auto& inter : extraction.interactions) {
        std::vector<std::string> resolved;
        std::vector<std::string> unknown;
        for (const auto& ref : inter.subjects_involved) {
            if (known.count(ref) || known.count(lower(ref))) {
                if (std::find(resolved.begin(), resolved.end(), ref) == resolved.end()) resolved.push_back(ref);
            } else {
                unknown.push_back(ref);
            }
        }
        if (resolved.size() < 2) {
            std::string msg = "interaction '" + inter.description + "' dropped: unresolved participant(s)";
            for (const auto& u : unknown) msg += " " + u;
            extraction.diagnostics.push_back(msg);
            continue;
        }
        inter.subjects_involved = std::move(resolved);
        kept.push_back(std::move(inter));
    }
    extraction.interactions = std::move(kept);
}

RawExtraction extract_entities(const std::vector<std::string>& captions, ChatBackend& chat, int window_size,
                               int window_overlap, UsageLog* usage) {
    RawExtraction all;
    const auto windows = plan_windows(captions.size(), window_size, window_overlap);
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto [begin, end] = windows[w];
        ChatRequest req;
        req.purpose = "extract";
        std::string user = "Video captions in chronological order:\n";
        for (std::size_t i = begin; i < end; ++i) user += captions[i] + "\n";
        req.messages = {{"system", std::string(prompts::kGraphPrompt), {}, {}}, {"user", user, {}, {}}};
        std::optional<RawExtraction> parsed;
        std::string last_error;
        for (int attempt = 0; attempt < 2 && !parsed; ++attempt) {
            try {
                auto reply = chat.chat(req);
                if (usage) usage->push_back(reply.usage);
                parsed = parse_extraction_reply(reply.value.content);
            } catch (const std::exception& e) {
                last_error = e.what();
            }
        }
        if (!parsed) {
            all.diagnostics.push_back("extraction window " + std::to_string(w) + " skipped: " + last_error);
            continue;
        }
        for (auto& s : parsed->subjects) all.subjects.push_back(std::move(s));
        for (auto& i : parsed->interactions) all.interactions.push_back(std::move(i));
        for (auto& d : parsed->diagnostics) all.diagnostics.push_back(std::move(d));
    }
    drop_unresolved_interactions(all);
    return all;
}

TemporalKnowledgeGraph assemble_graph(const RawExtraction& extraction, Embedder& embedder, double identity_threshold,
                                      double duration, UsageLog* usage) {
    TemporalKnowledgeGraph graph;
    std::map<std::string, std::string> ref_to_node;  // subject ids and lowercased names
    std::map<std::string, Embedding> name_vec;       // node id -> name embedding

    std::vector<std::string> names;
    for (const auto& s : extraction.subjects) names.push_back(s.subject_name);
    std::vector<Embedding> subject_vecs;
    if (!names.empty()) {
        auto res = embedder.embed(names);
        if (usage) usage->push_back(res.usage);
        subject_vecs = std::move(res.value);
    }

    auto clamp = [&](TimeRange r) { return duration > 0.0 ? clamp_range(r, 0.0, duration) : r; };
    auto merge_into = [&](EntityNode& node, const RawSubject& s) {
        std::vector<TimeRange> timeline = node.appearance_timeline;
        for (const auto& r : s.appearance_timeline) timeline.push_back(clamp(r));
        node.appearance_timeline = interval_union(std::move(timeline));
        append_unique(node.attributes, s.attributes);
        for (auto a : s.actions) {
            a.range = clamp(a.range);
            if (std::find(node.actions.begin(), node.actions.end(), a) == node.actions.end()) node.actions.push_back(a);
        }
    };
    auto create = [&](const std::string& id, const RawSubject& s, std::size_t subject_index) -> EntityNode& {
        EntityNode node;
        node.node_id = id;
        node.name = s.subject_name;
        auto& ref = graph.nodes.emplace(id, std::move(node)).first->second;
        name_vec.emplace(id, subject_vecs[subject_index]);
        return ref;
    };

    // Subjects carrying an id first, then identity resolution for the rest.
    for (std::size_t i = 0; i < extraction.subjects.size(); ++i) {
        const auto& s = extraction.subjects[i];
        if (!s.subject_id) continue;
        auto it = graph.nodes.find(*s.subject_id);
        EntityNode& node = it != graph.nodes.end() ? it->second : create(*s.subject_id, s, i);
        merge_into(node, s);
        ref_to_node[*s.subject_id] = node.node_id;
        ref_to_node.emplace(lower(s.subject_name), node.node_id);
    }
    int generated = 0;
    for (std::size_t i = 0; i < extraction.subjects.size(); ++i) {
        const auto& s = extraction.subjects[i];
        if (s.subject_id) continue;
        std::string best_id;
        double best = -1.0;
        for (const auto& [id, vec] : name_vec) {
            const double c = cosine(vec, subject_vecs[i]);
            if (c > best) {
                best = c;
                best_id = id;
            }
        }
        EntityNode* node = nullptr;
        if (!best_id.empty() && best >= identity_threshold) {
            node = &graph.nodes.at(best_id);
        } else {
            std::string id;
            do {
                id = "Entity_" + std::to_string(++generated);
            } while (graph.nodes.count(id));
            node = &create(id, s, i);
        }
        merge_into(*node, s);
        ref_to_node.emplace(lower(s.subject_name), node->node_id);
    }

    for (const auto& inter : extraction.interactions) {
        std::vector<std::string> ends;
        for (const auto& ref : inter.subjects_involved) {
            auto it = ref_to_node.find(ref);
            if (it == ref_to_node.end()) it = ref_to_node.find(lower(ref));
            if (it == ref_to_node.end()) continue;
            if (std::find(ends.begin(), ends.end(), it->second) == ends.end()) ends.push_back(it->second);
        }
        if (ends.size() < 2) continue;
        RelationEdge edge{ends[0], ends[1], inter.description, clamp(inter.range)};
        if (std::find(graph.edges.begin(), graph.edges.end(), edge) == graph.edges.end()) {
            graph.edges.push_back(std::move(edge));
        }
    }
    return graph;
}

// ---------------------------------------------------------------- structure

std::vector<std::vector<int>> undirected_adjacency(const TemporalKnowledgeGraph& graph) {
    const auto idx = graph.index();
    std::vector<std::set<int>> sets(graph.nodes.size());
    for (const auto& e : graph.edges) {
        const int a = idx.at(e.src);
        const int b = idx.at(e.dst);
        if (a == b) continue;
        sets[static_cast<std::size_t>(a)].insert(b);
        sets[static_cast<std::size_t>(b)].insert(a);
    }
    std::vector<std::vector<int>> adj;
    adj.reserve(sets.size());
    for (const auto& s : sets) adj.emplace_back(s.begin(), s.end());
    return adj;
}

std::vector<std::vector<int>> hop_distances(const std::vector<std::vector<int>>& adjacency) {
    const auto n = adjacency.size();
    std::vector<std::vector<int>> dist(n, std::vector<int>(n, -1));
    for (std::size_t s = 0; s < n; ++s) {
        std::deque<int> queue{static_cast<int>(s)};
        dist[s][s] = 0;
        while (!queue.empty()) {
            const int v = queue.front();
            queue.pop_front();
            for (int w : adjacency[static_cast<std::size_t>(v)]) {
                if (dist[s][static_cast<std::size_t>(w)] < 0) {
                    dist[s][static_cast<std::size_t>(w)] = dist[s][static_cast<std::size_t>(v)] + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    return dist;
}

std::string node_text(const EntityNode& node) {
    std::string text = node.name;
    if (!node.attributes.empty()) {
        text += ";";
        for (std::size_t i = 0; i < node.attributes.size(); ++i) text += (i ? ", " : " ") + node.attributes[i];
    }
    return text;
}

Eigen::MatrixXd similarity_from_embeddings(const std::vector<Embedding>& unit_rows,
                                           const std::vector<std::vector<int>>& adjacency) {
    const auto n = static_cast<Eigen::Index>(unit_rows.size());
    const auto dist = hop_distances(adjacency);
    Eigen::MatrixXd s = Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const int hops = dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            if (hops < 1 || hops > 2) continue;
            const double c = std::clamp(cosine(unit_rows[static_cast<std::size_t>(i)], unit_rows[static_cast<std::size_t>(j)]), 0.0, 1.0);
            s(i, j) = c;
            s(j, i) = c;
        }
    }
    return s;
}

Eigen::MatrixXd similarity_matrix(const TemporalKnowledgeGraph& graph, Embedder& embedder, UsageLog* usage) {
    if (graph.empty()) return Eigen::MatrixXd(0, 0);
    std::vector<std::string> texts;
    for (const auto& [_, node] : graph.nodes) texts.push_back(node_text(node));
    auto res = embedder.embed(texts);
    if (usage) usage->push_back(res.usage);
    return similarity_from_embeddings(res.value, undirected_adjacency(graph));
}

SuperNode aggregate_supernode(const TemporalKnowledgeGraph& graph, const std::vector<std::string>& members,
                              std::string super_id) {
    SuperNode s;
    s.super_id = std::move(super_id);
    s.members = members;
    std::sort(s.members.begin(), s.members.end());
    std::vector<TimeRange> spans;
    for (const auto& m : s.members) {
        const auto& node = graph.nodes.at(m);
        spans.insert(spans.end(), node.appearance_timeline.begin(), node.appearance_timeline.end());
    }
    s.span = interval_union(std::move(spans));
    if (!s.members.empty()) {
        for (const auto& attr : graph.nodes.at(s.members.front()).attributes) {
            const bool shared = std::all_of(s.members.begin(), s.members.end(), [&](const std::string& m) {
                const auto& attrs = graph.nodes.at(m).attributes;
                return std::find(attrs.begin(), attrs.end(), attr) != attrs.end();
            });
            if (shared && std::find(s.common_attributes.begin(), s.common_attributes.end(), attr) ==
                              s.common_attributes.end()) {
                s.common_attributes.push_back(attr);
            }
        }
    }
    std::vector<const EntityNode*> ranked;
    for (const auto& m : s.members) ranked.push_back(&graph.nodes.at(m));
    std::stable_sort(ranked.begin(), ranked.end(), [](const EntityNode* a, const EntityNode* b) {
        return a->base_weight > b->base_weight;
    });
    s.label = "group of:";
    for (std::size_t i = 0; i < ranked.size() && i < 3; ++i) s.label += (i ? ", " : " ") + ranked[i]->name;
    return s;
}

std::vector<int> cluster_supernodes(TemporalKnowledgeGraph& graph, const Eigen::MatrixXd& similarity, unsigned seed,
                                    std::vector<std::string>* diagnostics) {
    graph.supernodes.clear();
    const auto n = static_cast<Eigen::Index>(graph.nodes.size());
    if (n < 2) return {};
    if (similarity.rows() != n || similarity.cols() != n) {
        throw InvalidArgument("similarity matrix does not match node count");
    }
    const auto part = spectral::partition(similarity, seed);
    if (!part) {
        if (diagnostics) diagnostics->push_back("eigensolver did not converge; super-nodes skipped");
        return {};
    }
    const auto ids = graph.node_ids();
    std::map<int, std::vector<std::string>> clusters;  // keyed by label, members in index order
    std::vector<int> order;                            // labels by first member index
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int label = part->labels[i];
        if (!clusters.count(label)) order.push_back(label);
        clusters[label].push_back(ids[i]);
    }
    int next = 1;
    for (int label : order) {
        const auto& members = clusters[label];
        if (members.size() > 3) {
            graph.supernodes.push_back(aggregate_supernode(graph, members, "Super_" + std::to_string(next++)));
        }
    }
    return part->labels;
}

std::vector<double> betweenness_raw(const std::vector<std::vector<int>>& adjacency) {
    const auto n = adjacency.size();
    std::vector<double> cb(n, 0.0);
    std::vector<double> sigma(n), delta(n);
    std::vector<int> dist(n);
    std::vector<std::vector<int>> preds(n);
    std::vector<int> stack;
    for (std::size_t s = 0; s < n; ++s) {
        std::fill(sigma.begin(), sigma.end(), 0.0);
        std::fill(delta.begin(), delta.end(), 0.0);
        std::fill(dist.begin(), dist.end(), -1);
        for (auto& p : preds) p.clear();
        stack.clear();
        sigma[s] = 1.0;
        dist[s] = 0;
        std::deque<int> queue{static_cast<int>(s)};
        while (!queue.empty()) {
            const int v = queue.front();
            queue.pop_front();
            stack.push_back(v);
            for (int w : adjacency[static_cast<std::size_t>(v)]) {
                const auto wi = static_cast<std::size_t>(w);
                const auto vi = static_cast<std::size_t>(v);
                if (dist[wi] < 0) {
                    dist[wi] = dist[vi] + 1;
                    queue.push_back(w);
                }
                if (dist[wi] == dist[vi] + 1) {
                    sigma[wi] += sigma[vi];
                    preds[wi].push_back(v);
                }
            }
        }
        while (!stack.empty()) {
            const auto w = static_cast<std::size_t>(stack.back());
            stack.pop_back();
            for (int v : preds[w]) {
                const auto vi = static_cast<std::size_t>(v);
                delta[vi] += sigma[vi] / sigma[w] * (1.0 + delta[w]);
            }
            if (w != s) cb[w] += delta[w];
        }
    }
    for (auto& v : cb) v /= 2.0;  // each unordered pair was counted from both ends
    return cb;
}

std::map<std::string, double> betweenness(const TemporalKnowledgeGraph& graph) {
    const auto raw = betweenness_raw(undirected_adjacency(graph));
    const double max = raw.empty() ? 0.0 : *std::max_element(raw.begin(), raw.end());
    std::map<std::string, double> out;
    std::size_t i = 0;
    for (const auto& [id, _] : graph.nodes) {
        out[id] = max > 0.0 ? raw[i] / max : 0.0;
        ++i;
    }
    return out;
}

std::map<std::string, double> degree_centrality(const TemporalKnowledgeGraph& graph) {
    const auto adj = undirected_adjacency(graph);
    std::size_t max = 0;
    for (const auto& a : adj) max = std::max(max, a.size());
    std::map<std::string, double> out;
    std::size_t i = 0;
    for (const auto& [id, _] : graph.nodes) {
        out[id] = max > 0 ? static_cast<double>(adj[i].size()) / static_cast<double>(max) : 0.0;
        ++i;
    }
    return out;
}

// ---------------------------------------------------------------- importance

std::map<std::string, std::set<std::size_t>> clip_membership(const TemporalKnowledgeGraph& graph,
                                                             const std::vector<TimeRange>& clip_ranges) {
    std::map<std::string, std::set<std::size_t>> out;
    for (const auto& [id, node] : graph.nodes) {
        auto& clips = out[id];
        for (const auto& r : node.appearance_timeline) {
            for (std::size_t c = 0; c < clip_ranges.size(); ++c) {
                const auto& clip = clip_ranges[c];
                const bool last = c + 1 == clip_ranges.size();
                if (r.length() > 0.0) {
                    if (overlap_length(r, clip) > 0.0) clips.insert(c);
                } else if (r.start >= clip.start && (r.start < clip.end || (last && r.start <= clip.end))) {
                    clips.insert(c);
                }
            }
        }
    }
    return out;
}

double frequency_score(std::size_t clips_with_node, std::size_t total_clips, double visible_seconds) {
    if (total_clips == 0) return 0.0;
    return static_cast<double>(clips_with_node) / static_cast<double>(total_clips) *
           std::log(1.0 + std::max(0.0, visible_seconds));
}

double centrality_score(double degree_norm, double betweenness_norm) {
    return 0.5 * degree_norm + 0.5 * betweenness_norm;
}

double importance(const ImportanceWeights& w, double freq, double centrality, double query_rel) {
    return w.frequency * freq + w.centrality * centrality + w.query * query_rel;
}

std::map<std::string, ImportanceComponents> base_components(const TemporalKnowledgeGraph& graph,
                                                            const std::vector<TimeRange>& clip_ranges,
                                                            const ImportanceWeights& weights) {
    const auto membership = clip_membership(graph, clip_ranges);
    const auto degree = degree_centrality(graph);
    const auto between = betweenness(graph);
    std::map<std::string, ImportanceComponents> out;
    for (const auto& [id, node] : graph.nodes) {
        ImportanceComponents c;
        c.freq = frequency_score(membership.at(id).size(), clip_ranges.size(), total_length(node.appearance_timeline));
        c.centrality = centrality_score(degree.at(id), between.at(id));
        c.weight = importance(weights, c.freq, c.centrality, 0.0);
        out[id] = c;
    }
    return out;
}

void compute_base_weights(TemporalKnowledgeGraph& graph, const std::vector<TimeRange>& clip_ranges,
                          const ImportanceWeights& weights) {
    const auto comps = base_components(graph, clip_ranges, weights);
    for (auto& [id, node] : graph.nodes) node.base_weight = comps.at(id).weight;
}

std::map<std::string, ImportanceComponents> score_importance(const TemporalKnowledgeGraph& graph,
                                                             const std::vector<TimeRange>& clip_ranges,
                                                             const std::optional<std::string>& query,
                                                             Embedder& embedder, const ImportanceWeights& weights,
                                                             UsageLog* usage) {
    auto comps = base_components(graph, clip_ranges, weights);
    if (!query || graph.empty()) return comps;
    std::vector<std::string> texts{*query};
    for (const auto& [_, node] : graph.nodes) texts.push_back(node.name);
    auto res = embedder.embed(texts);
    if (usage) usage->push_back(res.usage);
    std::size_t i = 1;
    for (auto& [id, c] : comps) {
        c.query_rel = std::clamp(cosine(res.value[i++], res.value[0]), 0.0, 1.0);
        c.weight = importance(weights, c.freq, c.centrality, c.query_rel);
    }
    return comps;
}

// ---------------------------------------------------------------- queries

NodeVectors embed_nodes(const TemporalKnowledgeGraph& graph, Embedder& embedder, UsageLog* usage) {
    NodeVectors out;
    if (graph.empty()) return out;
    std::vector<std::string> texts;
    for (const auto& [_, node] : graph.nodes) texts.push_back(node.name);
    for (const auto& [_, node] : graph.nodes) texts.push_back(node_text(node));
    auto res = embedder.embed(texts);
    if (usage) usage->push_back(res.usage);
    const auto n = graph.nodes.size();
    out.name.assign(res.value.begin(), res.value.begin() + static_cast<std::ptrdiff_t>(n));
    out.text.assign(res.value.begin() + static_cast<std::ptrdiff_t>(n), res.value.end());
    return out;
}

std::optional<GraphPath> shortest_path(const TemporalKnowledgeGraph& graph, const std::string& from,
                                       const std::string& to) {
    const auto idx = graph.index();
    if (!idx.count(from) || !idx.count(to)) return std::nullopt;
    const auto adj = undirected_adjacency(graph);
    const auto ids = graph.node_ids();
    std::vector<int> parent(ids.size(), -2);
    const int src = idx.at(from);
    const int dst = idx.at(to);
    parent[static_cast<std::size_t>(src)] = -1;
    std::deque<int> queue{src};
    while (!queue.empty() && parent[static_cast<std::size_t>(dst)] == -2) {
        const int v = queue.front();
        queue.pop_front();
        for (int w : adj[static_cast<std::size_t>(v)]) {
            if (parent[static_cast<std::size_t>(w)] == -2) {
                parent[static_cast<std::size_t>(w)] = v;
                queue.push_back(w);
            }
        }
    }
    if (parent[static_cast<std::size_t>(dst)] == -2) return std::nullopt;
    GraphPath path;
    for (int v = dst; v != -1; v = parent[static_cast<std::size_t>(v)]) path.nodes.push_back(ids[static_cast<std::size_t>(v)]);
    std::reverse(path.nodes.begin(), path.nodes.end());
    for (std::size_t i = 0; i + 1 < path.nodes.size(); ++i) {
        const auto& a = path.nodes[i];
        const auto& b = path.nodes[i + 1];
        for (std::size_t e = 0; e < graph.edges.size(); ++e) {
            const auto& edge = graph.edges[e];
            if ((edge.src == a && edge.dst == b) || (edge.src == b && edge.dst == a)) {
                path.edges.push_back(e);
                break;
            }
        }
    }
    return path;
}

GraphQueryResult query_graph(const TemporalKnowledgeGraph& graph, const GraphQuery& query,
                             const ImportanceWeights& weights, const NodeVectors& nodes, const Embedding& query_vec,
                             const std::optional<Embedding>& second_vec) {
    GraphQueryResult out;
    if (graph.empty()) return out;
    const auto ids = graph.node_ids();
    const auto n = ids.size();

    auto seed_scores = [&](const Embedding& q) {
        std::vector<double> s(n);
        for (std::size_t i = 0; i < n; ++i) s[i] = std::max(cosine(nodes.name[i], q), cosine(nodes.text[i], q));
        return s;
    };
    auto argmax = [](const std::vector<double>& v) {
        return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    };
    const auto seed = seed_scores(query_vec);

    std::vector<std::size_t> seeds;
    for (std::size_t i = 0; i < n; ++i) {
        if (seed[i] >= query.seed_threshold) seeds.push_back(i);
    }
    if (seeds.empty()) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return seed[a] > seed[b]; });
        order.resize(std::min<std::size_t>(n, static_cast<std::size_t>(std::max(query.seed_fallback, 1))));
        seeds = order;
    }

    const auto adj = undirected_adjacency(graph);
    std::vector<int> hops(n, -1);
    std::deque<std::size_t> queue;
    for (auto s : seeds) {
        hops[s] = 0;
        queue.push_back(s);
    }
    while (!queue.empty()) {
        const auto v = queue.front();
        queue.pop_front();
        if (hops[v] >= query.max_hops) continue;
        for (int w : adj[v]) {
            const auto wi = static_cast<std::size_t>(w);
            if (hops[wi] < 0) {
                hops[wi] = hops[v] + 1;
                queue.push_back(wi);
            }
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        if (hops[i] < 0) continue;
        const auto& node = graph.nodes.at(ids[i]);
        RankedEntity e;
        e.node_id = ids[i];
        e.query_rel = std::clamp(cosine(nodes.name[i], query_vec), 0.0, 1.0);
        e.weight = node.base_weight + weights.query * e.query_rel;
        e.seed_score = seed[i];
        e.hops = hops[i];
        out.entities.push_back(std::move(e));
    }
    std::stable_sort(out.entities.begin(), out.entities.end(), [](const RankedEntity& a, const RankedEntity& b) {
        if (a.weight != b.weight) return a.weight > b.weight;
        return a.seed_score > b.seed_score;
    });
    if (out.entities.size() > static_cast<std::size_t>(query.result_cap)) {
        out.entities.resize(static_cast<std::size_t>(query.result_cap));
    }

    std::set<std::string> kept;
    for (const auto& e : out.entities) kept.insert(e.node_id);
    for (std::size_t e = 0; e < graph.edges.size(); ++e) {
        if (kept.count(graph.edges[e].src) || kept.count(graph.edges[e].dst)) out.relations.push_back(e);
    }
    std::stable_sort(out.relations.begin(), out.relations.end(), [&](std::size_t a, std::size_t b) {
        return graph.edges[a].range.start < graph.edges[b].range.start;
    });

    if (second_vec) {
        const auto from = argmax(seed);
        const auto to = argmax(seed_scores(*second_vec));
        out.path = shortest_path(graph, ids[from], ids[to]);
    }
    return out;
}

GraphQueryResult query_graph(const TemporalKnowledgeGraph& graph, const GraphQuery& query,
                             const ImportanceWeights& weights, Embedder& embedder, UsageLog* usage) {
    if (graph.empty()) return {};
    auto vectors = embed_nodes(graph, embedder, usage);
    std::vector<std::string> texts{query.entity_query};
    if (query.second_entity) texts.push_back(*query.second_entity);
    auto res = embedder.embed(texts);
    if (usage) usage->push_back(res.usage);
    std::optional<Embedding> second;
    if (query.second_entity) second = res.value[1];
    return query_graph(graph, query, weights, vectors, res.value[0], second);
}

// ---------------------------------------------------------------- persistence

namespace {

json ranges_json(const std::vector<TimeRange>& ranges) {
    json arr = json::array();
    for (const auto& r : ranges) arr.push_back({r.start, r.end});
    return arr;
}

std::vector<TimeRange> ranges_from(const json& j) {
    std::vector<TimeRange> out;
    for (const auto& r : j) out.push_back(make_range(r.at(0).get<double>(), r.at(1).get<double>()));
    return out;
}

}  // namespace

nlohmann::ordered_json graph_to_json(const TemporalKnowledgeGraph& graph) {
    nlohmann::ordered_json root;
    root["nodes"] = nlohmann::ordered_json::array();
    for (const auto& [_, node] : graph.nodes) {
        nlohmann::ordered_json j;
        j["node_id"] = node.node_id;
        j["name"] = node.name;
        j["attributes"] = node.attributes;
        j["actions"] = nlohmann::ordered_json::array();
        for (const auto& a : node.actions) {
            j["actions"].push_back({{"description", a.description}, {"t_start", a.range.start}, {"t_end", a.range.end}});
        }
        j["appearance_timeline"] = ranges_json(node.appearance_timeline);
        j["base_weight"] = node.base_weight;
        root["nodes"].push_back(std::move(j));
    }
    root["edges"] = nlohmann::ordered_json::array();
    for (const auto& e : graph.edges) {
        nlohmann::ordered_json j;
        j["src"] = e.src;
        j["dst"] = e.dst;
        j["description"] = e.description;
        j["t_start"] = e.range.start;
        j["t_end"] = e.range.end;
        root["edges"].push_back(std::move(j));
    }
    root["supernodes"] = nlohmann::ordered_json::array();
    for (const auto& s : graph.supernodes) {
        nlohmann::ordered_json j;
        j["super_id"] = s.super_id;
        j["members"] = s.members;
        j["label"] = s.label;
        j["span"] = ranges_json(s.span);
        j["common_attributes"] = s.common_attributes;
        root["supernodes"].push_back(std::move(j));
    }
    return root;
}

TemporalKnowledgeGraph graph_from_json(const json& j) {
    TemporalKnowledgeGraph g;
    try {
        for (const auto& jn : j.at("nodes")) {
            EntityNode node;
            node.node_id = jn.at("node_id").get<std::string>();
            node.name = jn.at("name").get<std::string>();
            node.attributes = jn.at("attributes").get<std::vector<std::string>>();
            for (const auto& a : jn.at("actions")) {
                node.actions.push_back({a.at("description").get<std::string>(),
                                        make_range(a.at("t_start").get<double>(), a.at("t_end").get<double>())});
            }
            node.appearance_timeline = ranges_from(jn.at("appearance_timeline"));
            node.base_weight = jn.at("base_weight").get<double>();
            const auto id = node.node_id;
            if (!g.nodes.emplace(id, std::move(node)).second) throw CorruptionError("duplicate node id " + id);
        }
        for (const auto& je : j.at("edges")) {
            g.edges.push_back({je.at("src").get<std::string>(), je.at("dst").get<std::string>(),
                               je.at("description").get<std::string>(),
                               make_range(je.at("t_start").get<double>(), je.at("t_end").get<double>())});
        }
        for (const auto& js : j.at("supernodes")) {
            g.supernodes.push_back({js.at("super_id").get<std::string>(),
                                    js.at("members").get<std::vector<std::string>>(), js.at("label").get<std::string>(),
                                    ranges_from(js.at("span")),
                                    js.at("common_attributes").get<std::vector<std::string>>()});
        }
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("graph.json: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw CorruptionError(std::string("graph.json: ") + e.what());
    }
    g.validate();
    return g;
}

}  // namespace avi
