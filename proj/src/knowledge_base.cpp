#include "avi/knowledge_base.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>


namespace avi {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- basics

std::vector<TimeRange> KnowledgeBase::clip_ranges() const {
    std::vector<TimeRange> out;
    out.reserve(clips.size());
    for (const auto& c : clips) out.push_back(c.range);
    return out;
}

std::vector<std::string> KnowledgeBase::captions() const {
    std::vector<std::string> out;
    out.reserve(clips.size());
    for (const auto& c : clips) out.push_back(c.caption);
    return out;
}

void KnowledgeBase::validate() const {
    if (manifest.clip_len <= 0.0 || manifest.fps <= 0.0 || manifest.embed_dim <= 0) {
        throw CorruptionError("manifest has non-positive clip_len, fps or embed_dim");
    }
    if (manifest.clip_count != static_cast<int>(clips.size())) {
        throw CorruptionError("manifest clip_count " + std::to_string(manifest.clip_count) + " but " +
                              std::to_string(clips.size()) + " clip records");
    }
    if (manifest.node_count != static_cast<int>(graph.nodes.size())) {
        throw CorruptionError("manifest node_count " + std::to_string(manifest.node_count) + " but " +
                              std::to_string(graph.nodes.size()) + " graph nodes");
    }
    if (embeddings.rows() != static_cast<Eigen::Index>(clips.size()) ||
        (embeddings.rows() > 0 && embeddings.cols() != manifest.embed_dim)) {
        throw CorruptionError("embedding matrix shape does not match the manifest");
    }
    for (std::size_t i = 0; i < clips.size(); ++i) {
        if (clips[i].clip_id != static_cast<int>(i)) {
            throw CorruptionError("clip " + std::to_string(i) + " carries clip_id " + std::to_string(clips[i].clip_id));
        }
    }
    graph.validate();
}

bool same_kb(const KnowledgeBase& a, const KnowledgeBase& b) {
    if (!(a.manifest == b.manifest) || a.clips != b.clips || !(a.graph == b.graph)) return false;
    if (a.embeddings.rows() != b.embeddings.rows() || a.embeddings.cols() != b.embeddings.cols()) return false;
    const auto bytes = static_cast<std::size_t>(a.embeddings.size()) * sizeof(float);
    return bytes == 0 || std::memcmp(a.embeddings.data(), b.embeddings.data(), bytes) == 0;
}

std::vector<TimeRange> plan_segments(double duration, double clip_len) {
    if (!(duration > 0.0) || !std::isfinite(duration)) throw InvalidArgument("duration must be positive");
    if (!(clip_len > 0.0) || !std::isfinite(clip_len)) throw InvalidArgument("clip_len must be positive");
    std::vector<TimeRange> out;
    for (std::size_t i = 0;; ++i) {
        const double start = static_cast<double>(i) * clip_len;
        if (start >= duration) break;
        out.push_back({start, std::min(static_cast<double>(i + 1) * clip_len, duration)});
    }
    return out;
}

// ---------------------------------------------------------------- captions

namespace {

std::vector<std::string> text_list(const json& j) {
    std::vector<std::string> out;
    if (j.is_string()) {
        out.push_back(j.get<std::string>());
    } else if (j.is_array()) {
        for (const auto& v : j) {
            if (v.is_string()) out.push_back(v.get<std::string>());
        }
    }
    return out;
}

SubjectEntry subject_from(const std::string& key, const json& j, const TimeRange& clip) {
    SubjectEntry s;
    s.local_key = key;
    if (j.contains("name") && j.at("name").is_string()) s.name = j.at("name").get<std::string>();
    if (s.name.empty()) s.name = key;
    if (j.contains("appearance")) s.appearance = text_list(j.at("appearance"));
    if (j.contains("identity")) s.identity = text_list(j.at("identity"));
    const auto seen = j.contains("first_seen") ? parse_time_value(j.at("first_seen")) : std::nullopt;
    s.first_seen = std::clamp(seen.value_or(clip.start), clip.start, clip.end);
    return s;
}

}  // namespace

CaptionDocument parse_caption_document(const std::string& raw_reply, const TimeRange& clip) {
    CaptionDocument doc;
    json root;
    bool parsed = false;
    try {
        root = json::parse(raw_reply);
        parsed = root.is_object();
    } catch (const json::exception&) {
    }
    if (!parsed) {
        if (const auto repaired = extract_json_object(raw_reply)) {
            try {
                root = json::parse(*repaired);
                parsed = root.is_object();
            } catch (const json::exception&) {
            }
        }
    }
    if (!parsed) {
        doc.caption = raw_reply;
        doc.diagnostic = "caption reply is not a JSON object; raw text kept";
        return doc;
    }
    if (root.contains("clip_description") && root.at("clip_description").is_string()) {
        doc.caption = root.at("clip_description").get<std::string>();
    } else {
        doc.caption = raw_reply;
        doc.diagnostic = "caption reply lacks clip_description; raw text kept";
    }
    if (root.contains("subject_registry")) {
        const auto& reg = root.at("subject_registry");
        if (reg.is_object()) {
            for (const auto& [key, value] : reg.items()) {
                if (value.is_object()) doc.registry.push_back(subject_from(key, value, clip));
            }
        } else if (reg.is_array()) {
            for (std::size_t i = 0; i < reg.size(); ++i) {
                if (reg[i].is_object()) doc.registry.push_back(subject_from("subject_" + std::to_string(i + 1), reg[i], clip));
            }
        }
    }
    return doc;
}

Embedding normalize_embedding(const Embedding& v, bool* replaced) {
    const double norm = v.cast<double>().norm();
    if (replaced) *replaced = false;
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        if (replaced) *replaced = true;
        Embedding e1 = Embedding::Zero(v.size());
        if (v.size() > 0) e1[0] = 1.0f;
        return e1;
    }
    return (v.cast<double>() / norm).cast<float>();
}

// ---------------------------------------------------------------- search

std::vector<SearchHit> top_k_search(const EmbeddingMatrix& rows, const Embedding& query, int k) {
    if (k < 1) throw InvalidArgument("k must be at least 1");
    if (rows.rows() > 0 && query.size() != rows.cols()) {
        throw InvalidArgument("query dimension " + std::to_string(query.size()) + " does not match " +
                              std::to_string(rows.cols()));
    }
    const auto n = static_cast<std::size_t>(rows.rows());
    if (n == 0) return {};
    const Eigen::VectorXd q = query.cast<double>();
    const double qn = q.norm();
    std::vector<SearchHit> hits(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double dot = rows.row(static_cast<Eigen::Index>(i)).cast<double>().dot(q.transpose());
        hits[i] = {static_cast<int>(i), qn > 0.0 ? dot / qn : 0.0};
    }
    const auto take = std::min(n, static_cast<std::size_t>(k));
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(),
                      [](const SearchHit& a, const SearchHit& b) {
                          if (a.score != b.score) return a.score > b.score;
                          return a.clip_id < b.clip_id;
                      });
    hits.resize(take);
    return hits;
}

std::vector<SearchHit> top_k_search(const KnowledgeBase& kb, const Embedding& query, int k) {
    if (query.size() != kb.manifest.embed_dim) {
        throw InvalidArgument("query dimension " + std::to_string(query.size()) + " does not match embed_dim " +
                              std::to_string(kb.manifest.embed_dim));
    }
    return top_k_search(kb.embeddings, query, k);
}

// ---------------------------------------------------------------- serialization

nlohmann::ordered_json manifest_to_json(const Manifest& m) {
    nlohmann::ordered_json j;
    j["schema_version"] = m.schema_version;
    j["video_id"] = m.video_id;
    j["video_ref"] = m.video_ref;
    j["duration"] = m.duration;
    j["clip_len"] = m.clip_len;
    j["fps"] = m.fps;
    j["embed_dim"] = m.embed_dim;
    j["clip_count"] = m.clip_count;
    j["node_count"] = m.node_count;
    j["db_cost"] = {{"tokens_in", m.db_cost.tokens_in},
                    {"tokens_out", m.db_cost.tokens_out},
                    {"micros", m.db_cost.micros}};
    j["diagnostics"] = m.diagnostics;
    return j;
}

Manifest manifest_from_json(const json& j) {
    Manifest m;
    try {
        m.schema_version = j.at("schema_version").get<int>();
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("manifest.json: ") + e.what());
    }
    if (m.schema_version != kSchemaVersion) {
        throw VersionError("knowledge base schema_version " + std::to_string(m.schema_version) +
                           " is not supported (expected " + std::to_string(kSchemaVersion) + ")");
    }
    try {
        m.video_id = j.at("video_id").get<std::string>();
        m.video_ref = j.value("video_ref", m.video_id);
        m.duration = j.at("duration").get<double>();
        m.clip_len = j.at("clip_len").get<double>();
        m.fps = j.at("fps").get<double>();
        m.embed_dim = j.at("embed_dim").get<int>();
        m.clip_count = j.at("clip_count").get<int>();
        m.node_count = j.at("node_count").get<int>();
        if (j.contains("db_cost")) {
            const auto& c = j.at("db_cost");
            m.db_cost = {c.at("tokens_in").get<std::int64_t>(), c.at("tokens_out").get<std::int64_t>(),
                         c.at("micros").get<std::int64_t>()};
        }
        if (j.contains("diagnostics")) m.diagnostics = j.at("diagnostics").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("manifest.json: ") + e.what());
    }
    return m;
}

nlohmann::ordered_json clip_to_json(const ClipRecord& c) {
    nlohmann::ordered_json j;
    j["clip_id"] = c.clip_id;
    j["t_start"] = c.range.start;
    j["t_end"] = c.range.end;
    j["caption"] = c.caption;
    j["subject_registry"] = nlohmann::ordered_json::array();
    for (const auto& s : c.subject_registry) {
        nlohmann::ordered_json e;
        e["local_key"] = s.local_key;
        e["name"] = s.name;
        e["appearance"] = s.appearance;
        e["identity"] = s.identity;
        e["first_seen"] = s.first_seen;
        j["subject_registry"].push_back(std::move(e));
    }
    return j;
}

ClipRecord clip_from_json(const json& j) {
    ClipRecord c;
    c.clip_id = j.at("clip_id").get<int>();
    c.range = make_range(j.at("t_start").get<double>(), j.at("t_end").get<double>());
    c.caption = j.at("caption").get<std::string>();
    for (const auto& e : j.at("subject_registry")) {
        c.subject_registry.push_back({e.at("local_key").get<std::string>(), e.at("name").get<std::string>(),
                                      e.at("appearance").get<std::vector<std::string>>(),
                                      e.at("identity").get<std::vector<std::string>>(),
                                      e.at("first_seen").get<double>()});
    }
    return c;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    return v;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptionError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("cannot write " + path.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw InvalidArgument("write failed for " + path.string());
}

json parse_file(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw CorruptionError(path.filename().string() + ": " + e.what());
    }
}

}  // namespace

void write_embeddings(const fs::path& path, const EmbeddingMatrix& m) {
    std::string out = "AVIE";
    put_u32(out, kEmbeddingFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    out.reserve(out.size() + static_cast<std::size_t>(m.size()) * 4);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        std::uint32_t bits = 0;
        const float f = m.data()[i];
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
    write_file(path, out);
}

EmbeddingMatrix read_embeddings(const fs::path& path) {
    const std::string in = read_file(path);
    if (in.size() < 16 || in.compare(0, 4, "AVIE") != 0) throw CorruptionError("embeddings.bin: bad header");
    const auto version = get_u32(in, 4);
    if (version != kEmbeddingFormatVersion) {
        throw VersionError("embeddings.bin format version " + std::to_string(version) + " is not supported");
    }
    const std::uint64_t rows = get_u32(in, 8);
    const std::uint64_t dim = get_u32(in, 12);
    const std::uint64_t expected = 16 + rows * dim * 4;
    if (in.size() != expected) {
        throw CorruptionError("embeddings.bin: expected " + std::to_string(expected) + " bytes for " +
                              std::to_string(rows) + "x" + std::to_string(dim) + ", found " +
                              std::to_string(in.size()));
    }
    EmbeddingMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const std::uint32_t bits = get_u32(in, 16 + static_cast<std::size_t>(i) * 4);
        std::memcpy(m.data() + i, &bits, 4);
    }
    return m;
}

void save_kb(const KnowledgeBase& kb, const fs::path& dir) {
    kb.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw InvalidArgument("cannot create directory " + dir.string());
    write_file(dir / "manifest.json", manifest_to_json(kb.manifest).dump(2) + "\n");
    std::string clips;
    for (const auto& c : kb.clips) clips += clip_to_json(c).dump() + "\n";
    write_file(dir / "clips.jsonl", clips);
    write_file(dir / "graph.json", graph_to_json(kb.graph).dump(2) + "\n");
    write_embeddings(dir / "embeddings.bin", kb.embeddings);
}

KnowledgeBase load_kb(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw CorruptionError("knowledge base directory not found: " + dir.string());
    if (!fs::exists(dir / "manifest.json")) throw CorruptionError("missing manifest.json in " + dir.string());
    KnowledgeBase kb;
    kb.manifest = manifest_from_json(parse_file(dir / "manifest.json"));
    {
        std::istringstream in(read_file(dir / "clips.jsonl"));
        std::string line;
        while (std::getline(in, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                kb.clips.push_back(clip_from_json(json::parse(line)));
            } catch (const json::exception& e) {
                throw CorruptionError(std::string("clips.jsonl: ") + e.what());
            } catch (const InvalidArgument& e) {
                throw CorruptionError(std::string("clips.jsonl: ") + e.what());
            }
        }
    }
    kb.graph = graph_from_json(parse_file(dir / "graph.json"));
    kb.embeddings = read_embeddings(dir / "embeddings.bin");
    if (kb.embeddings.rows() == 0) kb.embeddings.resize(0, kb.manifest.embed_dim);
    kb.validate();
    return kb;
}

// ---------------------------------------------------------------- ingest

namespace {

std::string extraction_line(const ClipRecord& c) {
    return "[" + format_seconds(c.range.start) + "s, " + format_seconds(c.range.end) + "s] " + c.caption;
}

}  // namespace

KnowledgeBase ingest_video(const IngestRequest& request, const BackendSuite& backends, const EngineConfig& config) {
    if (!backends.captioner || !backends.embedder || !backends.chat) {
        throw InvalidArgument("ingest needs captioner, embedder and chat backends");
    }
    KnowledgeBase kb;
    auto& m = kb.manifest;
    m.video_id = request.video_id;
    m.video_ref = request.video_ref;
    m.duration = request.duration;
    m.clip_len = config.clip_len;
    m.fps = config.fps;
    UsageLog usage;

    const auto segments = plan_segments(request.duration, config.clip_len);
    for (std::size_t i = 0; i < segments.size(); ++i) {
        ClipRecord clip;
        clip.clip_id = static_cast<int>(i);
        clip.range = segments[i];
        std::optional<std::string> raw;
        std::string last_error;
        for (int attempt = 0; attempt <= config.caption_retries && !raw; ++attempt) {
            try {
                auto res = backends.captioner->caption(request.video_ref, clip.range, config.fps, config.max_edge);
                usage.push_back(res.usage);
                raw = std::move(res.value);
            } catch (const BackendError& e) {
                last_error = e.what();
            }
        }
        if (raw) {
            auto doc = parse_caption_document(*raw, clip.range);
            clip.caption = std::move(doc.caption);
            clip.subject_registry = std::move(doc.registry);
            if (!doc.diagnostic.empty()) m.diagnostics.push_back("clip " + std::to_string(i) + ": " + doc.diagnostic);
        } else {
            m.diagnostics.push_back("clip " + std::to_string(i) + ": captioner failed after " +
                                    std::to_string(config.caption_retries + 1) + " attempts: " + last_error);
        }
        kb.clips.push_back(std::move(clip));
    }

    const int expected_dim = config.embed_dim > 0 ? config.embed_dim : backends.embedder->dimension();
    if (!kb.clips.empty()) {
        auto res = embed_checked(*backends.embedder, kb.captions(), expected_dim);
        usage.push_back(res.usage);
        const auto d = res.value.front().size();
        for (const auto& v : res.value) {
            if (v.size() != d) throw IngestError("embedder returned rows of different dimension");
        }
        kb.embeddings.resize(static_cast<Eigen::Index>(res.value.size()), d);
        for (std::size_t i = 0; i < res.value.size(); ++i) {
            bool replaced = false;
            kb.embeddings.row(static_cast<Eigen::Index>(i)) = normalize_embedding(res.value[i], &replaced).transpose();
            if (replaced) m.diagnostics.push_back("clip " + std::to_string(i) + ": zero embedding replaced by e1");
        }
        m.embed_dim = static_cast<int>(d);
    } else {
        m.embed_dim = expected_dim > 0 ? expected_dim : 1;
        kb.embeddings.resize(0, m.embed_dim);
    }

    std::vector<std::string> lines;
    for (const auto& c : kb.clips) lines.push_back(extraction_line(c));
    auto extraction = extract_entities(lines, *backends.chat, config.window_size, config.window_overlap, &usage);
    for (auto& d : extraction.diagnostics) m.diagnostics.push_back("graph: " + d);
    kb.graph = assemble_graph(extraction, *backends.embedder, config.identity_threshold, request.duration, &usage);
    compute_base_weights(kb.graph, kb.clip_ranges(), config.lambda);
    if (kb.graph.nodes.size() >= 2) {
        const auto s = similarity_matrix(kb.graph, *backends.embedder, &usage);
        std::vector<std::string> diag;
        cluster_supernodes(kb.graph, s, config.cluster_seed, &diag);
        for (auto& d : diag) m.diagnostics.push_back("graph: " + d);
    }

    m.clip_count = static_cast<int>(kb.clips.size());
    m.node_count = static_cast<int>(kb.graph.nodes.size());
    for (const auto& u : usage) m.db_cost += u.cost;
    kb.validate();
    return kb;
}

}  // namespace avi
