#include "ceam/kg.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace ceam {

ParseError::ParseError(const std::string& file, std::size_t line, const std::string& what)
    : KgError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

std::string normalize_literal(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::optional<RelationId> RelationPartition::find(std::string_view name) const {
    for (std::size_t r = 0; r < relations.size(); ++r) {
        if (relations[r] == name) return static_cast<RelationId>(r);
    }
    return std::nullopt;
}

std::size_t RelationPartition::profiling_count() const {
    return static_cast<std::size_t>(std::count(profiling.begin(), profiling.end(), true));
}

void RelationPartition::validate_epsilon(double epsilon) const {
    if (!(epsilon > 0.0 && epsilon < 1.0 - profiling_fraction)) {
        std::ostringstream msg;
        msg << "epsilon must satisfy 0 < epsilon < 1 - profiling_fraction (profiling_fraction = " << profiling_fraction << "), got " << epsilon;
        throw ConfigError(msg.str());
    }
}

RelationPartition partition_relations(std::span<const RelationSpec> specs) {
    if (specs.empty()) throw ConfigError("schema lists no relations");
    RelationPartition p;
    std::set<std::string> seen;
    for (const auto& s : specs) {
        if (s.name.empty()) throw ConfigError("relation with empty name");
        if (!seen.insert(s.name).second) throw ConfigError("duplicate relation: " + s.name);
        p.relations.push_back(s.name);
        p.profiling.push_back(s.profiling);
    }
    if (p.relations.size() > std::numeric_limits<RelationId>::max()) {
        throw ConfigError("too many relations");
    }
    p.profiling_fraction = static_cast<double>(p.profiling_count()) / static_cast<double>(p.relations.size());
    return p;
}

RelationPartition cert_nvd_schema() {
    const RelationSpec specs[] = {
        {"hasWeakness", true},      {"hasCweId", false},       {"hasCvssV2Vector", false},
        {"hasCvssV3Vector", false}, {"hasCvssV2Score", false}, {"hasCvssV3Score", false},
        {"hasVendor", true},        {"hasProduct", true},      {"hasVersion", false},
        {"hasImpact", true},
    };
    return partition_relations(specs);
}

RelationPartition sf_nvd_schema() {
    const RelationSpec specs[] = {
        {"hasWeakness", true}, {"hasVendor", true}, {"hasProduct", true},
        {"hasVersion", false}, {"hasImpact", true},
    };
    return partition_relations(specs);
}

RelationPartition full_artifact_schema() {
    const RelationSpec specs[] = {
        {"hasWeakness", true},      {"hasCweId", false},       {"hasCvssV2Vector", false},
        {"hasCvssV3Vector", false}, {"hasCvssV2Score", false}, {"hasCvssV3Score", false},
        {"hasVendor", true},        {"hasProduct", true},      {"hasVersion", false},
        {"hasImpact", true},        {"hasDiscoverer", true},
    };
    return partition_relations(specs);
}

// ---------------------------------------------------------------------------
// KnowledgeGraph

KnowledgeGraph::KnowledgeGraph(RelationPartition schema) : schema_(std::move(schema)) {}

NodeId KnowledgeGraph::add_node(std::string name, std::string type, NodeKind kind,
                                std::string_view text) {
    if (name.empty()) throw SchemaError("node with empty id");
    if (type.empty()) throw SchemaError("node '" + name + "' has no type");
    if (by_name_.contains(name)) throw SchemaError("duplicate node id: " + name);
    std::string norm = normalize_literal(text);
    if (kind == NodeKind::literal) {
        if (norm.empty()) throw SchemaError("literal node '" + name + "' has empty text");
        if (by_literal_.contains(norm)) {
            throw SchemaError("literal text '" + norm + "' declared twice (nodes '" +
                              names_[by_literal_.at(norm).value] + "' and '" + name + "')");
        }
    }
    NodeId id{static_cast<std::uint32_t>(names_.size())};
    auto t = std::find(type_names_.begin(), type_names_.end(), type);
    if (t == type_names_.end()) {
        type_names_.push_back(type);
        t = type_names_.end() - 1;
    }
    type_of_.push_back(static_cast<std::size_t>(t - type_names_.begin()));
    by_name_.emplace(name, id);
    if (kind == NodeKind::literal) by_literal_.emplace(norm, id);
    names_.push_back(std::move(name));
    kinds_.push_back(kind);
    texts_.push_back(std::move(norm));
    out_.emplace_back();
    in_.emplace_back();
    entity_nbrs_.emplace_back();
    return id;
}

void KnowledgeGraph::check_node(NodeId n) const {
    if (!has_node(n)) throw LookupError("node index " + std::to_string(n.value) + " not in graph");
}

void KnowledgeGraph::add_triple(NodeId head, RelationId relation, NodeId tail) {
    check_node(head);
    check_node(tail);
    if (relation >= schema_.size()) throw SchemaError("relation index out of schema range");
    if (kinds_[head.value] == NodeKind::literal) {
        throw SchemaError("literal node '" + names_[head.value] + "' cannot be a triple head");
    }
    auto& out = out_[head.value];
    for (const auto& e : out) {
        if (e.relation == relation && e.node == tail) return;
    }
    triples_.push_back({head, relation, tail});
    out.push_back({relation, tail});
    in_[tail.value].push_back({relation, head});
    auto link = [this](NodeId a, NodeId b) {
        if (kinds_[b.value] != NodeKind::entity) return;
        auto& v = entity_nbrs_[a.value];
        if (std::find(v.begin(), v.end(), b) == v.end()) v.push_back(b);
    };
    link(head, tail);
    link(tail, head);
}

void KnowledgeGraph::add_triple(NodeId head, std::string_view relation, NodeId tail) {
    auto r = schema_.find(relation);
    if (!r) throw SchemaError("unknown relation: " + std::string(relation));
    add_triple(head, *r, tail);
}

std::optional<NodeId> KnowledgeGraph::find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
}

std::optional<NodeId> KnowledgeGraph::find_literal(std::string_view normalized_text) const {
    auto it = by_literal_.find(std::string(normalized_text));
    if (it == by_literal_.end()) return std::nullopt;
    return it->second;
}

std::vector<NodeId> KnowledgeGraph::nodes_of_type(std::string_view type) const {
    std::vector<NodeId> out;
    auto t = std::find(type_names_.begin(), type_names_.end(), type);
    if (t == type_names_.end()) return out;
    auto idx = static_cast<std::size_t>(t - type_names_.begin());
    for (std::uint32_t n = 0; n < type_of_.size(); ++n) {
        if (type_of_[n] == idx) out.push_back(NodeId{n});
    }
    return out;
}

// ---------------------------------------------------------------------------
// KGPair

KGPair::KGPair(KnowledgeGraph source, KnowledgeGraph target)
    : source_(std::move(source)), target_(std::move(target)) {
    if (!(source_.schema() == target_.schema())) {
        throw SchemaError("source and target graphs use different schemas");
    }
    src_to_tgt_.assign(source_.node_count(), std::nullopt);
    tgt_to_src_.assign(target_.node_count(), std::nullopt);
    for (std::uint32_t n = 0; n < source_.node_count(); ++n) {
        NodeId s{n};
        if (source_.kind(s) != NodeKind::literal) continue;
        auto t = target_.find_literal(source_.text(s));
        if (!t || target_.kind(*t) != NodeKind::literal) continue;
        shared_.emplace(source_.text(s), std::make_pair(s, *t));
        src_to_tgt_[n] = *t;
        tgt_to_src_[t->value] = s;
    }
}

std::optional<NodeId> KGPair::counterpart(Side side, NodeId literal) const {
    const auto& table = side == Side::source ? src_to_tgt_ : tgt_to_src_;
    if (literal.value >= table.size()) {
        throw LookupError("node index " + std::to_string(literal.value) + " not in graph");
    }
    return table[literal.value];
}

CrossDegree cross_degree(const KGPair& pair, NodeId j) {
    return cross_degree(pair, Side::source, j);
}

CrossDegree cross_degree(const KGPair& pair, Side side, NodeId j) {
    const auto& own = pair.graph(side);
    if (!own.has_node(j)) {
        throw LookupError("node index " + std::to_string(j.value) + " not in graph");
    }
    CrossDegree out;
    out.d = own.entity_neighbors(j).size();
    if (own.kind(j) == NodeKind::literal) {
        if (auto c = pair.counterpart(side, j)) {
            out.d_prime = pair.graph(other(side)).entity_neighbors(*c).size();
        }
    }
    return out;
}

std::vector<NodeId> candidate_set(const KGPair& pair, NodeId i) {
    return candidate_set(pair, Side::source, i);
}

std::vector<NodeId> candidate_set(const KGPair& pair, Side side, NodeId i) {
    const auto& own = pair.graph(side);
    const auto& far = pair.graph(other(side));
    if (!own.has_node(i)) {
        throw LookupError("node index " + std::to_string(i.value) + " not in graph");
    }
    const auto& type = own.type(i);
    std::vector<NodeId> out;
    for (const auto& e : own.out_edges(i)) {
        if (own.kind(e.node) != NodeKind::literal) continue;
        auto c = pair.counterpart(side, e.node);
        if (!c) continue;
        for (const auto& back : far.in_edges(*c)) {
            if (back.relation == e.relation && far.type(back.node) == type) out.push_back(back.node);
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// File formats

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find('\t', start);
        fields.push_back(line.substr(start, pos == std::string::npos ? std::string::npos
                                                                      : pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return fields;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw KgError("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw KgError("cannot write " + path.string());
    return out;
}

bool skip_line(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line.empty() || line.front() == '#';
}

}  // namespace

KnowledgeGraph load_kg(const std::filesystem::path& nodes_path,
                       const std::filesystem::path& triples_path,
                       const RelationPartition& schema) {
    KnowledgeGraph kg(schema);
    {
        auto in = open_in(nodes_path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (skip_line(line)) continue;
            auto f = split_tabs(line);
            if (f.size() != 4) {
                throw ParseError(nodes_path.string(), lineno,
                                 "expected 4 tab-separated fields, got " + std::to_string(f.size()));
            }
            NodeKind kind;
            if (f[2] == "entity") {
                kind = NodeKind::entity;
            } else if (f[2] == "literal") {
                kind = NodeKind::literal;
            } else {
                throw ParseError(nodes_path.string(), lineno, "unknown node kind '" + f[2] + "'");
            }
            try {
                kg.add_node(f[0], f[1], kind, f[3]);
            } catch (const SchemaError& e) {
                throw ParseError(nodes_path.string(), lineno, e.what());
            }
        }
    }
    auto in = open_in(triples_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (skip_line(line)) continue;
        auto f = split_tabs(line);
        if (f.size() != 3) {
            throw ParseError(triples_path.string(), lineno,
                             "expected 3 tab-separated fields, got " + std::to_string(f.size()));
        }
        auto rel = schema.find(f[1]);
        if (!rel) {
            throw SchemaError(triples_path.string() + ":" + std::to_string(lineno) +
                              ": unknown relation '" + f[1] + "'");
        }
        auto head = kg.find(f[0]);
        auto tail = kg.find(f[2]);
        if (!head || !tail) {
            throw ParseError(triples_path.string(), lineno,
                             "undeclared node '" + (head ? f[2] : f[0]) + "'");
        }
        try {
            kg.add_triple(*head, *rel, *tail);
        } catch (const SchemaError& e) {
            throw ParseError(triples_path.string(), lineno, e.what());
        }
    }
    return kg;
}

void save_kg(const KnowledgeGraph& kg, const std::filesystem::path& nodes_path,
             const std::filesystem::path& triples_path) {
    auto nodes = open_out(nodes_path);
    for (std::uint32_t n = 0; n < kg.node_count(); ++n) {
        NodeId id{n};
        nodes << kg.name(id) << '\t' << kg.type(id) << '\t'
              << (kg.kind(id) == NodeKind::entity ? "entity" : "literal") << '\t' << kg.text(id)
              << '\n';
    }
    auto triples = open_out(triples_path);
    for (const auto& t : kg.triples()) {
        triples << kg.name(t.head) << '\t' << kg.schema().relations[t.relation] << '\t'
                << kg.name(t.tail) << '\n';
    }
}

std::vector<AlignmentPair> load_pairs(const std::filesystem::path& path, const KGPair& pair) {
    auto in = open_in(path);
    std::vector<AlignmentPair> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (skip_line(line)) continue;
        auto f = split_tabs(line);
        if (f.size() != 3) {
            throw ParseError(path.string(), lineno,
                             "expected 3 tab-separated fields, got " + std::to_string(f.size()));
        }
        auto s = pair.source().find(f[0]);
        auto t = pair.target().find(f[1]);
        if (!s) throw ParseError(path.string(), lineno, "unknown source node '" + f[0] + "'");
        if (!t) throw ParseError(path.string(), lineno, "unknown target node '" + f[1] + "'");
        if (f[2] != "0" && f[2] != "1") {
            throw ParseError(path.string(), lineno, "label must be 0 or 1, got '" + f[2] + "'");
        }
        if (pair.source().kind(*s) != NodeKind::entity || pair.target().kind(*t) != NodeKind::entity) {
            throw ParseError(path.string(), lineno, "pair endpoints must be entity nodes");
        }
        out.push_back({*s, *t, f[2] == "1" ? Label::positive : Label::negative});
    }
    return out;
}

void save_pairs(std::span<const AlignmentPair> pairs, const KGPair& kg_pair,
                const std::filesystem::path& path) {
    auto out = open_out(path);
    for (const auto& p : pairs) {
        out << kg_pair.source().name(p.src) << '\t' << kg_pair.target().name(p.tgt) << '\t'
            << (p.label == Label::positive ? '1' : '0') << '\n';
    }
}

}  // namespace ceam
