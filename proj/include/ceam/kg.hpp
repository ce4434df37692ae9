#pragma once
// Typed heterogeneous knowledge graphs and the cross-graph queries the
// alignment model needs: shared literals, cross degrees, candidate sets.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ceam {

struct NodeId {
    std::uint32_t value = 0;
    friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

using RelationId = std::uint16_t;

enum class NodeKind : std::uint8_t { entity, literal };

class KgError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public KgError {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class SchemaError : public KgError {
public:
    using KgError::KgError;
};

class LookupError : public KgError {
public:
    using KgError::KgError;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Lowercase, trim, and collapse internal whitespace runs to one space.
std::string normalize_literal(std::string_view text);

struct RelationSpec {
    std::string name;
    bool profiling = false;
};

// The schema relations split into profiling relations and the rest.
struct RelationPartition {
    std::vector<std::string> relations;
    std::vector<bool> profiling;
    double profiling_fraction = 0.0;

    std::size_t size() const { return relations.size(); }
    bool is_profiling(RelationId r) const { return profiling.at(r); }
    std::optional<RelationId> find(std::string_view name) const;
    std::size_t profiling_count() const;

    // Throws ConfigError unless 0 < epsilon < 1 - profiling_fraction.
    void validate_epsilon(double epsilon) const;

    friend bool operator==(const RelationPartition&, const RelationPartition&) = default;
};

// Every relation listed exactly once; profiling_fraction = profiling count / relation count.
RelationPartition partition_relations(std::span<const RelationSpec> specs);

// Artifacts jointly present in ICS-CERT and NVD reports: ten relations, four
// of them profiling (NVD carries no discoverer), profiling_fraction = 0.4.
RelationPartition cert_nvd_schema();
// SecurityFocus/NVD joint artifacts: five relations, four profiling, profiling_fraction = 0.8.
RelationPartition sf_nvd_schema();
// All artifact relations including hasDiscoverer (five profiling of eleven).
RelationPartition full_artifact_schema();

struct Triple {
    NodeId head;
    RelationId relation;
    NodeId tail;
    friend bool operator==(const Triple&, const Triple&) = default;
};

struct Edge {
    RelationId relation;
    NodeId node;
};

class KnowledgeGraph {
public:
    KnowledgeGraph() = default;
    explicit KnowledgeGraph(RelationPartition schema);

    NodeId add_node(std::string name, std::string type, NodeKind kind, std::string_view text = {});
    // Duplicate triples are ignored (the graph is a triple set).
    void add_triple(NodeId head, RelationId relation, NodeId tail);
    void add_triple(NodeId head, std::string_view relation, NodeId tail);

    const RelationPartition& schema() const { return schema_; }
    std::size_t node_count() const { return names_.size(); }
    std::size_t triple_count() const { return triples_.size(); }

    const std::string& name(NodeId n) const { return names_.at(n.value); }
    const std::string& type(NodeId n) const { return type_names_.at(type_of_.at(n.value)); }
    std::size_t type_index(NodeId n) const { return type_of_.at(n.value); }
    NodeKind kind(NodeId n) const { return kinds_.at(n.value); }
    const std::string& text(NodeId n) const { return texts_.at(n.value); }
    bool has_node(NodeId n) const { return n.value < names_.size(); }

    const std::vector<std::string>& type_names() const { return type_names_; }
    std::optional<NodeId> find(std::string_view name) const;
    std::optional<NodeId> find_literal(std::string_view normalized_text) const;

    std::span<const Triple> triples() const { return triples_; }
    std::span<const Edge> out_edges(NodeId n) const { return out_.at(n.value); }
    std::span<const Edge> in_edges(NodeId n) const { return in_.at(n.value); }
    // Distinct entity-kind nodes adjacent to n in either direction.
    std::span<const NodeId> entity_neighbors(NodeId n) const { return entity_nbrs_.at(n.value); }

    std::vector<NodeId> nodes_of_type(std::string_view type) const;

private:
    void check_node(NodeId n) const;

    RelationPartition schema_;
    std::vector<std::string> names_;
    std::vector<std::size_t> type_of_;
    std::vector<std::string> type_names_;
    std::vector<NodeKind> kinds_;
    std::vector<std::string> texts_;
    std::unordered_map<std::string, NodeId> by_name_;
    std::unordered_map<std::string, NodeId> by_literal_;
    std::vector<Triple> triples_;
    std::vector<std::vector<Edge>> out_;
    std::vector<std::vector<Edge>> in_;
    std::vector<std::vector<NodeId>> entity_nbrs_;
};

enum class Side : std::uint8_t { source, target };

inline Side other(Side s) { return s == Side::source ? Side::target : Side::source; }

class KGPair {
public:
    KGPair(KnowledgeGraph source, KnowledgeGraph target);

    const KnowledgeGraph& source() const { return source_; }
    const KnowledgeGraph& target() const { return target_; }
    const KnowledgeGraph& graph(Side s) const { return s == Side::source ? source_ : target_; }
    const RelationPartition& schema() const { return source_.schema(); }

    // normalized text -> (source node, target node)
    const std::map<std::string, std::pair<NodeId, NodeId>>& shared_literals() const {
        return shared_;
    }
    // The same-text literal on the other side, if any.
    std::optional<NodeId> counterpart(Side side, NodeId literal) const;

private:
    KnowledgeGraph source_;
    KnowledgeGraph target_;
    std::map<std::string, std::pair<NodeId, NodeId>> shared_;
    std::vector<std::optional<NodeId>> src_to_tgt_;
    std::vector<std::optional<NodeId>> tgt_to_src_;
};

struct CrossDegree {
    std::size_t d = 0;
    std::size_t d_prime = 0;
    friend bool operator==(const CrossDegree&, const CrossDegree&) = default;
};

// Distinct entity neighbours of j on its own side (d) and of its counterpart
// on the other side (d_prime, 0 without a counterpart).
CrossDegree cross_degree(const KGPair& pair, NodeId j);
CrossDegree cross_degree(const KGPair& pair, Side side, NodeId j);

// Entities on the other side that share a literal with i under the same
// relation, restricted to i's type. Sorted by node id.
std::vector<NodeId> candidate_set(const KGPair& pair, NodeId i);
std::vector<NodeId> candidate_set(const KGPair& pair, Side side, NodeId i);

enum class Label : std::uint8_t { negative = 0, positive = 1 };

struct AlignmentPair {
    NodeId src;
    NodeId tgt;
    Label label = Label::negative;
    friend bool operator==(const AlignmentPair&, const AlignmentPair&) = default;
};

// Node file: id \t type \t kind \t text. Triple file: head \t relation \t tail.
KnowledgeGraph load_kg(const std::filesystem::path& nodes_path,
                       const std::filesystem::path& triples_path,
                       const RelationPartition& schema);
void save_kg(const KnowledgeGraph& kg, const std::filesystem::path& nodes_path,
             const std::filesystem::path& triples_path);

// Pair file: src-id \t tgt-id \t label(0|1).
std::vector<AlignmentPair> load_pairs(const std::filesystem::path& path, const KGPair& pair);
void save_pairs(std::span<const AlignmentPair> pairs, const KGPair& kg_pair,
                const std::filesystem::path& path);

}  // namespace ceam
