#pragma once
// Relation-aware GNN layers with partitioned attention, the traditional
// (GAT-style) attention used by the ablation, and the pair classifier.

#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ceam/kg.hpp"
#include "ceam/linalg.hpp"
#include "ceam/tape.hpp"

namespace ceam {

struct Tensor {
    std::string name;
    Matrix value;
};

// Named learnable tensors in a fixed order.
class ModelParams {
public:
    Matrix& add(std::string name, Matrix value);
    Matrix& at(std::string_view name);
    const Matrix& at(std::string_view name) const;
    const Matrix* find(std::string_view name) const;
    bool contains(std::string_view name) const { return find(name) != nullptr; }

    std::vector<Tensor>& tensors() { return tensors_; }
    const std::vector<Tensor>& tensors() const { return tensors_; }
    std::size_t scalar_count() const;
    bool all_finite() const;

    // Free-form metadata persisted with the checkpoint (dims, schema, epsilon ...).
    std::map<std::string, std::string> meta;

    friend bool operator==(const ModelParams& a, const ModelParams& b);

private:
    std::vector<Tensor> tensors_;
};

// Uniform in +-sqrt(6 / fan_in) where fan_in is the column count.
Matrix init_uniform_fan_in(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Standalone definitions

// cosine(W_t h_i, W_r h_j); 0 when either transformed vector is zero.
double node_attention(const Vector& h_i, const Vector& h_j, const Matrix& w_t, const Matrix& w_r);
double cosine(const Vector& a, const Vector& b);

// 1/2 + delta for the profiling (profiling_fraction + eps) and non-profiling (1 - profiling_fraction - eps) groups.
double group_mass(const RelationPartition& partition, bool profiling, double epsilon);

// Attention weight for every relation present in `mean_scores` (relation -> mean node
// attention). Each group is softmaxed on its own and scaled by its mass.
std::map<RelationId, double> partitioned_attention(const RelationPartition& partition,
                                                   const std::map<RelationId, double>& mean_scores,
                                                   double epsilon);

double leaky_relu(double x, double slope);

// softmax over all neighbour edges of leaky(w_r . [h_i | m_e]).
std::vector<double> traditional_attention(const Vector& h_i, std::span<const Vector> messages,
                                          std::span<const Vector> w_r_per_edge, double slope);

// sigmoid(w2 . relu(W1 |a - b| + b1) + b2)
double classifier_forward(const Vector& h_src, const Vector& h_tgt, const Matrix& w1,
                          const Vector& b1, const Matrix& w2, double b2);

// ---------------------------------------------------------------------------
// Batched layers

// Out-edges of every node grouped by relation. A slot is a distinct
// (relation, tail) whose message W_r h_tail is shared by all heads.
struct MessageGraph {
    std::size_t nodes = 0;
    std::vector<std::uint32_t> node_type;  // index into the model's type list
    std::vector<std::uint32_t> slot_tail;
    std::vector<std::uint32_t> slot_relation;

    struct Group {
        RelationId relation;
        std::uint32_t begin;  // into edge_slot
        std::uint32_t end;
    };
    std::vector<std::uint32_t> group_begin;  // nodes + 1 offsets into groups
    std::vector<Group> groups;
    std::vector<std::uint32_t> edge_slot;

    std::size_t edge_count() const { return edge_slot.size(); }
};

MessageGraph build_message_graph(const KnowledgeGraph& kg, const std::vector<std::string>& type_list);

// Sorted union of `heads` and the tails of their out-edges.
std::vector<std::uint32_t> with_tails(const MessageGraph& g, std::span<const std::uint32_t> heads);

// The part of `g` feeding `heads` (which become nodes 0..n-1); slot tails are
// renumbered through `tail_row` (full node id -> row of the layer input).
MessageGraph restrict_graph(const MessageGraph& g, std::span<const std::uint32_t> heads,
                            std::span<const std::int32_t> tail_row);

struct AttentionTrace {
    // per (node, relation) with neighbours
    std::map<std::pair<std::uint32_t, RelationId>, double> relation_weight;
    // per edge in edge_slot order
    std::vector<double> node_scores;
};

// Per node: sum over out-edges of cosine(self, message) * relation weight *
// message. Nodes without out-edges get zeros.
ad::Var partitioned_attention_aggregate(ad::Tape& tape, ad::Var self, ad::Var messages,
                                        const MessageGraph& graph, const RelationPartition& partition,
                                        double epsilon, AttentionTrace* trace = nullptr);

// Per node: sum over out-edges of weight * message, the weights a softmax
// over all the node's edges of leaky(w_att[r] . [h | message]). `w_att` is
// relations x 2d.
ad::Var traditional_attention_aggregate(ad::Tape& tape, ad::Var h_prev, ad::Var messages, ad::Var w_att,
                                        const MessageGraph& graph, double slope);

}  // namespace ceam
