#pragma once
// Two-stage masked attribute aggregation.
//
// Stage 1 turns the literal neighbours of an entity under each relation into
// a relation representation, weighting neighbours by how specific
// they are across the two graphs. Stage 2 stacks those per entity, compares
// the stack against the entity's cross-graph candidates, and gates each
// attribute of each representation by its consistency with the candidates before taking
// the mean over relations.
//
// The free functions below work on a single entity and mirror the
// definitions one to one. AggregationPlan + the tape ops are the batched
// path used by the model.

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ceam/features.hpp"
#include "ceam/kg.hpp"
#include "ceam/linalg.hpp"
#include "ceam/tape.hpp"

namespace ceam {

// exp(-d/(d+d')) normalised over the neighbour set. Empty input -> empty.
std::vector<double> importance_weights(std::span<const CrossDegree> degrees);

struct NeighborWeight {
    NodeId node;
    double weight;
};

// Weights over the neighbours of i under r on `side`; nullopt when there are none.
std::optional<std::vector<NeighborWeight>> neighbor_importance(const KGPair& pair, Side side,
                                                               NodeId i, RelationId r);

struct RelationRepr {
    NodeId entity;
    RelationId relation = 0;
    Vector value;
    bool present = false;
};

// value = sum_j weight_j W_r h_j. W_r is (model dim x feature dim).
RelationRepr relation_repr(const KGPair& pair, Side side, NodeId i, RelationId r,
                           const Matrix& w_r, const FeatureTable& features);

struct EntityStack {
    NodeId entity;
    Matrix value;  // relations x dim, row r = representation of relation r
};

EntityStack stack_relations(NodeId entity, std::span<const RelationRepr> reprs);

// softmax over candidates of the negated Frobenius distance between stacks. nullopt without candidates.
std::optional<std::vector<double>> candidate_correspondence(const EntityStack& self,
                                                            std::span<const EntityStack> candidates);

struct MaskGate {
    NodeId entity;
    RelationId relation = 0;
    Vector diag;
};

// gate_t = exp(-sum_k c_k (self_t - candidate_k_t)^2); all ones without candidates.
MaskGate mask_gate(const RelationRepr& self, std::span<const RelationRepr> candidates,
                   std::span<const double> correspondence);

enum class Denominator {
    present_relations,  // mean over relations the entity actually has
    all_relations,      // strict 1/|R|
};

struct EntityRepr {
    Vector h;
    bool empty = false;  // no relation present
};

EntityRepr masked_entity_repr(std::span<const MaskGate> gates, std::span<const RelationRepr> reprs,
                              Denominator denom = Denominator::present_relations);
EntityRepr mean_entity_repr(std::span<const RelationRepr> reprs,
                            Denominator denom = Denominator::present_relations);

// ---------------------------------------------------------------------------
// Batched path

struct AggregationSide {
    std::vector<NodeId> entities;  // row order of every matrix below
    // Per relation: row i = importance-weighted sum of the neighbour features.
    std::vector<Matrix> weighted_features;
    Matrix present;  // entities x relations, 1.0 where the entity has neighbours under r
    // Candidate rows into the other side's `entities`.
    std::vector<std::vector<std::uint32_t>> candidates;
};

struct AggregationPlan {
    AggregationSide source;
    AggregationSide target;
    std::size_t relations = 0;
    std::size_t feature_dim = 0;
    const AggregationSide& side(Side s) const { return s == Side::source ? source : target; }
};

// Entities of `entity_type` on both sides with their candidate sets and
// importance-weighted neighbour features.
AggregationPlan plan_aggregation(const KGPair& pair, const FeatureTable& source_features,
                                 const FeatureTable& target_features, std::string_view entity_type);

// entities x (|R| * dim): block r holds weighted_features[r] . W_r^T.
// With `rows`, only those entity rows, in that order.
ad::Var relation_stack(ad::Tape& tape, const AggregationSide& side, std::span<const ad::Var> w_r,
                       std::span<const std::uint32_t> rows = {});

enum class GateMode { masked, identity };

struct AggregationDiagnostics {
    std::size_t empty_entities = 0;
    std::size_t without_candidates = 0;
};

// rows x dim: per entity row (all rows when `rows` is empty) the (gated)
// mean of its relation rows. `self_pos` / `other_pos` map entity rows to
// stack rows when the stacks hold only a subset (empty: identity).
// Gradients flow through the Frobenius distances, the correspondence softmax
// and the exponential gates into both stacks.
ad::Var masked_aggregate(ad::Tape& tape, ad::Var self_stack, ad::Var other_stack,
                         const AggregationSide& self, std::size_t relations, GateMode mode,
                         Denominator denom, AggregationDiagnostics* diag = nullptr,
                         std::span<const std::uint32_t> rows = {},
                         std::span<const std::int32_t> self_pos = {},
                         std::span<const std::int32_t> other_pos = {});

}  // namespace ceam
