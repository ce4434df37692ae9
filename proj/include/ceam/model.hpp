#pragma once
// The full alignment model: aggregate layer -> two GNN layers -> pair
// classifier, plus the ablation variants.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ceam/aggregation.hpp"
#include "ceam/features.hpp"
#include "ceam/gnn.hpp"
#include "ceam/kg.hpp"
#include "ceam/tape.hpp"

namespace ceam {

enum class Ablation {
    full,
    no_aggregation,         // entities start from their opaque id features
    mean_aggregate,         // masks forced to identity
    traditional_attention,  // one softmax over all edges instead of partitioned attention
    profiling_only,         // non-profiling triples dropped from both graphs
};

std::string_view to_string(Ablation a);
std::optional<Ablation> parse_ablation(std::string_view name);
std::span<const Ablation> all_ablations();

struct ModelSpec {
    std::size_t feature_dim = 100;
    std::size_t hidden = 64;
    std::size_t classifier_hidden = 64;
    double epsilon = 0.3;
    Ablation ablation = Ablation::full;
    Denominator denominator = Denominator::present_relations;
    std::string entity_type = "vulnerability";
    double attention_slope = 0.2;
    double aggregation_gain = 8.0;  // scale of the aggregation transforms at init
    std::uint64_t feature_seed = 0;
};

// Copy of `pair` keeping only triples whose relation is profiling.
KGPair drop_non_profiling(const KGPair& pair);

// Relation stacks of every entity on both sides, evaluated once and reused as
// constants for the candidate side of the masks.
struct CandidateStacks {
    Matrix source;
    Matrix target;
};

struct Embeddings {
    ad::Var source;  // final-layer rows of the computed source nodes
    ad::Var target;
    std::vector<std::int32_t> source_row;  // node id -> row, -1 when not computed
    std::vector<std::int32_t> target_row;
};

class CeamModel {
public:
    CeamModel(const KGPair& pair, ModelSpec spec, const PretrainedVectors* source_vectors = nullptr,
              const PretrainedVectors* target_vectors = nullptr);

    const ModelSpec& spec() const { return spec_; }
    const KGPair& pair() const { return pair_; }
    const AggregationPlan& plan() const { return plan_; }
    const std::vector<std::string>& types() const { return types_; }
    const MessageGraph& message_graph(Side s) const { return s == Side::source ? graph_src_ : graph_tgt_; }
    const FeatureTable& features(Side s) const { return s == Side::source ? feat_src_ : feat_tgt_; }

    ModelParams init_params(std::uint64_t seed) const;
    // Throws SchemaError describing the difference when params were built for
    // another schema, type set or variant.
    void check_compatible(const ModelParams& params) const;

    // Binds every tensor as a tape leaf (recording) or constant.
    std::vector<ad::Var> bind(ad::Tape& tape, const ModelParams& params) const;

    // Stacks for `cached` arguments below; empty unless the variant uses masks.
    CandidateStacks candidate_stacks(const ModelParams& params) const;

    // Final-layer embeddings of the entities in `pairs`, evaluating only the
    // nodes they depend on; every node when `pairs` is empty. With `cached`,
    // candidate stacks come from it and receive no gradient.
    Embeddings embed(ad::Tape& tape, const ModelParams& params, std::span<const ad::Var> vars,
                     std::span<const AlignmentPair> pairs = {}, AggregationDiagnostics* diag = nullptr,
                     const CandidateStacks* cached = nullptr) const;
    ad::Var logits(ad::Tape& tape, const ModelParams& params, std::span<const ad::Var> vars,
                   const Embeddings& emb, std::span<const AlignmentPair> pairs) const;

    std::vector<double> predict(const ModelParams& params, std::span<const AlignmentPair> pairs) const;
    // Mean BCE over `pairs`; gradients (aligned with params.tensors()) when requested.
    // `full_graph` embeds every node instead of only those the pairs depend on.
    double loss(const ModelParams& params, std::span<const AlignmentPair> pairs,
                std::vector<Matrix>* grads = nullptr, ad::BceStats* stats = nullptr,
                const CandidateStacks* cached = nullptr, bool full_graph = false) const;

private:
    ad::Var layer(ad::Tape& tape, const ModelParams& params, std::span<const ad::Var> vars, Side side,
                  int index, ad::Var h_prev, std::span<const std::int32_t> prev_row,
                  std::span<const std::uint32_t> heads) const;

    ModelSpec spec_;
    KGPair pair_;
    FeatureTable feat_src_;
    FeatureTable feat_tgt_;
    AggregationPlan plan_;
    std::vector<std::string> types_;
    MessageGraph graph_src_;
    MessageGraph graph_tgt_;
    // node id -> row of the aggregation plan, -1 for other nodes
    std::vector<std::int32_t> plan_row_src_;
    std::vector<std::int32_t> plan_row_tgt_;
    // opaque-id inputs for the no-aggregation variant, in plan row order
    Matrix id_x_src_;
    Matrix id_x_tgt_;
};

}  // namespace ceam
