#pragma once
// Deterministic paired-KG generator with controlled attribute inconsistency
// among positives and confusable negatives, plus the statistics measurer.

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ceam/config.hpp"
#include "ceam/kg.hpp"

namespace ceam {

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// a == b, or one is a substring of the other.
bool attr_match(std::string_view a, std::string_view b);

struct SynthConfig {
    std::size_t n_target_entities = 500;
    double aligned_fraction = 0.6;            // of target entities with a source counterpart
    double unaligned_source_fraction = 0.2;   // extra source entities (times n_target_entities)
    double pos_inconsistency_rate = 0.56;
    double confusable_negative_rate = 0.0404;
    double drop_artifact_prob = 0.05;         // per entity and non-profiling relation
    double variant_prob = 0.3;                // consistent surface variant of a copied artifact
    double heavy_profiling_weight = 0.3;      // sampling weight of profiling types when scrambling
    std::size_t negatives_per_entity = 10;
    std::map<std::string, std::size_t> vocab_sizes;  // per relation; missing -> scaled default
    std::string entity_type = "vulnerability";
    RelationPartition schema = cert_nvd_schema();
    std::uint64_t seed = 0;

    // Throws ConfigError naming the offending field.
    void validate() const;
};

// Reads synth keys (`synth.n`, `synth.pos_inconsistency_rate`, ...) and
// relation lines; unset keys keep their defaults.
SynthConfig synth_config_from(const KeyValueConfig& kv);

std::size_t default_vocab_size(std::string_view relation, std::size_t n_target_entities);
// Node type of the literals reached through `relation` (hasCvssV2Score -> cvss_v2_score).
std::string literal_type(std::string_view relation);

struct InconsistencyStats {
    double positive_inconsistent = 0;  // positives inconsistent in more than half of their types
    double negative_confusable = 0;    // negatives differing in at most a quarter of their types
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

// Per pair and relation the type counts when either side has a value; it is
// inconsistent when no cross pair of values passes attr_match (missing on
// one side included).
InconsistencyStats measure_inconsistency(const KGPair& pair, std::span<const AlignmentPair> pairs);

struct Confusable {
    AlignmentPair pair;
    Side template_side;     // side of the entity the confusable was cloned from
    NodeId template_node;
    std::string changed_relation;
};

struct GroundTruth {
    InconsistencyStats stats;  // from the generator's own bookkeeping
    std::size_t heavy_positives = 0;
    std::size_t twins = 0;   // target near-duplicates of aligned targets
    std::size_t clones = 0;  // unaligned source near-duplicates of targets
    std::vector<Confusable> confusables;
};

struct SynthOutput {
    KGPair pair;
    std::vector<AlignmentPair> pairs;
    GroundTruth truth;
};

SynthOutput generate_pair(const SynthConfig& config);

std::string format_stats(const GroundTruth& truth, const InconsistencyStats& measured);

}  // namespace ceam

namespace ceam {

struct FixtureShape {
    std::size_t entities_per_side = 3;
    std::size_t literals_per_side = 6;
    std::size_t relations = 4;
    std::size_t profiling = 2;
    double shared_literal_prob = 0.6;  // literal text reused by the other side
    double edge_prob = 0.5;
};

// Small random paired KG (entities of type "vulnerability") with every
// entity holding at least one triple, plus every cross pair labelled
// (positive when indices match).
SynthOutput random_fixture(std::uint64_t seed, const FixtureShape& shape = {});

}  // namespace ceam
