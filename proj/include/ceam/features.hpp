#pragma once
// Initial semantic features for literal nodes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ceam/kg.hpp"
#include "ceam/linalg.hpp"

namespace ceam {

// L2-normalised mean of hashed character-trigram basis vectors. The text is
// padded with '#' on both sides so short strings still produce trigrams.
// Empty text yields the zero vector.
Vector hash_embed(std::string_view text, std::size_t dim, std::uint64_t seed);

struct FeatureTable {
    std::size_t dim = 0;
    Matrix vectors;              // node_count x dim
    std::vector<bool> featured;  // false: zero placeholder
    std::size_t empty_texts = 0;

    auto row(NodeId n) const { return vectors.row(n.value); }
};

using PretrainedVectors = std::unordered_map<std::string, Vector>;

// One line per node: node-id followed by `dim` whitespace-separated floats.
PretrainedVectors load_pretrained(const std::filesystem::path& path, std::size_t dim);

struct FeatureOptions {
    std::size_t dim = 100;
    std::uint64_t seed = 0;
    // Embed literals missing from the pretrained table with hash_embed.
    bool fallback_embedder = true;
};

class CoverageError : public std::runtime_error {
public:
    CoverageError(const std::string& what, std::vector<std::string> missing)
        : std::runtime_error(what), missing_(std::move(missing)) {}
    const std::vector<std::string>& missing() const { return missing_; }

private:
    std::vector<std::string> missing_;
};

// Literal nodes get pretrained or hashed vectors; entity nodes get zero
// placeholders (their layer-0 representation comes from masked aggregation).
FeatureTable init_features(const KnowledgeGraph& kg, const PretrainedVectors* pretrained,
                           const FeatureOptions& options);

// Hashed vectors of every entity's own text (the opaque random id). Only the
// no-aggregation ablation reads these.
Matrix id_features(const KnowledgeGraph& kg, std::size_t dim, std::uint64_t seed);

}  // namespace ceam
