#include "ceam/features.hpp"

#include <fstream>
#include <sstream>

namespace ceam {

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t splitmix(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

Vector hash_embed(std::string_view text, std::size_t dim, std::uint64_t seed) {
    if (dim == 0) throw std::invalid_argument("hash_embed: dim must be positive");
    Vector out = Vector::Zero(static_cast<Eigen::Index>(dim));
    if (text.empty()) return out;
    std::string padded;
    padded.reserve(text.size() + 2);
    padded.push_back('#');
    padded.append(text);
    padded.push_back('#');
    std::size_t count = 0;
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
        std::uint64_t state = fnv1a(std::string_view(padded).substr(i, 3)) ^ (seed * 0xD6E8FEB86659FD93ULL);
        for (std::size_t k = 0; k < dim; ++k) {
            // uniform in [-1, 1)
            double u = static_cast<double>(splitmix(state) >> 11) * 0x1.0p-53;
            out[static_cast<Eigen::Index>(k)] += 2.0 * u - 1.0;
        }
        ++count;
    }
    out /= static_cast<double>(count);
    double norm = out.norm();
    if (norm > 0.0) out /= norm;
    return out;
}

PretrainedVectors load_pretrained(const std::filesystem::path& path, std::size_t dim) {
    std::ifstream in(path);
    if (!in) throw KgError("cannot open " + path.string());
    PretrainedVectors out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.front() == '#') continue;
        std::istringstream fields(line);
        std::string id;
        fields >> id;
        Vector v(static_cast<Eigen::Index>(dim));
        std::size_t k = 0;
        double x;
        while (fields >> x) {
            if (k == dim) throw ParseError(path.string(), lineno, "more than " + std::to_string(dim) + " values");
            v[static_cast<Eigen::Index>(k++)] = x;
        }
        if (!fields.eof()) throw ParseError(path.string(), lineno, "non-numeric value");
        if (k != dim) {
            throw ParseError(path.string(), lineno,
                             "expected " + std::to_string(dim) + " values, got " + std::to_string(k));
        }
        out.insert_or_assign(id, std::move(v));
    }
    return out;
}

FeatureTable init_features(const KnowledgeGraph& kg, const PretrainedVectors* pretrained,
                           const FeatureOptions& options) {
    FeatureTable table;
    table.dim = options.dim;
    table.vectors = Matrix::Zero(static_cast<Eigen::Index>(kg.node_count()),
                                 static_cast<Eigen::Index>(options.dim));
    table.featured.assign(kg.node_count(), false);
    std::vector<std::string> missing;
    for (std::uint32_t n = 0; n < kg.node_count(); ++n) {
        NodeId id{n};
        if (kg.kind(id) != NodeKind::literal) continue;
        if (pretrained) {
            if (auto it = pretrained->find(kg.name(id)); it != pretrained->end()) {
                if (static_cast<std::size_t>(it->second.size()) != options.dim) {
                    throw CoverageError("pretrained vector for '" + kg.name(id) + "' has wrong dim", {kg.name(id)});
                }
                table.vectors.row(n) = it->second.transpose();
                table.featured[n] = true;
                continue;
            }
        }
        if (!options.fallback_embedder) {
            missing.push_back(kg.name(id));
            continue;
        }
        if (kg.text(id).empty()) ++table.empty_texts;
        table.vectors.row(n) = hash_embed(kg.text(id), options.dim, options.seed).transpose();
        table.featured[n] = true;
    }
    if (!missing.empty()) {
        std::string msg = "no feature vector for literal node(s):";
        for (const auto& m : missing) msg += " " + m;
        throw CoverageError(msg, std::move(missing));
    }
    return table;
}

Matrix id_features(const KnowledgeGraph& kg, std::size_t dim, std::uint64_t seed) {
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(kg.node_count()), static_cast<Eigen::Index>(dim));
    for (std::uint32_t n = 0; n < kg.node_count(); ++n) {
        NodeId id{n};
        if (kg.kind(id) == NodeKind::entity) out.row(n) = hash_embed(kg.text(id), dim, seed).transpose();
    }
    return out;
}

}  // namespace ceam
