#include "oracle.hpp"

#include <cmath>
#include <set>
#include <string>

namespace ceam::oracle {
namespace {

Vec matvec(const Matrix& w, const Vec& x) {
    Vec out(static_cast<std::size_t>(w.rows()), 0.0);
    for (Eigen::Index a = 0; a < w.rows(); ++a) {
        for (Eigen::Index b = 0; b < w.cols(); ++b) out[a] += w(a, b) * x[b];
    }
    return out;
}

Vec row_of(const Matrix& m, Eigen::Index r) {
    Vec out(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[c] = m(r, c);
    return out;
}

double dot(const Vec& a, const Vec& b) {
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

double cos_sim(const Vec& a, const Vec& b) {
    double na = std::sqrt(dot(a, a));
    double nb = std::sqrt(dot(b, b));
    if (na == 0 || nb == 0) return 0;
    return dot(a, b) / (na * nb);
}

struct SideView {
    const KnowledgeGraph* kg;
    const KnowledgeGraph* far;
    const FeatureTable* feat;
};

// Literal on the far side with the same text.
std::optional<NodeId> twin(const KnowledgeGraph& own, const KnowledgeGraph& far, NodeId j) {
    if (own.kind(j) != NodeKind::literal) return std::nullopt;
    for (std::uint32_t n = 0; n < far.node_count(); ++n) {
        if (far.kind(NodeId{n}) == NodeKind::literal && far.text(NodeId{n}) == own.text(j)) return NodeId{n};
    }
    return std::nullopt;
}

std::size_t entity_degree(const KnowledgeGraph& kg, NodeId j) {
    std::set<std::uint32_t> seen;
    for (const auto& t : kg.triples()) {
        if (t.head == j && kg.kind(t.tail) == NodeKind::entity) seen.insert(t.tail.value);
        if (t.tail == j && kg.kind(t.head) == NodeKind::entity) seen.insert(t.head.value);
    }
    return seen.size();
}

struct ReprStack {
    std::vector<Vec> rows;  // per relation
    std::vector<bool> present;
};

ReprStack relation_reprs(const SideView& s, NodeId i, const ModelParams& params, std::size_t dim) {
    const auto& schema = s.kg->schema();
    ReprStack out;
    for (std::size_t r = 0; r < schema.size(); ++r) {
        std::vector<NodeId> nbrs;
        for (const auto& t : s.kg->triples()) {
            if (t.head == i && t.relation == r) nbrs.push_back(t.tail);
        }
        Vec repr(dim, 0.0);
        if (!nbrs.empty()) {
            std::vector<double> w;
            double total = 0;
            for (auto j : nbrs) {
                double d = static_cast<double>(entity_degree(*s.kg, j));
                auto c = twin(*s.kg, *s.far, j);
                double dp = c ? static_cast<double>(entity_degree(*s.far, *c)) : 0.0;
                double ratio = d + dp == 0 ? 0.0 : d / (d + dp);
                w.push_back(std::exp(-ratio));
                total += w.back();
            }
            const Matrix& W = params.at("agg.W_r." + schema.relations[r]);
            for (std::size_t k = 0; k < nbrs.size(); ++k) {
                Vec m = matvec(W, row_of(s.feat->vectors, nbrs[k].value));
                for (std::size_t t = 0; t < dim; ++t) repr[t] += w[k] / total * m[t];
            }
        }
        out.rows.push_back(repr);
        out.present.push_back(!nbrs.empty());
    }
    return out;
}

std::vector<NodeId> candidates(const SideView& s, NodeId i) {
    std::set<std::uint32_t> out;
    for (const auto& a : s.kg->triples()) {
        if (a.head != i || s.kg->kind(a.tail) != NodeKind::literal) continue;
        for (const auto& b : s.far->triples()) {
            if (b.relation != a.relation || s.far->kind(b.tail) != NodeKind::literal) continue;
            if (s.far->text(b.tail) != s.kg->text(a.tail)) continue;
            if (s.far->type(b.head) != s.kg->type(i)) continue;
            out.insert(b.head.value);
        }
    }
    std::vector<NodeId> v;
    for (auto n : out) v.push_back(NodeId{n});
    return v;
}

bool aggregated(const KnowledgeGraph& kg, NodeId n, const ModelSpec& spec) {
    return kg.kind(n) == NodeKind::entity && kg.type(n) == spec.entity_type;
}

std::vector<Vec> layer0(const CeamModel& model, const ModelParams& params, Side side) {
    const auto& spec = model.spec();
    const auto& pair = model.pair();
    SideView own{&pair.graph(side), &pair.graph(other(side)), &model.features(side)};
    SideView far{&pair.graph(other(side)), &pair.graph(side), &model.features(other(side))};
    const auto d = spec.hidden;
    const Matrix& proj = params.at("input.proj");
    Matrix ids;
    if (spec.ablation == Ablation::no_aggregation) ids = id_features(*own.kg, spec.feature_dim, spec.feature_seed);

    std::vector<Vec> h(own.kg->node_count(), Vec(d, 0.0));
    for (std::uint32_t n = 0; n < own.kg->node_count(); ++n) {
        NodeId i{n};
        if (!aggregated(*own.kg, i, spec)) {
            if (own.feat->featured[n]) h[n] = matvec(proj, row_of(own.feat->vectors, n));
            continue;
        }
        if (spec.ablation == Ablation::no_aggregation) {
            h[n] = matvec(proj, row_of(ids, n));
            continue;
        }
        ReprStack self = relation_reprs(own, i, params, d);
        const auto R = self.rows.size();
        std::vector<Vec> gate(R, Vec(d, 1.0));
        auto cands = candidates(own, i);
        if (spec.ablation != Ablation::mean_aggregate && !cands.empty()) {
            std::vector<ReprStack> candidate_reprs;
            std::vector<double> c;
            double total = 0;
            for (auto k : cands) {
                candidate_reprs.push_back(relation_reprs(far, k, params, d));
                double sq = 0;
                for (std::size_t r = 0; r < R; ++r) {
                    for (std::size_t t = 0; t < d; ++t) {
                        double diff = self.rows[r][t] - candidate_reprs.back().rows[r][t];
                        sq += diff * diff;
                    }
                }
                c.push_back(std::exp(-std::sqrt(sq)));
                total += c.back();
            }
            for (std::size_t r = 0; r < R; ++r) {
                for (std::size_t t = 0; t < d; ++t) {
                    double acc = 0;
                    for (std::size_t k = 0; k < cands.size(); ++k) {
                        double diff = self.rows[r][t] - candidate_reprs[k].rows[r][t];
                        acc += c[k] / total * diff * diff;
                    }
                    gate[r][t] = std::exp(-acc);
                }
            }
        }
        std::size_t present = 0;
        for (std::size_t r = 0; r < R; ++r) {
            if (!self.present[r]) continue;
            ++present;
            for (std::size_t t = 0; t < d; ++t) h[n][t] += gate[r][t] * self.rows[r][t];
        }
        double denom = spec.denominator == Denominator::present_relations ? static_cast<double>(present)
                                                                          : static_cast<double>(R);
        if (present > 0) {
            for (auto& x : h[n]) x /= denom;
        }
    }
    return h;
}

std::vector<Vec> gnn_layer(const CeamModel& model, const ModelParams& params, const KnowledgeGraph& kg,
                           const std::vector<Vec>& prev, int l) {
    const auto& spec = model.spec();
    const auto& schema = kg.schema();
    const std::string pre = "l" + std::to_string(l) + ".";
    const auto d = spec.hidden;
    const Matrix& W_o = params.at(pre + "W_o");
    std::vector<Vec> out(kg.node_count());
    for (std::uint32_t n = 0; n < kg.node_count(); ++n) {
        Vec self = matvec(params.at(pre + "W_t." + kg.type(NodeId{n})), prev[n]);
        std::vector<RelationId> rel;
        std::vector<Vec> msg;
        for (const auto& t : kg.triples()) {
            if (t.head.value != n) continue;
            rel.push_back(t.relation);
            msg.push_back(matvec(params.at(pre + "W_r." + schema.relations[t.relation]), prev[t.tail.value]));
        }
        Vec z(d, 0.0);
        if (!msg.empty() && spec.ablation == Ablation::traditional_attention) {
            const Matrix& w = params.at(pre + "w_att");
            std::vector<double> e;
            double top = -1e300;
            for (std::size_t k = 0; k < msg.size(); ++k) {
                double s = 0;
                for (std::size_t t = 0; t < d; ++t) s += w(rel[k], t) * prev[n][t] + w(rel[k], d + t) * msg[k][t];
                e.push_back(s > 0 ? s : spec.attention_slope * s);
                top = std::max(top, e.back());
            }
            double total = 0;
            for (auto& x : e) total += std::exp(x - top);
            for (std::size_t k = 0; k < msg.size(); ++k) {
                for (std::size_t t = 0; t < d; ++t) z[t] += std::exp(e[k] - top) / total * msg[k][t];
            }
        } else if (!msg.empty()) {
            std::vector<double> s(msg.size());
            for (std::size_t k = 0; k < msg.size(); ++k) s[k] = cos_sim(self, msg[k]);
            // mean score per present relation
            std::vector<double> mean(schema.size(), 0.0);
            std::vector<int> count(schema.size(), 0);
            for (std::size_t k = 0; k < msg.size(); ++k) {
                mean[rel[k]] += s[k];
                ++count[rel[k]];
            }
            std::vector<double> relation_weight(schema.size(), 0.0);
            for (bool prof : {true, false}) {
                double mass = prof ? schema.profiling_fraction + spec.epsilon : 1.0 - schema.profiling_fraction - spec.epsilon;
                double total = 0;
                for (std::size_t r = 0; r < schema.size(); ++r) {
                    if (count[r] > 0 && schema.profiling[r] == prof) total += std::exp(mean[r] / count[r]);
                }
                for (std::size_t r = 0; r < schema.size(); ++r) {
                    if (count[r] > 0 && schema.profiling[r] == prof) relation_weight[r] = mass * std::exp(mean[r] / count[r]) / total;
                }
            }
            for (std::size_t k = 0; k < msg.size(); ++k) {
                for (std::size_t t = 0; t < d; ++t) z[t] += s[k] * relation_weight[rel[k]] * msg[k][t];
            }
        }
        Vec joined = self;
        joined.insert(joined.end(), z.begin(), z.end());
        out[n] = matvec(W_o, joined);
        for (auto& x : out[n]) x = std::max(0.0, x);
    }
    return out;
}

}  // namespace

std::vector<double> predict(const CeamModel& model, const ModelParams& params,
                            std::span<const AlignmentPair> pairs, Trace* trace) {
    std::vector<Vec> final[2];
    for (Side side : {Side::source, Side::target}) {
        const auto& kg = model.pair().graph(side);
        auto h0 = layer0(model, params, side);
        auto h1 = gnn_layer(model, params, kg, h0, 1);
        auto h2 = gnn_layer(model, params, kg, h1, 2);
        final[static_cast<int>(side)] = h2;
        if (trace) {
            auto& t = trace->layer[static_cast<int>(side)];
            t[0] = h0;
            t[1] = h1;
            t[2] = h2;
        }
    }
    const Matrix& W1 = params.at("cls.W1");
    const Matrix& b1 = params.at("cls.b1");
    const Matrix& W2 = params.at("cls.W2");
    const double b2 = params.at("cls.b2")(0, 0);
    std::vector<double> out;
    for (const auto& p : pairs) {
        const Vec& a = final[0][p.src.value];
        const Vec& b = final[1][p.tgt.value];
        Vec diff(a.size());
        for (std::size_t t = 0; t < a.size(); ++t) diff[t] = std::abs(a[t] - b[t]);
        Vec hidden = matvec(W1, diff);
        for (std::size_t k = 0; k < hidden.size(); ++k) hidden[k] = std::max(0.0, hidden[k] + b1(0, k));
        double logit = b2;
        for (std::size_t k = 0; k < hidden.size(); ++k) logit += W2(0, k) * hidden[k];
        out.push_back(1.0 / (1.0 + std::exp(-logit)));
    }
    return out;
}

}  // namespace ceam::oracle
