#include "ceam/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace ceam {

std::vector<double> importance_weights(std::span<const CrossDegree> degrees) {
    std::vector<double> w;
    w.reserve(degrees.size());
    double total = 0.0;
    for (const auto& deg : degrees) {
        double ratio = deg.d + deg.d_prime == 0
                           ? 0.0
                           : static_cast<double>(deg.d) / static_cast<double>(deg.d + deg.d_prime);
        w.push_back(std::exp(-ratio));
        total += w.back();
    }
    for (auto& x : w) x /= total;
    return w;
}

std::optional<std::vector<NeighborWeight>> neighbor_importance(const KGPair& pair, Side side,
                                                               NodeId i, RelationId r) {
    const auto& kg = pair.graph(side);
    std::vector<NodeId> nbrs;
    std::vector<CrossDegree> degrees;
    for (const auto& e : kg.out_edges(i)) {
        if (e.relation != r) continue;
        nbrs.push_back(e.node);
        degrees.push_back(cross_degree(pair, side, e.node));
    }
    if (nbrs.empty()) return std::nullopt;
    auto w = importance_weights(degrees);
    std::vector<NeighborWeight> out;
    for (std::size_t k = 0; k < nbrs.size(); ++k) out.push_back({nbrs[k], w[k]});
    return out;
}

RelationRepr relation_repr(const KGPair& pair, Side side, NodeId i, RelationId r,
                           const Matrix& w_r, const FeatureTable& features) {
    if (static_cast<std::size_t>(w_r.cols()) != features.dim) {
        throw std::invalid_argument("shape error: W_r columns differ from feature dim");
    }
    RelationRepr out{i, r, Vector::Zero(w_r.rows()), false};
    auto weights = neighbor_importance(pair, side, i, r);
    if (!weights) return out;
    out.present = true;
    for (const auto& [node, weight] : *weights) {
        out.value.noalias() += weight * (w_r * features.row(node).transpose());
    }
    return out;
}

EntityStack stack_relations(NodeId entity, std::span<const RelationRepr> reprs) {
    if (reprs.empty()) return {entity, Matrix()};
    EntityStack s{entity, Matrix(static_cast<Eigen::Index>(reprs.size()), reprs[0].value.size())};
    for (std::size_t r = 0; r < reprs.size(); ++r) {
        s.value.row(static_cast<Eigen::Index>(r)) = reprs[r].value.transpose();
    }
    return s;
}

std::optional<std::vector<double>> candidate_correspondence(const EntityStack& self,
                                                            std::span<const EntityStack> candidates) {
    if (candidates.empty()) return std::nullopt;
    std::vector<double> logits;
    for (const auto& c : candidates) {
        if (c.value.rows() != self.value.rows() || c.value.cols() != self.value.cols()) {
            throw std::invalid_argument("shape error: candidate stack shape differs");
        }
        logits.push_back(-(self.value - c.value).norm());
    }
    double top = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (auto& l : logits) {
        l = std::exp(l - top);
        total += l;
    }
    for (auto& l : logits) l /= total;
    return logits;
}

MaskGate mask_gate(const RelationRepr& self, std::span<const RelationRepr> candidates,
                   std::span<const double> correspondence) {
    if (candidates.size() != correspondence.size()) {
        throw std::invalid_argument("mask_gate: correspondence size differs from candidate count");
    }
    Vector acc = Vector::Zero(self.value.size());
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        if (candidates[k].value.size() != self.value.size()) {
            throw std::invalid_argument("shape error: candidate representation size differs");
        }
        acc.array() += correspondence[k] * (self.value - candidates[k].value).array().square();
    }
    return {self.entity, self.relation, (-acc.array()).exp().matrix()};
}

EntityRepr masked_entity_repr(std::span<const MaskGate> gates, std::span<const RelationRepr> reprs,
                              Denominator denom) {
    if (gates.size() != reprs.size()) {
        throw std::invalid_argument("masked_entity_repr: gates and reprs cover different relations");
    }
    if (reprs.empty()) return {Vector(), true};
    EntityRepr out{Vector::Zero(reprs[0].value.size()), false};
    std::size_t present = 0;
    for (std::size_t r = 0; r < reprs.size(); ++r) {
        if (!reprs[r].present) continue;
        ++present;
        out.h.array() += gates[r].diag.array() * reprs[r].value.array();
    }
    if (present == 0) {
        out.empty = true;
        return out;
    }
    out.h /= static_cast<double>(denom == Denominator::present_relations ? present : reprs.size());
    return out;
}

EntityRepr mean_entity_repr(std::span<const RelationRepr> reprs, Denominator denom) {
    std::vector<MaskGate> gates;
    for (const auto& r : reprs) gates.push_back({r.entity, r.relation, Vector::Ones(r.value.size())});
    return masked_entity_repr(gates, reprs, denom);
}

// ---------------------------------------------------------------------------

namespace {

AggregationSide plan_side(const KGPair& pair, Side side, const FeatureTable& features,
                          std::string_view entity_type) {
    const auto& kg = pair.graph(side);
    const auto relations = kg.schema().size();
    AggregationSide out;
    for (auto n : kg.nodes_of_type(entity_type)) {
        if (kg.kind(n) == NodeKind::entity) out.entities.push_back(n);
    }
    const auto n_ent = static_cast<Eigen::Index>(out.entities.size());
    const auto f = static_cast<Eigen::Index>(features.dim);
    out.weighted_features.assign(relations, Matrix::Zero(n_ent, f));
    out.present = Matrix::Zero(n_ent, static_cast<Eigen::Index>(relations));
    for (Eigen::Index row = 0; row < n_ent; ++row) {
        NodeId i = out.entities[static_cast<std::size_t>(row)];
        for (std::size_t r = 0; r < relations; ++r) {
            auto weights = neighbor_importance(pair, side, i, static_cast<RelationId>(r));
            if (!weights) continue;
            out.present(row, static_cast<Eigen::Index>(r)) = 1.0;
            for (const auto& [node, w] : *weights) {
                out.weighted_features[r].row(row) += w * features.row(node);
            }
        }
    }
    return out;
}

}  // namespace

AggregationPlan plan_aggregation(const KGPair& pair, const FeatureTable& source_features,
                                 const FeatureTable& target_features, std::string_view entity_type) {
    if (source_features.dim != target_features.dim) {
        throw std::invalid_argument("feature dimension differs between the two graphs");
    }
    AggregationPlan plan;
    plan.relations = pair.schema().size();
    plan.feature_dim = source_features.dim;
    plan.source = plan_side(pair, Side::source, source_features, entity_type);
    plan.target = plan_side(pair, Side::target, target_features, entity_type);
    for (Side s : {Side::source, Side::target}) {
        auto& self = s == Side::source ? plan.source : plan.target;
        const auto& far = s == Side::source ? plan.target : plan.source;
        std::unordered_map<std::uint32_t, std::uint32_t> row_of;
        for (std::uint32_t k = 0; k < far.entities.size(); ++k) row_of.emplace(far.entities[k].value, k);
        self.candidates.resize(self.entities.size());
        for (std::size_t row = 0; row < self.entities.size(); ++row) {
            for (auto c : candidate_set(pair, s, self.entities[row])) {
                self.candidates[row].push_back(row_of.at(c.value));
            }
        }
    }
    return plan;
}

ad::Var relation_stack(ad::Tape& tape, const AggregationSide& side, std::span<const ad::Var> w_r,
                       std::span<const std::uint32_t> rows) {
    const auto relations = side.weighted_features.size();
    if (w_r.size() != relations) throw std::invalid_argument("shape error: one W_r per relation expected");
    const auto d = tape.value(w_r[0]).rows();
    // features of the requested rows only, per relation
    std::vector<Matrix> feats;
    const std::vector<Matrix>* x = &side.weighted_features;
    if (!rows.empty()) {
        feats.reserve(relations);
        for (const auto& f : side.weighted_features) {
            Matrix sub(static_cast<Eigen::Index>(rows.size()), f.cols());
            for (std::size_t k = 0; k < rows.size(); ++k) sub.row(static_cast<Eigen::Index>(k)) = f.row(rows[k]);
            feats.push_back(std::move(sub));
        }
        x = &feats;
    }
    const auto n = (*x)[0].rows();
    Matrix out(n, static_cast<Eigen::Index>(relations) * d);
    for (std::size_t r = 0; r < relations; ++r) {
        const auto& W = tape.value(w_r[r]);
        if (W.rows() != d || W.cols() != (*x)[r].cols()) {
            throw std::invalid_argument("shape error: W_r does not map feature dim to model dim");
        }
        out.middleCols(static_cast<Eigen::Index>(r) * d, d).noalias() = (*x)[r] * W.transpose();
    }
    std::vector<ad::Var> ws(w_r.begin(), w_r.end());
    auto backward = [ws, d](const std::vector<Matrix>& xs) {
        return [&xs, ws, d](ad::Tape& t, const Matrix& g) {
            for (std::size_t r = 0; r < ws.size(); ++r) {
                if (!t.requires_grad(ws[r])) continue;
                t.grad(ws[r]).noalias() += g.middleCols(static_cast<Eigen::Index>(r) * d, d).transpose() * xs[r];
            }
        };
    };
    if (rows.empty()) return tape.push(std::move(out), w_r, backward(side.weighted_features));
    const auto& kept = tape.keep(std::move(feats));
    return tape.push(std::move(out), w_r, backward(kept));
}

ad::Var masked_aggregate(ad::Tape& tape, ad::Var self_stack, ad::Var other_stack,
                         const AggregationSide& self, std::size_t relations, GateMode mode,
                         Denominator denom, AggregationDiagnostics* diag, std::span<const std::uint32_t> rows,
                         std::span<const std::int32_t> self_pos, std::span<const std::int32_t> other_pos) {
    const auto& S = tape.value(self_stack);
    const auto& O = tape.value(other_stack);
    const auto width = S.cols();
    if ((self_pos.empty() && static_cast<std::size_t>(S.rows()) != self.entities.size()) || O.cols() != width ||
        width % static_cast<Eigen::Index>(relations) != 0) {
        throw std::invalid_argument("shape error: masked_aggregate stacks");
    }
    std::vector<std::uint32_t> which(rows.begin(), rows.end());
    if (rows.empty()) {
        which.resize(self.entities.size());
        for (std::uint32_t i = 0; i < which.size(); ++i) which[i] = i;
    }
    const auto m = static_cast<Eigen::Index>(which.size());
    const auto R = static_cast<Eigen::Index>(relations);
    const auto d = width / R;

    Matrix out = Matrix::Zero(m, d);
    Matrix gates = Matrix::Ones(m, width);
    std::vector<std::vector<double>> corr(which.size());
    std::vector<double> scale(which.size(), 0.0);

    std::vector<std::int32_t> spos(self_pos.begin(), self_pos.end());
    std::vector<std::int32_t> opos(other_pos.begin(), other_pos.end());
    auto at = [](const std::vector<std::int32_t>& pos, std::size_t i) {
        return static_cast<Eigen::Index>(pos.empty() ? static_cast<std::int64_t>(i) : pos[i]);
    };

    Eigen::RowVectorXd acc(width);
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto i = static_cast<Eigen::Index>(which[static_cast<std::size_t>(k)]);
        const auto si = at(spos, static_cast<std::size_t>(i));
        const auto& cands = self.candidates[static_cast<std::size_t>(i)];
        if (cands.empty() && diag) ++diag->without_candidates;
        if (mode == GateMode::masked && !cands.empty()) {
            auto& c = corr[static_cast<std::size_t>(k)];
            c.resize(cands.size());
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < cands.size(); ++j) {
                c[j] = (S.row(si) - O.row(at(opos, cands[j]))).norm();
                best = std::min(best, c[j]);
            }
            double total = 0.0;
            for (auto& x : c) {
                x = std::exp(best - x);
                total += x;
            }
            for (auto& x : c) x /= total;
            acc.setZero();
            for (std::size_t j = 0; j < cands.size(); ++j) {
                acc.array() += c[j] * (S.row(si) - O.row(at(opos, cands[j]))).array().square();
            }
            gates.row(k) = (-acc.array()).exp();
        }
        double present = self.present.row(i).sum();
        if (present == 0.0) {
            if (diag) ++diag->empty_entities;
            continue;
        }
        double s = 1.0 / (denom == Denominator::present_relations ? present : static_cast<double>(R));
        scale[static_cast<std::size_t>(k)] = s;
        for (Eigen::Index r = 0; r < R; ++r) {
            if (self.present(i, r) == 0.0) continue;
            out.row(k).array() += s * gates.row(k).segment(r * d, d).array() * S.row(si).segment(r * d, d).array();
        }
    }

    return tape.push(
        std::move(out), {self_stack, other_stack},
        [self_stack, other_stack, &self, R, d, mode, which = std::move(which), gates = std::move(gates),
         corr = std::move(corr), scale = std::move(scale), spos = std::move(spos), opos = std::move(opos),
         at](ad::Tape& t, const Matrix& g) {
            const auto& S = t.value(self_stack);
            const auto& O = t.value(other_stack);
            const auto width = S.cols();
            Matrix* gS = t.requires_grad(self_stack) ? &t.grad(self_stack) : nullptr;
            Matrix* gO = t.requires_grad(other_stack) ? &t.grad(other_stack) : nullptr;
            Eigen::RowVectorXd g_gate(width);
            Eigen::RowVectorXd g_acc(width);
            Eigen::RowVectorXd diff(width);
            Eigen::RowVectorXd g_diff(width);
            std::vector<double> g_c;
            for (std::size_t k = 0; k < which.size(); ++k) {
                const auto i = static_cast<Eigen::Index>(which[k]);
                const auto row = static_cast<Eigen::Index>(k);
                const auto si = at(spos, static_cast<std::size_t>(i));
                double s = scale[k];
                if (s == 0.0) continue;
                g_gate.setZero();
                for (Eigen::Index r = 0; r < R; ++r) {
                    if (self.present(i, r) == 0.0) continue;
                    auto gr = g.row(row).array() * s;
                    if (gS) gS->row(si).segment(r * d, d).array() += gr * gates.row(row).segment(r * d, d).array();
                    g_gate.segment(r * d, d).array() = gr * S.row(si).segment(r * d, d).array();
                }
                const auto& cands = self.candidates[static_cast<std::size_t>(i)];
                if (mode != GateMode::masked || cands.empty()) continue;
                const auto& c = corr[k];
                // gate = exp(-acc), acc = sum_j c_j diff_j^2
                g_acc = -(g_gate.array() * gates.row(row).array());
                g_c.assign(cands.size(), 0.0);
                double weighted = 0.0;
                for (std::size_t j = 0; j < cands.size(); ++j) {
                    diff = S.row(si) - O.row(at(opos, cands[j]));
                    g_c[j] = (g_acc.array() * diff.array().square()).sum();
                    weighted += c[j] * g_c[j];
                }
                for (std::size_t j = 0; j < cands.size(); ++j) {
                    diff = S.row(si) - O.row(at(opos, cands[j]));
                    // c = softmax(-dist)
                    double g_dist = -c[j] * (g_c[j] - weighted);
                    double dist = diff.norm();
                    g_diff = 2.0 * c[j] * g_acc.array() * diff.array();
                    if (dist > 0.0) g_diff += (g_dist / dist) * diff;
                    if (gS) gS->row(si) += g_diff;
                    if (gO) gO->row(at(opos, cands[j])) -= g_diff;
                }
            }
        });
}

}  // namespace ceam
