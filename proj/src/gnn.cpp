#include "ceam/gnn.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace ceam {

Matrix& ModelParams::add(std::string name, Matrix value) {
    if (find(name)) throw std::invalid_argument("duplicate tensor " + name);
    tensors_.push_back({std::move(name), std::move(value)});
    return tensors_.back().value;
}

const Matrix* ModelParams::find(std::string_view name) const {
    for (const auto& t : tensors_) {
        if (t.name == name) return &t.value;
    }
    return nullptr;
}

Matrix& ModelParams::at(std::string_view name) {
    for (auto& t : tensors_) {
        if (t.name == name) return t.value;
    }
    throw std::out_of_range("no tensor named " + std::string(name));
}

const Matrix& ModelParams::at(std::string_view name) const {
    if (auto* m = find(name)) return *m;
    throw std::out_of_range("no tensor named " + std::string(name));
}

std::size_t ModelParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
}

bool ModelParams::all_finite() const {
    return std::all_of(tensors_.begin(), tensors_.end(),
                       [](const Tensor& t) { return t.value.allFinite(); });
}

bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.meta != b.meta || a.tensors_.size() != b.tensors_.size()) return false;
    for (std::size_t k = 0; k < a.tensors_.size(); ++k) {
        const auto& x = a.tensors_[k];
        const auto& y = b.tensors_[k];
        if (x.name != y.name || x.value.rows() != y.value.rows() || x.value.cols() != y.value.cols()) {
            return false;
        }
        if (x.value.size() > 0 &&
            std::memcmp(x.value.data(), y.value.data(), sizeof(double) * static_cast<std::size_t>(x.value.size())) != 0) {
            return false;
        }
    }
    return true;
}

Matrix init_uniform_fan_in(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(std::max<Eigen::Index>(cols, 1)));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        // 53-bit uniform in [0, 1) without relying on distribution internals
        double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        m.data()[i] = (2.0 * u - 1.0) * bound;
    }
    return m;
}

// ---------------------------------------------------------------------------

double cosine(const Vector& a, const Vector& b) {
    double na = a.norm();
    double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

double node_attention(const Vector& h_i, const Vector& h_j, const Matrix& w_t, const Matrix& w_r) {
    if (w_t.cols() != h_i.size() || w_r.cols() != h_j.size() || w_t.rows() != w_r.rows()) {
        throw std::invalid_argument("shape error: node_attention transforms");
    }
    return cosine(w_t * h_i, w_r * h_j);
}

double group_mass(const RelationPartition& partition, bool profiling, double epsilon) {
    double delta = partition.profiling_fraction + epsilon - 0.5;
    return profiling ? 0.5 + delta : 0.5 - delta;
}

std::map<RelationId, double> partitioned_attention(const RelationPartition& partition,
                                                   const std::map<RelationId, double>& mean_scores,
                                                   double epsilon) {
    partition.validate_epsilon(epsilon);
    std::map<RelationId, double> relation_weight;
    for (bool profiling : {true, false}) {
        double top = -std::numeric_limits<double>::infinity();
        for (const auto& [r, s] : mean_scores) {
            if (partition.is_profiling(r) == profiling) top = std::max(top, s);
        }
        double total = 0.0;
        for (const auto& [r, s] : mean_scores) {
            if (partition.is_profiling(r) == profiling) total += std::exp(s - top);
        }
        double mass = group_mass(partition, profiling, epsilon);
        for (const auto& [r, s] : mean_scores) {
            if (partition.is_profiling(r) == profiling) relation_weight[r] = mass * std::exp(s - top) / total;
        }
    }
    return relation_weight;
}

double leaky_relu(double x, double slope) { return x > 0.0 ? x : slope * x; }

std::vector<double> traditional_attention(const Vector& h_i, std::span<const Vector> messages,
                                          std::span<const Vector> w_r_per_edge, double slope) {
    if (messages.size() != w_r_per_edge.size()) {
        throw std::invalid_argument("traditional_attention: one w_r per edge expected");
    }
    std::vector<double> w;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < messages.size(); ++e) {
        const auto d = h_i.size();
        if (w_r_per_edge[e].size() != 2 * d || messages[e].size() != d) {
            throw std::invalid_argument("shape error: traditional attention vector");
        }
        double pre = w_r_per_edge[e].head(d).dot(h_i) + w_r_per_edge[e].tail(d).dot(messages[e]);
        w.push_back(leaky_relu(pre, slope));
        top = std::max(top, w.back());
    }
    double total = 0.0;
    for (auto& x : w) {
        x = std::exp(x - top);
        total += x;
    }
    for (auto& x : w) x /= total;
    return w;
}

double classifier_forward(const Vector& h_src, const Vector& h_tgt, const Matrix& w1,
                          const Vector& b1, const Matrix& w2, double b2) {
    if (h_src.size() != h_tgt.size() || w1.cols() != h_src.size() || b1.size() != w1.rows() ||
        w2.cols() != w1.rows() || w2.rows() != 1) {
        throw std::invalid_argument("shape error: classifier");
    }
    Vector hidden = (w1 * (h_src - h_tgt).cwiseAbs() + b1).cwiseMax(0.0);
    double logit = (w2 * hidden)(0) + b2;
    return 1.0 / (1.0 + std::exp(-logit));
}

// ---------------------------------------------------------------------------

MessageGraph build_message_graph(const KnowledgeGraph& kg, const std::vector<std::string>& type_list) {
    MessageGraph g;
    g.nodes = kg.node_count();
    for (std::uint32_t n = 0; n < g.nodes; ++n) {
        const auto& t = kg.type(NodeId{n});
        auto it = std::find(type_list.begin(), type_list.end(), t);
        if (it == type_list.end()) throw SchemaError("node type '" + t + "' unknown to the model");
        g.node_type.push_back(static_cast<std::uint32_t>(it - type_list.begin()));
    }
    std::map<std::pair<RelationId, std::uint32_t>, std::uint32_t> slot_of;
    g.group_begin.push_back(0);
    for (std::uint32_t n = 0; n < g.nodes; ++n) {
        std::vector<Edge> edges(kg.out_edges(NodeId{n}).begin(), kg.out_edges(NodeId{n}).end());
        std::stable_sort(edges.begin(), edges.end(),
                         [](const Edge& a, const Edge& b) { return a.relation < b.relation; });
        for (std::size_t k = 0; k < edges.size();) {
            MessageGraph::Group grp{edges[k].relation, static_cast<std::uint32_t>(g.edge_slot.size()), 0};
            while (k < edges.size() && edges[k].relation == grp.relation) {
                auto key = std::make_pair(grp.relation, edges[k].node.value);
                auto [it, fresh] = slot_of.emplace(key, static_cast<std::uint32_t>(g.slot_tail.size()));
                if (fresh) {
                    g.slot_tail.push_back(edges[k].node.value);
                    g.slot_relation.push_back(grp.relation);
                }
                g.edge_slot.push_back(it->second);
                ++k;
            }
            grp.end = static_cast<std::uint32_t>(g.edge_slot.size());
            g.groups.push_back(grp);
        }
        g.group_begin.push_back(static_cast<std::uint32_t>(g.groups.size()));
    }
    return g;
}

std::vector<std::uint32_t> with_tails(const MessageGraph& g, std::span<const std::uint32_t> heads) {
    std::vector<std::uint32_t> out(heads.begin(), heads.end());
    for (auto h : heads) {
        for (auto gi = g.group_begin[h]; gi < g.group_begin[h + 1]; ++gi) {
            for (auto e = g.groups[gi].begin; e < g.groups[gi].end; ++e) out.push_back(g.slot_tail[g.edge_slot[e]]);
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

MessageGraph restrict_graph(const MessageGraph& g, std::span<const std::uint32_t> heads,
                            std::span<const std::int32_t> tail_row) {
    MessageGraph out;
    out.nodes = heads.size();
    out.group_begin.push_back(0);
    std::unordered_map<std::uint32_t, std::uint32_t> slot_map;
    for (auto h : heads) {
        out.node_type.push_back(g.node_type[h]);
        for (auto gi = g.group_begin[h]; gi < g.group_begin[h + 1]; ++gi) {
            const auto& grp = g.groups[gi];
            MessageGraph::Group ng{grp.relation, static_cast<std::uint32_t>(out.edge_slot.size()), 0};
            for (auto e = grp.begin; e < grp.end; ++e) {
                auto slot = g.edge_slot[e];
                auto [it, fresh] = slot_map.emplace(slot, static_cast<std::uint32_t>(out.slot_tail.size()));
                if (fresh) {
                    auto row = tail_row[g.slot_tail[slot]];
                    if (row < 0) throw std::invalid_argument("restrict_graph: tail outside the layer input");
                    out.slot_tail.push_back(static_cast<std::uint32_t>(row));
                    out.slot_relation.push_back(g.slot_relation[slot]);
                }
                out.edge_slot.push_back(it->second);
            }
            ng.end = static_cast<std::uint32_t>(out.edge_slot.size());
            out.groups.push_back(ng);
        }
        out.group_begin.push_back(static_cast<std::uint32_t>(out.groups.size()));
    }
    return out;
}

ad::Var partitioned_attention_aggregate(ad::Tape& tape, ad::Var self, ad::Var messages,
                                        const MessageGraph& graph, const RelationPartition& partition,
                                        double epsilon, AttentionTrace* trace) {
    partition.validate_epsilon(epsilon);
    const auto& A = tape.value(self);
    const auto& M = tape.value(messages);
    if (static_cast<std::size_t>(A.rows()) != graph.nodes || static_cast<std::size_t>(M.rows()) != graph.slot_tail.size() ||
        A.cols() != M.cols()) {
        throw std::invalid_argument("shape error: partitioned attention inputs");
    }
    const double mass_p = group_mass(partition, true, epsilon);
    const double mass_n = group_mass(partition, false, epsilon);

    Vector norm_a = A.rowwise().norm();
    Vector norm_m = M.rowwise().norm();
    std::vector<double> s(graph.edge_count(), 0.0);
    std::vector<double> q(graph.groups.size(), 0.0);
    Matrix out = Matrix::Zero(A.rows(), A.cols());

    for (std::size_t i = 0; i < graph.nodes; ++i) {
        const auto gb = graph.group_begin[i];
        const auto ge = graph.group_begin[i + 1];
        if (gb == ge) continue;
        std::vector<double> mean(ge - gb);
        for (auto gi = gb; gi < ge; ++gi) {
            const auto& grp = graph.groups[gi];
            double acc = 0.0;
            for (auto e = grp.begin; e < grp.end; ++e) {
                auto slot = graph.edge_slot[e];
                double denom = norm_a[static_cast<Eigen::Index>(i)] * norm_m[slot];
                s[e] = denom > 0.0 ? A.row(static_cast<Eigen::Index>(i)).dot(M.row(slot)) / denom : 0.0;
                acc += s[e];
            }
            mean[gi - gb] = acc / static_cast<double>(grp.end - grp.begin);
        }
        for (bool profiling : {true, false}) {
            double top = -std::numeric_limits<double>::infinity();
            for (auto gi = gb; gi < ge; ++gi) {
                if (partition.is_profiling(graph.groups[gi].relation) == profiling) top = std::max(top, mean[gi - gb]);
            }
            double total = 0.0;
            for (auto gi = gb; gi < ge; ++gi) {
                if (partition.is_profiling(graph.groups[gi].relation) == profiling) {
                    q[gi] = std::exp(mean[gi - gb] - top);
                    total += q[gi];
                }
            }
            for (auto gi = gb; gi < ge; ++gi) {
                if (partition.is_profiling(graph.groups[gi].relation) == profiling) q[gi] /= total;
            }
        }
        for (auto gi = gb; gi < ge; ++gi) {
            const auto& grp = graph.groups[gi];
            double relation_weight = (partition.is_profiling(grp.relation) ? mass_p : mass_n) * q[gi];
            if (trace) trace->relation_weight[{static_cast<std::uint32_t>(i), grp.relation}] = relation_weight;
            for (auto e = grp.begin; e < grp.end; ++e) {
                out.row(static_cast<Eigen::Index>(i)).noalias() += (s[e] * relation_weight) * M.row(graph.edge_slot[e]);
            }
        }
    }
    if (trace) trace->node_scores = s;

    return tape.push(
        std::move(out), {self, messages},
        [self, messages, &graph, &partition, mass_p, mass_n, s = std::move(s), q = std::move(q),
         norm_a = std::move(norm_a), norm_m = std::move(norm_m)](ad::Tape& t, const Matrix& g) {
            const auto& A = t.value(self);
            const auto& M = t.value(messages);
            Matrix* gA = t.requires_grad(self) ? &t.grad(self) : nullptr;
            Matrix* gM = t.requires_grad(messages) ? &t.grad(messages) : nullptr;
            std::vector<double> g_s;
            std::vector<double> g_beta;
            for (std::size_t i = 0; i < graph.nodes; ++i) {
                const auto gb = graph.group_begin[i];
                const auto ge = graph.group_begin[i + 1];
                if (gb == ge) continue;
                const auto row = static_cast<Eigen::Index>(i);
                auto gz = g.row(row);
                g_beta.assign(ge - gb, 0.0);
                const auto e0 = graph.groups[gb].begin;
                g_s.assign(graph.groups[ge - 1].end - e0, 0.0);
                for (auto gi = gb; gi < ge; ++gi) {
                    const auto& grp = graph.groups[gi];
                    double relation_weight = (partition.is_profiling(grp.relation) ? mass_p : mass_n) * q[gi];
                    for (auto e = grp.begin; e < grp.end; ++e) {
                        auto slot = graph.edge_slot[e];
                        double dot = gz.dot(M.row(slot));
                        if (gM) gM->row(slot) += (s[e] * relation_weight) * gz;
                        g_s[e - e0] = relation_weight * dot;
                        g_beta[gi - gb] += s[e] * dot;
                    }
                }
                // relation_weight = mass * softmax(mean) within each group
                for (bool profiling : {true, false}) {
                    double mass = profiling ? mass_p : mass_n;
                    double weighted = 0.0;
                    for (auto gi = gb; gi < ge; ++gi) {
                        if (partition.is_profiling(graph.groups[gi].relation) == profiling) {
                            weighted += q[gi] * mass * g_beta[gi - gb];
                        }
                    }
                    for (auto gi = gb; gi < ge; ++gi) {
                        const auto& grp = graph.groups[gi];
                        if (partition.is_profiling(grp.relation) != profiling) continue;
                        double g_mean = q[gi] * (mass * g_beta[gi - gb] - weighted);
                        double share = g_mean / static_cast<double>(grp.end - grp.begin);
                        for (auto e = grp.begin; e < grp.end; ++e) g_s[e - e0] += share;
                    }
                }
                double na = norm_a[row];
                if (na == 0.0) continue;
                for (auto e = e0; e < graph.groups[ge - 1].end; ++e) {
                    auto slot = graph.edge_slot[e];
                    double nm = norm_m[slot];
                    if (nm == 0.0) continue;
                    double gs = g_s[e - e0];
                    if (gs == 0.0) continue;
                    if (gA) gA->row(row) += gs * (M.row(slot) / (na * nm) - (s[e] / (na * na)) * A.row(row));
                    if (gM) gM->row(slot) += gs * (A.row(row) / (na * nm) - (s[e] / (nm * nm)) * M.row(slot));
                }
            }
        });
}

ad::Var traditional_attention_aggregate(ad::Tape& tape, ad::Var h_prev, ad::Var messages, ad::Var w_att,
                                        const MessageGraph& graph, double slope) {
    const auto& H = tape.value(h_prev);
    const auto& M = tape.value(messages);
    const auto& W = tape.value(w_att);
    const auto d = H.cols();
    if (static_cast<std::size_t>(H.rows()) != graph.nodes || M.cols() != d || W.cols() != 2 * d) {
        throw std::invalid_argument("shape error: traditional attention inputs");
    }
    std::vector<double> pre(graph.edge_count(), 0.0);
    std::vector<double> edge_weight(graph.edge_count(), 0.0);
    Matrix out = Matrix::Zero(H.rows(), d);
    for (std::size_t i = 0; i < graph.nodes; ++i) {
        const auto gb = graph.group_begin[i];
        const auto ge = graph.group_begin[i + 1];
        if (gb == ge) continue;
        const auto row = static_cast<Eigen::Index>(i);
        double top = -std::numeric_limits<double>::infinity();
        for (auto gi = gb; gi < ge; ++gi) {
            const auto& grp = graph.groups[gi];
            for (auto e = grp.begin; e < grp.end; ++e) {
                pre[e] = W.row(grp.relation).head(d).dot(H.row(row)) +
                         W.row(grp.relation).tail(d).dot(M.row(graph.edge_slot[e]));
                top = std::max(top, leaky_relu(pre[e], slope));
            }
        }
        double total = 0.0;
        auto e0 = graph.groups[gb].begin;
        auto e1 = graph.groups[ge - 1].end;
        for (auto e = e0; e < e1; ++e) {
            edge_weight[e] = std::exp(leaky_relu(pre[e], slope) - top);
            total += edge_weight[e];
        }
        for (auto e = e0; e < e1; ++e) {
            edge_weight[e] /= total;
            out.row(row).noalias() += edge_weight[e] * M.row(graph.edge_slot[e]);
        }
    }
    return tape.push(
        std::move(out), {h_prev, messages, w_att},
        [h_prev, messages, w_att, &graph, slope, pre = std::move(pre), edge_weight = std::move(edge_weight)](
            ad::Tape& t, const Matrix& g) {
            const auto& H = t.value(h_prev);
            const auto& M = t.value(messages);
            const auto& W = t.value(w_att);
            const auto d = H.cols();
            Matrix* gH = t.requires_grad(h_prev) ? &t.grad(h_prev) : nullptr;
            Matrix* gM = t.requires_grad(messages) ? &t.grad(messages) : nullptr;
            Matrix* gW = t.requires_grad(w_att) ? &t.grad(w_att) : nullptr;
            for (std::size_t i = 0; i < graph.nodes; ++i) {
                const auto gb = graph.group_begin[i];
                const auto ge = graph.group_begin[i + 1];
                if (gb == ge) continue;
                const auto row = static_cast<Eigen::Index>(i);
                auto gz = g.row(row);
                auto e0 = graph.groups[gb].begin;
                auto e1 = graph.groups[ge - 1].end;
                double weighted = 0.0;
                std::vector<double> g_edge_weight(e1 - e0);
                for (auto e = e0; e < e1; ++e) {
                    g_edge_weight[e - e0] = gz.dot(M.row(graph.edge_slot[e]));
                    weighted += edge_weight[e] * g_edge_weight[e - e0];
                }
                for (auto gi = gb; gi < ge; ++gi) {
                    const auto& grp = graph.groups[gi];
                    for (auto e = grp.begin; e < grp.end; ++e) {
                        auto slot = graph.edge_slot[e];
                        if (gM) gM->row(slot) += edge_weight[e] * gz;
                        double g_pre = edge_weight[e] * (g_edge_weight[e - e0] - weighted) * (pre[e] > 0.0 ? 1.0 : slope);
                        if (g_pre == 0.0) continue;
                        if (gW) {
                            gW->row(grp.relation).head(d) += g_pre * H.row(row);
                            gW->row(grp.relation).tail(d) += g_pre * M.row(slot);
                        }
                        if (gH) gH->row(row) += g_pre * W.row(grp.relation).head(d);
                        if (gM) gM->row(slot) += g_pre * W.row(grp.relation).tail(d);
                    }
                }
            }
        });
}

}  // namespace ceam
