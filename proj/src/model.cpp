#include "ceam/model.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ceam {

namespace {

constexpr std::array kAblations = {Ablation::full, Ablation::no_aggregation, Ablation::mean_aggregate,
                                   Ablation::traditional_attention, Ablation::profiling_only};

std::size_t index_of(const ModelParams& params, std::string_view name) {
    const auto& ts = params.tensors();
    for (std::size_t k = 0; k < ts.size(); ++k) {
        if (ts[k].name == name) return k;
    }
    throw std::out_of_range("model has no tensor " + std::string(name));
}

ad::Var var(const ModelParams& params, std::span<const ad::Var> vars, std::string_view name) {
    return vars[index_of(params, name)];
}

std::string layer_prefix(int l) { return "l" + std::to_string(l) + "."; }

std::string join(const std::vector<std::string>& xs) {
    std::string out;
    for (const auto& x : xs) {
        if (!out.empty()) out += ',';
        out += x;
    }
    return out;
}

std::string profiling_flags(const RelationPartition& p) {
    std::string out;
    for (bool b : p.profiling) out += b ? '1' : '0';
    return out;
}

std::string format_double(double x) {
    std::ostringstream s;
    s.precision(17);
    s << x;
    return s.str();
}

}  // namespace

std::string_view to_string(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_aggregation: return "no_aggregation";
        case Ablation::mean_aggregate: return "mean_aggregate";
        case Ablation::traditional_attention: return "traditional_attention";
        case Ablation::profiling_only: return "profiling_only";
    }
    return "?";
}

std::optional<Ablation> parse_ablation(std::string_view name) {
    for (auto a : kAblations) {
        if (to_string(a) == name) return a;
    }
    return std::nullopt;
}

std::span<const Ablation> all_ablations() { return kAblations; }

KGPair drop_non_profiling(const KGPair& pair) {
    auto filter = [](const KnowledgeGraph& kg) {
        KnowledgeGraph out(kg.schema());
        for (std::uint32_t n = 0; n < kg.node_count(); ++n) {
            NodeId id{n};
            out.add_node(kg.name(id), kg.type(id), kg.kind(id), kg.text(id));
        }
        for (const auto& t : kg.triples()) {
            if (kg.schema().is_profiling(t.relation)) out.add_triple(t.head, t.relation, t.tail);
        }
        return out;
    };
    return KGPair(filter(pair.source()), filter(pair.target()));
}

CeamModel::CeamModel(const KGPair& pair, ModelSpec spec, const PretrainedVectors* source_vectors,
                     const PretrainedVectors* target_vectors)
    : spec_(std::move(spec)),
      pair_(spec_.ablation == Ablation::profiling_only ? drop_non_profiling(pair) : pair) {
    if (spec_.ablation != Ablation::traditional_attention) pair_.schema().validate_epsilon(spec_.epsilon);
    FeatureOptions fo{spec_.feature_dim, spec_.feature_seed, true};
    feat_src_ = init_features(pair_.source(), source_vectors, fo);
    feat_tgt_ = init_features(pair_.target(), target_vectors, fo);
    plan_ = plan_aggregation(pair_, feat_src_, feat_tgt_, spec_.entity_type);

    std::set<std::string> types(pair_.source().type_names().begin(), pair_.source().type_names().end());
    types.insert(pair_.target().type_names().begin(), pair_.target().type_names().end());
    types.insert(spec_.entity_type);
    types_.assign(types.begin(), types.end());
    graph_src_ = build_message_graph(pair_.source(), types_);
    graph_tgt_ = build_message_graph(pair_.target(), types_);

    auto plan_rows = [](const KnowledgeGraph& kg, const AggregationSide& side) {
        std::vector<std::int32_t> rows(kg.node_count(), -1);
        for (std::size_t k = 0; k < side.entities.size(); ++k) rows[side.entities[k].value] = static_cast<std::int32_t>(k);
        return rows;
    };
    plan_row_src_ = plan_rows(pair_.source(), plan_.source);
    plan_row_tgt_ = plan_rows(pair_.target(), plan_.target);

    if (spec_.ablation == Ablation::no_aggregation) {
        auto ids = [&](const KnowledgeGraph& kg, const AggregationSide& side) {
            Matrix all = id_features(kg, spec_.feature_dim, spec_.feature_seed);
            Matrix x(static_cast<Eigen::Index>(side.entities.size()), all.cols());
            for (std::size_t k = 0; k < side.entities.size(); ++k) {
                x.row(static_cast<Eigen::Index>(k)) = all.row(side.entities[k].value);
            }
            return x;
        };
        id_x_src_ = ids(pair_.source(), plan_.source);
        id_x_tgt_ = ids(pair_.target(), plan_.target);
    }
}

ModelParams CeamModel::init_params(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    const auto d = static_cast<Eigen::Index>(spec_.hidden);
    const auto f = static_cast<Eigen::Index>(spec_.feature_dim);
    const auto c = static_cast<Eigen::Index>(spec_.classifier_hidden);
    const auto& schema = pair_.schema();
    ModelParams p;
    p.add("input.proj", init_uniform_fan_in(d, f, rng));
    bool aggregate = spec_.ablation != Ablation::no_aggregation;
    if (aggregate) {
        for (const auto& r : schema.relations) p.add("agg.W_r." + r, spec_.aggregation_gain * init_uniform_fan_in(d, f, rng));
    }
    for (int l = 1; l <= 2; ++l) {
        auto pre = layer_prefix(l);
        for (const auto& t : types_) p.add(pre + "W_t." + t, init_uniform_fan_in(d, d, rng));
        for (const auto& r : schema.relations) p.add(pre + "W_r." + r, init_uniform_fan_in(d, d, rng));
        p.add(pre + "W_o", init_uniform_fan_in(d, 2 * d, rng));
        if (spec_.ablation == Ablation::traditional_attention) {
            p.add(pre + "w_att", init_uniform_fan_in(static_cast<Eigen::Index>(schema.size()), 2 * d, rng));
        }
    }
    p.add("cls.W1", init_uniform_fan_in(c, d, rng));
    p.add("cls.b1", Matrix::Constant(1, c, 0.01));
    p.add("cls.W2", init_uniform_fan_in(1, c, rng));
    p.add("cls.b2", Matrix::Zero(1, 1));

    p.meta["feature_dim"] = std::to_string(spec_.feature_dim);
    p.meta["hidden"] = std::to_string(spec_.hidden);
    p.meta["classifier_hidden"] = std::to_string(spec_.classifier_hidden);
    p.meta["epsilon"] = format_double(spec_.epsilon);
    p.meta["ablation"] = std::string(to_string(spec_.ablation));
    p.meta["relations"] = join(schema.relations);
    p.meta["profiling"] = profiling_flags(schema);
    p.meta["types"] = join(types_);
    p.meta["entity_type"] = spec_.entity_type;
    p.meta["denominator"] = spec_.denominator == Denominator::present_relations ? "present" : "all";
    p.meta["init"] = "uniform(+-sqrt(6/fan_in)),cls.b1=0.01,other_bias=0,aggregation_gain=" +
                     format_double(spec_.aggregation_gain) +
                     ",seed=" + std::to_string(seed);
    return p;
}

void CeamModel::check_compatible(const ModelParams& params) const {
    auto get = [&](const std::string& k) {
        auto it = params.meta.find(k);
        return it == params.meta.end() ? std::string() : it->second;
    };
    auto split = [](const std::string& s) {
        std::set<std::string> out;
        std::string cur;
        std::istringstream in(s);
        while (std::getline(in, cur, ',')) out.insert(cur);
        return out;
    };
    const auto& schema = pair_.schema();
    if (get("relations") != join(schema.relations) || get("profiling") != profiling_flags(schema)) {
        auto have = split(get("relations"));
        std::set<std::string> want(schema.relations.begin(), schema.relations.end());
        std::string diff;
        for (const auto& r : have) {
            if (!want.contains(r)) diff += " -" + r;
        }
        for (const auto& r : want) {
            if (!have.contains(r)) diff += " +" + r;
        }
        if (diff.empty()) diff = " (same names, different order or profiling flags)";
        throw SchemaError("checkpoint schema differs from data schema:" + diff);
    }
    if (get("types") != join(types_)) {
        throw SchemaError("checkpoint node types [" + get("types") + "] differ from data [" + join(types_) + "]");
    }
    if (get("ablation") != to_string(spec_.ablation)) {
        throw SchemaError("checkpoint variant " + get("ablation") + " differs from " +
                          std::string(to_string(spec_.ablation)));
    }
    if (get("hidden") != std::to_string(spec_.hidden) || get("feature_dim") != std::to_string(spec_.feature_dim) ||
        get("classifier_hidden") != std::to_string(spec_.classifier_hidden)) {
        throw SchemaError("checkpoint dimensions differ from model spec");
    }
}

std::vector<ad::Var> CeamModel::bind(ad::Tape& tape, const ModelParams& params) const {
    std::vector<ad::Var> vars;
    vars.reserve(params.tensors().size());
    for (const auto& t : params.tensors()) {
        vars.push_back(tape.recording() ? tape.leaf(t.value) : tape.constant(t.value));
    }
    return vars;
}

ad::Var CeamModel::layer(ad::Tape& tape, const ModelParams& params, std::span<const ad::Var> vars, Side side,
                         int index, ad::Var h_prev, std::span<const std::int32_t> prev_row,
                         std::span<const std::uint32_t> heads) const {
    const auto pre = layer_prefix(index);
    std::vector<ad::Var> wt;
    for (const auto& t : types_) wt.push_back(var(params, vars, pre + "W_t." + t));
    std::vector<ad::Var> wr;
    for (const auto& r : pair_.schema().relations) wr.push_back(var(params, vars, pre + "W_r." + r));

    const auto& g = tape.keep(restrict_graph(message_graph(side), heads, prev_row));
    std::vector<std::uint32_t> head_rows;
    head_rows.reserve(heads.size());
    for (auto h : heads) head_rows.push_back(static_cast<std::uint32_t>(prev_row[h]));
    auto h_heads = ad::gather_rows(tape, h_prev, head_rows);
    auto self = ad::grouped_linear(tape, h_heads, g.node_type, wt);
    auto tails = ad::gather_rows(tape, h_prev, g.slot_tail);
    auto messages = ad::grouped_linear(tape, tails, g.slot_relation, wr);
    ad::Var z;
    if (spec_.ablation == Ablation::traditional_attention) {
        z = traditional_attention_aggregate(tape, h_heads, messages, var(params, vars, pre + "w_att"), g,
                                            spec_.attention_slope);
    } else {
        z = partitioned_attention_aggregate(tape, self, messages, g, pair_.schema(), spec_.epsilon);
    }
    auto joined = ad::concat_cols(tape, self, z);
    return ad::relu(tape, ad::matmul_nt(tape, joined, var(params, vars, pre + "W_o")));
}

Embeddings CeamModel::embed(ad::Tape& tape, const ModelParams& params, std::span<const ad::Var> vars,
                            std::span<const AlignmentPair> pairs, AggregationDiagnostics* diag,
                            const CandidateStacks* cached) const {
    // nodes needed at each depth, per side
    std::array<std::array<std::vector<std::uint32_t>, 3>, 2> rows;
    for (Side side : {Side::source, Side::target}) {
        auto& r = rows[static_cast<std::size_t>(side)];
        if (pairs.empty()) {
            r[2].resize(pair_.graph(side).node_count());
            for (std::uint32_t n = 0; n < r[2].size(); ++n) r[2][n] = n;
        } else {
            for (const auto& p : pairs) r[2].push_back(side == Side::source ? p.src.value : p.tgt.value);
            std::sort(r[2].begin(), r[2].end());
            r[2].erase(std::unique(r[2].begin(), r[2].end()), r[2].end());
        }
        r[1] = with_tails(message_graph(side), r[2]);
        r[0] = with_tails(message_graph(side), r[1]);
    }

    // entity rows of layer 0
    auto plan_rows_of = [&](Side side) {
        const auto& map = side == Side::source ? plan_row_src_ : plan_row_tgt_;
        std::vector<std::uint32_t> out;
        for (auto n : rows[static_cast<std::size_t>(side)][0]) {
            if (map[n] >= 0) out.push_back(static_cast<std::uint32_t>(map[n]));
        }
        return out;
    };
    const auto ent_rows_src = plan_rows_of(Side::source);
    const auto ent_rows_tgt = plan_rows_of(Side::target);
    auto proj = var(params, vars, "input.proj");
    ad::Var ent_src;
    ad::Var ent_tgt;
    if (spec_.ablation == Ablation::no_aggregation) {
        auto pick = [](const Matrix& x, const std::vector<std::uint32_t>& r) {
            Matrix out(static_cast<Eigen::Index>(r.size()), x.cols());
            for (std::size_t k = 0; k < r.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = x.row(r[k]);
            return out;
        };
        ent_src = ad::matmul_nt(tape, tape.constant(pick(id_x_src_, ent_rows_src)), proj);
        ent_tgt = ad::matmul_nt(tape, tape.constant(pick(id_x_tgt_, ent_rows_tgt)), proj);
    } else {
        std::vector<ad::Var> wr;
        for (const auto& r : pair_.schema().relations) wr.push_back(var(params, vars, "agg.W_r." + r));
        auto mode = spec_.ablation == Ablation::mean_aggregate ? GateMode::identity : GateMode::masked;
        // sorted distinct stack rows and the entity row -> stack row map
        auto stack_rows = [](std::size_t entities, const std::vector<std::uint32_t>& own,
                             const AggregationSide* other, const std::vector<std::uint32_t>& other_own) {
            std::vector<std::uint32_t> out(own);
            if (other) {
                for (auto k : other_own) {
                    out.insert(out.end(), other->candidates[k].begin(), other->candidates[k].end());
                }
            }
            std::sort(out.begin(), out.end());
            out.erase(std::unique(out.begin(), out.end()), out.end());
            std::vector<std::int32_t> pos(entities, -1);
            for (std::size_t k = 0; k < out.size(); ++k) pos[out[k]] = static_cast<std::int32_t>(k);
            return std::make_pair(std::move(out), std::move(pos));
        };
        const auto n_src = plan_.source.entities.size();
        const auto n_tgt = plan_.target.entities.size();
        const auto R = plan_.relations;
        if (cached && mode == GateMode::masked) {
            auto pick = [&](const Matrix& all, const std::vector<std::uint32_t>& r) {
                Matrix out(static_cast<Eigen::Index>(r.size()), all.cols());
                for (std::size_t k = 0; k < r.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = all.row(r[k]);
                return tape.constant(std::move(out));
            };
            const std::vector<std::uint32_t> none;
            const auto [own_src, own_pos_src] = stack_rows(n_src, ent_rows_src, nullptr, none);
            const auto [own_tgt, own_pos_tgt] = stack_rows(n_tgt, ent_rows_tgt, nullptr, none);
            const auto [cand_tgt, cand_pos_tgt] = stack_rows(n_tgt, {}, &plan_.source, ent_rows_src);
            const auto [cand_src, cand_pos_src] = stack_rows(n_src, {}, &plan_.target, ent_rows_tgt);
            ent_src = masked_aggregate(tape, relation_stack(tape, plan_.source, wr, own_src),
                                       pick(cached->target, cand_tgt), plan_.source, R, mode, spec_.denominator, diag,
                                       ent_rows_src, own_pos_src, cand_pos_tgt);
            ent_tgt = masked_aggregate(tape, relation_stack(tape, plan_.target, wr, own_tgt),
                                       pick(cached->source, cand_src), plan_.target, R, mode, spec_.denominator, diag,
                                       ent_rows_tgt, own_pos_tgt, cand_pos_src);
        } else {
            const bool masked = mode == GateMode::masked;
            const auto* far_src = masked ? &plan_.target : nullptr;
            const auto* far_tgt = masked ? &plan_.source : nullptr;
            const auto [rows_src, pos_src] = stack_rows(n_src, ent_rows_src, far_src, ent_rows_tgt);
            const auto [rows_tgt, pos_tgt] = stack_rows(n_tgt, ent_rows_tgt, far_tgt, ent_rows_src);
            auto stack_src = relation_stack(tape, plan_.source, wr, rows_src);
            auto stack_tgt = relation_stack(tape, plan_.target, wr, rows_tgt);
            ent_src = masked_aggregate(tape, stack_src, stack_tgt, plan_.source, R, mode, spec_.denominator, diag,
                                       ent_rows_src, pos_src, pos_tgt);
            ent_tgt = masked_aggregate(tape, stack_tgt, stack_src, plan_.target, R, mode, spec_.denominator, diag,
                                       ent_rows_tgt, pos_tgt, pos_src);
        }
    }

    Embeddings out;
    for (Side side : {Side::source, Side::target}) {
        const auto& kg = pair_.graph(side);
        const auto& feat = features(side);
        const auto& map = side == Side::source ? plan_row_src_ : plan_row_tgt_;
        const auto& r = rows[static_cast<std::size_t>(side)];
        std::vector<std::int32_t> local(kg.node_count(), -1);
        for (std::size_t k = 0; k < r[0].size(); ++k) local[r[0][k]] = static_cast<std::int32_t>(k);

        std::vector<std::uint32_t> lit_dest;
        std::vector<std::uint32_t> ent_dest;
        for (std::size_t k = 0; k < r[0].size(); ++k) {
            auto n = r[0][k];
            if (map[n] >= 0) {
                ent_dest.push_back(static_cast<std::uint32_t>(k));
            } else if (feat.featured[n]) {
                lit_dest.push_back(static_cast<std::uint32_t>(k));
            }
        }
        Matrix x(static_cast<Eigen::Index>(lit_dest.size()), static_cast<Eigen::Index>(feat.dim));
        for (std::size_t k = 0; k < lit_dest.size(); ++k) {
            x.row(static_cast<Eigen::Index>(k)) = feat.vectors.row(r[0][lit_dest[k]]);
        }
        std::vector<ad::RowBlock> blocks;
        blocks.push_back({ad::matmul_nt(tape, tape.constant(std::move(x)), proj), std::move(lit_dest)});
        blocks.push_back({side == Side::source ? ent_src : ent_tgt, std::move(ent_dest)});
        auto h = ad::scatter_rows(tape, r[0].size(), spec_.hidden, blocks);

        h = layer(tape, params, vars, side, 1, h, local, r[1]);
        std::fill(local.begin(), local.end(), -1);
        for (std::size_t k = 0; k < r[1].size(); ++k) local[r[1][k]] = static_cast<std::int32_t>(k);
        h = layer(tape, params, vars, side, 2, h, local, r[2]);
        std::fill(local.begin(), local.end(), -1);
        for (std::size_t k = 0; k < r[2].size(); ++k) local[r[2][k]] = static_cast<std::int32_t>(k);
        if (side == Side::source) {
            out.source = h;
            out.source_row = std::move(local);
        } else {
            out.target = h;
            out.target_row = std::move(local);
        }
    }
    return out;
}

ad::Var CeamModel::logits(ad::Tape& tape, const ModelParams& params, std::span<const ad::Var> vars,
                          const Embeddings& emb, std::span<const AlignmentPair> pairs) const {
    std::vector<std::uint32_t> src;
    std::vector<std::uint32_t> tgt;
    for (const auto& p : pairs) {
        auto a = emb.source_row.at(p.src.value);
        auto b = emb.target_row.at(p.tgt.value);
        if (a < 0 || b < 0) throw std::invalid_argument("pair entity missing from the computed embeddings");
        src.push_back(static_cast<std::uint32_t>(a));
        tgt.push_back(static_cast<std::uint32_t>(b));
    }
    auto a = ad::gather_rows(tape, emb.source, src);
    auto b = ad::gather_rows(tape, emb.target, tgt);
    auto diff = ad::abs(tape, ad::sub(tape, a, b));
    auto hidden = ad::relu(tape, ad::add_row(tape, ad::matmul_nt(tape, diff, var(params, vars, "cls.W1")),
                                             var(params, vars, "cls.b1")));
    return ad::add_row(tape, ad::matmul_nt(tape, hidden, var(params, vars, "cls.W2")), var(params, vars, "cls.b2"));
}

std::vector<double> CeamModel::predict(const ModelParams& params, std::span<const AlignmentPair> pairs) const {
    if (pairs.empty()) return {};
    ad::Tape tape(false);
    auto vars = bind(tape, params);
    auto emb = embed(tape, params, vars, pairs);
    const auto& z = tape.value(logits(tape, params, vars, emb, pairs));
    std::vector<double> p(pairs.size());
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = 1.0 / (1.0 + std::exp(-z(static_cast<Eigen::Index>(k), 0)));
    return p;
}

CandidateStacks CeamModel::candidate_stacks(const ModelParams& params) const {
    CandidateStacks out;
    if (spec_.ablation == Ablation::no_aggregation || spec_.ablation == Ablation::mean_aggregate) return out;
    ad::Tape tape(false);
    auto vars = bind(tape, params);
    std::vector<ad::Var> wr;
    for (const auto& r : pair_.schema().relations) wr.push_back(var(params, vars, "agg.W_r." + r));
    out.source = tape.value(relation_stack(tape, plan_.source, wr));
    out.target = tape.value(relation_stack(tape, plan_.target, wr));
    return out;
}

double CeamModel::loss(const ModelParams& params, std::span<const AlignmentPair> pairs, std::vector<Matrix>* grads,
                       ad::BceStats* stats, const CandidateStacks* cached, bool full_graph) const {
    ad::Tape tape(grads != nullptr);
    auto vars = bind(tape, params);
    auto emb = embed(tape, params, vars, full_graph ? std::span<const AlignmentPair>{} : pairs, nullptr, cached);
    auto z = logits(tape, params, vars, emb, pairs);
    std::vector<double> labels;
    for (const auto& p : pairs) labels.push_back(p.label == Label::positive ? 1.0 : 0.0);
    auto l = ad::sigmoid_bce(tape, z, labels, stats);
    double value = tape.value(l)(0, 0);
    if (grads) {
        tape.backward(l);
        grads->clear();
        for (auto v : vars) grads->push_back(tape.grad_of(v));
    }
    return value;
}

}  // namespace ceam
