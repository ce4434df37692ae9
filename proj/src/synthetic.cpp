#include "ceam/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace ceam {

namespace {

using Record = std::vector<std::string>;  // per relation; empty = missing
using Rng = std::mt19937_64;

constexpr std::array kSuffixes = {"ltd", "inc", "corp", "sp1", "rev", "x64", "beta", "pro", "lite", "ent"};

std::size_t uniform(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

bool chance(Rng& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

class Words {
public:
    explicit Words(Rng& rng) : rng_(rng) {}

    // 8-letter consonant-vowel pseudo-word never handed out before.
    std::string fresh() {
        static constexpr std::string_view cons = "bdfgklmnprstvz";
        static constexpr std::string_view vows = "aeiou";
        for (;;) {
            std::string w;
            for (int k = 0; k < 4; ++k) {
                w += cons[uniform(rng_, cons.size())];
                w += vows[uniform(rng_, vows.size())];
            }
            if (used_.insert(w).second) return w;
        }
    }

private:
    Rng& rng_;
    std::unordered_set<std::string> used_;
};

struct Layout {
    std::vector<std::vector<std::string>> vocab;  // per relation
    std::optional<RelationId> weakness, cwe, vendor, product;
};

Layout make_vocab(const SynthConfig& c, Words& words) {
    Layout l;
    const auto& s = c.schema;
    l.weakness = s.find("hasWeakness");
    l.cwe = s.find("hasCweId");
    l.vendor = s.find("hasVendor");
    l.product = s.find("hasProduct");
    l.vocab.resize(s.size());
    for (RelationId r = 0; r < s.size(); ++r) {
        auto it = c.vocab_sizes.find(s.relations[r]);
        auto size = it != c.vocab_sizes.end() ? it->second : default_vocab_size(s.relations[r], c.n_target_entities);
        if (l.cwe && l.weakness && r == *l.cwe) {
            auto wit = c.vocab_sizes.find(s.relations[*l.weakness]);
            size = wit != c.vocab_sizes.end() ? wit->second
                                              : default_vocab_size(s.relations[*l.weakness], c.n_target_entities);
        }
        for (std::size_t k = 0; k < size; ++k) l.vocab[r].push_back(words.fresh());
    }
    return l;
}

Record sample_record(const SynthConfig& c, const Layout& l, Rng& rng) {
    const auto R = c.schema.size();
    std::vector<std::size_t> idx(R);
    for (RelationId r = 0; r < R; ++r) idx[r] = uniform(rng, l.vocab[r].size());
    if (l.weakness && l.cwe) idx[*l.cwe] = idx[*l.weakness] % l.vocab[*l.cwe].size();
    if (l.product && l.vendor) idx[*l.vendor] = idx[*l.product] % l.vocab[*l.vendor].size();
    Record rec(R);
    for (RelationId r = 0; r < R; ++r) {
        bool drop = !c.schema.is_profiling(r) && chance(rng, c.drop_artifact_prob);
        if (!drop) rec[r] = l.vocab[r][idx[r]];
    }
    return rec;
}

std::vector<RelationId> present(const Record& rec) {
    std::vector<RelationId> out;
    for (RelationId r = 0; r < rec.size(); ++r) {
        if (!rec[r].empty()) out.push_back(r);
    }
    return out;
}

std::string other_value(const Layout& l, RelationId r, const std::string& current, Rng& rng) {
    const auto& v = l.vocab[r];
    for (;;) {
        const auto& w = v[uniform(rng, v.size())];
        if (w != current) return w;
    }
}

// A value failing attr_match against `current`.
std::string scramble(const Layout& l, RelationId r, const std::string& current, Rng& rng, Words& words) {
    return chance(rng, 0.7) ? other_value(l, r, current, rng) : words.fresh();
}

std::string surface_variant(const std::string& text, Rng& rng) {
    return text + " " + kSuffixes[uniform(rng, kSuffixes.size())];
}

void apply_variants(Record& rec, const std::set<RelationId>& keep, double prob, Rng& rng) {
    for (RelationId r = 0; r < rec.size(); ++r) {
        if (!rec[r].empty() && !keep.contains(r) && chance(rng, prob)) rec[r] = surface_variant(rec[r], rng);
    }
}

// h relations drawn without replacement, profiling ones down-weighted.
std::set<RelationId> pick_inconsistent(const SynthConfig& c, const std::vector<RelationId>& pres, std::size_t h,
                                       Rng& rng) {
    std::vector<RelationId> pool = pres;
    std::vector<double> w;
    for (auto r : pool) w.push_back(c.schema.is_profiling(r) ? std::max(c.heavy_profiling_weight, 1e-9) : 1.0);
    std::set<RelationId> out;
    while (out.size() < h && !pool.empty()) {
        std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
        auto k = pick(rng);
        out.insert(pool[k]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
        w.erase(w.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return out;
}

std::vector<RelationId> profiling_present(const SynthConfig& c, const Record& rec) {
    std::vector<RelationId> out;
    for (auto r : present(rec)) {
        if (c.schema.is_profiling(r)) out.push_back(r);
    }
    return out;
}

struct GraphBuilder {
    KnowledgeGraph kg;
    std::unordered_map<std::string, NodeId> literals;
    std::set<std::string> entity_names;
    const SynthConfig& config;

    GraphBuilder(const SynthConfig& c) : kg(c.schema), config(c) {}

    NodeId entity(Rng& rng) {
        for (;;) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "id-%07zu", uniform(rng, 10000000));
            if (entity_names.insert(buf).second) return kg.add_node(buf, config.entity_type, NodeKind::entity, buf);
        }
    }

    void attach(NodeId e, const Record& rec) {
        for (RelationId r = 0; r < rec.size(); ++r) {
            if (rec[r].empty()) continue;
            auto it = literals.find(rec[r]);
            if (it == literals.end()) {
                auto id = kg.add_node("lit-" + std::to_string(literals.size()), literal_type(config.schema.relations[r]),
                                      NodeKind::literal, rec[r]);
                it = literals.emplace(rec[r], id).first;
            }
            kg.add_triple(e, r, it->second);
        }
    }
};

std::size_t round_count(double x) { return static_cast<std::size_t>(std::llround(x)); }

}  // namespace

bool attr_match(std::string_view a, std::string_view b) {
    return a == b || a.find(b) != std::string_view::npos || b.find(a) != std::string_view::npos;
}

void SynthConfig::validate() const {
    auto rate = [](const char* name, double v) {
        if (!(v >= 0 && v <= 1)) throw ConfigError(std::string(name) + " must be in [0, 1], got " + std::to_string(v));
    };
    rate("aligned_fraction", aligned_fraction);
    rate("unaligned_source_fraction", unaligned_source_fraction);
    rate("pos_inconsistency_rate", pos_inconsistency_rate);
    rate("confusable_negative_rate", confusable_negative_rate);
    rate("drop_artifact_prob", drop_artifact_prob);
    rate("variant_prob", variant_prob);
    if (!(heavy_profiling_weight >= 0)) throw ConfigError("heavy_profiling_weight must be >= 0");
    if (n_target_entities < 2) throw ConfigError("n_target_entities must be >= 2");
    if (negatives_per_entity == 0) throw ConfigError("negatives_per_entity must be >= 1");
    if (schema.size() == 0) throw ConfigError("schema has no relations");
    for (const auto& [rel, size] : vocab_sizes) {
        if (!schema.find(rel)) throw ConfigError("vocab size given for unknown relation " + rel);
        if (size < 2) throw ConfigError("vocab size of " + rel + " must be >= 2");
    }
}

SynthConfig synth_config_from(const KeyValueConfig& kv) {
    SynthConfig c;
    c.n_target_entities = static_cast<std::size_t>(kv.get_int("synth.n", static_cast<long long>(c.n_target_entities)));
    c.aligned_fraction = kv.get_double("synth.aligned_fraction", c.aligned_fraction);
    c.unaligned_source_fraction = kv.get_double("synth.unaligned_source_fraction", c.unaligned_source_fraction);
    c.pos_inconsistency_rate = kv.get_double("synth.pos_inconsistency_rate", c.pos_inconsistency_rate);
    c.confusable_negative_rate = kv.get_double("synth.confusable_negative_rate", c.confusable_negative_rate);
    c.drop_artifact_prob = kv.get_double("synth.drop_artifact_prob", c.drop_artifact_prob);
    c.variant_prob = kv.get_double("synth.variant_prob", c.variant_prob);
    c.heavy_profiling_weight = kv.get_double("synth.heavy_profiling_weight", c.heavy_profiling_weight);
    c.negatives_per_entity =
        static_cast<std::size_t>(kv.get_int("synth.negatives_per_entity", static_cast<long long>(c.negatives_per_entity)));
    c.entity_type = kv.get_string("entity_type", c.entity_type);
    c.schema = kv.schema_or(c.schema);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    for (const auto& r : c.schema.relations) {
        auto key = "synth.vocab." + r;
        if (kv.has(key)) c.vocab_sizes[r] = static_cast<std::size_t>(kv.get_int(key, 0));
    }
    return c;
}

std::size_t default_vocab_size(std::string_view relation, std::size_t n) {
    // mean number of entities sharing one value
    static const std::map<std::string_view, double> degree = {
        {"hasWeakness", 3}, {"hasCweId", 3},       {"hasCvssV2Vector", 3}, {"hasCvssV3Vector", 3},
        {"hasCvssV2Score", 4}, {"hasCvssV3Score", 4}, {"hasVendor", 4},     {"hasProduct", 2},
        {"hasVersion", 2},  {"hasImpact", 4},      {"hasDiscoverer", 3}};
    auto it = degree.find(relation);
    double d = it == degree.end() ? 3.0 : it->second;
    return std::max<std::size_t>(2, round_count(static_cast<double>(n) / d));
}

std::string literal_type(std::string_view relation) {
    std::string_view name = relation;
    if (name.starts_with("has")) name.remove_prefix(3);
    std::string out;
    for (std::size_t k = 0; k < name.size(); ++k) {
        char ch = name[k];
        bool upper = ch >= 'A' && ch <= 'Z';
        bool digit = ch >= '0' && ch <= '9';
        bool prev_digit = k > 0 && name[k - 1] >= '0' && name[k - 1] <= '9';
        if (k > 0 && (upper || (digit && !prev_digit))) out += '_';
        out += upper ? static_cast<char>(ch - 'A' + 'a') : ch;
    }
    return out;
}

InconsistencyStats measure_inconsistency(const KGPair& pair, std::span<const AlignmentPair> pairs) {
    const auto& src = pair.source();
    const auto& tgt = pair.target();
    const auto R = pair.schema().size();
    auto values = [&](const KnowledgeGraph& kg, NodeId n) {
        std::vector<std::vector<std::string_view>> out(R);
        for (const auto& e : kg.out_edges(n)) out[e.relation].push_back(kg.text(e.node));
        return out;
    };
    InconsistencyStats s;
    std::size_t pos_bad = 0;
    std::size_t neg_close = 0;
    for (const auto& p : pairs) {
        auto a = values(src, p.src);
        auto b = values(tgt, p.tgt);
        std::size_t types = 0;
        std::size_t inconsistent = 0;
        for (std::size_t r = 0; r < R; ++r) {
            if (a[r].empty() && b[r].empty()) continue;
            ++types;
            bool match = false;
            for (auto x : a[r]) {
                for (auto y : b[r]) match = match || attr_match(x, y);
            }
            if (!match) ++inconsistent;
        }
        if (p.label == Label::positive) {
            ++s.n_pos;
            if (2 * inconsistent > types) ++pos_bad;
        } else {
            ++s.n_neg;
            if (4 * inconsistent <= types) ++neg_close;
        }
    }
    if (s.n_pos) s.positive_inconsistent = static_cast<double>(pos_bad) / static_cast<double>(s.n_pos);
    if (s.n_neg) s.negative_confusable = static_cast<double>(neg_close) / static_cast<double>(s.n_neg);
    return s;
}

SynthOutput generate_pair(const SynthConfig& c) {
    c.validate();
    Rng rng(c.seed);
    Words words(rng);
    const Layout layout = make_vocab(c, words);
    const auto n = c.n_target_entities;
    const auto k = c.negatives_per_entity;

    const auto aligned = round_count(c.aligned_fraction * static_cast<double>(n));
    const auto unaligned_total = round_count(c.unaligned_source_fraction * static_cast<double>(n));
    const auto n_neg = (aligned + unaligned_total) * k;
    const auto confusables = round_count(c.confusable_negative_rate * static_cast<double>(n_neg));
    const auto heavy = round_count(c.pos_inconsistency_rate * static_cast<double>(aligned));
    const auto light = aligned - heavy;
    const auto twins = std::min(confusables / 2, light);
    const auto clones = confusables - twins;
    if (aligned + twins > n) throw GenerationError("aligned_fraction leaves no room for twin targets");
    if (clones > unaligned_total) {
        throw GenerationError("confusable_negative_rate " + std::to_string(c.confusable_negative_rate) +
                              " needs " + std::to_string(clones) + " unaligned source entities but only " +
                              std::to_string(unaligned_total) + " exist");
    }
    if (confusables > 0 && c.schema.profiling_count() == 0) {
        throw GenerationError("confusable negatives need at least one profiling relation");
    }
    if (n < k + 2) throw GenerationError("target KG too small for " + std::to_string(k) + " negatives per entity");

    // target records: base entities then twins
    const auto base = n - twins;
    std::vector<Record> target(base);
    for (auto& rec : target) rec = sample_record(c, layout, rng);

    std::vector<std::size_t> order(base);
    for (std::size_t i = 0; i < base; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> aligned_t(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(aligned));
    std::vector<bool> is_heavy(aligned, false);
    {
        std::vector<std::size_t> idx(aligned);
        for (std::size_t i = 0; i < aligned; ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i = 0; i < heavy; ++i) is_heavy[idx[i]] = true;
    }

    // source counterparts of aligned targets
    std::vector<Record> source;
    std::vector<std::size_t> source_target;  // aligned: target record index
    for (std::size_t a = 0; a < aligned; ++a) {
        Record rec = target[aligned_t[a]];
        auto pres = present(rec);
        std::set<RelationId> bad;
        if (is_heavy[a]) {
            auto h = pres.size() / 2 + 1 + (chance(rng, 0.5) ? 1 : 0);
            bad = pick_inconsistent(c, pres, std::min(h, pres.size()), rng);
            for (auto r : bad) rec[r] = scramble(layout, r, rec[r], rng, words);
        }
        apply_variants(rec, bad, c.variant_prob, rng);
        source.push_back(std::move(rec));
        source_target.push_back(aligned_t[a]);
    }

    GroundTruth truth;
    truth.heavy_positives = heavy;
    truth.twins = twins;
    truth.clones = clones;

    // twins: target near-duplicates of light aligned targets, one profiling value changed
    struct Forced {
        std::size_t source_index;
        std::size_t target_index;
        Side template_side;
        std::size_t template_index;
        RelationId changed;
    };
    std::vector<Forced> forced;
    {
        std::vector<std::size_t> light_idx;
        for (std::size_t a = 0; a < aligned; ++a) {
            if (!is_heavy[a]) light_idx.push_back(a);
        }
        std::shuffle(light_idx.begin(), light_idx.end(), rng);
        for (std::size_t t = 0; t < twins; ++t) {
            auto a = light_idx[t];
            Record rec = target[aligned_t[a]];
            auto prof = profiling_present(c, rec);
            auto r = prof[uniform(rng, prof.size())];
            rec[r] = other_value(layout, r, rec[r], rng);
            forced.push_back({a, target.size(), Side::target, aligned_t[a], r});
            target.push_back(std::move(rec));
        }
    }

    // unaligned sources: clones of targets first, then fresh records
    {
        std::vector<std::size_t> pool(base);
        for (std::size_t i = 0; i < base; ++i) pool[i] = i;
        std::shuffle(pool.begin(), pool.end(), rng);
        std::size_t made = 0;
        for (std::size_t p = 0; p < pool.size() && made < clones; ++p) {
            Record rec = target[pool[p]];
            auto pres = present(rec);
            auto budget = pres.size() / 4;
            auto prof = profiling_present(c, rec);
            if (budget < 1 || prof.empty()) continue;
            auto r = prof[uniform(rng, prof.size())];
            rec[r] = other_value(layout, r, rec[r], rng);
            std::set<RelationId> keep{r};
            if (budget >= 2 && chance(rng, 0.5)) {
                std::vector<RelationId> others;
                for (auto q : pres) {
                    if (!c.schema.is_profiling(q)) others.push_back(q);
                }
                if (!others.empty()) {
                    auto q = others[uniform(rng, others.size())];
                    rec[q] = scramble(layout, q, rec[q], rng, words);
                    keep.insert(q);
                }
            }
            apply_variants(rec, keep, c.variant_prob, rng);
            forced.push_back({source.size(), pool[p], Side::target, pool[p], r});
            source.push_back(std::move(rec));
            ++made;
        }
        if (made < clones) throw GenerationError("too few targets with enough artifacts to clone");
        while (source.size() < aligned + unaligned_total) source.push_back(sample_record(c, layout, rng));
    }

    // graphs, entity creation order shuffled
    GraphBuilder tb(c);
    GraphBuilder sb(c);
    std::vector<NodeId> target_node(target.size());
    std::vector<NodeId> source_node(source.size());
    for (auto [records, nodes, builder] :
         {std::tuple{&target, &target_node, &tb}, std::tuple{&source, &source_node, &sb}}) {
        std::vector<std::size_t> ord(records->size());
        for (std::size_t i = 0; i < ord.size(); ++i) ord[i] = i;
        std::shuffle(ord.begin(), ord.end(), rng);
        for (auto i : ord) (*nodes)[i] = builder->entity(rng);
        for (auto i : ord) builder->attach((*nodes)[i], (*records)[i]);
    }

    SynthOutput out{KGPair(std::move(sb.kg), std::move(tb.kg)), {}, std::move(truth)};

    // positives, then k negatives per source entity with injected confusables first
    std::vector<std::optional<std::size_t>> positive_of(source.size());
    for (std::size_t a = 0; a < aligned; ++a) {
        positive_of[a] = source_target[a];
        out.pairs.push_back({source_node[a], target_node[source_target[a]], Label::positive});
    }
    std::vector<std::vector<const Forced*>> forced_of(source.size());
    for (const auto& f : forced) forced_of[f.source_index].push_back(&f);
    std::vector<std::size_t> pool;
    for (std::size_t s = 0; s < source.size(); ++s) {
        std::set<std::size_t> taken;
        if (positive_of[s]) taken.insert(*positive_of[s]);
        std::size_t made = 0;
        for (const auto* f : forced_of[s]) {
            if (taken.insert(f->target_index).second) {
                AlignmentPair p{source_node[s], target_node[f->target_index], Label::negative};
                out.pairs.push_back(p);
                NodeId tmpl = target_node[f->template_index];
                out.truth.confusables.push_back({p, f->template_side, tmpl, c.schema.relations[f->changed]});
                ++made;
            }
        }
        pool.clear();
        for (std::size_t t = 0; t < target.size(); ++t) {
            if (!taken.contains(t)) pool.push_back(t);
        }
        for (std::size_t m = 0; made < k; ++m, ++made) {
            std::uniform_int_distribution<std::size_t> pick(m, pool.size() - 1);
            std::swap(pool[m], pool[pick(rng)]);
            out.pairs.push_back({source_node[s], target_node[pool[m]], Label::negative});
        }
    }

    auto& st = out.truth.stats;
    st.n_pos = aligned;
    st.n_neg = n_neg;
    st.positive_inconsistent = aligned ? static_cast<double>(heavy) / static_cast<double>(aligned) : 0.0;
    st.negative_confusable = n_neg ? static_cast<double>(confusables) / static_cast<double>(n_neg) : 0.0;
    return out;
}

std::string format_stats(const GroundTruth& truth, const InconsistencyStats& measured) {
    auto num = [](double x) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", x);
        return std::string(buf);
    };
    std::string out;
    out += "n_pos=" + std::to_string(truth.stats.n_pos) + "\n";
    out += "n_neg=" + std::to_string(truth.stats.n_neg) + "\n";
    out += "heavy_positives=" + std::to_string(truth.heavy_positives) + "\n";
    out += "twins=" + std::to_string(truth.twins) + "\n";
    out += "clones=" + std::to_string(truth.clones) + "\n";
    out += "truth.positive_inconsistent=" + num(truth.stats.positive_inconsistent) + "\n";
    out += "truth.negative_confusable=" + num(truth.stats.negative_confusable) + "\n";
    out += "measured.positive_inconsistent=" + num(measured.positive_inconsistent) + "\n";
    out += "measured.negative_confusable=" + num(measured.negative_confusable) + "\n";
    return out;
}

}  // namespace ceam

namespace ceam {

SynthOutput random_fixture(std::uint64_t seed, const FixtureShape& shape) {
    std::mt19937_64 rng(seed);
    std::vector<RelationSpec> specs;
    for (std::size_t r = 0; r < shape.relations; ++r) {
        specs.push_back({"rel" + std::to_string(r), r < shape.profiling});
    }
    auto schema = partition_relations(specs);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::string> pool;
    for (std::size_t k = 0; k < 2 * shape.literals_per_side; ++k) pool.push_back("lit" + std::to_string(k) + "x");

    auto build = [&](const std::vector<std::string>& texts, const char* prefix) {
        KnowledgeGraph kg(schema);
        std::vector<NodeId> ents;
        for (std::size_t e = 0; e < shape.entities_per_side; ++e) {
            auto name = std::string(prefix) + std::to_string(e);
            ents.push_back(kg.add_node(name, "vulnerability", NodeKind::entity, name));
        }
        std::vector<NodeId> lits;
        std::vector<std::string> types = {"kind_a", "kind_b"};
        for (std::size_t k = 0; k < texts.size(); ++k) {
            lits.push_back(kg.add_node(std::string(prefix) + "l" + std::to_string(k), types[k % 2], NodeKind::literal,
                                       texts[k]));
        }
        for (auto e : ents) {
            bool any = false;
            for (RelationId r = 0; r < schema.size(); ++r) {
                for (auto l : lits) {
                    if (u(rng) < shape.edge_prob / static_cast<double>(schema.size())) {
                        kg.add_triple(e, r, l);
                        any = true;
                    }
                }
            }
            if (!any) kg.add_triple(e, static_cast<RelationId>(e.value % schema.size()), lits[e.value % lits.size()]);
        }
        return kg;
    };
    std::vector<std::string> src_texts(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(shape.literals_per_side));
    std::vector<std::string> tgt_texts;
    for (std::size_t k = 0; k < shape.literals_per_side; ++k) {
        tgt_texts.push_back(u(rng) < shape.shared_literal_prob ? src_texts[k] : pool[shape.literals_per_side + k]);
    }
    std::shuffle(tgt_texts.begin(), tgt_texts.end(), rng);
    auto src = build(src_texts, "s");
    auto tgt = build(tgt_texts, "t");
    SynthOutput out{KGPair(std::move(src), std::move(tgt)), {}, {}};
    for (std::uint32_t a = 0; a < shape.entities_per_side; ++a) {
        for (std::uint32_t b = 0; b < shape.entities_per_side; ++b) {
            out.pairs.push_back({NodeId{a}, NodeId{b}, a == b ? Label::positive : Label::negative});
        }
    }
    return out;
}

}  // namespace ceam
