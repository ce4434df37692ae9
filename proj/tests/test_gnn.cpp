#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ceam/gnn.hpp"
#include "ceam/synthetic.hpp"
#include "test_util.hpp"

using namespace ceam;
using ceam::testing::tiny_schema;

namespace {

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index k = 0;
    for (double x : xs) v[k++] = x;
    return v;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Matrix m(r, c);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = g(rng);
    return m;
}

// Four relations, the first two profiling (profiling_fraction = 0.5).
RelationPartition four_schema() {
    std::vector<RelationSpec> s{{"p0", true}, {"p1", true}, {"n0", false}, {"n1", false}};
    return partition_relations(s);
}

RelationPartition rho_04_schema() {
    std::vector<RelationSpec> s;
    for (int k = 0; k < 5; ++k) s.push_back({"r" + std::to_string(k), k < 2});
    return partition_relations(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// node attention

TEST(NodeAttention, IdenticalVectorsGiveOne) {
    Matrix I = Matrix::Identity(2, 2);
    EXPECT_NEAR(node_attention(vec({0.3, 0.7}), vec({0.3, 0.7}), I, I), 1.0, 1e-15);
}

TEST(NodeAttention, OrthogonalGivesZero) {
    Matrix I = Matrix::Identity(2, 2);
    EXPECT_EQ(node_attention(vec({1, 0}), vec({0, 1}), I, I), 0.0);
}

TEST(NodeAttention, FortyFiveDegrees) {
    Matrix I = Matrix::Identity(2, 2);
    EXPECT_NEAR(node_attention(vec({1, 0}), vec({1, 1}), I, I), 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(node_attention(vec({1, 0}), vec({1, 1}), I, I), 0.7071, 1e-4);
}

TEST(NodeAttention, ZeroVectorGivesZero) {
    Matrix I = Matrix::Identity(2, 2);
    EXPECT_EQ(node_attention(vec({0, 0}), vec({1, 1}), I, I), 0.0);
}

TEST(NodeAttention, BoundedAndScaleInvariant) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.01, 50.0);
    for (int trial = 0; trial < 300; ++trial) {
        Matrix wt = random_matrix(3, 4, rng);
        Matrix wr = random_matrix(3, 4, rng);
        Vector hi = random_matrix(4, 1, rng);
        Vector hj = random_matrix(4, 1, rng);
        double s = node_attention(hi, hj, wt, wr);
        EXPECT_GE(s, -1.0);
        EXPECT_LE(s, 1.0);
        EXPECT_NEAR(node_attention(hi, u(rng) * hj, wt, wr), s, 1e-12);
    }
}

// ---------------------------------------------------------------------------
// partitioned attention

TEST(PartitionedAttention, GroupMassesPointSevenPointThree) {
    auto p = rho_04_schema();
    EXPECT_NEAR(group_mass(p, true, 0.3), 0.7, 1e-15);
    EXPECT_NEAR(group_mass(p, false, 0.3), 0.3, 1e-15);
}

TEST(PartitionedAttention, GroupMassesHalfHalf) {
    auto p = rho_04_schema();
    EXPECT_NEAR(group_mass(p, true, 0.1), 0.5, 1e-15);
    EXPECT_NEAR(group_mass(p, false, 0.1), 0.5, 1e-15);
}

TEST(PartitionedAttention, SingleProfilingRelationGetsWholeMass) {
    auto p = rho_04_schema();
    auto relation_weight = partitioned_attention(p, {{0, 0.42}}, 0.3);
    ASSERT_EQ(relation_weight.size(), 1u);
    EXPECT_NEAR(relation_weight.at(0), 0.7, 1e-15);
}

TEST(PartitionedAttention, EpsilonOutsideRangeRejected) {
    auto p = rho_04_schema();
    EXPECT_THROW(partitioned_attention(p, {{0, 0.1}}, 0.0), ConfigError);
    EXPECT_THROW(partitioned_attention(p, {{0, 0.1}}, 0.6), ConfigError);
    EXPECT_THROW(partitioned_attention(p, {{0, 0.1}}, -0.1), ConfigError);
}

TEST(PartitionedAttention, WithinGroupSoftmax) {
    auto p = rho_04_schema();
    auto relation_weight = partitioned_attention(p, {{0, 0.2}, {1, -0.4}, {2, 0.9}, {4, 0.1}}, 0.2);
    double e0 = std::exp(0.2);
    double e1 = std::exp(-0.4);
    EXPECT_NEAR(relation_weight.at(0), 0.6 * e0 / (e0 + e1), 1e-15);
    EXPECT_NEAR(relation_weight.at(1), 0.6 * e1 / (e0 + e1), 1e-15);
    double e2 = std::exp(0.9);
    double e4 = std::exp(0.1);
    EXPECT_NEAR(relation_weight.at(2), 0.4 * e2 / (e2 + e4), 1e-15);
}

TEST(PartitionedAttention, OneGroupOnlyIsNotRenormalised) {
    auto p = rho_04_schema();
    auto relation_weight = partitioned_attention(p, {{2, 0.5}, {3, 0.1}}, 0.2);
    EXPECT_NEAR(relation_weight.at(2) + relation_weight.at(3), 0.4, 1e-15);
}

TEST(PartitionedAttention, GroupMassIdentityOnRandomScores) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> s(-1.0, 1.0);
    std::uniform_real_distribution<double> e(1e-3, 0.5 - 1e-3);
    auto p = four_schema();
    for (int trial = 0; trial < 500; ++trial) {
        std::map<RelationId, double> means;
        means[trial % 2] = s(rng);
        means[2 + trial % 2] = s(rng);
        if (trial % 3 == 0) means[1 - trial % 2] = s(rng);
        double eps = e(rng);
        auto relation_weight = partitioned_attention(p, means, eps);
        double prof = 0;
        double rest = 0;
        for (auto [r, b] : relation_weight) (p.is_profiling(r) ? prof : rest) += b;
        EXPECT_NEAR(prof, p.profiling_fraction + eps, 1e-9);
        EXPECT_NEAR(rest, 1 - p.profiling_fraction - eps, 1e-9);
    }
}

// ---------------------------------------------------------------------------
// traditional attention

TEST(TraditionalAttention, SingleNeighbourWeightOne) {
    std::vector<Vector> m{vec({0.2, 0.1})};
    std::vector<Vector> w{vec({1, 2, 3, 4})};
    EXPECT_EQ(traditional_attention(vec({1, 1}), m, w, 0.2)[0], 1.0);
}

TEST(TraditionalAttention, EqualScoresSplitEvenly) {
    std::vector<Vector> m{vec({1, 0}), vec({0, 1})};
    std::vector<Vector> w{vec({0, 0, 1, 0}), vec({0, 0, 0, 1})};
    auto a = traditional_attention(vec({1, 1}), m, w, 0.2);
    EXPECT_NEAR(a[0], 0.5, 1e-15);
    EXPECT_NEAR(a[1], 0.5, 1e-15);
}

TEST(TraditionalAttention, SumsToOne) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<Vector> m;
        std::vector<Vector> w;
        for (int k = 0; k < 1 + trial % 6; ++k) {
            m.push_back(random_matrix(3, 1, rng));
            w.push_back(random_matrix(6, 1, rng));
        }
        auto a = traditional_attention(random_matrix(3, 1, rng), m, w, 0.2);
        EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 1.0, 1e-9);
    }
}

TEST(TraditionalAttention, LeakyScores) {
    // scores leaky(-1) = -0.2 and leaky(1) = 1
    std::vector<Vector> m{vec({-1}), vec({1})};
    std::vector<Vector> w{vec({0, 1}), vec({0, 1})};
    auto a = traditional_attention(vec({0}), m, w, 0.2);
    EXPECT_NEAR(a[0], std::exp(-0.2) / (std::exp(-0.2) + std::exp(1.0)), 1e-15);
}

// ---------------------------------------------------------------------------
// layer forward

namespace {

struct LayerFixture {
    KnowledgeGraph kg;
    std::vector<std::string> types;
    MessageGraph graph;
};

// node 0 (vulnerability) --hasVendor--> node 1 (vendor literal); node 2 isolated.
LayerFixture two_node_graph() {
    LayerFixture f{KnowledgeGraph(tiny_schema()), {"vendor", "vulnerability"}, {}};
    auto a = f.kg.add_node("a", "vulnerability", NodeKind::entity, "x");
    auto b = f.kg.add_node("b", "vendor", NodeKind::literal, "abb");
    f.kg.add_node("c", "vulnerability", NodeKind::entity, "y");
    f.kg.add_triple(a, "hasVendor", b);
    f.graph = build_message_graph(f.kg, f.types);
    return f;
}

// relu(W_o [W_t h | z]) for every node via the batched ops.
Matrix batched_layer(const LayerFixture& f, const Matrix& h, const std::vector<Matrix>& wt,
                     const std::vector<Matrix>& wr, const Matrix& wo, double eps, AttentionTrace* trace = nullptr) {
    ad::Tape tape(false);
    auto H = tape.constant(h);
    std::vector<ad::Var> wtv;
    for (const auto& w : wt) wtv.push_back(tape.constant(w));
    std::vector<ad::Var> wrv;
    for (const auto& w : wr) wrv.push_back(tape.constant(w));
    auto self = ad::grouped_linear(tape, H, f.graph.node_type, wtv);
    auto msgs = ad::grouped_linear(tape, ad::gather_rows(tape, H, f.graph.slot_tail), f.graph.slot_relation, wrv);
    auto z = partitioned_attention_aggregate(tape, self, msgs, f.graph, f.kg.schema(), eps, trace);
    return tape.value(ad::relu(tape, ad::matmul_nt(tape, ad::concat_cols(tape, self, z), tape.constant(wo))));
}

}  // namespace

TEST(LayerForward, TwoNodeHandTranscription) {
    auto f = two_node_graph();
    Matrix h(3, 2);
    h << 1.0, 2.0, 0.5, -1.0, 0.3, 0.3;
    Matrix wt_vendor(2, 2);
    wt_vendor << 1, 0, 0, 1;
    Matrix wt_vuln(2, 2);
    wt_vuln << 0.5, 0.0, 0.25, 1.0;
    Matrix wr_vendor(2, 2);
    wr_vendor << 2.0, 0.0, 1.0, 1.0;
    Matrix wr_version = Matrix::Zero(2, 2);
    Matrix wo(2, 4);
    wo << 1, 0, 1, 0, 0, 1, 0, -1;
    double eps = 0.2;  // profiling_fraction = 0.5, profiling mass 0.7

    Matrix out = batched_layer(f, h, {wt_vendor, wt_vuln}, {wr_vendor, wr_version}, wo, eps);

    // node 0 by hand: self = (0.5, 2.25), message = (1.0, -0.5)
    double s0 = 0.5, s1 = 2.25, m0 = 1.0, m1 = -0.5;
    double cosv = (s0 * m0 + s1 * m1) / (std::sqrt(s0 * s0 + s1 * s1) * std::sqrt(m0 * m0 + m1 * m1));
    double relation_weight = 0.7;  // sole relation in the profiling group
    double z0 = cosv * relation_weight * m0, z1 = cosv * relation_weight * m1;
    EXPECT_NEAR(out(0, 0), std::max(0.0, s0 + z0), 1e-12);
    EXPECT_NEAR(out(0, 1), std::max(0.0, s1 - z1), 1e-12);
    // node 1 (literal, no out-edges): z = 0
    EXPECT_NEAR(out(1, 0), std::max(0.0, 0.5), 1e-15);
    EXPECT_NEAR(out(1, 1), std::max(0.0, -1.0), 1e-15);
}

TEST(LayerForward, IsolatedNodeDependsOnlyOnSelf) {
    auto f = two_node_graph();
    std::mt19937_64 rng(1);
    Matrix h = random_matrix(3, 2, rng);
    std::vector<Matrix> wt{random_matrix(2, 2, rng), random_matrix(2, 2, rng)};
    std::vector<Matrix> wr{random_matrix(2, 2, rng), random_matrix(2, 2, rng)};
    Matrix wo = random_matrix(2, 4, rng);
    Matrix out = batched_layer(f, h, wt, wr, wo, 0.2);
    Vector self = wt[1] * h.row(2).transpose();
    Vector expect = (wo.leftCols(2) * self).cwiseMax(0.0);
    EXPECT_NEAR((out.row(2).transpose() - expect).norm(), 0.0, 1e-14);
    // changing other rows of h leaves node 2 alone
    Matrix h2 = h;
    h2.row(0) *= 3;
    h2.row(1) *= -1;
    EXPECT_EQ(batched_layer(f, h2, wt, wr, wo, 0.2).row(2), out.row(2));
}

TEST(LayerForward, ZeroInputGivesZeroOutput) {
    auto f = two_node_graph();
    std::mt19937_64 rng(2);
    std::vector<Matrix> wt{random_matrix(2, 2, rng), random_matrix(2, 2, rng)};
    std::vector<Matrix> wr{random_matrix(2, 2, rng), random_matrix(2, 2, rng)};
    EXPECT_EQ(batched_layer(f, Matrix::Zero(3, 2), wt, wr, random_matrix(2, 4, rng), 0.2), Matrix::Zero(3, 2));
}

TEST(LayerForward, TraceGroupMassesOnRandomFixtures) {
    std::mt19937_64 rng(3);
    std::size_t checked = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto fx = random_fixture(seed);
        const auto& kg = fx.pair.source();
        LayerFixture f{kg, kg.type_names(), build_message_graph(kg, kg.type_names())};
        const auto d = 3;
        Matrix h = random_matrix(static_cast<Eigen::Index>(kg.node_count()), d, rng);
        std::vector<Matrix> wt;
        for (std::size_t t = 0; t < f.types.size(); ++t) wt.push_back(random_matrix(d, d, rng));
        std::vector<Matrix> wr;
        for (std::size_t r = 0; r < kg.schema().size(); ++r) wr.push_back(random_matrix(d, d, rng));
        AttentionTrace trace;
        batched_layer(f, h, wt, wr, random_matrix(d, 2 * d, rng), 0.2, &trace);
        for (const auto& s : trace.node_scores) {
            EXPECT_GE(s, -1.0 - 1e-15);
            EXPECT_LE(s, 1.0 + 1e-15);
        }
        std::map<std::uint32_t, std::pair<double, double>> mass;
        std::map<std::uint32_t, std::pair<bool, bool>> has;
        for (auto [key, b] : trace.relation_weight) {
            bool prof = kg.schema().is_profiling(key.second);
            (prof ? mass[key.first].first : mass[key.first].second) += b;
            (prof ? has[key.first].first : has[key.first].second) = true;
        }
        for (auto [node, m] : mass) {
            if (!has[node].first || !has[node].second) continue;
            EXPECT_NEAR(m.first, kg.schema().profiling_fraction + 0.2, 1e-9);
            EXPECT_NEAR(m.second, 1 - kg.schema().profiling_fraction - 0.2, 1e-9);
            ++checked;
        }
    }
    EXPECT_GT(checked, 50u);
}

// ---------------------------------------------------------------------------
// classifier

TEST(Classifier, IdenticalEmbeddingsZeroBiasGiveHalf) {
    std::mt19937_64 rng(4);
    Vector h = random_matrix(4, 1, rng);
    EXPECT_EQ(classifier_forward(h, h, random_matrix(3, 4, rng), Vector::Zero(3), random_matrix(1, 3, rng), 0.0), 0.5);
}

TEST(Classifier, SymmetricInArguments) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        Vector a = random_matrix(4, 1, rng);
        Vector b = random_matrix(4, 1, rng);
        Matrix w1 = random_matrix(3, 4, rng);
        Vector b1 = random_matrix(3, 1, rng);
        Matrix w2 = random_matrix(1, 3, rng);
        EXPECT_EQ(classifier_forward(a, b, w1, b1, w2, 0.3), classifier_forward(b, a, w1, b1, w2, 0.3));
    }
}

TEST(Classifier, HandEvaluatedTwoByTwo) {
    Matrix w1(2, 2);
    w1 << 0.5, -1.0, -2.0, 3.0;
    Vector b1 = vec({0.1, 0.4});
    Matrix w2(1, 2);
    w2 << 1.5, -0.5;
    // input |(1,0) - (0,0)| = (1, 0); hidden = relu(0.6, -1.6) = (0.6, 0); logit = 0.9 + 0.2
    double expect = 1.0 / (1.0 + std::exp(-1.1));
    EXPECT_NEAR(classifier_forward(vec({1, 0}), vec({0, 0}), w1, b1, w2, 0.2), expect, 1e-15);
}

TEST(Classifier, ShapeMismatchThrows) {
    EXPECT_THROW(classifier_forward(vec({1, 0}), vec({0}), Matrix::Ones(2, 2), vec({0, 0}), Matrix::Ones(1, 2), 0),
                 std::invalid_argument);
}
