#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "ceam/synthetic.hpp"
#include "ceam/training.hpp"
#include "test_util.hpp"

using namespace ceam;
using ceam::testing::small_spec;

namespace {

std::vector<AlignmentPair> positives_of(std::span<const AlignmentPair> pairs) {
    std::vector<AlignmentPair> out;
    for (const auto& p : pairs)
        if (p.label == Label::positive) out.push_back(p);
    return out;
}

std::set<std::pair<std::uint32_t, std::uint32_t>> keys(std::span<const AlignmentPair> pairs) {
    std::set<std::pair<std::uint32_t, std::uint32_t>> out;
    for (const auto& p : pairs) out.insert({p.src.value, p.tgt.value});
    return out;
}

SynthOutput tiny_pair() {
    SynthConfig c;
    c.n_target_entities = 20;
    c.seed = 3;
    return generate_pair(c);
}

}  // namespace

TEST(BceLoss, PerfectPredictionNearZero) {
    std::size_t clamped = 0;
    double l = bce_loss(std::vector<double>{1.0, 0.0}, std::vector<int>{1, 0}, &clamped);
    EXPECT_LT(l, 1e-10);
    EXPECT_EQ(clamped, 2u);
}

TEST(BceLoss, ConstantHalfIsLn2ForAnyLabels) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> y(1 + trial);
        for (auto& v : y) v = static_cast<int>(rng() % 2);
        std::vector<double> p(y.size(), 0.5);
        EXPECT_NEAR(bce_loss(p, y), std::log(2.0), 1e-15);
    }
}

TEST(BceLoss, SinglePositiveExample) {
    EXPECT_NEAR(bce_loss(std::vector<double>{0.8}, std::vector<int>{1}), 0.2231, 1e-4);
}

TEST(BceLoss, NonNegative) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> p(8);
        std::vector<int> y(8);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = u(rng), y[i] = u(rng) < 0.5;
        EXPECT_GE(bce_loss(p, y), 0.0);
    }
}

TEST(BceLoss, TapeLossMatchesProbabilityForm) {
    // The model loss on a fixture equals bce_loss over its predictions.
    auto fx = random_fixture(5);
    CeamModel model(fx.pair, small_spec());
    auto params = model.init_params(5);
    auto p = model.predict(params, fx.pairs);
    EXPECT_NEAR(model.loss(params, fx.pairs), bce_loss(p, labels_of(fx.pairs)), 1e-12);
}

SynthOutput sampling_fixture() {
    FixtureShape shape;
    shape.entities_per_side = 15;
    shape.literals_per_side = 10;
    return random_fixture(11, shape);
}

class NegativeSampling : public ::testing::Test {
protected:
    SynthOutput fx_ = sampling_fixture();
    std::vector<AlignmentPair> positives_ = positives_of(fx_.pairs);
};

TEST_F(NegativeSampling, FivePositivesGiveFifty) {
    std::span<const AlignmentPair> five(positives_.data(), 5);
    EXPECT_EQ(negative_sample(fx_.pair, five, {}, 10, 0).size(), 50u);
}

TEST_F(NegativeSampling, ThreeUnalignedGiveThirty) {
    std::vector<NodeId> unaligned{positives_[0].src, positives_[1].src, positives_[2].src};
    EXPECT_EQ(negative_sample(fx_.pair, {}, unaligned, 10, 0).size(), 30u);
}

TEST_F(NegativeSampling, NoDuplicatesNoPositivesDeterministic) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto negs = negative_sample(fx_.pair, positives_, {}, 10, seed);
        EXPECT_EQ(negs.size(), positives_.size() * 10);
        auto ks = keys(negs);
        EXPECT_EQ(ks.size(), negs.size());
        for (const auto& p : positives_) EXPECT_FALSE(ks.contains({p.src.value, p.tgt.value}));
        for (const auto& n : negs) EXPECT_EQ(n.label, Label::negative);
        EXPECT_EQ(negs, negative_sample(fx_.pair, positives_, {}, 10, seed));
    }
}

TEST_F(NegativeSampling, PoolSmallerThanKIsError) {
    EXPECT_THROW(negative_sample(fx_.pair, positives_, {}, 15, 0), SamplingError);
    EXPECT_THROW(negative_sample(fx_.pair, positives_, {}, 0, 0), SamplingError);
}

TEST(Splits, DisjointCoveringGroupedDeterministic) {
    auto synth = tiny_pair();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto d = split_dataset(synth.pairs, 0.25, 5, seed);
        auto tr = keys(d.train), va = keys(d.validation), te = keys(d.test);
        EXPECT_EQ(tr.size() + va.size() + te.size(), synth.pairs.size());
        auto all = tr;
        all.insert(va.begin(), va.end());
        all.insert(te.begin(), te.end());
        EXPECT_EQ(all, keys(synth.pairs));
        std::map<std::uint32_t, int> owner;
        auto mark = [&](const std::vector<AlignmentPair>& part, int id) {
            for (const auto& p : part) {
                auto [it, fresh] = owner.emplace(p.src.value, id);
                EXPECT_EQ(it->second, id) << "source entity split across parts";
            }
        };
        mark(d.train, 0);
        mark(d.validation, 1);
        mark(d.test, 2);
        auto again = split_dataset(synth.pairs, 0.25, 5, seed);
        EXPECT_EQ(again.train, d.train);
        EXPECT_EQ(again.test, d.test);
    }
}

TEST(Splits, CvFoldsPartitionTheSet) {
    auto synth = tiny_pair();
    auto folds = cv_partitions(synth.pairs, 5, 1);
    ASSERT_EQ(folds.size(), 5u);
    std::size_t val_total = 0;
    for (const auto& f : folds) {
        EXPECT_EQ(f.train.size() + f.validation.size(), synth.pairs.size());
        val_total += f.validation.size();
    }
    EXPECT_EQ(val_total, synth.pairs.size());
}

TEST(Splits, InvalidFractionRejected) {
    auto synth = tiny_pair();
    EXPECT_THROW(split_dataset(synth.pairs, 1.0, 5, 0), ConfigError);
    EXPECT_THROW(split_dataset(synth.pairs, 0.25, 1, 0), ConfigError);
}

TEST(Optimizer, ZeroRateLeavesParamsBitwiseUnchanged) {
    auto fx = random_fixture(2);
    CeamModel model(fx.pair, small_spec());
    auto params = model.init_params(2);
    std::vector<Matrix> grads;
    model.loss(params, fx.pairs, &grads);
    for (auto opt : {Optimizer::sgd, Optimizer::adam}) {
        TrainConfig cfg;
        cfg.learning_rate = 0.0;
        cfg.optimizer = opt;
        auto copy = params;
        OptimizerState state(cfg, copy);
        state.step(copy, grads);
        EXPECT_TRUE(copy == params);
    }
}

TEST(Optimizer, SgdStepMovesAgainstGradient) {
    auto fx = random_fixture(2);
    CeamModel model(fx.pair, small_spec());
    auto params = model.init_params(2);
    std::vector<Matrix> grads;
    model.loss(params, fx.pairs, &grads);
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    auto copy = params;
    OptimizerState state(cfg, copy);
    state.step(copy, grads);
    for (std::size_t k = 0; k < grads.size(); ++k) {
        Matrix expect = params.tensors()[k].value - 0.1 * grads[k];
        EXPECT_TRUE(copy.tensors()[k].value.isApprox(expect, 1e-15) || expect.norm() == 0);
    }
}

TEST(LrSearch, AllTiedConvergesToLowEnd) {
    auto r = lr_search([](double) { return 0.5; });
    // ties keep the lower half, so the final interval hugs the lower bound
    EXPECT_GE(r.rate, 0.001);
    EXPECT_LT(r.rate, 0.001 + 0.002);
    double width = 0.099;
    while (width >= 0.002) width /= 2;
    EXPECT_NEAR(r.rate, 0.001 + width / 2, 1e-15);
}

TEST(LrSearch, StaysInBoundsAndFindsPeak) {
    for (double peak : {0.001, 0.02, 0.025, 0.07, 0.1}) {
        auto r = lr_search([peak](double rate) { return -std::abs(rate - peak); });
        EXPECT_GE(r.rate, 0.001);
        EXPECT_LE(r.rate, 0.1);
        EXPECT_NEAR(r.rate, peak, 0.002);
        for (auto [rate, score] : r.evaluated) {
            EXPECT_GE(rate, 0.001);
            EXPECT_LE(rate, 0.1);
        }
    }
}

TEST(GradCheck, LinearToyIsExact) {
    std::mt19937_64 rng(3);
    ModelParams p;
    p.add("w", init_uniform_fan_in(3, 4, rng));
    p.add("b", init_uniform_fan_in(1, 3, rng));
    Matrix x = init_uniform_fan_in(5, 4, rng);
    Matrix c = init_uniform_fan_in(5, 3, rng);
    auto objective = [&](const ModelParams& q, std::vector<Matrix>* g) {
        Matrix out = x * q.at("w").transpose();
        out.rowwise() += q.at("b").row(0);
        if (g) {
            g->clear();
            g->push_back(c.transpose() * x);
            g->push_back(c.colwise().sum());
        }
        return (out.array() * c.array()).sum();
    };
    auto report = grad_check(objective, p, 1e-8);
    EXPECT_TRUE(report.passed);
    EXPECT_LT(report.max_rel_error, 1e-8);
}

TEST(GradCheck, ModelFixturesWithinTolerance) {
    for (auto a : all_ablations()) {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            auto fx = random_fixture(seed);
            CeamModel model(fx.pair, small_spec(a));
            auto params = model.init_params(seed);
            auto report = grad_check(
                [&](const ModelParams& q, std::vector<Matrix>* g) { return model.loss(q, fx.pairs, g); }, params,
                1e-4);
            EXPECT_TRUE(report.passed) << to_string(a) << " seed " << seed << " worst " << report.worst_tensor;
            EXPECT_LT(report.max_rel_error, 1e-4);
        }
    }
}

TEST(GradCheck, CorruptedEntryNamesTensor) {
    auto fx = random_fixture(1);
    CeamModel model(fx.pair, small_spec());
    auto params = model.init_params(1);
    auto objective = [&](const ModelParams& q, std::vector<Matrix>* g) { return model.loss(q, fx.pairs, g); };
    std::vector<Matrix> grads;
    model.loss(params, fx.pairs, &grads);
    // pick the entry with the largest gradient so doubling it is visible
    std::size_t k_best = 0;
    Eigen::Index r_best = 0, c_best = 0;
    double best = 0;
    for (std::size_t k = 0; k < grads.size(); ++k) {
        Eigen::Index r, c;
        double v = grads[k].cwiseAbs().maxCoeff(&r, &c);
        if (v > best) best = v, k_best = k, r_best = r, c_best = c;
    }
    GradFault fault{k_best, r_best, c_best, 2.0};
    auto report = grad_check(objective, params, 1e-4, 1e-5, &fault);
    EXPECT_FALSE(report.passed);
    ASSERT_EQ(report.failing.size(), 1u);
    EXPECT_EQ(report.failing[0], params.tensors()[k_best].name);
}

TEST(Train, TinyPairLossDecreases) {
    auto synth = tiny_pair();
    CeamModel model(synth.pair, small_spec());
    auto data = split_dataset(synth.pairs, 0.25, 5, 0);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.patience = 50;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.05;
    auto result = train(model, data, cfg);
    ASSERT_EQ(result.log.size(), 50u);
    EXPECT_LT(result.log.back().train_loss, result.initial_loss);
}

TEST(Train, SameSeedSameTrace) {
    auto synth = tiny_pair();
    CeamModel model(synth.pair, small_spec());
    auto data = split_dataset(synth.pairs, 0.25, 5, 0);
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.seed = 4;
    auto a = train(model, data, cfg);
    auto b = train(model, data, cfg);
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
        EXPECT_EQ(a.log[i].val_f1, b.log[i].val_f1);
    }
    EXPECT_TRUE(a.params == b.params);
}

TEST(Train, BatchRestrictionMatchesFullGraph) {
    auto synth = tiny_pair();
    CeamModel model(synth.pair, small_spec());
    auto data = split_dataset(synth.pairs, 0.25, 5, 0);
    TrainConfig cfg;
    cfg.epochs = 5;
    auto full = train(model, data, cfg);
    cfg.restrict_to_batch = true;
    auto restricted = train(model, data, cfg);
    ASSERT_EQ(full.log.size(), restricted.log.size());
    for (std::size_t i = 0; i < full.log.size(); ++i) {
        EXPECT_NEAR(full.log[i].train_loss, restricted.log[i].train_loss, 1e-9);
    }
}

TEST(CandidateCache, SameLossAndDownstreamGradients) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        auto fx = random_fixture(seed);
        CeamModel model(fx.pair, small_spec());
        auto params = model.init_params(seed);
        auto cached = model.candidate_stacks(params);
        std::vector<Matrix> live_grads, cached_grads;
        double live = model.loss(params, fx.pairs, &live_grads);
        double with_cache = model.loss(params, fx.pairs, &cached_grads, nullptr, &cached);
        EXPECT_NEAR(live, with_cache, 1e-12);
        const auto& tensors = params.tensors();
        for (std::size_t k = 0; k < tensors.size(); ++k) {
            if (tensors[k].name.starts_with("agg.")) continue;
            EXPECT_LT((live_grads[k] - cached_grads[k]).cwiseAbs().maxCoeff(), 1e-9) << tensors[k].name;
        }
    }
}

TEST(CandidateCache, UnmaskedVariantsIgnoreIt) {
    auto fx = random_fixture(3);
    CeamModel model(fx.pair, small_spec(Ablation::mean_aggregate));
    auto params = model.init_params(1);
    auto cached = model.candidate_stacks(params);
    EXPECT_EQ(cached.source.size(), 0);
    std::vector<Matrix> a, b;
    EXPECT_EQ(model.loss(params, fx.pairs, &a), model.loss(params, fx.pairs, &b, nullptr, &cached));
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(a[k] == b[k]);
}

TEST(CandidateCache, TrainingDeterministicAndLearns) {
    auto synth = tiny_pair();
    CeamModel model(synth.pair, small_spec());
    auto data = split_dataset(synth.pairs, 0.25, 5, 0);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.patience = 30;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.05;
    cfg.cache_candidate_stacks = true;
    auto a = train(model, data, cfg);
    auto b = train(model, data, cfg);
    EXPECT_TRUE(a.params == b.params);
    EXPECT_LT(a.log.back().train_loss, a.initial_loss);
}

TEST(TrainConfigValidation, NamesField) {
    TrainConfig cfg;
    cfg.test_fraction = 1.5;
    try {
        cfg.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("test_fraction"), std::string::npos);
    }
    cfg = {};
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}
