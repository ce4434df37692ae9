#include "ceam/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <set>

namespace ceam {

namespace {

constexpr double kClampLo = 1e-12;
constexpr double kClampHi = 1.0 - 1e-12;

std::string num(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// Source entities in first-appearance order.
std::vector<std::uint32_t> source_groups(std::span<const AlignmentPair> pairs) {
    std::vector<std::uint32_t> out;
    std::set<std::uint32_t> seen;
    for (const auto& p : pairs) {
        if (seen.insert(p.src.value).second) out.push_back(p.src.value);
    }
    std::sort(out.begin(), out.end());
    return out;
}

void collect(std::span<const AlignmentPair> pairs, const std::set<std::uint32_t>& groups,
             std::vector<AlignmentPair>& out) {
    for (const auto& p : pairs) {
        if (groups.contains(p.src.value)) out.push_back(p);
    }
}

bool has_both_classes(std::span<const int> labels) {
    auto pos = std::count(labels.begin(), labels.end(), 1);
    return pos > 0 && pos < static_cast<std::ptrdiff_t>(labels.size());
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("test_fraction must be in (0, 1)");
    if (cv_folds < 2) throw ConfigError("cv_folds must be >= 2");
    if (patience == 0) throw ConfigError("patience must be >= 1");
}

double bce_loss(std::span<const double> p, std::span<const int> labels, std::size_t* clamped) {
    if (p.size() != labels.size() || p.empty()) throw std::invalid_argument("bce_loss needs equal, non-empty inputs");
    double sum = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        double q = p[k];
        if (q < kClampLo || q > kClampHi) {
            q = std::clamp(q, kClampLo, kClampHi);
            if (clamped) ++*clamped;
        }
        sum -= labels[k] == 1 ? std::log(q) : std::log(1 - q);
    }
    return sum / static_cast<double>(p.size());
}

std::vector<AlignmentPair> negative_sample(const KGPair& pair, std::span<const AlignmentPair> positives,
                                           std::span<const NodeId> unaligned, std::size_t k, std::uint64_t seed,
                                           std::string_view entity_type) {
    if (k == 0) throw SamplingError("k must be >= 1");
    auto targets = pair.target().nodes_of_type(entity_type);
    std::map<std::uint32_t, std::set<std::uint32_t>> known;
    std::vector<std::uint32_t> order;
    for (const auto& p : positives) {
        if (p.label != Label::positive) continue;
        if (!known.contains(p.src.value)) order.push_back(p.src.value);
        known[p.src.value].insert(p.tgt.value);
    }
    for (auto u : unaligned) {
        if (!known.contains(u.value)) {
            known[u.value];
            order.push_back(u.value);
        }
    }
    std::mt19937_64 rng(seed);
    std::vector<AlignmentPair> out;
    out.reserve(order.size() * k);
    std::vector<std::uint32_t> pool;
    for (auto src : order) {
        const auto& exclude = known[src];
        pool.clear();
        for (auto t : targets) {
            if (!exclude.contains(t.value)) pool.push_back(t.value);
        }
        if (pool.size() < k) {
            throw SamplingError("target pool of " + std::to_string(pool.size()) + " entities is smaller than k=" +
                                std::to_string(k));
        }
        for (std::size_t n = 0; n < k; ++n) {
            std::uniform_int_distribution<std::size_t> pick(n, pool.size() - 1);
            std::swap(pool[n], pool[pick(rng)]);
            out.push_back({NodeId{src}, NodeId{pool[n]}, Label::negative});
        }
    }
    return out;
}

Dataset split_dataset(std::span<const AlignmentPair> pairs, double test_fraction, std::size_t cv_folds,
                      std::uint64_t seed) {
    if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("test_fraction must be in (0, 1)");
    if (cv_folds < 2) throw ConfigError("cv_folds must be >= 2");
    auto groups = source_groups(pairs);
    std::mt19937_64 rng(seed);
    std::shuffle(groups.begin(), groups.end(), rng);
    auto n = groups.size();
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n - n_test) / static_cast<double>(cv_folds)));
    std::set<std::uint32_t> test(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::set<std::uint32_t> val(groups.begin() + static_cast<std::ptrdiff_t>(n_test),
                                groups.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
    std::set<std::uint32_t> train(groups.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), groups.end());
    Dataset d;
    collect(pairs, train, d.train);
    collect(pairs, val, d.validation);
    collect(pairs, test, d.test);
    return d;
}

std::vector<Dataset> cv_partitions(std::span<const AlignmentPair> pairs, std::size_t cv_folds, std::uint64_t seed) {
    if (cv_folds < 2) throw ConfigError("cv_folds must be >= 2");
    auto groups = source_groups(pairs);
    std::mt19937_64 rng(seed);
    std::shuffle(groups.begin(), groups.end(), rng);
    std::vector<Dataset> out(cv_folds);
    for (std::size_t f = 0; f < cv_folds; ++f) {
        std::set<std::uint32_t> val;
        std::set<std::uint32_t> train;
        for (std::size_t g = 0; g < groups.size(); ++g) (g % cv_folds == f ? val : train).insert(groups[g]);
        collect(pairs, train, out[f].train);
        collect(pairs, val, out[f].validation);
    }
    return out;
}

std::vector<int> labels_of(std::span<const AlignmentPair> pairs) {
    std::vector<int> y;
    y.reserve(pairs.size());
    for (const auto& p : pairs) y.push_back(p.label == Label::positive ? 1 : 0);
    return y;
}

OptimizerState::OptimizerState(const TrainConfig& config, const ModelParams& params) : config_(config) {
    if (config.optimizer == Optimizer::adam) {
        for (const auto& t : params.tensors()) {
            m_.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
            v_.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
        }
    }
}

void OptimizerState::step(ModelParams& params, const std::vector<Matrix>& grads) {
    const double lr = config_.learning_rate;
    if (lr == 0) return;
    auto& ts = params.tensors();
    if (config_.optimizer == Optimizer::sgd) {
        for (std::size_t k = 0; k < ts.size(); ++k) ts[k].value -= lr * grads[k];
        return;
    }
    ++t_;
    const double b1 = config_.adam_beta1;
    const double b2 = config_.adam_beta2;
    const double c1 = 1 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < ts.size(); ++k) {
        m_[k] = b1 * m_[k] + (1 - b1) * grads[k];
        v_[k] = b2 * v_[k] + (1 - b2) * grads[k].cwiseProduct(grads[k]);
        ts[k].value.array() -= lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + config_.adam_eps);
    }
}

double validation_f1(const CeamModel& model, const ModelParams& params, std::span<const AlignmentPair> pairs,
                     double* threshold) {
    auto scores = model.predict(params, pairs);
    auto y = labels_of(pairs);
    if (!has_both_classes(y)) {
        if (threshold) *threshold = 0.5;
        return pairs.empty() ? 0.0 : macro_f1(scores, y, 0.5);
    }
    auto sel = f1_select_threshold(scores, y, scores, y);
    if (threshold) *threshold = sel.threshold;
    return sel.validation_f1;
}

TrainResult train(const CeamModel& model, const Dataset& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
    config.validate();
    if (data.train.empty()) throw ConfigError("training split is empty");
    TrainResult result;
    ModelParams params = model.init_params(config.seed);
    OptimizerState opt(config, params);
    result.initial_loss = model.loss(params, data.train);
    result.params = params;
    result.best_val_f1 = -1;

    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<AlignmentPair> order = data.train;
    std::vector<Matrix> grads;
    std::size_t since_best = 0;
    using clock = std::chrono::steady_clock;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        std::optional<CandidateStacks> cache;
        if (config.cache_candidate_stacks) cache = model.candidate_stacks(params);
        double loss_sum = 0;
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            auto n = std::min(config.batch_size, order.size() - b);
            std::span<const AlignmentPair> batch(order.data() + b, n);
            auto t0 = clock::now();
            ad::BceStats stats;
            double loss =
                model.loss(params, batch, &grads, &stats, cache ? &*cache : nullptr, !config.restrict_to_batch);
            if (!std::isfinite(loss)) {
                throw TrainingDiverged("loss became " + num(loss) + " at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(b / config.batch_size));
            }
            opt.step(params, grads);
            result.batch_seconds += std::chrono::duration<double>(clock::now() - t0).count();
            ++result.batches;
            result.clamped += stats.clamped;
            loss_sum += loss * static_cast<double>(n);
        }
        if (!params.all_finite()) {
            throw TrainingDiverged("parameters became non-finite at epoch " + std::to_string(epoch));
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        const auto& val = data.validation.empty() ? data.train : data.validation;
        auto scores = model.predict(params, val);
        auto y = labels_of(val);
        rec.val_loss = bce_loss(scores, y);
        rec.val_f1 = validation_f1(model, params, val, &rec.threshold);
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (rec.val_f1 > result.best_val_f1) {
            result.best_val_f1 = rec.val_f1;
            result.best_epoch = epoch;
            result.params = params;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    return result;
}

LrSearchResult lr_search(const LrObjective& objective, double lo, double hi, double min_width) {
    LrSearchResult out;
    std::map<double, double> cache;
    auto score = [&](double rate) {
        auto it = cache.find(rate);
        if (it != cache.end()) return it->second;
        double s = objective(rate);
        cache.emplace(rate, s);
        out.evaluated.emplace_back(rate, s);
        return s;
    };
    while (hi - lo >= min_width) {
        double mid = (lo + hi) / 2;
        double q1 = lo + (hi - lo) / 4;
        double q3 = hi - (hi - lo) / 4;
        double s1 = score(q1);
        double sm = score(mid);
        double s3 = score(q3);
        // ties resolve toward the smaller rate
        if (s3 > s1 && s3 > sm) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    out.rate = (lo + hi) / 2;
    return out;
}

LrSearchResult lr_search(const CeamModel& model, std::span<const AlignmentPair> pairs, const TrainConfig& config) {
    auto folds = cv_partitions(pairs, config.cv_folds, config.seed);
    return lr_search([&](double rate) {
        TrainConfig c = config;
        c.learning_rate = rate;
        double sum = 0;
        for (const auto& fold : folds) {
            auto r = train(model, fold, c);
            sum += validation_f1(model, r.params, fold.validation);
        }
        return sum / static_cast<double>(folds.size());
    });
}

GradCheckReport grad_check(const Objective& objective, const ModelParams& params, double tolerance, double step,
                           const GradFault* fault) {
    std::vector<Matrix> analytic;
    objective(params, &analytic);
    if (fault) analytic.at(fault->tensor)(fault->row, fault->col) *= fault->factor;
    GradCheckReport report;
    ModelParams probe = params;
    auto& ts = probe.tensors();
    for (std::size_t k = 0; k < ts.size(); ++k) {
        GradCheckEntry entry{ts[k].name, 0.0};
        auto& m = ts[k].value;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                const double orig = m(r, c);
                m(r, c) = orig + step;
                double up = objective(probe, nullptr);
                m(r, c) = orig - step;
                double down = objective(probe, nullptr);
                m(r, c) = orig;
                double numeric = (up - down) / (2 * step);
                double a = analytic[k](r, c);
                double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
                entry.max_rel_error = std::max(entry.max_rel_error, rel);
            }
        }
        if (entry.max_rel_error > report.max_rel_error || report.worst_tensor.empty()) {
            report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
            report.worst_tensor = entry.tensor;
        }
        if (entry.max_rel_error > tolerance) report.failing.push_back(entry.tensor);
        report.tensors.push_back(std::move(entry));
    }
    report.passed = report.failing.empty();
    return report;
}

std::string format_log(const TrainResult& result) {
    std::string out;
    for (const auto& r : result.log) {
        out += "epoch=" + std::to_string(r.epoch) + "\tsplit=train\tloss=" + num(r.train_loss) + "\n";
        out += "epoch=" + std::to_string(r.epoch) + "\tsplit=validation\tloss=" + num(r.val_loss) +
               "\tf1=" + num(r.val_f1) + "\tthreshold=" + num(r.threshold) + "\n";
    }
    out += "best\tepoch=" + std::to_string(result.best_epoch) + "\tsplit=validation\tf1=" + num(result.best_val_f1) +
           "\n";
    return out;
}

}  // namespace ceam
