#pragma once
// Loss, negative sampling, grouped splits, the optimisation loop, learning
// rate search and finite-difference gradient verification.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ceam/gnn.hpp"
#include "ceam/kg.hpp"
#include "ceam/metrics.hpp"
#include "ceam/model.hpp"

namespace ceam {

class SamplingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Optimizer { sgd, adam };

struct TrainConfig {
    double learning_rate = 0.02;
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;
    double test_fraction = 0.25;
    std::size_t cv_folds = 5;
    std::size_t patience = 10;  // epochs without validation-F1 gain before stopping
    Optimizer optimizer = Optimizer::sgd;
    bool cache_candidate_stacks = false;  // refresh candidate stacks once per epoch instead of every step
    bool restrict_to_batch = false;       // embed only the nodes a batch depends on, not the whole graph
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    // Throws ConfigError naming the offending field.
    void validate() const;
};

// Mean BCE with p clamped to [1e-12, 1 - 1e-12]; `clamped` counts clamped entries.
double bce_loss(std::span<const double> p, std::span<const int> labels, std::size_t* clamped = nullptr);

// k negatives per distinct source entity in `positives` and per entry of
// `unaligned`, drawn without replacement from the target entities of
// `entity_type` that are not labelled positives of that source entity.
std::vector<AlignmentPair> negative_sample(const KGPair& pair, std::span<const AlignmentPair> positives,
                                           std::span<const NodeId> unaligned, std::size_t k, std::uint64_t seed,
                                           std::string_view entity_type = "vulnerability");

struct Dataset {
    std::vector<AlignmentPair> train;
    std::vector<AlignmentPair> validation;
    std::vector<AlignmentPair> test;
};

// Pairs are grouped by source entity so one entity never straddles splits.
// test gets `test_fraction` of the groups, validation 1/cv_folds of the rest.
Dataset split_dataset(std::span<const AlignmentPair> pairs, double test_fraction, std::size_t cv_folds,
                      std::uint64_t seed);

// cv_folds (train, validation) partitions of `pairs`, grouped by source entity.
std::vector<Dataset> cv_partitions(std::span<const AlignmentPair> pairs, std::size_t cv_folds, std::uint64_t seed);

std::vector<int> labels_of(std::span<const AlignmentPair> pairs);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double val_f1 = 0;
    double threshold = 0;
};

struct TrainResult {
    ModelParams params;  // best validation epoch
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0;
    double best_val_f1 = 0;
    std::size_t clamped = 0;
    std::size_t batches = 0;
    double batch_seconds = 0;  // summed wall-clock of optimisation steps
    double initial_loss = 0;   // training loss before any update
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// One SGD or Adam step; a zero learning rate leaves params untouched.
class OptimizerState {
public:
    OptimizerState(const TrainConfig& config, const ModelParams& params);
    void step(ModelParams& params, const std::vector<Matrix>& grads);

private:
    const TrainConfig& config_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    std::size_t t_ = 0;
};

TrainResult train(const CeamModel& model, const Dataset& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Validation macro-F1 with the threshold chosen on validation itself.
double validation_f1(const CeamModel& model, const ModelParams& params, std::span<const AlignmentPair> pairs,
                     double* threshold = nullptr);

struct LrSearchResult {
    double rate = 0;
    std::vector<std::pair<double, double>> evaluated;  // (rate, mean CV macro-F1) in evaluation order
};

using LrObjective = std::function<double(double rate)>;

// Bisection over [lo, hi]: score the midpoint and both quarter points, keep
// the half holding the best (ties -> smaller rate), stop once the width is
// below `min_width`; returns the midpoint of the final interval.
LrSearchResult lr_search(const LrObjective& objective, double lo = 0.001, double hi = 0.1, double min_width = 0.002);

// Mean CV macro-F1 over the folds of `pairs` for a given learning rate.
LrSearchResult lr_search(const CeamModel& model, std::span<const AlignmentPair> pairs, const TrainConfig& config);

struct GradCheckEntry {
    std::string tensor;
    double max_rel_error = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> tensors;
    double max_rel_error = 0;
    std::string worst_tensor;
    bool passed = false;
    std::vector<std::string> failing;
};

struct GradFault {
    std::size_t tensor = 0;
    Eigen::Index row = 0;
    Eigen::Index col = 0;
    double factor = 2.0;
};

// loss(params, grads*) returns the scalar loss and fills per-tensor grads when asked.
using Objective = std::function<double(const ModelParams&, std::vector<Matrix>*)>;

// Relative error |a - n| / max(|a|, |n|, 1e-6) per entry, central differences.
GradCheckReport grad_check(const Objective& objective, const ModelParams& params, double tolerance,
                           double step = 1e-5, const GradFault* fault = nullptr);

std::string format_log(const TrainResult& result);

}  // namespace ceam
