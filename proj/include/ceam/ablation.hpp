#pragma once
// Model evaluation on a split and the ablation runner that trains every
// variant on identical splits and seeds.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ceam/metrics.hpp"
#include "ceam/model.hpp"
#include "ceam/training.hpp"

namespace ceam {

// Threshold from validation scores, metrics on test scores.
EvalReport evaluate_model(const CeamModel& model, const ModelParams& params, const Dataset& data);

struct VariantReport {
    Ablation variant = Ablation::full;
    std::vector<EvalReport> per_seed;
    std::vector<std::size_t> best_epochs;
    double mean_f1 = 0;
    double mean_prauc = 0;
    double mean_precision_at_recall95 = 0;
};

struct AblationResult {
    std::vector<std::uint64_t> seeds;
    std::vector<Dataset> splits;  // one per seed, shared by every variant
    std::vector<VariantReport> rows;
};

using AblationProgress = std::function<void(Ablation, std::uint64_t seed, const EvalReport&)>;

AblationResult ablation_run(const KGPair& pair, std::span<const AlignmentPair> pairs, const ModelSpec& base_spec,
                            const TrainConfig& base_config, std::span<const std::uint64_t> seeds,
                            std::span<const Ablation> variants = all_ablations(),
                            const AblationProgress& progress = {});

// Aligned text table followed by one `variant=... f1=...` record per row.
std::string format_ablation(const AblationResult& result);

}  // namespace ceam
