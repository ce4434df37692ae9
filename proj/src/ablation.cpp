#include "ceam/ablation.hpp"

#include <cstdio>

namespace ceam {

EvalReport evaluate_model(const CeamModel& model, const ModelParams& params, const Dataset& data) {
    auto val_scores = model.predict(params, data.validation);
    auto test_scores = model.predict(params, data.test);
    auto val_y = labels_of(data.validation);
    auto test_y = labels_of(data.test);
    return evaluate(val_scores, val_y, test_scores, test_y);
}

AblationResult ablation_run(const KGPair& pair, std::span<const AlignmentPair> pairs, const ModelSpec& base_spec,
                            const TrainConfig& base_config, std::span<const std::uint64_t> seeds,
                            std::span<const Ablation> variants, const AblationProgress& progress) {
    AblationResult result;
    result.seeds.assign(seeds.begin(), seeds.end());
    for (auto seed : seeds) {
        result.splits.push_back(split_dataset(pairs, base_config.test_fraction, base_config.cv_folds, seed));
    }
    for (auto variant : variants) {
        ModelSpec spec = base_spec;
        spec.ablation = variant;
        CeamModel model(pair, spec);
        VariantReport row;
        row.variant = variant;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            TrainConfig config = base_config;
            config.seed = seeds[s];
            auto trained = train(model, result.splits[s], config);
            auto report = evaluate_model(model, trained.params, result.splits[s]);
            if (progress) progress(variant, seeds[s], report);
            row.per_seed.push_back(report);
            row.best_epochs.push_back(trained.best_epoch);
        }
        auto n = static_cast<double>(row.per_seed.size());
        for (const auto& r : row.per_seed) {
            row.mean_f1 += r.f1 / n;
            row.mean_prauc += r.prauc / n;
            row.mean_precision_at_recall95 += r.precision_at_recall95 / n;
        }
        result.rows.push_back(std::move(row));
    }
    return result;
}

std::string format_ablation(const AblationResult& result) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-24s %8s %8s %8s\n", "variant", "F1", "PRAUC", "P@R95");
    out += buf;
    for (const auto& row : result.rows) {
        std::snprintf(buf, sizeof buf, "%-24s %8.4f %8.4f %8.4f\n", std::string(to_string(row.variant)).c_str(),
                      row.mean_f1, row.mean_prauc, row.mean_precision_at_recall95);
        out += buf;
    }
    for (const auto& row : result.rows) {
        std::snprintf(buf, sizeof buf, "variant=%s\tf1=%.17g\tprauc=%.17g\tprecision_at_recall95=%.17g\n",
                      std::string(to_string(row.variant)).c_str(), row.mean_f1, row.mean_prauc,
                      row.mean_precision_at_recall95);
        out += buf;
        for (std::size_t s = 0; s < row.per_seed.size(); ++s) {
            std::snprintf(buf, sizeof buf, "variant=%s\tseed=%llu\tf1=%.17g\tthreshold=%.17g\tbest_epoch=%zu\n",
                          std::string(to_string(row.variant)).c_str(),
                          static_cast<unsigned long long>(result.seeds[s]), row.per_seed[s].f1,
                          row.per_seed[s].selected_threshold, row.best_epochs[s]);
            out += buf;
        }
    }
    return out;
}

}  // namespace ceam
