// ceam: synth | train | eval | ablate | stats | gradcheck

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "ceam/ablation.hpp"
#include "ceam/checkpoint.hpp"
#include "ceam/config.hpp"
#include "ceam/manifest.hpp"
#include "ceam/metrics.hpp"
#include "ceam/model.hpp"
#include "ceam/synthetic.hpp"
#include "ceam/training.hpp"

namespace fs = std::filesystem;
using namespace ceam;

namespace {

enum Exit { ok = 0, failure = 1, usage = 2, data_error = 3, diverged = 4 };

const std::set<std::string> kKnownKeys = {
    "seed", "entity_type", "learning_rate", "epochs", "batch_size", "test_fraction", "cv_folds", "patience",
    "cache_candidate_stacks", "restrict_to_batch",
    "optimizer", "epsilon", "hidden", "feature_dim", "classifier_hidden", "denominator", "feature_seed",
    "ablation", "aggregation_gain", "features.source", "features.target", "ablation.seeds", "synth.n", "synth.aligned_fraction",
    "synth.unaligned_source_fraction", "synth.pos_inconsistency_rate", "synth.confusable_negative_rate",
    "synth.drop_artifact_prob", "synth.variant_prob", "synth.heavy_profiling_weight",
    "synth.negatives_per_entity"};

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

KeyValueConfig load_config(const Common& c) {
    KeyValueConfig kv = c.config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(c.config_path);
    std::set<std::string> known = kKnownKeys;
    for (const auto& r : kv.schema_or(cert_nvd_schema()).relations) known.insert("synth.vocab." + r);
    kv.require_known(known);
    if (c.seed) kv.set("seed", std::to_string(*c.seed));
    return kv;
}

std::string num(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::uint64_t seed_of(const KeyValueConfig& kv) { return static_cast<std::uint64_t>(kv.get_int("seed", 0)); }

ModelSpec model_spec(const KeyValueConfig& kv) {
    ModelSpec s;
    s.feature_dim = static_cast<std::size_t>(kv.get_int("feature_dim", static_cast<long long>(s.feature_dim)));
    s.hidden = static_cast<std::size_t>(kv.get_int("hidden", static_cast<long long>(s.hidden)));
    s.classifier_hidden =
        static_cast<std::size_t>(kv.get_int("classifier_hidden", static_cast<long long>(s.classifier_hidden)));
    s.epsilon = kv.get_double("epsilon", s.epsilon);
    s.aggregation_gain = kv.get_double("aggregation_gain", s.aggregation_gain);
    s.entity_type = kv.get_string("entity_type", s.entity_type);
    s.feature_seed = static_cast<std::uint64_t>(kv.get_int("feature_seed", 0));
    auto denom = kv.get_string("denominator", "present");
    if (denom == "present") {
        s.denominator = Denominator::present_relations;
    } else if (denom == "all") {
        s.denominator = Denominator::all_relations;
    } else {
        throw ConfigError("denominator must be 'present' or 'all', got '" + denom + "'");
    }
    auto name = kv.get_string("ablation", "full");
    auto a = parse_ablation(name);
    if (!a) throw ConfigError("ablation: unknown variant '" + name + "'");
    s.ablation = *a;
    return s;
}

TrainConfig train_config(const KeyValueConfig& kv) {
    TrainConfig t;
    t.learning_rate = kv.get_double("learning_rate", t.learning_rate);
    t.epochs = static_cast<std::size_t>(kv.get_int("epochs", static_cast<long long>(t.epochs)));
    t.batch_size = static_cast<std::size_t>(kv.get_int("batch_size", static_cast<long long>(t.batch_size)));
    t.test_fraction = kv.get_double("test_fraction", t.test_fraction);
    t.cv_folds = static_cast<std::size_t>(kv.get_int("cv_folds", static_cast<long long>(t.cv_folds)));
    t.patience = static_cast<std::size_t>(kv.get_int("patience", static_cast<long long>(t.patience)));
    auto opt = kv.get_string("optimizer", "sgd");
    if (opt == "sgd") {
        t.optimizer = Optimizer::sgd;
    } else if (opt == "adam") {
        t.optimizer = Optimizer::adam;
    } else {
        throw ConfigError("optimizer must be 'sgd' or 'adam', got '" + opt + "'");
    }
    t.cache_candidate_stacks = kv.get_bool("cache_candidate_stacks", t.cache_candidate_stacks);
    t.restrict_to_batch = kv.get_bool("restrict_to_batch", t.restrict_to_batch);
    t.seed = seed_of(kv);
    t.validate();
    return t;
}

struct Data {
    KGPair pair;
    std::vector<AlignmentPair> pairs;
    std::vector<fs::path> files;
};

Data load_data(const fs::path& dir, const RelationPartition& schema) {
    std::vector<fs::path> files = {dir / "source.nodes", dir / "source.triples", dir / "target.nodes",
                                   dir / "target.triples", dir / "pairs.tsv"};
    for (const auto& f : files) {
        if (!fs::exists(f)) throw LookupError("missing data file " + f.string());
    }
    auto src = load_kg(files[0], files[1], schema);
    auto tgt = load_kg(files[2], files[3], schema);
    KGPair pair(std::move(src), std::move(tgt));
    auto pairs = load_pairs(files[4], pair);
    return {std::move(pair), std::move(pairs), files};
}

std::optional<PretrainedVectors> pretrained(const KeyValueConfig& kv, const char* key, std::size_t dim,
                                            RunManifest& manifest) {
    auto path = kv.get(key);
    if (!path) return std::nullopt;
    manifest.add_input(*path);
    return load_pretrained(*path, dim);
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

RunManifest begin_manifest(const std::string& command, const KeyValueConfig& kv, const Common& c) {
    RunManifest m;
    m.command = command;
    m.config = kv.serialize();
    m.seed = seed_of(kv);
    m.started_at = utc_now_iso();
    if (!c.config_path.empty()) m.add_input(c.config_path);
    return m;
}

void finish(RunManifest& m, const fs::path& out, const Timer& timer) {
    m.wall_seconds = timer.seconds();
    m.outputs.push_back((out / "manifest.json").string());
    m.write(out / "manifest.json");
}

int cmd_synth(const Common& c) {
    Timer timer;
    auto kv = load_config(c);
    auto config = synth_config_from(kv);
    config.validate();
    fs::create_directories(c.out);
    auto m = begin_manifest("synth", kv, c);
    auto gen = generate_pair(config);
    fs::path out = c.out;
    save_kg(gen.pair.source(), out / "source.nodes", out / "source.triples");
    save_kg(gen.pair.target(), out / "target.nodes", out / "target.triples");
    save_pairs(gen.pairs, gen.pair, out / "pairs.tsv");
    auto measured = measure_inconsistency(gen.pair, gen.pairs);
    write_file(out / "stats.txt", format_stats(gen.truth, measured));
    for (const char* f : {"source.nodes", "source.triples", "target.nodes", "target.triples", "pairs.tsv", "stats.txt"}) {
        m.outputs.push_back((out / f).string());
    }
    m.results["positive_inconsistent"] = num(measured.positive_inconsistent);
    m.results["negative_confusable"] = num(measured.negative_confusable);
    finish(m, out, timer);
    std::cout << format_stats(gen.truth, measured);
    return ok;
}

int cmd_train(const Common& c, const std::string& data_dir, const std::string& ablation, bool do_lr_search,
              std::optional<double> epsilon) {
    Timer timer;
    auto kv = load_config(c);
    if (!ablation.empty()) kv.set("ablation", ablation);
    if (epsilon) kv.set("epsilon", num(*epsilon));
    auto spec = model_spec(kv);
    auto tc = train_config(kv);
    auto schema = kv.schema_or(cert_nvd_schema());
    auto m = begin_manifest("train", kv, c);
    auto data = load_data(data_dir, schema);
    for (const auto& f : data.files) m.add_input(f);
    auto src_vec = pretrained(kv, "features.source", spec.feature_dim, m);
    auto tgt_vec = pretrained(kv, "features.target", spec.feature_dim, m);
    CeamModel model(data.pair, spec, src_vec ? &*src_vec : nullptr, tgt_vec ? &*tgt_vec : nullptr);
    auto dataset = split_dataset(data.pairs, tc.test_fraction, tc.cv_folds, tc.seed);
    if (do_lr_search) {
        std::vector<AlignmentPair> pool = dataset.train;
        pool.insert(pool.end(), dataset.validation.begin(), dataset.validation.end());
        auto search = lr_search(model, pool, tc);
        tc.learning_rate = search.rate;
        std::string trace;
        for (auto [rate, score] : search.evaluated) trace += num(rate) + ":" + num(score) + " ";
        m.results["lr_search.trace"] = trace;
        std::cerr << "lr-search selected " << search.rate << "\n";
    }
    auto result = train(model, dataset, tc, [](const EpochRecord& r) {
        std::cerr << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_f1 " << r.val_f1 << "\n";
    });
    result.params.meta["split_seed"] = std::to_string(tc.seed);
    result.params.meta["test_fraction"] = num(tc.test_fraction);
    result.params.meta["cv_folds"] = std::to_string(tc.cv_folds);
    result.params.meta["learning_rate"] = num(tc.learning_rate);
    fs::create_directories(c.out);
    fs::path out = c.out;
    save_checkpoint(result.params, out / "checkpoint.txt");
    write_file(out / "train_log.tsv", format_log(result));
    m.outputs = {(out / "checkpoint.txt").string(), (out / "train_log.tsv").string()};
    m.results["variant"] = std::string(to_string(spec.ablation));
    m.results["learning_rate"] = num(tc.learning_rate);
    m.results["epsilon"] = num(spec.epsilon);
    m.results["best_epoch"] = std::to_string(result.best_epoch);
    m.results["best_validation_f1"] = num(result.best_val_f1);
    m.results["clamped_probabilities"] = std::to_string(result.clamped);
    m.batches = result.batches;
    m.mean_batch_ms = result.batches ? 1000.0 * result.batch_seconds / static_cast<double>(result.batches) : 0.0;
    finish(m, out, timer);
    return ok;
}

int cmd_eval(const Common& c, const std::string& data_dir, const std::string& checkpoint, bool emit_curve) {
    Timer timer;
    auto kv = load_config(c);
    auto params = load_checkpoint(checkpoint);
    auto meta = [&](const std::string& k, const std::string& fallback) {
        auto it = params.meta.find(k);
        return it == params.meta.end() ? fallback : it->second;
    };
    // the checkpoint decides the variant, epsilon and split
    kv.set("ablation", meta("ablation", "full"));
    kv.set("epsilon", meta("epsilon", "0.3"));
    kv.set("seed", meta("split_seed", std::to_string(seed_of(kv))));
    kv.set("test_fraction", meta("test_fraction", "0.25"));
    kv.set("cv_folds", meta("cv_folds", "5"));
    auto spec = model_spec(kv);
    auto tc = train_config(kv);
    auto schema = kv.schema_or(cert_nvd_schema());
    auto m = begin_manifest("eval", kv, c);
    m.add_input(checkpoint);
    auto data = load_data(data_dir, schema);
    for (const auto& f : data.files) m.add_input(f);
    auto src_vec = pretrained(kv, "features.source", spec.feature_dim, m);
    auto tgt_vec = pretrained(kv, "features.target", spec.feature_dim, m);
    CeamModel model(data.pair, spec, src_vec ? &*src_vec : nullptr, tgt_vec ? &*tgt_vec : nullptr);
    model.check_compatible(params);
    auto dataset = split_dataset(data.pairs, tc.test_fraction, tc.cv_folds, tc.seed);
    auto report = evaluate_model(model, params, dataset);
    fs::create_directories(c.out);
    fs::path out = c.out;
    write_file(out / "metrics.txt", format_report(report));
    m.outputs = {(out / "metrics.txt").string()};
    if (emit_curve) {
        write_file(out / "curve.tsv", format_curve(report.curve));
        m.outputs.push_back((out / "curve.tsv").string());
    }
    m.results["f1"] = num(report.f1);
    m.results["prauc"] = num(report.prauc);
    m.results["precision_at_recall95"] = num(report.precision_at_recall95);
    m.results["selected_threshold"] = num(report.selected_threshold);
    m.results["validation_f1"] = num(report.validation_f1);
    finish(m, out, timer);
    std::cout << format_report(report);
    return ok;
}

int cmd_ablate(const Common& c, const std::string& data_dir) {
    Timer timer;
    auto kv = load_config(c);
    auto spec = model_spec(kv);
    auto tc = train_config(kv);
    auto schema = kv.schema_or(cert_nvd_schema());
    auto m = begin_manifest("ablate", kv, c);
    auto data = load_data(data_dir, schema);
    for (const auto& f : data.files) m.add_input(f);
    std::vector<std::uint64_t> seeds;
    auto n_seeds = kv.get_int("ablation.seeds", 3);
    if (n_seeds < 1) throw ConfigError("ablation.seeds must be >= 1");
    for (long long s = 0; s < n_seeds; ++s) seeds.push_back(tc.seed + static_cast<std::uint64_t>(s));
    auto result = ablation_run(data.pair, data.pairs, spec, tc, seeds, all_ablations(),
                               [](Ablation a, std::uint64_t seed, const EvalReport& r) {
                                   std::cerr << to_string(a) << " seed " << seed << " f1 " << r.f1 << "\n";
                               });
    fs::create_directories(c.out);
    fs::path out = c.out;
    auto table = format_ablation(result);
    write_file(out / "ablation.txt", table);
    m.outputs = {(out / "ablation.txt").string()};
    for (const auto& row : result.rows) m.results[std::string(to_string(row.variant))] = num(row.mean_f1);
    finish(m, out, timer);
    std::cout << table;
    return ok;
}

int cmd_stats(const Common& c, const std::string& data_dir) {
    Timer timer;
    auto kv = load_config(c);
    auto m = begin_manifest("stats", kv, c);
    auto data = load_data(data_dir, kv.schema_or(cert_nvd_schema()));
    for (const auto& f : data.files) m.add_input(f);
    auto s = measure_inconsistency(data.pair, data.pairs);
    std::string text = "n_pos=" + std::to_string(s.n_pos) + "\nn_neg=" + std::to_string(s.n_neg) +
                       "\npositive_inconsistent=" + num(s.positive_inconsistent) +
                       "\nnegative_confusable=" + num(s.negative_confusable) + "\n";
    fs::create_directories(c.out);
    fs::path out = c.out;
    write_file(out / "inconsistency.txt", text);
    m.outputs = {(out / "inconsistency.txt").string()};
    finish(m, out, timer);
    std::cout << text;
    return ok;
}

int cmd_gradcheck(const Common& c, double tolerance) {
    Timer timer;
    auto kv = load_config(c);
    auto seed = seed_of(kv);
    auto fixture = random_fixture(seed);
    ModelSpec spec;
    spec.feature_dim = 6;
    spec.hidden = 4;
    spec.classifier_hidden = 3;
    spec.epsilon = 0.2;
    if (auto a = kv.get("ablation")) {
        auto parsed = parse_ablation(*a);
        if (!parsed) throw ConfigError("ablation: unknown variant '" + *a + "'");
        spec.ablation = *parsed;
    }
    CeamModel model(fixture.pair, spec);
    auto params = model.init_params(seed);
    auto report = grad_check(
        [&](const ModelParams& p, std::vector<Matrix>* g) { return model.loss(p, fixture.pairs, g); }, params,
        tolerance);
    std::string text;
    for (const auto& t : report.tensors) text += t.tensor + "\t" + num(t.max_rel_error) + "\n";
    text += "max_rel_error=" + num(report.max_rel_error) + "\nworst=" + report.worst_tensor +
            "\npassed=" + (report.passed ? "true" : "false") + "\n";
    fs::create_directories(c.out);
    fs::path out = c.out;
    write_file(out / "gradcheck.txt", text);
    auto m = begin_manifest("gradcheck", kv, c);
    m.outputs = {(out / "gradcheck.txt").string()};
    m.results["max_rel_error"] = num(report.max_rel_error);
    finish(m, out, timer);
    std::cout << text;
    if (!report.passed) {
        std::string names;
        for (const auto& f : report.failing) names += " " + f;
        std::cerr << "gradient check failed for:" << names << "\n";
        return failure;
    }
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Security entity alignment: synthetic data, training, evaluation and ablations"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "key=value config file");
        sub->add_option("--seed", common.seed, "overrides the config seed");
        sub->add_option("--out", common.out, "output directory");
    };

    std::string data_dir;
    std::string ablation;
    std::string checkpoint;
    bool lr = false;
    bool curve = false;
    std::optional<double> epsilon;
    double tolerance = 1e-4;

    auto* synth = app.add_subcommand("synth", "generate a paired KG with labels");
    add_common(synth);
    auto* trainc = app.add_subcommand("train", "train a model on a data directory");
    add_common(trainc);
    trainc->add_option("data", data_dir, "data directory")->required();
    trainc->add_option("--ablation", ablation, "variant name");
    trainc->add_flag("--lr-search", lr, "pick the learning rate by bisection with cross-validation");
    trainc->add_option("--epsilon", epsilon, "profiling attention surplus");
    auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(evalc);
    evalc->add_option("data", data_dir, "data directory")->required();
    evalc->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    evalc->add_flag("--emit-curve", curve, "write the precision-recall curve");
    auto* ablate = app.add_subcommand("ablate", "train and compare every variant");
    add_common(ablate);
    ablate->add_option("data", data_dir, "data directory")->required();
    auto* stats = app.add_subcommand("stats", "measure attribute inconsistency of labelled pairs");
    add_common(stats);
    stats->add_option("data", data_dir, "data directory")->required();
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check on a small fixture");
    add_common(grad);
    grad->add_option("--tolerance", tolerance, "max relative error");

    CLI11_PARSE(app, argc, argv);
    try {
        if (synth->parsed()) return cmd_synth(common);
        if (trainc->parsed()) return cmd_train(common, data_dir, ablation, lr, epsilon);
        if (evalc->parsed()) return cmd_eval(common, data_dir, checkpoint, curve);
        if (ablate->parsed()) return cmd_ablate(common, data_dir);
        if (stats->parsed()) return cmd_stats(common, data_dir);
        if (grad->parsed()) return cmd_gradcheck(common, tolerance);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return usage;
    } catch (const TrainingDiverged& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return diverged;
    } catch (const KgError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return data_error;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return data_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return failure;
    }
    return failure;
}
