// Config-driven front end over the perturbation-learning protocol. Each
// subcommand runs one stage against persisted artifacts under the output
// directory and prints a JSON summary line; sweep and spurious-bench run
// whole experiment grids and write CSVs.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "perlearn/perlearn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace perlearn;

namespace {

struct CliOptions {
    std::string config_path;
    std::vector<std::string> sets;
    int workers = 0;  // 0 keeps the config value
    std::string out_dir;
    bool force = false;
};

std::string resolve_out_dir(const CliOptions& opt) {
    if (!opt.out_dir.empty()) return opt.out_dir;
    if (const char* env = std::getenv("PERTURB_LEARN_DATA_DIR"); env && *env)
        return env;
    return ".";
}

Config load_config(const CliOptions& opt) {
    Config cfg = Config::load(opt.config_path);
    for (const auto& s : opt.sets) cfg.set(s);
    if (opt.workers > 0) cfg.set("pipeline.workers", std::to_string(opt.workers));
    return cfg;
}

uint64_t file_fnv1a(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCategory::missing_artifact, "cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[8192];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    (void)hex;
    return h;
}

std::string hex64(uint64_t h) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

// Stage artifacts are named by a hash over exactly the keys that determine
// their content, so unrelated settings (eval targets, sweep grids, worker
// counts) never invalidate them.
std::vector<std::string> stage_prefixes(const std::string& name) {
    std::vector<std::string> p = {"data.", "seeds.data"};
    if (name == "model1" || name == "model2" || name == "perturbed") {
        p.insert(p.end(), {"model.", "train.", "seeds.model1"});
    }
    if (name == "perturbed" || name == "model2") {
        p.insert(p.end(), {"perturb.", "density.", "pipeline.target_mode",
                           "pipeline.filter_invalid", "seeds.targets", "seeds.perturb"});
    }
    if (name == "model2") p.insert(p.end(), {"relearn.", "seeds.model2"});
    return p;
}

std::string artifact_path(const std::string& out, const Config& cfg,
                          const std::string& name) {
    std::string stage = name.rfind("dataset-", 0) == 0 ? "dataset" : name;
    std::string h = cfg.hash_of(stage_prefixes(stage));
    return (fs::path(out) / (name + "-" + h.substr(0, 12) + ".plcn")).string();
}

void emit(const json& j) { std::cout << j.dump() << "\n"; }

json group_json(const GroupReport& g) {
    json j;
    j["overall"] = g.overall;
    j["worst_group_acc"] = g.worst_group_acc;
    j["worst_group"] = g.group_names.at(static_cast<size_t>(g.worst_group));
    return j;
}

// gen-data: generate (or reuse) the train/test/pool artifacts.
int cmd_gen_data(const CliOptions& opt) {
    Config cfg = load_config(opt);
    std::string out = resolve_out_dir(opt);
    fs::create_directories(out);
    std::string train_p = artifact_path(out, cfg, "dataset-train");
    std::string test_p = artifact_path(out, cfg, "dataset-test");
    std::string pool_p = artifact_path(out, cfg, "dataset-pool");
    PipelineSeeds seeds = seeds_from_config(cfg);
    bool pool_is_train = true;
    bool resumed = !opt.force && fs::exists(train_p) && fs::exists(test_p);
    json j;
    if (resumed) {
        pool_is_train = !fs::exists(pool_p);
        Dataset train = dataset_from_container(Container::load(train_p));
        j["n"] = train.size();
        j["d"] = train.dim();
    } else {
        ExperimentData data = make_experiment_data(cfg, seeds.data);
        to_container(data.train).save(train_p);
        to_container(data.test).save(test_p);
        pool_is_train = data.pool.size() == data.train.size() &&
                        data.pool.provenance == data.train.provenance;
        if (!pool_is_train) to_container(data.pool).save(pool_p);
        j["n"] = data.train.size();
        j["d"] = data.train.dim();
    }
    j["cmd"] = "gen-data";
    j["config_hash"] = cfg.hash();
    j["resumed"] = resumed;
    j["train_path"] = train_p;
    j["test_path"] = test_p;
    j["pool_path"] = pool_is_train ? train_p : pool_p;
    j["train_hash"] = hex64(file_fnv1a(train_p));
    j["test_hash"] = hex64(file_fnv1a(test_p));
    j["seeds"] = {{"data", seeds.data},     {"model1", seeds.model1},
                  {"targets", seeds.targets}, {"perturb", seeds.perturb},
                  {"model2", seeds.model2}};
    emit(j);
    return 0;
}

Dataset load_dataset_artifact(const std::string& path, const char* stage_hint) {
    require(fs::exists(path), ErrorCategory::missing_artifact,
            std::string("missing artifact ") + path + " (run " + stage_hint + " first)");
    return dataset_from_container(Container::load(path));
}

// train: first model on the clean training artifact.
int cmd_train(const CliOptions& opt) {
    Config cfg = load_config(opt);
    std::string out = resolve_out_dir(opt);
    fs::create_directories(out);
    Dataset train = load_dataset_artifact(artifact_path(out, cfg, "dataset-train"),
                                          "gen-data");
    std::string model_p = artifact_path(out, cfg, "model1");
    ModelSpec ms = model_spec_from_config(cfg, train.label_space);
    ms.in_dim = train.dim();
    ms.num_classes = train.num_classes;
    TrainConfig tc = train_config_from_config(cfg);
    PipelineSeeds seeds = seeds_from_config(cfg);
    json j;
    j["cmd"] = "train";
    j["config_hash"] = cfg.hash();
    bool resumed = !opt.force && fs::exists(model_p);
    Model model;
    std::vector<double> trace;
    if (resumed) {
        model = Model::from_container(Container::load(model_p));
    } else {
        Rng rng(seeds.model1);
        model = Model(ms, rng);
        trace = model.train(train.x, train.labels, tc, rng);
        model.to_container().save(model_p);
    }
    j["resumed"] = resumed;
    j["model_path"] = model_p;
    j["train_acc"] = accuracy(model.predict(train.x), train.labels);
    if (!trace.empty()) j["final_train_loss"] = trace.back();
    j["epochs"] = tc.epochs;
    emit(j);
    return 0;
}

// perturb: induced targets + perturbed dataset artifact.
int cmd_perturb(const CliOptions& opt) {
    Config cfg = load_config(opt);
    std::string out = resolve_out_dir(opt);
    fs::create_directories(out);
    Dataset train = load_dataset_artifact(artifact_path(out, cfg, "dataset-train"),
                                          "gen-data");
    std::string pool_p = artifact_path(out, cfg, "dataset-pool");
    Dataset pool = fs::exists(pool_p) ? dataset_from_container(Container::load(pool_p))
                                      : train;
    std::string model_p = artifact_path(out, cfg, "model1");
    require(fs::exists(model_p), ErrorCategory::missing_artifact,
            "missing artifact " + model_p + " (run train first)");
    Model model = Model::from_container(Container::load(model_p));
    std::string pert_p = artifact_path(out, cfg, "perturbed");

    PipelineSpec spec = pipeline_spec_from_config(cfg, train.label_space, train.dim());
    json j;
    j["cmd"] = "perturb";
    j["config_hash"] = cfg.hash();
    j["method"] = to_string(spec.method.kind);
    bool resumed = !opt.force && fs::exists(pert_p);
    if (resumed) {
        Container c = Container::load(pert_p);
        j["validity_rate"] = c.get_f64("stats.validity_rate");
        j["mean_l2"] = c.get_f64("stats.mean_l2");
        j["mean_linf"] = c.get_f64("stats.mean_linf");
        j["mean_l0"] = c.get_f64("stats.mean_l0");
    } else {
        Rng trng(spec.seeds.targets);
        std::vector<int> targets =
            assign_targets(pool.labels, pool.label_space, pool.num_classes,
                           spec.target_mode, trng);
        std::optional<DensityEstimator> est;
        if (spec.method.kind == PerturbMethod::Kind::pcfe) {
            Rng drng(mix_seed(spec.seeds.perturb, 0xD5));
            est = spec.density.kind == DensityKind::kde
                      ? fit_kde(train, spec.density.h)
                      : fit_gmm(train, spec.density.k, drng);
        }
        BatchOptions bopt;
        bopt.workers = spec.workers;
        bopt.noise_seed = spec.seeds.perturb;
        bopt.filter_invalid = spec.filter_invalid;
        PerturbBatchResult batch = build_perturbed_dataset(
            model, pool, targets, spec.method, est ? &*est : nullptr, bopt);
        Container c = to_container(batch.perturbed);
        std::vector<int64_t> orig(batch.original_labels.begin(),
                                  batch.original_labels.end());
        c.put_i64_array("original_labels", std::move(orig));
        c.put_str("method", to_string(spec.method.kind));
        c.put_f64("stats.validity_rate", batch.stats.validity_rate);
        c.put_f64("stats.mean_l2", batch.stats.mean_l2);
        c.put_f64("stats.mean_linf", batch.stats.mean_linf);
        c.put_f64("stats.mean_l0", batch.stats.mean_l0);
        c.save(pert_p);
        j["validity_rate"] = batch.stats.validity_rate;
        j["mean_l2"] = batch.stats.mean_l2;
        j["mean_linf"] = batch.stats.mean_linf;
        j["mean_l0"] = batch.stats.mean_l0;
    }
    j["resumed"] = resumed;
    j["perturbed_path"] = pert_p;
    emit(j);
    return 0;
}

// relearn: fresh model on the perturbed artifact, clean evaluation.
int cmd_relearn(const CliOptions& opt) {
    Config cfg = load_config(opt);
    std::string out = resolve_out_dir(opt);
    fs::create_directories(out);
    Dataset train = load_dataset_artifact(artifact_path(out, cfg, "dataset-train"),
                                          "gen-data");
    Dataset test = load_dataset_artifact(artifact_path(out, cfg, "dataset-test"),
                                         "gen-data");
    std::string pert_p = artifact_path(out, cfg, "perturbed");
    require(fs::exists(pert_p), ErrorCategory::missing_artifact,
            "missing artifact " + pert_p + " (run perturb first)");
    Dataset dtilde = dataset_from_container(Container::load(pert_p));
    std::string model_p = artifact_path(out, cfg, "model2");
    ModelSpec ms = model_spec_from_config(cfg, train.label_space);
    ms.in_dim = train.dim();
    ms.num_classes = train.num_classes;
    TrainConfig tc = relearn_config_from_config(cfg);
    PipelineSeeds seeds = seeds_from_config(cfg);
    Model model;
    bool resumed = !opt.force && fs::exists(model_p);
    if (resumed) {
        model = Model::from_container(Container::load(model_p));
    } else {
        Rng rng(seeds.model2);
        model = Model(ms, rng);
        model.train(dtilde.x, dtilde.labels, tc, rng);
        model.to_container().save(model_p);
    }
    json j;
    j["cmd"] = "relearn";
    j["config_hash"] = cfg.hash();
    j["resumed"] = resumed;
    j["model_path"] = model_p;
    j["fit_acc"] = accuracy(model.predict(dtilde.x), dtilde.labels);
    std::vector<int> ptrain = model.predict(train.x);
    std::vector<int> ptest = model.predict(test.x);
    j["clean_train_acc"] = accuracy(ptrain, train.labels);
    j["clean_test_acc"] = accuracy(ptest, test.labels);
    if (train.has_groups()) j["train_groups"] = group_json(group_report(ptrain, train));
    if (test.has_groups()) j["test_groups"] = group_json(group_report(ptest, test));
    emit(j);
    return 0;
}

// eval: any saved model against any split.
int cmd_eval(const CliOptions& opt) {
    Config cfg = load_config(opt);
    std::string out = resolve_out_dir(opt);
    std::string which = cfg.get_string("eval.model", "model2");
    std::string model_p = which == "model1" || which == "model2"
                              ? artifact_path(out, cfg, which)
                              : which;
    require(fs::exists(model_p), ErrorCategory::missing_artifact,
            "missing artifact " + model_p);
    Model model = Model::from_container(Container::load(model_p));
    std::string split = cfg.get_string("eval.split", "test");
    std::string data_p = split == "train" || split == "test"
                             ? artifact_path(out, cfg, "dataset-" + split)
                             : split;
    Dataset data = load_dataset_artifact(data_p, "gen-data");
    std::vector<int> pred = model.predict(data.x);
    json j;
    j["cmd"] = "eval";
    j["config_hash"] = cfg.hash();
    j["model_path"] = model_p;
    j["data_path"] = data_p;
    j["acc"] = accuracy(pred, data.labels);
    if (data.has_groups()) j["groups"] = group_json(group_report(pred, data));
    emit(j);
    return 0;
}

int cmd_sweep(const CliOptions& opt) {
    Config cfg = load_config(opt);
    std::string out = resolve_out_dir(opt);
    fs::create_directories(out);
    std::string axis = cfg.get_string("sweep.axis");
    std::string csv_name = cfg.get_string("sweep.csv_name", "sweep_" + axis + ".csv");
    std::string csv = (fs::path(out) / csv_name).string();
    size_t point_workers = opt.workers > 0 ? static_cast<size_t>(opt.workers)
                                           : cfg.get_u64("sweep.point_workers", 1);
    SweepOutcome res = run_sweep(cfg, csv, point_workers);
    for (const auto& r : res.rows) {
        json j;
        j["axis"] = axis;
        j["value"] = r.axis_value;
        j["rep"] = r.rep;
        j["seed"] = r.seed;
        if (r.error.empty()) {
            j["adv_acc_for_natural"] = r.adv_acc;
            j["noise_acc_for_natural"] = r.noise_acc;
        } else {
            j["error"] = r.error;
        }
        emit(j);
    }
    json j;
    j["cmd"] = "sweep";
    j["config_hash"] = cfg.hash();
    j["csv"] = res.csv_path;
    j["rows"] = res.rows.size();
    j["resumed_rows"] = res.resumed;
    j["all_ok"] = res.all_ok;
    emit(j);
    return res.all_ok ? 0 : 1;
}

int cmd_spurious_bench(const CliOptions& opt) {
    Config cfg = load_config(opt);
    std::string out = resolve_out_dir(opt);
    fs::create_directories(out);
    std::string csv =
        (fs::path(out) / cfg.get_string("bench.csv_name", "spurious_bench.csv")).string();
    BenchOutcome res = run_spurious_bench(cfg, csv);
    for (const auto& r : res.rows) {
        json j;
        j["method"] = r.method;
        j["split"] = r.split;
        j["acc"] = r.acc;
        j["wga"] = r.wga;
        j["std"] = r.stddev;
        emit(j);
    }
    for (const auto& e : res.errors) {
        json j;
        j["bench_error"] = e;
        emit(j);
    }
    json j;
    j["cmd"] = "spurious-bench";
    j["config_hash"] = cfg.hash();
    j["csv"] = res.csv_path;
    j["all_ok"] = res.all_ok;
    emit(j);
    return res.all_ok ? 0 : 1;
}

int error_exit_code(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::config: return 2;
        case ErrorCategory::missing_artifact: return 3;
        case ErrorCategory::schema: return 4;
        case ErrorCategory::io: return 5;
        case ErrorCategory::dimension: return 6;
        case ErrorCategory::numeric: return 7;
        case ErrorCategory::stage: return 8;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"learning-from-perturbations experiment runner"};
    app.require_subcommand(1);

    CliOptions opt;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "INI config file")->required();
        sub->add_option("--set", opt.sets, "override: section.key=value");
        sub->add_option("--workers", opt.workers, "worker threads");
        sub->add_option("--out", opt.out_dir,
                        "artifact directory (default $PERTURB_LEARN_DATA_DIR or .)");
        sub->add_flag("--force", opt.force, "recompute even if the artifact exists");
    };

    CLI::App* c_gen = app.add_subcommand("gen-data", "generate dataset artifacts");
    CLI::App* c_train = app.add_subcommand("train", "train the first model");
    CLI::App* c_pert = app.add_subcommand("perturb", "build the perturbed dataset");
    CLI::App* c_rel = app.add_subcommand("relearn", "retrain on the perturbed dataset");
    CLI::App* c_eval = app.add_subcommand("eval", "evaluate a saved model");
    CLI::App* c_sweep = app.add_subcommand("sweep", "run an axis sweep, emit CSV");
    CLI::App* c_bench =
        app.add_subcommand("spurious-bench", "per-method worst-group accuracy table");
    for (CLI::App* sub : {c_gen, c_train, c_pert, c_rel, c_eval, c_sweep, c_bench})
        add_common(sub);

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_gen->parsed()) return cmd_gen_data(opt);
        if (c_train->parsed()) return cmd_train(opt);
        if (c_pert->parsed()) return cmd_perturb(opt);
        if (c_rel->parsed()) return cmd_relearn(opt);
        if (c_eval->parsed()) return cmd_eval(opt);
        if (c_sweep->parsed()) return cmd_sweep(opt);
        if (c_bench->parsed()) return cmd_spurious_bench(opt);
    } catch (const Error& e) {
        json j;
        j["error"] = {{"category", to_string(e.category)}, {"message", e.what()}};
        std::cout << j.dump() << "\n";
        return error_exit_code(e.category);
    } catch (const std::exception& e) {
        json j;
        j["error"] = {{"category", "stage_error"}, {"message", e.what()}};
        std::cout << j.dump() << "\n";
        return 8;
    }
    return 1;
}
