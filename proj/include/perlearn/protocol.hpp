#pragma once

#include <atomic>
#include <cmath>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "perlearn/common.hpp"
#include "perlearn/dataset.hpp"
#include "perlearn/density.hpp"
#include "perlearn/metrics.hpp"
#include "perlearn/model.hpp"
#include "perlearn/perturb.hpp"
#include "perlearn/rng.hpp"

namespace perlearn {

enum class TargetMode { deterministic, random };

inline TargetMode target_mode_from_string(const std::string& s) {
    if (s == "deterministic") return TargetMode::deterministic;
    if (s == "random") return TargetMode::random;
    throw Error(ErrorCategory::config, "unknown target mode: " + s);
}

// Induced targets, never equal to the source label. Deterministic mode maps
// y to (y+1) mod C (binary: -y); random mode draws uniformly over the other
// C-1 classes.
inline std::vector<int> assign_targets(const std::vector<int>& labels,
                                       LabelSpace space, int num_classes,
                                       TargetMode mode, Rng& rng) {
    require(num_classes >= 2, ErrorCategory::config,
            "assign_targets: a target class different from the label needs "
            "num_classes >= 2");
    std::vector<int> out(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        int y = labels[i];
        if (space == LabelSpace::pm_one) {
            out[i] = -y;  // the only other class, in either mode
        } else if (mode == TargetMode::deterministic) {
            out[i] = (y + 1) % num_classes;
        } else {
            int k = static_cast<int>(rng.uniform_int(num_classes - 1));
            out[i] = k >= y ? k + 1 : k;
        }
    }
    return out;
}

struct PerturbMethod {
    enum class Kind { pgd, cfe, pcfe, noise } kind = Kind::pgd;
    PgdSpec pgd;
    CfeSpec cfe;
    PcfeSpec pcfe;
    NoiseSpec noise;
};

inline const char* to_string(PerturbMethod::Kind k) {
    switch (k) {
        case PerturbMethod::Kind::pgd: return "pgd";
        case PerturbMethod::Kind::cfe: return "cfe";
        case PerturbMethod::Kind::pcfe: return "pcfe";
        case PerturbMethod::Kind::noise: return "noise";
    }
    return "?";
}

struct PerturbStats {
    double validity_rate = 0.0;
    double mean_l2 = 0.0;
    double mean_linf = 0.0;
    double mean_l0 = 0.0;
    size_t generated = 0;
    size_t kept = 0;
};

struct PerturbBatchResult {
    Dataset perturbed;  // inputs x~, labels = induced targets
    std::vector<int> original_labels;
    PerturbStats stats;
};

struct BatchOptions {
    size_t workers = 1;
    uint64_t noise_seed = 0;     // per-sample streams fork from this
    bool filter_invalid = false; // default keeps every perturbation
};

// Applies one perturbation method to every row. Rows are independent and
// written to their own slots, so the result is bit-identical for any worker
// count. Density estimator is only consulted for the pcfe method.
inline PerturbBatchResult build_perturbed_dataset(
    const Model& model, const Dataset& data, const std::vector<int>& targets,
    const PerturbMethod& method, const DensityEstimator* density,
    const BatchOptions& opt) {
    require(targets.size() == data.size(), ErrorCategory::dimension,
            "build_perturbed_dataset: targets size mismatch");
    require(data.dim() == model.spec.in_dim, ErrorCategory::dimension,
            "build_perturbed_dataset: model/data dimension mismatch");
    if (method.kind == PerturbMethod::Kind::pcfe)
        require(density != nullptr, ErrorCategory::config,
                "build_perturbed_dataset: pcfe needs a density estimator");
    size_t n = data.size(), d = data.dim();
    Matrix xt(n, d);
    std::vector<uint8_t> valid(n, 0);
    std::vector<double> l2(n, 0.0), linf(n, 0.0);
    std::vector<size_t> l0(n, 0);
    Rng noise_base(opt.noise_seed);

    auto one = [&](size_t i) {
        std::vector<double> xi(data.x.row(i), data.x.row(i) + d);
        PerturbRecord rec;
        switch (method.kind) {
            case PerturbMethod::Kind::pgd:
                rec = pgd_targeted(model, xi, targets[i], method.pgd,
                                   &data.feature_min, &data.feature_max);
                break;
            case PerturbMethod::Kind::cfe:
                rec = cfe_l2(model, xi, targets[i], method.cfe);
                break;
            case PerturbMethod::Kind::pcfe:
                rec = pcfe_l0(model, *density, xi, targets[i], method.pcfe,
                              data.feature_min, data.feature_max);
                break;
            case PerturbMethod::Kind::noise: {
                Rng r = noise_base.fork(i);
                rec.x_tilde = noise_baseline(xi, method.noise, r, &data.feature_min,
                                             &data.feature_max);
                detail::finish_record(model, xi, targets[i], rec);
                break;
            }
        }
        std::copy(rec.x_tilde.begin(), rec.x_tilde.end(), xt.row(i));
        valid[i] = rec.valid ? 1 : 0;
        l2[i] = rec.l2;
        linf[i] = rec.linf;
        l0[i] = rec.l0;
    };

    size_t workers = std::max<size_t>(opt.workers, 1);
    if (workers == 1) {
        for (size_t i = 0; i < n; ++i) one(i);
    } else {
        std::atomic<size_t> next{0};
        auto drain = [&]() {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= n) return;
                one(i);
            }
        };
        std::vector<std::thread> pool;
        for (size_t w = 1; w < workers; ++w) pool.emplace_back(drain);
        drain();
        for (auto& th : pool) th.join();
    }

    PerturbBatchResult out;
    out.stats.generated = n;
    std::vector<size_t> kept;
    kept.reserve(n);
    for (size_t i = 0; i < n; ++i)
        if (!opt.filter_invalid || valid[i]) kept.push_back(i);
    require(!kept.empty(), ErrorCategory::stage,
            "build_perturbed_dataset: every perturbation was filtered out");
    out.stats.kept = kept.size();
    out.perturbed.x = Matrix(kept.size(), d);
    out.perturbed.labels.resize(kept.size());
    out.original_labels.resize(kept.size());
    for (size_t j = 0; j < kept.size(); ++j) {
        size_t i = kept[j];
        std::copy(xt.row(i), xt.row(i) + d, out.perturbed.x.row(j));
        out.perturbed.labels[j] = targets[i];
        out.original_labels[j] = data.labels[i];
    }
    out.perturbed.num_classes = data.num_classes;
    out.perturbed.label_space = data.label_space;
    out.perturbed.provenance = data.provenance + "/perturbed:" + to_string(method.kind);
    recompute_feature_range(out.perturbed);
    double vsum = 0.0;
    for (size_t i = 0; i < n; ++i) vsum += valid[i];
    out.stats.validity_rate = vsum / static_cast<double>(n);
    double s2 = 0, si = 0, s0 = 0;
    for (size_t i = 0; i < n; ++i) {
        s2 += l2[i];
        si += linf[i];
        s0 += static_cast<double>(l0[i]);
    }
    out.stats.mean_l2 = s2 / static_cast<double>(n);
    out.stats.mean_linf = si / static_cast<double>(n);
    out.stats.mean_l0 = s0 / static_cast<double>(n);
    return out;
}

struct DensityConfig {
    DensityKind kind = DensityKind::kde;
    size_t k = 1;      // gmm components per class
    double h = 0.0;    // kde bandwidth; <= 0 selects Silverman
};

enum class NoiseLabels { target, original };

struct PipelineSeeds {
    uint64_t data = 1;
    uint64_t model1 = 2;
    uint64_t targets = 3;
    uint64_t perturb = 4;
    uint64_t model2 = 5;
};

struct PipelineSpec {
    ModelSpec model;  // in_dim may be 0: filled from the data
    TrainConfig train;
    std::optional<TrainConfig> retrain;  // stage-4 override; defaults to train
    TargetMode target_mode = TargetMode::deterministic;
    PerturbMethod method;
    DensityConfig density;
    bool run_noise_arm = true;
    NoiseLabels noise_labels = NoiseLabels::target;
    bool filter_invalid = false;
    size_t workers = 1;
    PipelineSeeds seeds;
    // > 0 retunes pcfe beta on a pool subsample so the mean modified
    // coordinate count approaches pixel_ratio * d from below.
    double pcfe_pixel_ratio = 0.0;
    size_t pcfe_tune_subsample = 64;
};

struct ArmResult {
    Model model;
    double fit_acc = 0.0;          // accuracy on its own (perturbed) training set
    double clean_train_acc = 0.0;  // original inputs, original labels
    double clean_test_acc = 0.0;
    std::optional<GroupReport> train_groups;
    std::optional<GroupReport> test_groups;
};

struct PipelineResult {
    Model model1;
    double model1_train_acc = 0.0;
    double model1_test_acc = 0.0;
    std::optional<GroupReport> model1_test_groups;
    PerturbStats perturb_stats;
    NoiseSpec matched_noise;
    double tuned_beta = 0.0;  // pcfe beta actually used (after ratio tuning)
    ArmResult adv;
    std::optional<ArmResult> noise;
};

// Noise magnitude matched to the main perturbation arm: PGD passes its own
// budget through; CFE matches the mean achieved l2 norm; p-CFE matches the
// mean modified-coordinate count.
inline NoiseSpec matched_noise_spec(const PerturbMethod& method,
                                    const PerturbStats& stats) {
    NoiseSpec ns;
    switch (method.kind) {
        case PerturbMethod::Kind::pgd:
            ns.kind = method.pgd.norm == NormKind::l2 ? NoiseSpec::Kind::l2
                                                      : NoiseSpec::Kind::linf;
            ns.eps = method.pgd.eps;
            break;
        case PerturbMethod::Kind::cfe:
            ns.kind = NoiseSpec::Kind::l2;
            ns.eps = stats.mean_l2;
            break;
        case PerturbMethod::Kind::pcfe:
            ns.kind = NoiseSpec::Kind::l0;
            ns.d_delta = static_cast<size_t>(std::llround(stats.mean_l0));
            break;
        case PerturbMethod::Kind::noise:
            ns = method.noise;
            break;
    }
    return ns;
}

namespace detail {

inline ArmResult train_and_eval_arm(const ModelSpec& mspec, const TrainConfig& tcfg,
                                    uint64_t seed, const Dataset& dtilde,
                                    const Dataset& clean_train,
                                    const Dataset& clean_test) {
    Rng rng(seed);
    ArmResult arm;
    arm.model = Model(mspec, rng);
    arm.model.train(dtilde.x, dtilde.labels, tcfg, rng);
    arm.fit_acc = accuracy(arm.model.predict(dtilde.x), dtilde.labels);
    std::vector<int> ptrain = arm.model.predict(clean_train.x);
    std::vector<int> ptest = arm.model.predict(clean_test.x);
    arm.clean_train_acc = accuracy(ptrain, clean_train.labels);
    arm.clean_test_acc = accuracy(ptest, clean_test.labels);
    if (clean_train.has_groups()) arm.train_groups = group_report(ptrain, clean_train);
    if (clean_test.has_groups()) arm.test_groups = group_report(ptest, clean_test);
    return arm;
}

}  // namespace detail

// The full perturbation-learning protocol: train a model on clean data,
// perturb every pool input toward an induced target, retrain from scratch
// on (x~, induced target), and evaluate the retrained model on clean
// inputs against the ORIGINAL labels. Optionally runs the
// magnitude-matched noise arm for comparison. The pool is usually the
// training set itself; a separate pool supports varying the perturbed
// sample count independently of the clean sample count.
inline PipelineResult learn_from_perturbations(const Dataset& train_data,
                                               const Dataset& pool_data,
                                               const Dataset& test_data,
                                               const PipelineSpec& spec_in) {
    PipelineSpec spec = spec_in;
    validate(train_data);
    validate(pool_data);
    validate(test_data);
    require(test_data.dim() == train_data.dim(), ErrorCategory::dimension,
            "pipeline: train/test dimension mismatch");
    require(pool_data.dim() == train_data.dim(), ErrorCategory::dimension,
            "pipeline: train/pool dimension mismatch");
    if (spec.model.in_dim == 0) spec.model.in_dim = train_data.dim();
    spec.model.num_classes = train_data.num_classes;
    if (spec.model.head == Head::margin)
        require(train_data.label_space == LabelSpace::pm_one, ErrorCategory::config,
                "pipeline: margin head needs pm_one labels");

    PipelineResult out;

    // stage: first model
    {
        Rng rng(spec.seeds.model1);
        out.model1 = Model(spec.model, rng);
        out.model1.train(train_data.x, train_data.labels, spec.train, rng);
        std::vector<int> ptest = out.model1.predict(test_data.x);
        out.model1_train_acc =
            accuracy(out.model1.predict(train_data.x), train_data.labels);
        out.model1_test_acc = accuracy(ptest, test_data.labels);
        if (test_data.has_groups()) out.model1_test_groups = group_report(ptest, test_data);
    }

    // stage: induced targets
    Rng trng(spec.seeds.targets);
    std::vector<int> targets =
        assign_targets(pool_data.labels, pool_data.label_space,
                       pool_data.num_classes, spec.target_mode, trng);

    // stage: density fit (pcfe only)
    std::optional<DensityEstimator> est;
    if (spec.method.kind == PerturbMethod::Kind::pcfe) {
        Rng drng(mix_seed(spec.seeds.perturb, 0xD5));
        est = spec.density.kind == DensityKind::kde
                  ? fit_kde(train_data, spec.density.h)
                  : fit_gmm(train_data, spec.density.k, drng);
        if (spec.pcfe_pixel_ratio > 0.0) {
            size_t m = std::min<size_t>(std::max<size_t>(spec.pcfe_tune_subsample, 1),
                                        pool_data.size());
            Matrix sub(m, pool_data.dim());
            std::vector<int> sub_targets(m);
            for (size_t i = 0; i < m; ++i) {
                std::copy(pool_data.x.row(i), pool_data.x.row(i) + pool_data.dim(),
                          sub.row(i));
                sub_targets[i] = targets[i];
            }
            BetaTuneResult tuned = tune_beta_for_ratio(
                out.model1, *est, sub, sub_targets, spec.method.pcfe,
                pool_data.feature_min, pool_data.feature_max, spec.pcfe_pixel_ratio);
            spec.method.pcfe.beta = tuned.beta;
        }
        out.tuned_beta = spec.method.pcfe.beta;
    }

    // stage: perturb
    BatchOptions bopt;
    bopt.workers = spec.workers;
    bopt.noise_seed = spec.seeds.perturb;
    bopt.filter_invalid = spec.filter_invalid;
    PerturbBatchResult batch = build_perturbed_dataset(
        out.model1, pool_data, targets, spec.method, est ? &*est : nullptr, bopt);
    out.perturb_stats = batch.stats;

    // stage: relearn on (x~, induced target)
    const TrainConfig& retrain = spec.retrain ? *spec.retrain : spec.train;
    out.adv = detail::train_and_eval_arm(spec.model, retrain, spec.seeds.model2,
                                         batch.perturbed, train_data, test_data);

    // stage: matched noise arm
    if (spec.run_noise_arm && spec.method.kind != PerturbMethod::Kind::noise) {
        out.matched_noise = matched_noise_spec(spec.method, batch.stats);
        PerturbMethod nm;
        nm.kind = PerturbMethod::Kind::noise;
        nm.noise = out.matched_noise;
        std::vector<int> noise_labels = spec.noise_labels == NoiseLabels::target
                                            ? targets
                                            : pool_data.labels;
        PerturbBatchResult nbatch = build_perturbed_dataset(
            out.model1, pool_data, noise_labels, nm, nullptr, bopt);
        out.noise = detail::train_and_eval_arm(spec.model, retrain, spec.seeds.model2,
                                               nbatch.perturbed, train_data, test_data);
    }
    return out;
}

inline PipelineResult learn_from_perturbations(const Dataset& train_data,
                                               const Dataset& test_data,
                                               const PipelineSpec& spec) {
    return learn_from_perturbations(train_data, train_data, test_data, spec);
}

}  // namespace perlearn
