#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "perlearn/common.hpp"
#include "perlearn/config.hpp"
#include "perlearn/dataset.hpp"
#include "perlearn/idx.hpp"
#include "perlearn/protocol.hpp"

namespace perlearn {

// ---------------------------------------------------------------------------
// Config -> spec translation. Every run is fully determined by one Config;
// the key names below are the whole experiment vocabulary.

inline std::vector<size_t> parse_hidden(const std::string& s) {
    std::string v = s;
    for (char& c : v)
        if (c == ',') c = ' ';
    std::istringstream in(v);
    std::vector<size_t> out;
    long long x;
    while (in >> x) {
        require(x > 0, ErrorCategory::config, "model.hidden entries must be > 0");
        out.push_back(static_cast<size_t>(x));
    }
    return out;
}

inline ModelSpec model_spec_from_config(const Config& cfg, LabelSpace space) {
    ModelSpec m;
    std::string head = cfg.get_string("model.head",
                                      space == LabelSpace::pm_one ? "margin" : "logits");
    if (head == "margin")
        m.head = Head::margin;
    else if (head == "logits")
        m.head = Head::logits;
    else
        throw Error(ErrorCategory::config, "unknown model.head: " + head);
    m.hidden = parse_hidden(cfg.get_string("model.hidden", ""));
    std::string loss = cfg.get_string(
        "model.loss", m.head == Head::margin ? "logistic" : "cross_entropy");
    if (loss == "logistic")
        m.loss = LossKind::logistic;
    else if (loss == "exponential")
        m.loss = LossKind::exponential;
    else if (loss == "cross_entropy")
        m.loss = LossKind::cross_entropy;
    else
        throw Error(ErrorCategory::config, "unknown model.loss: " + loss);
    return m;
}

inline TrainConfig train_config_from_config(const Config& cfg) {
    TrainConfig t;
    t.epochs = cfg.get_u64("train.epochs", 40);
    t.batch_size = cfg.get_u64("train.batch_size", 128);
    std::string opt = cfg.get_string("train.optimizer", "adam");
    if (opt == "adam")
        t.optim.kind = OptimKind::adam;
    else if (opt == "sgd")
        t.optim.kind = OptimKind::sgd;
    else
        throw Error(ErrorCategory::config, "unknown train.optimizer: " + opt);
    t.optim.lr = cfg.get_double("train.lr", 0.005);
    t.optim.momentum = cfg.get_double("train.momentum", 0.0);
    t.optim.weight_decay = cfg.get_double("train.weight_decay", 0.0);
    return t;
}

// The retrained model reuses [train] unless a [relearn] key overrides it;
// architecture is always shared, parameters never are.
inline TrainConfig relearn_config_from_config(const Config& cfg) {
    TrainConfig t = train_config_from_config(cfg);
    t.epochs = cfg.get_u64("relearn.epochs", t.epochs);
    t.batch_size = cfg.get_u64("relearn.batch_size", t.batch_size);
    if (cfg.has("relearn.optimizer")) {
        std::string opt = cfg.get_string("relearn.optimizer");
        if (opt == "adam")
            t.optim.kind = OptimKind::adam;
        else if (opt == "sgd")
            t.optim.kind = OptimKind::sgd;
        else
            throw Error(ErrorCategory::config, "unknown relearn.optimizer: " + opt);
    }
    t.optim.lr = cfg.get_double("relearn.lr", t.optim.lr);
    t.optim.momentum = cfg.get_double("relearn.momentum", t.optim.momentum);
    t.optim.weight_decay = cfg.get_double("relearn.weight_decay", t.optim.weight_decay);
    return t;
}

// iters resolves from an absolute key, else ratio * d with a floor; the
// counterfactual generators scale their iteration count with dimension.
inline size_t resolve_iters(const Config& cfg, const std::string& prefix, size_t d) {
    if (cfg.has(prefix + "iters")) return cfg.get_u64(prefix + "iters");
    double ratio = cfg.get_double(prefix + "iters_ratio", 0.05);
    size_t floor_it = cfg.get_u64(prefix + "iters_min", 1);
    auto scaled = static_cast<size_t>(std::llround(ratio * static_cast<double>(d)));
    return std::max(floor_it, scaled);
}

inline DensityConfig density_from_config(const Config& cfg) {
    DensityConfig dc;
    std::string kind = cfg.get_string("density.kind", "gmm");
    if (kind == "kde")
        dc.kind = DensityKind::kde;
    else if (kind == "gmm")
        dc.kind = DensityKind::gmm;
    else
        throw Error(ErrorCategory::config, "unknown density.kind: " + kind);
    dc.k = cfg.get_u64("density.k", 1);
    dc.h = cfg.get_double("density.h", 0.0);
    return dc;
}

inline PipelineSeeds seeds_from_config(const Config& cfg) {
    PipelineSeeds s;
    s.data = cfg.get_u64("seeds.data", 1);
    s.model1 = cfg.get_u64("seeds.model1", 2);
    s.targets = cfg.get_u64("seeds.targets", 3);
    s.perturb = cfg.get_u64("seeds.perturb", 4);
    s.model2 = cfg.get_u64("seeds.model2", 5);
    return s;
}

// Method by name with per-method key prefix, so one config can carry
// several method sections (the bench does). Known names: pgd_l2, pgd_linf,
// cfe_l2, pcfe_l0, noise_l2, noise_linf, noise_l0.
inline PerturbMethod method_from_name(const std::string& name, const Config& cfg,
                                      const std::string& prefix, size_t d) {
    PerturbMethod m;
    if (name == "pgd_l2" || name == "pgd_linf") {
        m.kind = PerturbMethod::Kind::pgd;
        m.pgd.norm = name == "pgd_l2" ? NormKind::l2 : NormKind::linf;
        m.pgd.eps = cfg.get_double(prefix + "eps", name == "pgd_l2" ? 0.78 : 0.03);
        m.pgd.steps = cfg.get_u64(prefix + "steps", 100);
        m.pgd.alpha = cfg.get_double(prefix + "alpha", 0.0);
        m.pgd.clamp_to_range = cfg.get_bool(prefix + "clamp", false);
    } else if (name == "cfe_l2") {
        m.kind = PerturbMethod::Kind::cfe;
        m.cfe.lambda = cfg.get_double(prefix + "lambda", 0.001);
        m.cfe.lr = cfg.get_double(prefix + "lr", 0.01);
        m.cfe.iters = resolve_iters(cfg, prefix, d);
    } else if (name == "pcfe_l0") {
        m.kind = PerturbMethod::Kind::pcfe;
        m.pcfe.gamma = cfg.get_double(prefix + "gamma", 1.0);
        m.pcfe.tau = cfg.get_double(prefix + "tau", 1.0);
        m.pcfe.beta = cfg.get_double(prefix + "beta", 1e-4);
        m.pcfe.lipschitz = cfg.get_double(prefix + "lipschitz", 1.0);
        m.pcfe.lambda_steps = cfg.get_u64(prefix + "lambda_steps", 5);
        m.pcfe.iters = resolve_iters(cfg, prefix, d);
        std::string mode = cfg.get_string(prefix + "density_mode", "raw");
        if (mode == "raw")
            m.pcfe.mode = DensityMode::raw;
        else if (mode == "log")
            m.pcfe.mode = DensityMode::log_mode;
        else
            throw Error(ErrorCategory::config, "unknown density_mode: " + mode);
    } else if (name == "noise_l2" || name == "noise_linf" || name == "noise_l0") {
        m.kind = PerturbMethod::Kind::noise;
        if (name == "noise_l2")
            m.noise.kind = NoiseSpec::Kind::l2;
        else if (name == "noise_linf")
            m.noise.kind = NoiseSpec::Kind::linf;
        else
            m.noise.kind = NoiseSpec::Kind::l0;
        m.noise.eps = cfg.get_double(prefix + "eps", 0.0);
        if (cfg.has(prefix + "d_delta")) {
            m.noise.d_delta = cfg.get_u64(prefix + "d_delta");
        } else if (cfg.has(prefix + "pixel_ratio")) {
            m.noise.d_delta = static_cast<size_t>(
                std::ceil(cfg.get_double(prefix + "pixel_ratio") * static_cast<double>(d)));
        }
    } else {
        throw Error(ErrorCategory::config, "unknown perturbation method: " + name);
    }
    return m;
}

inline PipelineSpec pipeline_spec_from_config(const Config& cfg, LabelSpace space,
                                              size_t d) {
    PipelineSpec p;
    p.model = model_spec_from_config(cfg, space);
    p.train = train_config_from_config(cfg);
    p.retrain = relearn_config_from_config(cfg);
    p.target_mode =
        target_mode_from_string(cfg.get_string("pipeline.target_mode", "deterministic"));
    std::string mname = cfg.get_string("perturb.method");
    p.method = method_from_name(mname, cfg, "perturb.", d);
    p.density = density_from_config(cfg);
    p.run_noise_arm = cfg.get_bool("pipeline.noise_arm", true);
    std::string nl = cfg.get_string("pipeline.noise_labels", "target");
    if (nl == "target")
        p.noise_labels = NoiseLabels::target;
    else if (nl == "original")
        p.noise_labels = NoiseLabels::original;
    else
        throw Error(ErrorCategory::config, "unknown pipeline.noise_labels: " + nl);
    p.filter_invalid = cfg.get_bool("pipeline.filter_invalid", false);
    p.workers = cfg.get_u64("pipeline.workers", 1);
    p.seeds = seeds_from_config(cfg);
    if (p.method.kind == PerturbMethod::Kind::pcfe && cfg.has("perturb.pixel_ratio")) {
        p.pcfe_pixel_ratio = cfg.get_double("perturb.pixel_ratio");
        p.pcfe_tune_subsample = cfg.get_u64("perturb.tune_subsample", 64);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Data assembly. The pool is the set of inputs handed to the perturbation
// stage; by default it is the training set. data.n_adv decouples its size:
// smaller takes a prefix of the training set, larger appends fresh draws
// from the same generator.

inline Dataset head_subset(const Dataset& d, size_t count) {
    require(count > 0 && count <= d.size(), ErrorCategory::config,
            "head_subset: bad count");
    Dataset out;
    out.x = Matrix(count, d.dim());
    std::copy(d.x.data.begin(), d.x.data.begin() + count * d.dim(), out.x.data.begin());
    out.labels.assign(d.labels.begin(), d.labels.begin() + count);
    if (d.has_groups()) {
        out.groups.assign(d.groups.begin(), d.groups.begin() + count);
        out.group_names = d.group_names;
    }
    out.num_classes = d.num_classes;
    out.label_space = d.label_space;
    out.provenance = d.provenance + "/head:" + std::to_string(count);
    recompute_feature_range(out);
    return out;
}

inline Dataset concat_rows(const Dataset& a, const Dataset& b) {
    require(a.dim() == b.dim() && a.num_classes == b.num_classes &&
                a.label_space == b.label_space,
            ErrorCategory::dimension, "concat_rows: incompatible datasets");
    Dataset out;
    out.x = Matrix(a.size() + b.size(), a.dim());
    std::copy(a.x.data.begin(), a.x.data.end(), out.x.data.begin());
    std::copy(b.x.data.begin(), b.x.data.end(), out.x.data.begin() + a.x.data.size());
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    if (a.has_groups() && b.has_groups()) {
        require(a.group_names == b.group_names, ErrorCategory::dimension,
                "concat_rows: group tables differ");
        out.groups = a.groups;
        out.groups.insert(out.groups.end(), b.groups.begin(), b.groups.end());
        out.group_names = a.group_names;
    }
    out.num_classes = a.num_classes;
    out.label_space = a.label_space;
    out.provenance = a.provenance + "+" + b.provenance;
    recompute_feature_range(out);
    return out;
}

struct ExperimentData {
    Dataset train;
    Dataset pool;  // inputs to perturb
    Dataset test;
};

inline ExperimentData make_experiment_data(const Config& cfg, uint64_t seed_data) {
    std::string kind = cfg.get_string("data.kind");
    ExperimentData out;
    if (kind == "gaussian" || kind == "uniform") {
        SyntheticSpec s;
        s.n = cfg.get_u64("data.n", 1000);
        s.d = cfg.get_u64("data.d", 10);
        s.eta = cfg.get_double("data.eta", 1.0);
        s.sigma = cfg.get_double("data.sigma", 1.0);
        s.dist = noise_dist_from_string(kind);
        Rng rtrain(mix_seed(seed_data, 1));
        out.train = gen_synthetic(s, rtrain);
        SyntheticSpec st = s;
        st.n = cfg.get_u64("data.n_test", 1000);
        Rng rtest(mix_seed(seed_data, 2));
        out.test = gen_synthetic(st, rtest);
        size_t n_adv = cfg.get_u64("data.n_adv", s.n);
        if (n_adv == s.n) {
            out.pool = out.train;
        } else if (n_adv < s.n) {
            out.pool = head_subset(out.train, n_adv);
        } else {
            SyntheticSpec se = s;
            se.n = n_adv - s.n;
            Rng rextra(mix_seed(seed_data, 3));
            out.pool = concat_rows(out.train, gen_synthetic(se, rextra));
        }
    } else if (kind == "spurious") {
        SpuriousSpec s;
        s.n = cfg.get_u64("data.n", 5000);
        s.d_core = cfg.get_u64("data.d_core", 15);
        s.d_spur = cfg.get_u64("data.d_spur", 5);
        s.eta_core = cfg.get_double("data.eta_core", 1.2);
        s.eta_spur = cfg.get_double("data.eta_spur", 2.4);
        s.rho = cfg.get_double("data.rho", 0.95);
        Rng rtrain(mix_seed(seed_data, 1));
        out.train = gen_spurious(s, rtrain);
        SpuriousSpec st = s;
        st.n = cfg.get_u64("data.n_test", 4000);
        st.rho = cfg.get_double("data.rho_test", 0.5);
        Rng rtest(mix_seed(seed_data, 2));
        out.test = gen_spurious(st, rtest);
        size_t n_adv = cfg.get_u64("data.n_adv", s.n);
        out.pool = n_adv == s.n ? out.train
                                : (n_adv < s.n ? head_subset(out.train, n_adv)
                                               : out.train);
        if (n_adv > s.n) {
            SpuriousSpec se = s;
            se.n = n_adv - s.n;
            Rng rextra(mix_seed(seed_data, 3));
            out.pool = concat_rows(out.train, gen_spurious(se, rextra));
        }
    } else if (kind == "idx") {
        out.train = load_idx_dataset(cfg.get_string("data.images"),
                                     cfg.get_string("data.labels"));
        out.test = load_idx_dataset(cfg.get_string("data.test_images"),
                                    cfg.get_string("data.test_labels"));
        size_t n_adv = cfg.get_u64("data.n_adv", out.train.size());
        require(n_adv <= out.train.size(), ErrorCategory::config,
                "data.n_adv cannot exceed the idx training set size");
        out.pool = n_adv == out.train.size() ? out.train
                                             : head_subset(out.train, n_adv);
    } else {
        throw Error(ErrorCategory::config, "unknown data.kind: " + kind);
    }
    return out;
}

// One grid cell: generate data per the config, run the full protocol.
inline PipelineResult run_cell(const Config& cfg) {
    PipelineSeeds seeds = seeds_from_config(cfg);
    ExperimentData data = make_experiment_data(cfg, seeds.data);
    PipelineSpec spec =
        pipeline_spec_from_config(cfg, data.train.label_space, data.train.dim());
    return learn_from_perturbations(data.train, data.pool, data.test, spec);
}

// ---------------------------------------------------------------------------
// Sweeps. One axis per run; the CSV has a fixed six-column schema and
// carries provenance in a leading comment. Rows are written in axis-then-rep order
// on every flush, so a completed sweep is byte-identical however the work
// was scheduled, and a rerun reproduces the file exactly.

enum class SweepAxis { d, n, n_adv, eps, pixel_ratio };

inline SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "d") return SweepAxis::d;
    if (s == "N") return SweepAxis::n;
    if (s == "N_adv") return SweepAxis::n_adv;
    if (s == "eps") return SweepAxis::eps;
    if (s == "pixel_ratio") return SweepAxis::pixel_ratio;
    throw Error(ErrorCategory::config, "unknown sweep.axis: " + s);
}

inline const char* to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::d: return "d";
        case SweepAxis::n: return "N";
        case SweepAxis::n_adv: return "N_adv";
        case SweepAxis::eps: return "eps";
        case SweepAxis::pixel_ratio: return "pixel_ratio";
    }
    return "?";
}

inline void apply_axis(Config& cfg, SweepAxis axis, const std::string& value) {
    switch (axis) {
        case SweepAxis::d: cfg.set("data.d", value); break;
        case SweepAxis::n: cfg.set("data.n", value); break;
        case SweepAxis::n_adv: cfg.set("data.n_adv", value); break;
        case SweepAxis::eps: cfg.set("perturb.eps", value); break;
        case SweepAxis::pixel_ratio: cfg.set("perturb.pixel_ratio", value); break;
    }
}

struct SweepRow {
    std::string axis_value;  // grid token, reproduced verbatim in the CSV
    size_t rep = 0;
    uint64_t seed = 0;  // per-rep master seed; the five stage seeds derive from it
    double adv_acc = 0.0;
    double noise_acc = 0.0;
    std::string error;  // empty on success
    bool done = false;
};

struct SweepOutcome {
    std::string csv_path;
    std::vector<SweepRow> rows;
    size_t resumed = 0;
    bool all_ok = true;
};

namespace detail {

inline std::string sanitize_csv_field(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
    return s;
}

inline std::string format_acc(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::vector<std::string> split_tokens(std::string s) {
    for (char& c : s)
        if (c == ',') c = ' ';
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline void flush_sweep_csv(const std::string& path, const std::string& axis_name,
                            const std::string& provenance,
                            const std::vector<SweepRow>& rows) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(out.good(), ErrorCategory::io, "cannot write " + tmp);
        out << "# provenance: " << provenance << "\n";
        out << axis_name << ",adv_acc_for_natural,noise_acc_for_natural,rep,seed,error\n";
        for (const auto& r : rows) {
            if (!r.done) continue;
            out << r.axis_value << ',';
            if (r.error.empty())
                out << format_acc(r.adv_acc) << ',' << format_acc(r.noise_acc);
            else
                out << ',';
            out << ',' << r.rep << ',' << r.seed << ',' << sanitize_csv_field(r.error)
                << '\n';
        }
        require(out.good(), ErrorCategory::io, "write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline std::string sweep_provenance(const Config& cfg) {
    PipelineSeeds s = seeds_from_config(cfg);
    std::ostringstream os;
    os << "config_hash=" << cfg.hash() << " seeds=data:" << s.data
       << ",model1:" << s.model1 << ",targets:" << s.targets << ",perturb:" << s.perturb
       << ",model2:" << s.model2 << ",sweep:" << cfg.get_u64("seeds.sweep", 17);
    return os.str();
}

// Runs the sweep. Completed rows found in an existing CSV with the same
// config hash are not recomputed; errored rows are retried. point_workers
// distributes whole grid cells; cells run with one perturbation worker when
// the pool is distributing cells.
inline SweepOutcome run_sweep(const Config& base_cfg, const std::string& csv_path,
                              size_t point_workers = 1) {
    SweepAxis axis = sweep_axis_from_string(base_cfg.get_string("sweep.axis"));
    std::vector<std::string> grid =
        detail::split_tokens(base_cfg.get_string("sweep.grid"));
    require(!grid.empty(), ErrorCategory::config, "sweep.grid is empty");
    {
        double prev = -std::numeric_limits<double>::infinity();
        for (const auto& g : grid) {
            double v = std::stod(g);
            require(v > prev, ErrorCategory::config,
                    "sweep.grid must be strictly ascending");
            prev = v;
        }
    }
    std::string mname = base_cfg.get_string("perturb.method");
    if (axis == SweepAxis::eps)
        require(mname.rfind("pgd", 0) == 0 || mname == "noise_l2" || mname == "noise_linf",
                ErrorCategory::config, "sweep.axis=eps needs a method with an eps budget");
    if (axis == SweepAxis::pixel_ratio)
        require(mname == "pcfe_l0" || mname == "noise_l0", ErrorCategory::config,
                "sweep.axis=pixel_ratio needs pcfe_l0 or noise_l0");
    require(base_cfg.get_bool("pipeline.noise_arm", true), ErrorCategory::config,
            "sweeps need pipeline.noise_arm=true for the noise column");
    size_t reps = base_cfg.get_u64("sweep.reps", 3);
    require(reps > 0, ErrorCategory::config, "sweep.reps must be > 0");
    uint64_t sweep_seed = base_cfg.get_u64("seeds.sweep", 17);

    SweepOutcome out;
    out.csv_path = csv_path;
    for (const auto& g : grid)
        for (size_t r = 0; r < reps; ++r) {
            SweepRow row;
            row.axis_value = g;
            row.rep = r;
            row.seed = mix_seed(sweep_seed, r);
            out.rows.push_back(row);
        }

    std::string provenance = sweep_provenance(base_cfg);

    // resume: accept prior rows only under an identical config hash
    if (std::filesystem::exists(csv_path)) {
        std::ifstream in(csv_path, std::ios::binary);
        std::string line;
        if (std::getline(in, line) &&
            line.rfind("# provenance: " + provenance, 0) == 0) {
            std::getline(in, line);  // header
            std::map<std::pair<std::string, size_t>, std::pair<double, double>> donemap;
            while (std::getline(in, line)) {
                auto f = detail::split_csv_line(line);
                if (f.size() != 6 || !f[5].empty()) continue;
                try {
                    donemap[{f[0], std::stoull(f[3])}] = {std::stod(f[1]), std::stod(f[2])};
                } catch (const std::exception&) {
                    continue;  // malformed row: recompute it
                }
            }
            for (auto& row : out.rows) {
                auto it = donemap.find({row.axis_value, row.rep});
                if (it == donemap.end()) continue;
                row.adv_acc = it->second.first;
                row.noise_acc = it->second.second;
                row.done = true;
                ++out.resumed;
            }
        }
    }

    std::mutex mu;
    auto run_row = [&](SweepRow& row) {
        Config cfg = base_cfg;
        apply_axis(cfg, axis, row.axis_value);
        uint64_t m = row.seed;
        cfg.set("seeds.data", std::to_string(mix_seed(m, 1)));
        cfg.set("seeds.model1", std::to_string(mix_seed(m, 2)));
        cfg.set("seeds.targets", std::to_string(mix_seed(m, 3)));
        cfg.set("seeds.perturb", std::to_string(mix_seed(m, 4)));
        cfg.set("seeds.model2", std::to_string(mix_seed(m, 5)));
        if (point_workers > 1) cfg.set("pipeline.workers", "1");
        try {
            PipelineResult res = run_cell(cfg);
            require(res.noise.has_value(), ErrorCategory::stage,
                    "sweep cell produced no noise arm");
            row.adv_acc = res.adv.clean_test_acc;
            row.noise_acc = res.noise->clean_test_acc;
            row.error.clear();
        } catch (const Error& e) {
            row.error = std::string(to_string(e.category)) + ": " + e.what();
        } catch (const std::exception& e) {
            row.error = std::string("stage: ") + e.what();
        }
        std::lock_guard<std::mutex> lk(mu);
        row.done = true;
        detail::flush_sweep_csv(csv_path, to_string(axis), provenance, out.rows);
    };

    std::vector<size_t> pending;
    for (size_t i = 0; i < out.rows.size(); ++i)
        if (!out.rows[i].done) pending.push_back(i);

    if (point_workers <= 1) {
        for (size_t i : pending) run_row(out.rows[i]);
    } else {
        std::atomic<size_t> next{0};
        auto drain = [&]() {
            for (;;) {
                size_t k = next.fetch_add(1);
                if (k >= pending.size()) return;
                run_row(out.rows[pending[k]]);
            }
        };
        std::vector<std::thread> pool;
        size_t nw = std::min(point_workers, std::max<size_t>(pending.size(), 1));
        for (size_t w = 1; w < nw; ++w) pool.emplace_back(drain);
        drain();
        for (auto& th : pool) th.join();
    }

    // a fully resumed sweep still needs the file rewritten once
    detail::flush_sweep_csv(csv_path, to_string(axis), provenance, out.rows);
    for (const auto& r : out.rows)
        if (!r.error.empty()) out.all_ok = false;
    return out;
}

// ---------------------------------------------------------------------------
// Spurious-correlation bench: each method retrains on its perturbations of
// the grouped synthetic benchmark; "original" is the plain ERM reference.
// Rows aggregate over repetitions; std is the sample standard deviation of
// the worst-group accuracy.

struct BenchRow {
    std::string method;
    std::string split;  // train | test
    double acc = 0.0;
    double wga = 0.0;
    double stddev = 0.0;
};

struct BenchOutcome {
    std::string csv_path;
    std::vector<BenchRow> rows;
    bool all_ok = true;
    std::vector<std::string> errors;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

// Bench cells read their method hyperparameters from a [bench.<method>]
// section, falling back to the method defaults.
inline PipelineSpec pipeline_spec_from_config_for_bench(const Config& cfg,
                                                        const Dataset& train,
                                                        const std::string& method_name) {
    PipelineSpec p;
    p.model = model_spec_from_config(cfg, train.label_space);
    p.train = train_config_from_config(cfg);
    p.retrain = relearn_config_from_config(cfg);
    p.target_mode =
        target_mode_from_string(cfg.get_string("pipeline.target_mode", "deterministic"));
    p.method = method_from_name(method_name, cfg, "bench." + method_name + ".",
                                train.dim());
    p.density = density_from_config(cfg);
    p.run_noise_arm = false;
    p.filter_invalid = cfg.get_bool("pipeline.filter_invalid", false);
    p.workers = cfg.get_u64("pipeline.workers", 1);
    p.seeds = seeds_from_config(cfg);
    return p;
}

inline BenchOutcome run_spurious_bench(const Config& base_cfg,
                                       const std::string& csv_path) {
    std::vector<std::string> methods = detail::split_tokens(base_cfg.get_string(
        "bench.methods", "pgd_l2,pgd_linf,cfe_l2,pcfe_l0,original"));
    require(!methods.empty(), ErrorCategory::config, "bench.methods is empty");
    size_t reps = base_cfg.get_u64("bench.reps", 3);
    require(reps > 0, ErrorCategory::config, "bench.reps must be > 0");
    uint64_t bench_seed = base_cfg.get_u64("seeds.bench", 23);

    struct Acc {
        std::vector<double> acc_train, wga_train, acc_test, wga_test;
    };
    std::map<std::string, Acc> agg;
    BenchOutcome out;
    out.csv_path = csv_path;

    for (size_t rep = 0; rep < reps; ++rep) {
        uint64_t m = mix_seed(bench_seed, rep);
        Config cfg = base_cfg;
        if (!cfg.has("data.kind")) cfg.set("data.kind", "spurious");
        cfg.set("seeds.data", std::to_string(mix_seed(m, 1)));
        cfg.set("seeds.model1", std::to_string(mix_seed(m, 2)));
        cfg.set("seeds.targets", std::to_string(mix_seed(m, 3)));
        cfg.set("seeds.perturb", std::to_string(mix_seed(m, 4)));
        cfg.set("seeds.model2", std::to_string(mix_seed(m, 5)));
        PipelineSeeds seeds = seeds_from_config(cfg);
        ExperimentData data = make_experiment_data(cfg, seeds.data);
        require(data.train.has_groups() && data.test.has_groups(),
                ErrorCategory::config, "spurious bench needs grouped data");

        for (const auto& name : methods) {
            try {
                if (name == "original") {
                    ModelSpec ms = model_spec_from_config(cfg, data.train.label_space);
                    ms.in_dim = data.train.dim();
                    ms.num_classes = data.train.num_classes;
                    TrainConfig tc = train_config_from_config(cfg);
                    ArmResult arm = detail::train_and_eval_arm(
                        ms, tc, seeds.model1, data.train, data.train, data.test);
                    agg[name].acc_train.push_back(arm.clean_train_acc);
                    agg[name].wga_train.push_back(arm.train_groups->worst_group_acc);
                    agg[name].acc_test.push_back(arm.clean_test_acc);
                    agg[name].wga_test.push_back(arm.test_groups->worst_group_acc);
                    continue;
                }
                PipelineSpec spec =
                    pipeline_spec_from_config_for_bench(cfg, data.train, name);
                PipelineResult res =
                    learn_from_perturbations(data.train, data.pool, data.test, spec);
                agg[name].acc_train.push_back(res.adv.clean_train_acc);
                agg[name].wga_train.push_back(res.adv.train_groups->worst_group_acc);
                agg[name].acc_test.push_back(res.adv.clean_test_acc);
                agg[name].wga_test.push_back(res.adv.test_groups->worst_group_acc);
            } catch (const Error& e) {
                out.all_ok = false;
                out.errors.push_back(name + " rep " + std::to_string(rep) + ": " +
                                     to_string(e.category) + ": " + e.what());
            } catch (const std::exception& e) {
                out.all_ok = false;
                out.errors.push_back(name + " rep " + std::to_string(rep) + ": " + e.what());
            }
        }
    }

    for (const auto& name : methods) {
        auto it = agg.find(name);
        if (it == agg.end() || it->second.acc_train.empty()) continue;
        const Acc& a = it->second;
        BenchRow train_row{name, "train", detail::mean_of(a.acc_train),
                           detail::mean_of(a.wga_train), detail::sample_std(a.wga_train)};
        BenchRow test_row{name, "test", detail::mean_of(a.acc_test),
                          detail::mean_of(a.wga_test), detail::sample_std(a.wga_test)};
        out.rows.push_back(train_row);
        out.rows.push_back(test_row);
    }

    std::string tmp = csv_path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        require(f.good(), ErrorCategory::io, "cannot write " + tmp);
        f << "# provenance: config_hash=" << base_cfg.hash()
          << " seeds=bench:" << bench_seed << " reps=" << reps << "\n";
        f << "method,split,acc,wga,std\n";
        for (const auto& r : out.rows)
            f << r.method << ',' << r.split << ',' << detail::format_acc(r.acc) << ','
              << detail::format_acc(r.wga) << ',' << detail::format_acc(r.stddev) << '\n';
        require(f.good(), ErrorCategory::io, "write failed: " + tmp);
    }
    std::filesystem::rename(tmp, csv_path);
    return out;
}

}  // namespace perlearn
