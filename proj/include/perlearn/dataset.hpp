#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "perlearn/common.hpp"
#include "perlearn/container.hpp"
#include "perlearn/linalg.hpp"
#include "perlearn/rng.hpp"

namespace perlearn {

// Binary tasks use labels in {-1, +1}; multi-class tasks use {0..C-1}.
enum class LabelSpace { pm_one, zero_based };

struct Dataset {
    Matrix x;                       // n x d
    std::vector<int> labels;        // size n
    int num_classes = 2;
    LabelSpace label_space = LabelSpace::pm_one;
    std::vector<int> groups;        // optional, size n when present
    std::vector<std::string> group_names;
    std::vector<double> feature_min;  // per-coordinate, size d
    std::vector<double> feature_max;
    std::string provenance;

    size_t size() const { return x.rows; }
    size_t dim() const { return x.cols; }
    bool has_groups() const { return !groups.empty(); }
};

inline void recompute_feature_range(Dataset& d) {
    size_t n = d.size(), dim = d.dim();
    d.feature_min.assign(dim, 0.0);
    d.feature_max.assign(dim, 0.0);
    if (n == 0) return;
    for (size_t j = 0; j < dim; ++j) {
        d.feature_min[j] = d.feature_max[j] = d.x.at(0, j);
    }
    for (size_t i = 1; i < n; ++i) {
        const double* row = d.x.row(i);
        for (size_t j = 0; j < dim; ++j) {
            d.feature_min[j] = std::min(d.feature_min[j], row[j]);
            d.feature_max[j] = std::max(d.feature_max[j], row[j]);
        }
    }
}

inline void validate(const Dataset& d) {
    require(d.labels.size() == d.size(), ErrorCategory::dimension,
            "dataset: labels size mismatch");
    require(d.num_classes >= 2, ErrorCategory::schema, "dataset: num_classes < 2");
    for (double v : d.x.data)
        require(std::isfinite(v), ErrorCategory::schema,
                "dataset: non-finite feature value");
    for (int y : d.labels) {
        if (d.label_space == LabelSpace::pm_one)
            require(y == -1 || y == 1, ErrorCategory::schema,
                    "dataset: pm_one label outside {-1,+1}");
        else
            require(y >= 0 && y < d.num_classes, ErrorCategory::schema,
                    "dataset: label outside [0, num_classes)");
    }
    if (!d.groups.empty()) {
        require(d.groups.size() == d.size(), ErrorCategory::dimension,
                "dataset: groups size mismatch");
        for (int g : d.groups)
            require(g >= 0 && g < static_cast<int>(d.group_names.size()),
                    ErrorCategory::schema, "dataset: group id out of range");
    }
}

enum class NoiseDist { gaussian, uniform };

inline NoiseDist noise_dist_from_string(const std::string& s) {
    if (s == "gaussian") return NoiseDist::gaussian;
    if (s == "uniform") return NoiseDist::uniform;
    throw Error(ErrorCategory::config, "unknown distribution: " + s);
}

struct SyntheticSpec {
    size_t n = 1000;
    size_t d = 10;
    double eta = 1.0;    // class-mean half-separation along the all-ones direction
    double sigma = 1.0;  // noise scale
    NoiseDist dist = NoiseDist::gaussian;
};

// Two balanced classes with means +-eta/sqrt(d) per coordinate, so the
// separation is d-independent. Uniform noise is sigma * U[-1, 1] i.i.d.
inline Dataset gen_synthetic(const SyntheticSpec& spec, Rng& rng) {
    require(spec.n > 0 && spec.d > 0, ErrorCategory::config, "gen_synthetic: empty shape");
    require(spec.sigma >= 0.0, ErrorCategory::config, "gen_synthetic: sigma < 0");
    Dataset out;
    out.x = Matrix(spec.n, spec.d);
    out.labels.resize(spec.n);
    out.num_classes = 2;
    out.label_space = LabelSpace::pm_one;
    double mu = spec.eta / std::sqrt(static_cast<double>(spec.d));
    for (size_t i = 0; i < spec.n; ++i) {
        int y = rng.sign();
        out.labels[i] = y;
        double* row = out.x.row(i);
        for (size_t j = 0; j < spec.d; ++j) {
            double z = (spec.dist == NoiseDist::gaussian) ? rng.normal()
                                                          : rng.uniform(-1.0, 1.0);
            row[j] = y * mu + spec.sigma * z;
        }
    }
    recompute_feature_range(out);
    out.provenance = "gen_synthetic";
    return out;
}

struct SpuriousSpec {
    size_t n = 5000;
    size_t d_core = 15;
    size_t d_spur = 5;
    double eta_core = 1.2;
    double eta_spur = 2.4;  // must exceed eta_core for the shortcut to exist
    double rho = 0.95;      // P(attribute == label)
};

// Spurious-correlation benchmark: attribute a equals y with probability rho.
// Core block mean tracks y, spurious block mean tracks a, unit Gaussian
// noise. Exactly four (attribute, label) groups.
inline Dataset gen_spurious(const SpuriousSpec& spec, Rng& rng) {
    require(spec.eta_spur > spec.eta_core, ErrorCategory::config,
            "gen_spurious: eta_spur must exceed eta_core");
    require(spec.rho >= 0.0 && spec.rho <= 1.0, ErrorCategory::config,
            "gen_spurious: rho outside [0,1]");
    require(spec.n > 0 && spec.d_core > 0 && spec.d_spur > 0, ErrorCategory::config,
            "gen_spurious: empty shape");
    size_t d = spec.d_core + spec.d_spur;
    Dataset out;
    out.x = Matrix(spec.n, d);
    out.labels.resize(spec.n);
    out.groups.resize(spec.n);
    out.group_names = {"a=-1,y=-1", "a=-1,y=+1", "a=+1,y=-1", "a=+1,y=+1"};
    out.num_classes = 2;
    out.label_space = LabelSpace::pm_one;
    double mu_c = spec.eta_core / std::sqrt(static_cast<double>(spec.d_core));
    double mu_s = spec.eta_spur / std::sqrt(static_cast<double>(spec.d_spur));
    for (size_t i = 0; i < spec.n; ++i) {
        int y = rng.sign();
        int a = (rng.uniform() < spec.rho) ? y : -y;
        out.labels[i] = y;
        out.groups[i] = (a > 0 ? 2 : 0) + (y > 0 ? 1 : 0);
        double* row = out.x.row(i);
        for (size_t j = 0; j < spec.d_core; ++j) row[j] = y * mu_c + rng.normal();
        for (size_t j = 0; j < spec.d_spur; ++j)
            row[spec.d_core + j] = a * mu_s + rng.normal();
    }
    recompute_feature_range(out);
    out.provenance = "gen_spurious";
    return out;
}

// Seeded shuffle split. The second part may be empty (fraction 1.0); an
// empty FIRST part is an error.
inline std::pair<Dataset, Dataset> split(const Dataset& d, double first_fraction,
                                         Rng& rng) {
    require(first_fraction > 0.0 && first_fraction <= 1.0, ErrorCategory::config,
            "split: fraction outside (0,1]");
    auto perm = rng.permutation(d.size());
    size_t n1 = std::min(
        static_cast<size_t>(std::llround(first_fraction * d.size())), d.size());
    require(n1 > 0, ErrorCategory::config, "split: empty split");
    auto take = [&](size_t begin, size_t end) {
        Dataset out;
        out.x = Matrix(end - begin, d.dim());
        out.labels.resize(end - begin);
        out.num_classes = d.num_classes;
        out.label_space = d.label_space;
        out.group_names = d.group_names;
        if (d.has_groups()) out.groups.resize(end - begin);
        for (size_t i = begin; i < end; ++i) {
            size_t src = perm[i];
            std::copy(d.x.row(src), d.x.row(src) + d.dim(), out.x.row(i - begin));
            out.labels[i - begin] = d.labels[src];
            if (d.has_groups()) out.groups[i - begin] = d.groups[src];
        }
        recompute_feature_range(out);
        out.provenance = d.provenance + "/split";
        return out;
    };
    return {take(0, n1), take(n1, d.size())};
}

struct NormStats {
    std::vector<double> mean, std;
};

inline NormStats compute_norm_stats(const Dataset& d) {
    NormStats s;
    size_t n = d.size(), dim = d.dim();
    require(n > 0, ErrorCategory::config, "normalize: empty dataset");
    s.mean.assign(dim, 0.0);
    s.std.assign(dim, 0.0);
    for (size_t i = 0; i < n; ++i) axpy(1.0, d.x.row(i), s.mean.data(), dim);
    for (size_t j = 0; j < dim; ++j) s.mean[j] /= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        const double* row = d.x.row(i);
        for (size_t j = 0; j < dim; ++j) {
            double c = row[j] - s.mean[j];
            s.std[j] += c * c;
        }
    }
    for (size_t j = 0; j < dim; ++j)
        s.std[j] = std::max(std::sqrt(s.std[j] / static_cast<double>(n)), 1e-12);
    return s;
}

// Standardizes in place with the supplied (train) statistics.
inline void apply_norm_stats(Dataset& d, const NormStats& s) {
    require(s.mean.size() == d.dim() && s.std.size() == d.dim(),
            ErrorCategory::dimension, "normalize: stats dimension mismatch");
    for (size_t i = 0; i < d.size(); ++i) {
        double* row = d.x.row(i);
        for (size_t j = 0; j < d.dim(); ++j) row[j] = (row[j] - s.mean[j]) / s.std[j];
    }
    recompute_feature_range(d);
}

inline Container to_container(const Dataset& d) {
    Container c;
    c.put_str("kind", "dataset");
    c.put_i64("format_version", 1);
    c.put_f64_array("x", {d.x.rows, d.x.cols}, d.x.data);
    c.put_i64_array("labels", std::vector<int64_t>(d.labels.begin(), d.labels.end()));
    c.put_i64("num_classes", d.num_classes);
    c.put_str("label_space", d.label_space == LabelSpace::pm_one ? "pm_one" : "zero_based");
    if (d.has_groups()) {
        c.put_i64_array("groups", std::vector<int64_t>(d.groups.begin(), d.groups.end()));
        std::string names;
        for (size_t i = 0; i < d.group_names.size(); ++i) {
            if (i) names += '\n';
            names += d.group_names[i];
        }
        c.put_str("group_names", names);
    }
    c.put_f64_array("feature_min", {d.feature_min.size()}, d.feature_min);
    c.put_f64_array("feature_max", {d.feature_max.size()}, d.feature_max);
    c.put_str("provenance", d.provenance);
    return c;
}

inline Dataset dataset_from_container(const Container& c) {
    require(c.get_str("kind") == "dataset", ErrorCategory::schema,
            "container does not hold a dataset");
    Dataset d;
    auto dm = c.dims("x");
    require(dm.size() == 2, ErrorCategory::schema, "dataset x must be rank 2");
    d.x.rows = dm[0];
    d.x.cols = dm[1];
    d.x.data = c.get_f64_array("x");
    const auto& lab = c.get_i64_array("labels");
    d.labels.assign(lab.begin(), lab.end());
    d.num_classes = static_cast<int>(c.get_i64("num_classes"));
    d.label_space =
        c.get_str("label_space") == "pm_one" ? LabelSpace::pm_one : LabelSpace::zero_based;
    if (c.has("groups")) {
        const auto& g = c.get_i64_array("groups");
        d.groups.assign(g.begin(), g.end());
        std::string names = c.get_str("group_names");
        size_t pos = 0;
        while (pos <= names.size() && !names.empty()) {
            size_t nl = names.find('\n', pos);
            if (nl == std::string::npos) {
                d.group_names.push_back(names.substr(pos));
                break;
            }
            d.group_names.push_back(names.substr(pos, nl - pos));
            pos = nl + 1;
        }
    }
    d.feature_min = c.get_f64_array("feature_min");
    d.feature_max = c.get_f64_array("feature_max");
    d.provenance = c.get_str("provenance");
    validate(d);
    return d;
}

}  // namespace perlearn
