#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "perlearn/common.hpp"
#include "perlearn/container.hpp"
#include "perlearn/dataset.hpp"
#include "perlearn/linalg.hpp"
#include "perlearn/rng.hpp"

namespace perlearn {

constexpr double kCovarianceFloor = 1e-6;
constexpr double kTwoPi = 6.283185307179586476925287;

enum class DensityKind { kde, gmm };

// Class-conditional density over one class: a mixture of diagonal
// Gaussians. KDE stores one component per training point with shared
// isotropic bandwidth h (vars left empty); GMM stores K fitted components.
struct ClassDensity {
    std::vector<double> log_weights;  // size K
    Matrix means;                     // K x d
    Matrix vars;                      // K x d (GMM only)
    double h = 0.0;                   // KDE only
};

struct DensityEstimator {
    DensityKind kind = DensityKind::kde;
    std::vector<int> classes;  // dataset label values, e.g. {-1,+1} or {0..C-1}
    std::vector<ClassDensity> per_class;

    size_t dim() const { return per_class.empty() ? 0 : per_class[0].means.cols; }

    size_t class_index(int label) const {
        for (size_t i = 0; i < classes.size(); ++i)
            if (classes[i] == label) return i;
        throw Error(ErrorCategory::schema,
                    "density: unknown class label " + std::to_string(label));
    }
};

namespace detail {

inline double log_normal_diag(const double* x, const double* mu, const double* var,
                              size_t d) {
    double s = 0.0;
    for (size_t j = 0; j < d; ++j) {
        double c = x[j] - mu[j];
        s += c * c / var[j] + std::log(kTwoPi * var[j]);
    }
    return -0.5 * s;
}

inline double log_normal_iso(const double* x, const double* mu, double var, size_t d) {
    double s = 0.0;
    for (size_t j = 0; j < d; ++j) {
        double c = x[j] - mu[j];
        s += c * c;
    }
    return -0.5 * (s / var + d * std::log(kTwoPi * var));
}

}  // namespace detail

// log q(x, c); always finite as long as inputs are.
inline double log_density(const DensityEstimator& est, const double* x, int label) {
    const ClassDensity& cd = est.per_class[est.class_index(label)];
    size_t k = cd.log_weights.size(), d = cd.means.cols;
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> lp(k);
    for (size_t i = 0; i < k; ++i) {
        double comp = est.kind == DensityKind::kde
                          ? detail::log_normal_iso(x, cd.means.row(i), cd.h * cd.h, d)
                          : detail::log_normal_diag(x, cd.means.row(i), cd.vars.row(i), d);
        lp[i] = cd.log_weights[i] + comp;
        mx = std::max(mx, lp[i]);
    }
    double s = 0.0;
    for (size_t i = 0; i < k; ++i) s += std::exp(lp[i] - mx);
    return mx + std::log(s);
}

// Raw q(x, c) = exp(log q); underflows to 0 in high dimension by design of
// IEEE doubles, which is why experiment configs switch the p-CFE pull to
// log mode there.
inline double density(const DensityEstimator& est, const double* x, int label) {
    return std::exp(log_density(est, x, label));
}

// grad_x log q(x, c) = sum_k r_k (mu_k - x) / var_k, responsibilities r from
// a log-sum-exp pass. Returns log q and writes the gradient.
inline double grad_log_density(const DensityEstimator& est, const double* x, int label,
                               std::vector<double>& grad) {
    const ClassDensity& cd = est.per_class[est.class_index(label)];
    size_t k = cd.log_weights.size(), d = cd.means.cols;
    std::vector<double> lp(k);
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < k; ++i) {
        double comp = est.kind == DensityKind::kde
                          ? detail::log_normal_iso(x, cd.means.row(i), cd.h * cd.h, d)
                          : detail::log_normal_diag(x, cd.means.row(i), cd.vars.row(i), d);
        lp[i] = cd.log_weights[i] + comp;
        mx = std::max(mx, lp[i]);
    }
    double s = 0.0;
    for (size_t i = 0; i < k; ++i) {
        lp[i] = std::exp(lp[i] - mx);
        s += lp[i];
    }
    grad.assign(d, 0.0);
    for (size_t i = 0; i < k; ++i) {
        double r = lp[i] / s;
        if (r == 0.0) continue;
        const double* mu = cd.means.row(i);
        if (est.kind == DensityKind::kde) {
            double inv = 1.0 / (cd.h * cd.h);
            for (size_t j = 0; j < d; ++j) grad[j] += r * (mu[j] - x[j]) * inv;
        } else {
            const double* var = cd.vars.row(i);
            for (size_t j = 0; j < d; ++j) grad[j] += r * (mu[j] - x[j]) / var[j];
        }
    }
    return mx + std::log(s);
}

// grad_x q(x, c) = q * grad log q.
inline double grad_density(const DensityEstimator& est, const double* x, int label,
                           std::vector<double>& grad) {
    double lq = grad_log_density(est, x, label, grad);
    double q = std::exp(lq);
    for (double& g : grad) g *= q;
    return q;
}

// Silverman-style rule per class: h_c = sigma_hat * n_c^(-1/(d+4)) with
// sigma_hat the mean per-coordinate standard deviation; classes share one
// bandwidth, the average of the per-class values.
inline double silverman_bandwidth(const Dataset& data) {
    validate(data);
    std::vector<int> classes;
    for (int y : data.labels)
        if (std::find(classes.begin(), classes.end(), y) == classes.end())
            classes.push_back(y);
    std::sort(classes.begin(), classes.end());
    size_t d = data.dim();
    double h_sum = 0.0;
    for (int c : classes) {
        std::vector<size_t> idx;
        for (size_t i = 0; i < data.size(); ++i)
            if (data.labels[i] == c) idx.push_back(i);
        require(idx.size() >= 2, ErrorCategory::config,
                "silverman_bandwidth: class with fewer than 2 points");
        std::vector<double> mean(d, 0.0), var(d, 0.0);
        for (size_t i : idx) axpy(1.0, data.x.row(i), mean.data(), d);
        for (size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(idx.size());
        for (size_t i : idx) {
            const double* row = data.x.row(i);
            for (size_t j = 0; j < d; ++j) {
                double cdf = row[j] - mean[j];
                var[j] += cdf * cdf;
            }
        }
        double sigma = 0.0;
        for (size_t j = 0; j < d; ++j)
            sigma += std::sqrt(var[j] / static_cast<double>(idx.size()));
        sigma /= static_cast<double>(d);
        sigma = std::max(sigma, 1e-12);
        h_sum += sigma * std::pow(static_cast<double>(idx.size()),
                                  -1.0 / (static_cast<double>(d) + 4.0));
    }
    return h_sum / static_cast<double>(classes.size());
}

// KDE: one component per training point of each class, shared bandwidth.
// h <= 0 selects the Silverman default.
inline DensityEstimator fit_kde(const Dataset& data, double h = 0.0) {
    validate(data);
    if (h <= 0.0) h = silverman_bandwidth(data);
    DensityEstimator est;
    est.kind = DensityKind::kde;
    for (int y : data.labels)
        if (std::find(est.classes.begin(), est.classes.end(), y) == est.classes.end())
            est.classes.push_back(y);
    std::sort(est.classes.begin(), est.classes.end());
    for (int c : est.classes) {
        std::vector<size_t> idx;
        for (size_t i = 0; i < data.size(); ++i)
            if (data.labels[i] == c) idx.push_back(i);
        ClassDensity cd;
        cd.h = h;
        cd.means = Matrix(idx.size(), data.dim());
        cd.log_weights.assign(idx.size(),
                              -std::log(static_cast<double>(idx.size())));
        for (size_t i = 0; i < idx.size(); ++i)
            std::copy(data.x.row(idx[i]), data.x.row(idx[i]) + data.dim(),
                      cd.means.row(i));
        est.per_class.push_back(std::move(cd));
    }
    return est;
}

struct EmOptions {
    size_t max_iters = 100;
    double tol = 1e-9;
    int max_reseeds = 3;
};

struct EmResult {
    std::vector<double> ll_trace;  // one entry per E-step; non-decreasing
    size_t reseeds = 0;
};

namespace detail {

// EM for one class. The log-likelihood trace is non-decreasing; a
// degenerate component (vanishing responsibility mass or non-finite
// parameters) is re-seeded from a random data point, the trace restarts,
// and after max_reseeds failures fitting aborts.
inline ClassDensity fit_gmm_class(const Matrix& pts, size_t K, Rng& rng,
                                  const EmOptions& opt, EmResult& info) {
    size_t n = pts.rows, d = pts.cols;
    require(n >= K, ErrorCategory::config,
            "fit_gmm: fewer points than components");
    // global per-coordinate variance, used for init and re-seeding
    std::vector<double> gmean(d, 0.0), gvar(d, 0.0);
    for (size_t i = 0; i < n; ++i) axpy(1.0, pts.row(i), gmean.data(), d);
    for (size_t j = 0; j < d; ++j) gmean[j] /= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        const double* row = pts.row(i);
        for (size_t j = 0; j < d; ++j) {
            double c = row[j] - gmean[j];
            gvar[j] += c * c;
        }
    }
    for (size_t j = 0; j < d; ++j)
        gvar[j] = std::max(gvar[j] / static_cast<double>(n), kCovarianceFloor);

    ClassDensity cd;
    cd.log_weights.assign(K, -std::log(static_cast<double>(K)));
    cd.means = Matrix(K, d);
    cd.vars = Matrix(K, d);
    // kmeans++-style seeding: next center sampled proportionally to squared
    // distance from the chosen set
    std::vector<size_t> centers;
    centers.push_back(static_cast<size_t>(rng.uniform_int(n)));
    std::vector<double> d2(n);
    for (size_t k = 1; k < K; ++k) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (size_t c : centers) {
                double s = 0.0;
                const double* a = pts.row(i);
                const double* b = pts.row(c);
                for (size_t j = 0; j < d; ++j) {
                    double t = a[j] - b[j];
                    s += t * t;
                }
                best = std::min(best, s);
            }
            d2[i] = best;
            total += best;
        }
        size_t pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total, acc = 0.0;
            for (size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<size_t>(rng.uniform_int(n));
        }
        centers.push_back(pick);
    }
    for (size_t k = 0; k < K; ++k) {
        std::copy(pts.row(centers[k]), pts.row(centers[k]) + d, cd.means.row(k));
        std::copy(gvar.begin(), gvar.end(), cd.vars.row(k));
    }

    Matrix resp(n, K);
    int reseeds_left = opt.max_reseeds;
    double prev_ll = -std::numeric_limits<double>::infinity();
    info.ll_trace.clear();
    for (size_t it = 0; it < opt.max_iters; ++it) {
        // E-step
        double ll = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double* r = resp.row(i);
            double mx = -std::numeric_limits<double>::infinity();
            for (size_t k = 0; k < K; ++k) {
                r[k] = cd.log_weights[k] +
                       log_normal_diag(pts.row(i), cd.means.row(k), cd.vars.row(k), d);
                mx = std::max(mx, r[k]);
            }
            double s = 0.0;
            for (size_t k = 0; k < K; ++k) {
                r[k] = std::exp(r[k] - mx);
                s += r[k];
            }
            for (size_t k = 0; k < K; ++k) r[k] /= s;
            ll += mx + std::log(s);
        }
        require(std::isfinite(ll), ErrorCategory::numeric, "fit_gmm: non-finite ll");
        info.ll_trace.push_back(ll);
        bool converged = it > 0 && std::fabs(ll - prev_ll) <= opt.tol * (1.0 + std::fabs(ll));
        prev_ll = ll;
        // M-step
        bool degenerate = false;
        for (size_t k = 0; k < K; ++k) {
            double nk = 0.0;
            for (size_t i = 0; i < n; ++i) nk += resp.at(i, k);
            if (!(nk > 1e-10 * static_cast<double>(n))) {
                degenerate = true;
                require(reseeds_left-- > 0, ErrorCategory::numeric,
                        "fit_gmm: component collapsed repeatedly");
                size_t pick = static_cast<size_t>(rng.uniform_int(n));
                std::copy(pts.row(pick), pts.row(pick) + d, cd.means.row(k));
                std::copy(gvar.begin(), gvar.end(), cd.vars.row(k));
                cd.log_weights.assign(K, -std::log(static_cast<double>(K)));
                ++info.reseeds;
                continue;
            }
            cd.log_weights[k] = std::log(nk / static_cast<double>(n));
            double* mu = cd.means.row(k);
            double* var = cd.vars.row(k);
            std::fill(mu, mu + d, 0.0);
            for (size_t i = 0; i < n; ++i) axpy(resp.at(i, k), pts.row(i), mu, d);
            for (size_t j = 0; j < d; ++j) mu[j] /= nk;
            std::fill(var, var + d, 0.0);
            for (size_t i = 0; i < n; ++i) {
                const double* row = pts.row(i);
                double r = resp.at(i, k);
                for (size_t j = 0; j < d; ++j) {
                    double c = row[j] - mu[j];
                    var[j] += r * c * c;
                }
            }
            for (size_t j = 0; j < d; ++j)
                var[j] = std::max(var[j] / nk, kCovarianceFloor);
        }
        if (degenerate) {
            info.ll_trace.clear();
            prev_ll = -std::numeric_limits<double>::infinity();
            continue;
        }
        if (converged) break;
    }
    return cd;
}

}  // namespace detail

inline DensityEstimator fit_gmm(const Dataset& data, size_t K, Rng& rng,
                                const EmOptions& opt = {},
                                std::vector<EmResult>* diagnostics = nullptr) {
    validate(data);
    require(K >= 1, ErrorCategory::config, "fit_gmm: K must be >= 1");
    DensityEstimator est;
    est.kind = DensityKind::gmm;
    for (int y : data.labels)
        if (std::find(est.classes.begin(), est.classes.end(), y) == est.classes.end())
            est.classes.push_back(y);
    std::sort(est.classes.begin(), est.classes.end());
    for (int c : est.classes) {
        std::vector<size_t> idx;
        for (size_t i = 0; i < data.size(); ++i)
            if (data.labels[i] == c) idx.push_back(i);
        Matrix pts(idx.size(), data.dim());
        for (size_t i = 0; i < idx.size(); ++i)
            std::copy(data.x.row(idx[i]), data.x.row(idx[i]) + data.dim(), pts.row(i));
        EmResult info;
        est.per_class.push_back(detail::fit_gmm_class(pts, K, rng, opt, info));
        if (diagnostics) diagnostics->push_back(std::move(info));
    }
    return est;
}

inline Container to_container(const DensityEstimator& est) {
    Container c;
    c.put_str("kind", "density");
    c.put_i64("format_version", 1);
    c.put_str("estimator", est.kind == DensityKind::kde ? "kde" : "gmm");
    c.put_i64_array("classes",
                    std::vector<int64_t>(est.classes.begin(), est.classes.end()));
    for (size_t i = 0; i < est.per_class.size(); ++i) {
        const ClassDensity& cd = est.per_class[i];
        std::string p = "c" + std::to_string(i) + ".";
        c.put_f64_array(p + "log_weights", {cd.log_weights.size()}, cd.log_weights);
        c.put_f64_array(p + "means", {cd.means.rows, cd.means.cols}, cd.means.data);
        if (est.kind == DensityKind::gmm)
            c.put_f64_array(p + "vars", {cd.vars.rows, cd.vars.cols}, cd.vars.data);
        else
            c.put_f64(p + "h", cd.h);
    }
    return c;
}

inline DensityEstimator density_from_container(const Container& c) {
    require(c.get_str("kind") == "density", ErrorCategory::schema,
            "container does not hold a density estimator");
    DensityEstimator est;
    est.kind = c.get_str("estimator") == "kde" ? DensityKind::kde : DensityKind::gmm;
    for (int64_t v : c.get_i64_array("classes")) est.classes.push_back(static_cast<int>(v));
    for (size_t i = 0; i < est.classes.size(); ++i) {
        std::string p = "c" + std::to_string(i) + ".";
        ClassDensity cd;
        cd.log_weights = c.get_f64_array(p + "log_weights");
        auto md = c.dims(p + "means");
        cd.means.rows = md[0];
        cd.means.cols = md[1];
        cd.means.data = c.get_f64_array(p + "means");
        if (est.kind == DensityKind::gmm) {
            auto vd = c.dims(p + "vars");
            cd.vars.rows = vd[0];
            cd.vars.cols = vd[1];
            cd.vars.data = c.get_f64_array(p + "vars");
        } else {
            cd.h = c.get_f64(p + "h");
        }
        est.per_class.push_back(std::move(cd));
    }
    return est;
}

}  // namespace perlearn
