#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "perlearn/common.hpp"
#include "perlearn/density.hpp"
#include "perlearn/linalg.hpp"
#include "perlearn/model.hpp"
#include "perlearn/rng.hpp"

namespace perlearn {

enum class NormKind { l2, linf };

inline NormKind norm_from_string(const std::string& s) {
    if (s == "l2") return NormKind::l2;
    if (s == "linf") return NormKind::linf;
    throw Error(ErrorCategory::config, "unknown norm: " + s);
}

enum class DensityMode { raw, log_mode };

struct PgdSpec {
    NormKind norm = NormKind::l2;
    double eps = 0.78;
    size_t steps = 100;
    double alpha = 0.0;  // <= 0 selects the 2.5 * eps / steps default
    bool clamp_to_range = false;
};

struct CfeSpec {
    double lambda = 0.001;  // weight on the squared distance term
    double lr = 0.01;       // Adam learning rate (lambda_CF)
    size_t iters = 100;
};

struct PcfeSpec {
    double gamma = 1.0;  // loss weight
    double tau = 1.0;    // density weight
    double beta = 1e-4;  // l0 weight
    double lipschitz = 1.0;  // initial step size is 1 / lipschitz
    size_t lambda_steps = 5; // backtracking halvings allowed per iteration
    size_t iters = 100;
    DensityMode mode = DensityMode::raw;
};

struct PerturbRecord {
    std::vector<double> x_tilde;
    int target = 0;
    bool valid = false;       // model predicts the induced target at x_tilde
    double loss_initial = 0.0;
    double loss_final = 0.0;
    double l2 = 0.0;
    double linf = 0.0;
    size_t l0 = 0;
    std::vector<double> objective_trace;  // p-CFE only
};

// Projects delta onto the norm ball of radius eps, in place. eps = 0 maps
// every delta to exactly zero.
inline void project(std::vector<double>& delta, NormKind norm, double eps) {
    require(eps >= 0.0, ErrorCategory::config, "project: eps < 0");
    if (norm == NormKind::linf) {
        for (double& v : delta) v = std::clamp(v, -eps, eps);
        return;
    }
    double n = norm_l2(delta);
    if (n > eps) {
        double s = eps == 0.0 ? 0.0 : eps / n;
        for (double& v : delta) v *= s;
    }
}

namespace detail {

inline void finish_record(const Model& model, const std::vector<double>& x,
                          int target, PerturbRecord& rec) {
    rec.target = target;
    rec.loss_final = model.loss(rec.x_tilde.data(), target);
    rec.valid = model.predict(rec.x_tilde.data()) == target;
    std::vector<double> delta(x.size());
    for (size_t j = 0; j < x.size(); ++j) delta[j] = rec.x_tilde[j] - x[j];
    rec.l2 = norm_l2(delta);
    rec.linf = norm_linf(delta);
    rec.l0 = norm_l0(delta);
}

}  // namespace detail

// Targeted PGD: minimizes L(x~, target) subject to ||x~ - x||_p <= eps.
// linf steps move alpha * sign(grad); l2 steps move alpha * grad / ||grad||.
// Each iterate is projected back onto the ball and optionally clamped to a
// feature range.
inline PerturbRecord pgd_targeted(const Model& model, const std::vector<double>& x,
                                  int target, const PgdSpec& spec,
                                  const std::vector<double>* lo = nullptr,
                                  const std::vector<double>* hi = nullptr) {
    require(x.size() == model.spec.in_dim, ErrorCategory::dimension,
            "pgd: input dimension mismatch");
    require(spec.eps >= 0.0, ErrorCategory::config, "pgd: eps < 0");
    require(!spec.clamp_to_range || (lo && hi), ErrorCategory::config,
            "pgd: clamp requested without a feature range");
    double alpha = spec.alpha > 0.0 ? spec.alpha
                                    : 2.5 * spec.eps / std::max<size_t>(spec.steps, 1);
    PerturbRecord rec;
    rec.loss_initial = model.loss(x.data(), target);
    std::vector<double> xt = x;
    std::vector<double> delta(x.size(), 0.0);
    for (size_t it = 0; it < spec.steps; ++it) {
        std::vector<double> g = model.grad_input(xt.data(), target);
        if (spec.norm == NormKind::linf) {
            for (size_t j = 0; j < xt.size(); ++j) {
                double s = g[j] > 0.0 ? 1.0 : (g[j] < 0.0 ? -1.0 : 0.0);
                xt[j] -= alpha * s;
            }
        } else {
            double gn = norm_l2(g);
            if (gn > 0.0)
                for (size_t j = 0; j < xt.size(); ++j) xt[j] -= alpha * g[j] / gn;
        }
        for (size_t j = 0; j < xt.size(); ++j) delta[j] = xt[j] - x[j];
        project(delta, spec.norm, spec.eps);
        for (size_t j = 0; j < xt.size(); ++j) xt[j] = x[j] + delta[j];
        if (spec.clamp_to_range)
            for (size_t j = 0; j < xt.size(); ++j)
                xt[j] = std::clamp(xt[j], (*lo)[j], (*hi)[j]);
    }
    rec.x_tilde = std::move(xt);
    detail::finish_record(model, x, target, rec);
    return rec;
}

// Gradient counterfactual: Adam minimizes
// L(x', target) + lambda * ||x' - x||_2^2 starting from x' = x.
inline PerturbRecord cfe_l2(const Model& model, const std::vector<double>& x,
                            int target, const CfeSpec& spec) {
    require(x.size() == model.spec.in_dim, ErrorCategory::dimension,
            "cfe: input dimension mismatch");
    PerturbRecord rec;
    rec.loss_initial = model.loss(x.data(), target);
    size_t d = x.size();
    std::vector<double> xp = x, m(d, 0.0), v(d, 0.0);
    const double b1 = 0.9, b2 = 0.999, eps_hat = 1e-8;
    for (size_t t = 1; t <= spec.iters; ++t) {
        std::vector<double> g = model.grad_input(xp.data(), target);
        for (size_t j = 0; j < d; ++j) g[j] += spec.lambda * 2.0 * (xp[j] - x[j]);
        double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (size_t j = 0; j < d; ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            xp[j] -= spec.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_hat);
        }
    }
    rec.x_tilde = std::move(xp);
    detail::finish_record(model, x, target, rec);
    return rec;
}

// prox of t * (beta * ||u - x||_0 + indicator[lo, hi]) at v, one coordinate:
// either keep x_i (cost (x_i - v_i)^2 / 2) or move to clamp(v_i) (cost
// (clamp(v_i) - v_i)^2 / 2 + t * beta). Ties keep the original coordinate,
// bit-exactly, which is what makes the l0 count well defined downstream.
inline double prox_l0_box_coord(double x, double v, double t, double beta, double lo,
                                double hi) {
    double moved = std::clamp(v, lo, hi);
    double keep_cost = 0.5 * (x - v) * (x - v);
    double move_cost = 0.5 * (moved - v) * (moved - v) + t * beta;
    return move_cost < keep_cost ? moved : x;
}

inline void prox_l0_box(const std::vector<double>& x, const std::vector<double>& v,
                        double t, double beta, const std::vector<double>& lo,
                        const std::vector<double>& hi, std::vector<double>& out) {
    size_t d = x.size();
    require(v.size() == d && lo.size() == d && hi.size() == d && t > 0.0,
            ErrorCategory::dimension, "prox_l0_box: bad arguments");
    out.resize(d);
    for (size_t j = 0; j < d; ++j)
        out[j] = prox_l0_box_coord(x[j], v[j], t, beta, lo[j], hi[j]);
}

namespace detail {

struct PcfeObjective {
    const Model& model;
    const DensityEstimator& est;
    const std::vector<double>& x;
    int target;
    const PcfeSpec& spec;

    // smooth part g = ||x'-x||^2 + gamma * L - tau * (q or log q)
    double value(const std::vector<double>& xp) const {
        double dist = 0.0;
        for (size_t j = 0; j < x.size(); ++j) {
            double c = xp[j] - x[j];
            dist += c * c;
        }
        double lv = model.loss(xp.data(), target);
        double dv = spec.mode == DensityMode::raw ? density(est, xp.data(), target)
                                                  : log_density(est, xp.data(), target);
        return dist + spec.gamma * lv - spec.tau * dv;
    }

    double value_and_grad(const std::vector<double>& xp, std::vector<double>& grad) const {
        size_t d = x.size();
        std::vector<double> gl = model.grad_input(xp.data(), target);
        double lv = model.loss(xp.data(), target);
        std::vector<double> gd;
        double dv;
        if (spec.mode == DensityMode::raw)
            dv = grad_density(est, xp.data(), target, gd);
        else
            dv = grad_log_density(est, xp.data(), target, gd);
        grad.resize(d);
        double dist = 0.0;
        for (size_t j = 0; j < d; ++j) {
            double c = xp[j] - x[j];
            dist += c * c;
            grad[j] = 2.0 * c + spec.gamma * gl[j] - spec.tau * gd[j];
        }
        return dist + spec.gamma * lv - spec.tau * dv;
    }

    double l0_of(const std::vector<double>& xp) const {
        size_t c = 0;
        for (size_t j = 0; j < x.size(); ++j)
            if (xp[j] != x[j]) ++c;
        return static_cast<double>(c);
    }

    double composite(const std::vector<double>& xp, double g) const {
        return g + spec.beta * l0_of(xp);
    }
};

}  // namespace detail

// Plausible sparse counterfactual by monotone FISTA with backtracking.
// Smooth part: squared distance + gamma * loss - tau * density (raw or log).
// Non-smooth part: beta * l0 + box indicator, handled by prox_l0_box.
// Backtracking halves the step up to spec.lambda_steps times per iteration,
// accepting once the quadratic upper bound holds; if the composite
// objective still increases the iterate falls back to the previous point
// and momentum restarts, so the recorded trace never increases.
inline PerturbRecord pcfe_l0(const Model& model, const DensityEstimator& est,
                             const std::vector<double>& x, int target,
                             const PcfeSpec& spec, const std::vector<double>& lo,
                             const std::vector<double>& hi) {
    size_t d = x.size();
    require(d == model.spec.in_dim, ErrorCategory::dimension,
            "pcfe: input dimension mismatch");
    require(lo.size() == d && hi.size() == d, ErrorCategory::dimension,
            "pcfe: box dimension mismatch");
    for (size_t j = 0; j < d; ++j)
        require(lo[j] <= x[j] && x[j] <= hi[j], ErrorCategory::config,
                "pcfe: input outside the feasible box");
    require(spec.lipschitz > 0.0 && spec.beta >= 0.0, ErrorCategory::config,
            "pcfe: bad spec");
    detail::PcfeObjective obj{model, est, x, target, spec};

    PerturbRecord rec;
    rec.loss_initial = model.loss(x.data(), target);
    std::vector<double> xc = x;   // current iterate
    std::vector<double> xprev = x;
    std::vector<double> z = x;    // extrapolation point
    double theta = 1.0;
    double step = 1.0 / spec.lipschitz;
    double f_cur = obj.composite(xc, obj.value(xc));
    rec.objective_trace.push_back(f_cur);

    std::vector<double> grad(d), v(d), cand(d), best_cand(d);
    for (size_t it = 0; it < spec.iters; ++it) {
        double gz = obj.value_and_grad(z, grad);
        double t = step;
        double g_cand = 0.0;
        bool accepted = false;
        for (size_t h = 0; h <= spec.lambda_steps; ++h) {
            for (size_t j = 0; j < d; ++j) v[j] = z[j] - t * grad[j];
            prox_l0_box(x, v, t, spec.beta, lo, hi, cand);
            g_cand = obj.value(cand);
            double lin = 0.0, quad = 0.0;
            for (size_t j = 0; j < d; ++j) {
                double diff = cand[j] - z[j];
                lin += grad[j] * diff;
                quad += diff * diff;
            }
            if (g_cand <= gz + lin + quad / (2.0 * t) + 1e-12) {
                accepted = true;
                break;
            }
            if (h < spec.lambda_steps) t *= 0.5;
        }
        (void)accepted;  // after the cap the last candidate is used as is
        step = t;
        double f_cand = obj.composite(cand, g_cand);
        if (f_cand <= f_cur) {
            xprev = xc;
            xc = cand;
            f_cur = f_cand;
            double theta_next = (1.0 + std::sqrt(1.0 + 4.0 * theta * theta)) / 2.0;
            for (size_t j = 0; j < d; ++j)
                z[j] = xc[j] + ((theta - 1.0) / theta_next) * (xc[j] - xprev[j]);
            theta = theta_next;
        } else {
            // monotone fallback: keep x_k, restart momentum at the iterate
            theta = 1.0;
            z = xc;
        }
        rec.objective_trace.push_back(f_cur);
    }
    rec.x_tilde = std::move(xc);
    detail::finish_record(model, x, target, rec);
    return rec;
}

struct NoiseSpec {
    enum class Kind { l2, linf, l0 } kind = Kind::l2;
    double eps = 0.0;   // l2 / linf magnitude
    size_t d_delta = 0; // l0: number of coordinates to resample
};

// Magnitude-matched random baseline. l2 draws a uniform direction on the
// sphere (exact norm eps); linf draws signs; l0 resamples d_delta distinct
// coordinates uniformly within the feature box.
inline std::vector<double> noise_baseline(const std::vector<double>& x,
                                          const NoiseSpec& spec, Rng& rng,
                                          const std::vector<double>* lo = nullptr,
                                          const std::vector<double>* hi = nullptr) {
    size_t d = x.size();
    std::vector<double> out = x;
    switch (spec.kind) {
        case NoiseSpec::Kind::l2: {
            std::vector<double> u(d);
            double n = 0.0;
            do {
                for (size_t j = 0; j < d; ++j) u[j] = rng.normal();
                n = norm_l2(u);
            } while (n == 0.0);
            for (size_t j = 0; j < d; ++j) out[j] += spec.eps * u[j] / n;
            break;
        }
        case NoiseSpec::Kind::linf: {
            for (size_t j = 0; j < d; ++j) out[j] += spec.eps * rng.sign();
            break;
        }
        case NoiseSpec::Kind::l0: {
            require(lo && hi && lo->size() == d && hi->size() == d,
                    ErrorCategory::config, "noise l0 needs a feature box");
            require(spec.d_delta <= d, ErrorCategory::config,
                    "noise l0: d_delta exceeds dimension");
            for (size_t j : rng.choose_k(d, spec.d_delta))
                out[j] = rng.uniform((*lo)[j], (*hi)[j]);
            break;
        }
    }
    return out;
}

struct BetaTuneResult {
    double beta = 0.0;
    double mean_l0 = 0.0;
    size_t probes = 0;
    bool feasible = false;  // false when no probed beta modified any coordinate
};

// Bisection on beta so the mean modified-coordinate count over the batch is
// the largest value not exceeding ceil(target_ratio * d). Larger beta means
// sparser output. Ties prefer larger beta. At most max_probes p-CFE batch
// runs, bracket expansion included.
inline BetaTuneResult tune_beta_for_ratio(
    const Model& model, const DensityEstimator& est, const Matrix& xs,
    const std::vector<int>& targets, const PcfeSpec& base, const std::vector<double>& lo,
    const std::vector<double>& hi, double target_ratio, size_t max_probes = 20) {
    require(target_ratio > 0.0 && target_ratio <= 1.0, ErrorCategory::config,
            "tune_beta_for_ratio: ratio outside (0,1]");
    double target = std::ceil(target_ratio * static_cast<double>(xs.cols));
    auto mean_l0_at = [&](double beta) {
        PcfeSpec s = base;
        s.beta = beta;
        double total = 0.0;
        for (size_t i = 0; i < xs.rows; ++i) {
            std::vector<double> xi(xs.row(i), xs.row(i) + xs.cols);
            total += static_cast<double>(
                pcfe_l0(model, est, xi, targets[i], s, lo, hi).l0);
        }
        return total / static_cast<double>(xs.rows);
    };
    BetaTuneResult best;
    best.beta = -1.0;
    size_t probes = 0;
    auto consider = [&](double beta, double achieved) {
        if (achieved <= target &&
            (best.beta < 0.0 || achieved > best.mean_l0 ||
             (achieved == best.mean_l0 && beta > best.beta))) {
            best.beta = beta;
            best.mean_l0 = achieved;
        }
    };
    double b_lo = base.beta > 0.0 ? base.beta : 1e-8;
    double a_lo = mean_l0_at(b_lo);
    ++probes;
    consider(b_lo, a_lo);
    if (a_lo <= target) {
        // already sparse enough at the base beta; shrink toward zero to use
        // the budget if possible
        double b = b_lo;
        while (probes < max_probes) {
            b *= 0.25;
            double a = mean_l0_at(b);
            ++probes;
            consider(b, a);
            if (a > target) break;
        }
        best.probes = probes;
        require(best.beta >= 0.0, ErrorCategory::numeric,
                "tune_beta_for_ratio: no feasible beta found");
        best.feasible = best.mean_l0 > 0.0;
        return best;
    }
    double b_hi = b_lo;
    double a_hi = a_lo;
    while (a_hi > target && probes < max_probes) {
        b_hi *= 4.0;
        a_hi = mean_l0_at(b_hi);
        ++probes;
        consider(b_hi, a_hi);
    }
    while (probes < max_probes) {
        double mid = std::sqrt(b_lo * b_hi);  // geometric midpoint
        double a = mean_l0_at(mid);
        ++probes;
        consider(mid, a);
        if (a > target)
            b_lo = mid;
        else
            b_hi = mid;
    }
    best.probes = probes;
    require(best.beta >= 0.0, ErrorCategory::numeric,
            "tune_beta_for_ratio: no feasible beta found");
    best.feasible = best.mean_l0 > 0.0;
    return best;
}

}  // namespace perlearn
