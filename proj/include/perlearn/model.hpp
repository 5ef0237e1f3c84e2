#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "perlearn/common.hpp"
#include "perlearn/container.hpp"
#include "perlearn/dataset.hpp"
#include "perlearn/linalg.hpp"
#include "perlearn/optim.hpp"
#include "perlearn/rng.hpp"

namespace perlearn {

enum class Head { margin, logits };
enum class LossKind { exponential, logistic, cross_entropy };

inline LossKind loss_from_string(const std::string& s) {
    if (s == "exponential") return LossKind::exponential;
    if (s == "logistic") return LossKind::logistic;
    if (s == "cross_entropy") return LossKind::cross_entropy;
    throw Error(ErrorCategory::config, "unknown loss: " + s);
}

inline const char* to_string(LossKind k) {
    switch (k) {
        case LossKind::exponential: return "exponential";
        case LossKind::logistic: return "logistic";
        case LossKind::cross_entropy: return "cross_entropy";
    }
    return "?";
}

struct ModelSpec {
    size_t in_dim = 0;
    std::vector<size_t> hidden;  // empty means a single linear layer
    Head head = Head::margin;
    int num_classes = 2;
    LossKind loss = LossKind::logistic;

    size_t out_dim() const { return head == Head::margin ? 1 : size_t(num_classes); }
};

inline void validate(const ModelSpec& s) {
    require(s.in_dim > 0, ErrorCategory::config, "model: in_dim must be positive");
    for (size_t h : s.hidden)
        require(h > 0, ErrorCategory::config, "model: hidden width must be positive");
    if (s.head == Head::margin) {
        require(s.num_classes == 2, ErrorCategory::config,
                "model: margin head is binary");
        require(s.loss != LossKind::cross_entropy, ErrorCategory::config,
                "model: margin head needs exponential or logistic loss");
    } else {
        require(s.num_classes >= 2, ErrorCategory::config, "model: num_classes < 2");
        require(s.loss == LossKind::cross_entropy, ErrorCategory::config,
                "model: logits head needs cross_entropy loss");
    }
}

// ln(1 + e^x) without overflow.
inline double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

struct TrainConfig {
    size_t epochs = 40;
    size_t batch_size = 128;
    OptimConfig optim;
};

// Fully-connected ReLU network over flat f64 parameters. The empty-hidden
// case is the plain linear model used throughout the synthetic experiments.
class Model {
public:
    ModelSpec spec;
    std::vector<double> params;

    Model() = default;

    // Init draws U[-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer, weights then
    // biases, in layer order; the draw order is part of the determinism
    // contract.
    Model(const ModelSpec& s, Rng& rng) : spec(s) {
        validate(spec);
        build_layout();
        params.resize(total_params_);
        for (size_t l = 0; l < layers_.size(); ++l) {
            double bound = 1.0 / std::sqrt(static_cast<double>(layers_[l].in));
            size_t wcount = layers_[l].in * layers_[l].out;
            for (size_t i = 0; i < wcount; ++i)
                params[layers_[l].w_off + i] = rng.uniform(-bound, bound);
            for (size_t i = 0; i < layers_[l].out; ++i)
                params[layers_[l].b_off + i] = rng.uniform(-bound, bound);
        }
    }

    size_t num_params() const { return total_params_; }

    std::vector<double> forward(const double* x) const {
        std::vector<double> cur(x, x + spec.in_dim);
        for (size_t l = 0; l < layers_.size(); ++l) {
            cur = layer_forward(l, cur);
            if (l + 1 < layers_.size())
                for (double& v : cur) v = v > 0.0 ? v : 0.0;
        }
        return cur;
    }

    std::vector<double> forward(const std::vector<double>& x) const {
        require(x.size() == spec.in_dim, ErrorCategory::dimension,
                "forward: input dimension mismatch");
        return forward(x.data());
    }

    double loss_value(const std::vector<double>& out, int y) const {
        if (spec.head == Head::margin) {
            double m = static_cast<double>(y) * out[0];
            return spec.loss == LossKind::exponential ? std::exp(-m) : softplus(-m);
        }
        // cross-entropy via shifted log-sum-exp
        double mx = *std::max_element(out.begin(), out.end());
        double lse = 0.0;
        for (double v : out) lse += std::exp(v - mx);
        return mx + std::log(lse) - out[static_cast<size_t>(y)];
    }

    double loss(const double* x, int y) const { return loss_value(forward(x), y); }

    // dL/dlogits for one example.
    std::vector<double> loss_grad_logits(const std::vector<double>& out, int y) const {
        if (spec.head == Head::margin) {
            double m = static_cast<double>(y) * out[0];
            double dm = spec.loss == LossKind::exponential ? -std::exp(-m) : -sigmoid(-m);
            return {dm * static_cast<double>(y)};
        }
        double mx = *std::max_element(out.begin(), out.end());
        double z = 0.0;
        std::vector<double> g(out.size());
        for (size_t i = 0; i < out.size(); ++i) {
            g[i] = std::exp(out[i] - mx);
            z += g[i];
        }
        for (double& v : g) v /= z;
        g[static_cast<size_t>(y)] -= 1.0;
        return g;
    }

    // Accumulates dL/dparams into grad (size num_params) and returns the
    // loss; grad_x, when non-null, receives dL/dx. ReLU subgradient at 0
    // is taken as 0.
    double backprop(const double* x, int y, std::vector<double>* grad,
                    std::vector<double>* grad_x) const {
        size_t nl = layers_.size();
        std::vector<std::vector<double>> acts(nl + 1);  // post-activation
        std::vector<std::vector<double>> pre(nl);       // pre-activation
        acts[0].assign(x, x + spec.in_dim);
        for (size_t l = 0; l < nl; ++l) {
            pre[l] = layer_forward(l, acts[l]);
            acts[l + 1] = pre[l];
            if (l + 1 < nl)
                for (double& v : acts[l + 1]) v = v > 0.0 ? v : 0.0;
        }
        double lv = loss_value(acts[nl], y);
        std::vector<double> delta = loss_grad_logits(acts[nl], y);
        for (size_t li = nl; li-- > 0;) {
            const Layer& L = layers_[li];
            if (grad) {
                for (size_t r = 0; r < L.out; ++r) {
                    double dr = delta[r];
                    double* gw = grad->data() + L.w_off + r * L.in;
                    const double* a = acts[li].data();
                    for (size_t c = 0; c < L.in; ++c) gw[c] += dr * a[c];
                    (*grad)[L.b_off + r] += dr;
                }
            }
            if (li == 0 && !grad_x) break;
            std::vector<double> prev(L.in, 0.0);
            const double* w = params.data() + L.w_off;
            for (size_t r = 0; r < L.out; ++r)
                axpy(delta[r], w + r * L.in, prev.data(), L.in);
            if (li > 0) {
                const std::vector<double>& z = pre[li - 1];
                for (size_t c = 0; c < L.in; ++c)
                    if (z[c] <= 0.0) prev[c] = 0.0;
                delta = std::move(prev);
            } else if (grad_x) {
                *grad_x = std::move(prev);
            }
        }
        return lv;
    }

    // dL/dx at (x, y); used by every perturbation generator.
    std::vector<double> grad_input(const double* x, int y) const {
        std::vector<double> gx;
        backprop(x, y, nullptr, &gx);
        return gx;
    }

    // Mean loss and mean parameter gradient over the index subset.
    double batch_grad(const Matrix& xs, const std::vector<int>& ys,
                      const std::vector<size_t>& idx, size_t begin, size_t end,
                      std::vector<double>& grad) const {
        grad.assign(total_params_, 0.0);
        double total = 0.0;
        for (size_t k = begin; k < end; ++k) {
            size_t i = idx[k];
            total += backprop(xs.row(i), ys[i], &grad, nullptr);
        }
        double inv = 1.0 / static_cast<double>(end - begin);
        for (double& g : grad) g *= inv;
        return total * inv;
    }

    int predict(const double* x) const {
        std::vector<double> out = forward(x);
        if (spec.head == Head::margin) return out[0] > 0.0 ? 1 : -1;
        size_t best = 0;
        for (size_t i = 1; i < out.size(); ++i)
            if (out[i] > out[best]) best = i;  // tie keeps the smaller index
        return static_cast<int>(best);
    }

    std::vector<int> predict(const Matrix& xs) const {
        std::vector<int> out(xs.rows);
        for (size_t i = 0; i < xs.rows; ++i) out[i] = predict(xs.row(i));
        return out;
    }

    // Mini-batch training; shuffle order and optimizer state are owned here,
    // so the result is a pure function of (initial params, data, cfg, rng).
    std::vector<double> train(const Matrix& xs, const std::vector<int>& ys,
                              const TrainConfig& cfg, Rng& rng) {
        require(xs.cols == spec.in_dim, ErrorCategory::dimension,
                "train: data dimension mismatch");
        require(xs.rows == ys.size(), ErrorCategory::dimension,
                "train: labels size mismatch");
        require(xs.rows > 0, ErrorCategory::config, "train: empty dataset");
        require(cfg.batch_size > 0, ErrorCategory::config, "train: batch_size 0");
        check_labels(ys);
        Optimizer opt(cfg.optim);
        opt.reset(total_params_);
        std::vector<double> grad(total_params_);
        std::vector<double> epoch_losses;
        epoch_losses.reserve(cfg.epochs);
        for (size_t ep = 0; ep < cfg.epochs; ++ep) {
            std::vector<size_t> order = rng.permutation(xs.rows);
            double total = 0.0;
            for (size_t s = 0; s < xs.rows; s += cfg.batch_size) {
                size_t e = std::min(s + cfg.batch_size, xs.rows);
                double mean_loss = batch_grad(xs, ys, order, s, e, grad);
                if (!std::isfinite(mean_loss))
                    throw Error(ErrorCategory::numeric,
                                "train: non-finite loss at epoch " + std::to_string(ep) +
                                    " batch offset " + std::to_string(s) +
                                    " (loss=" + std::to_string(mean_loss) + ")");
                total += mean_loss * static_cast<double>(e - s);
                opt.step(params, grad);
            }
            epoch_losses.push_back(total / static_cast<double>(xs.rows));
        }
        return epoch_losses;
    }

    std::vector<double> train(const Dataset& data, const TrainConfig& cfg, Rng& rng) {
        return train(data.x, data.labels, cfg, rng);
    }

    void check_labels(const std::vector<int>& ys) const {
        for (int y : ys) {
            if (spec.head == Head::margin)
                require(y == -1 || y == 1, ErrorCategory::schema,
                        "margin head expects labels in {-1,+1}");
            else
                require(y >= 0 && y < spec.num_classes, ErrorCategory::schema,
                        "logits head expects labels in [0, num_classes)");
        }
    }

    Container to_container() const {
        Container c;
        c.put_str("kind", "model");
        c.put_i64("format_version", 1);
        c.put_i64("in_dim", static_cast<int64_t>(spec.in_dim));
        c.put_i64_array("hidden",
                        std::vector<int64_t>(spec.hidden.begin(), spec.hidden.end()));
        c.put_str("head", spec.head == Head::margin ? "margin" : "logits");
        c.put_i64("num_classes", spec.num_classes);
        c.put_str("loss", to_string(spec.loss));
        c.put_f64_array("params", {params.size()}, params);
        return c;
    }

    static Model from_container(const Container& c) {
        require(c.get_str("kind") == "model", ErrorCategory::schema,
                "container does not hold a model");
        Model m;
        m.spec.in_dim = static_cast<size_t>(c.get_i64("in_dim"));
        for (int64_t h : c.get_i64_array("hidden"))
            m.spec.hidden.push_back(static_cast<size_t>(h));
        m.spec.head = c.get_str("head") == "margin" ? Head::margin : Head::logits;
        m.spec.num_classes = static_cast<int>(c.get_i64("num_classes"));
        m.spec.loss = loss_from_string(c.get_str("loss"));
        validate(m.spec);
        m.build_layout();
        m.params = c.get_f64_array("params");
        require(m.params.size() == m.total_params_, ErrorCategory::schema,
                "model params size does not match architecture");
        return m;
    }

private:
    struct Layer {
        size_t in, out, w_off, b_off;
    };

    void build_layout() {
        layers_.clear();
        size_t prev = spec.in_dim, off = 0;
        std::vector<size_t> widths = spec.hidden;
        widths.push_back(spec.out_dim());
        for (size_t w : widths) {
            Layer L{prev, w, off, off + prev * w};
            off += prev * w + w;
            layers_.push_back(L);
            prev = w;
        }
        total_params_ = off;
    }

    std::vector<double> layer_forward(size_t l, const std::vector<double>& in) const {
        const Layer& L = layers_[l];
        std::vector<double> out(L.out);
        const double* w = params.data() + L.w_off;
        const double* b = params.data() + L.b_off;
        for (size_t r = 0; r < L.out; ++r) out[r] = b[r] + dot(w + r * L.in, in.data(), L.in);
        return out;
    }

    std::vector<Layer> layers_;
    size_t total_params_ = 0;
};

}  // namespace perlearn
