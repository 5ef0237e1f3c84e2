#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "perlearn/common.hpp"

namespace perlearn {

// Row-major dense matrix of doubles. All numerics in this library are f64.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(size_t r, size_t c) { return data[r * cols + c]; }
    double at(size_t r, size_t c) const { return data[r * cols + c]; }
    double* row(size_t r) { return data.data() + r * cols; }
    const double* row(size_t r) const { return data.data() + r * cols; }
};

inline double dot(const double* a, const double* b, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), ErrorCategory::dimension, "dot: size mismatch");
    return dot(a.data(), b.data(), a.size());
}

// y += alpha * x
inline void axpy(double alpha, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y) {
    require(x.size() == y.size(), ErrorCategory::dimension, "axpy: size mismatch");
    axpy(alpha, x.data(), y.data(), x.size());
}

// out = A * x
inline std::vector<double> matvec(const Matrix& a, const std::vector<double>& x) {
    require(a.cols == x.size(), ErrorCategory::dimension, "matvec: shape mismatch");
    std::vector<double> out(a.rows);
    for (size_t r = 0; r < a.rows; ++r) out[r] = dot(a.row(r), x.data(), a.cols);
    return out;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols == b.rows, ErrorCategory::dimension, "matmul: shape mismatch");
    Matrix out(a.rows, b.cols, 0.0);
    for (size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (size_t k = 0; k < a.cols; ++k) {
            double aik = arow[k];
            const double* brow = b.row(k);
            for (size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

inline double norm_l1(const double* v, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += std::fabs(v[i]);
    return s;
}

inline double norm_l2(const double* v, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += v[i] * v[i];
    return std::sqrt(s);
}

inline double norm_linf(const double* v, size_t n) {
    double m = 0.0;
    for (size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(v[i]));
    return m;
}

// Exact zero count; callers that need tolerance-based sparsity must
// threshold before calling.
inline size_t norm_l0(const double* v, size_t n) {
    size_t c = 0;
    for (size_t i = 0; i < n; ++i)
        if (v[i] != 0.0) ++c;
    return c;
}

inline double norm_l1(const std::vector<double>& v) { return norm_l1(v.data(), v.size()); }
inline double norm_l2(const std::vector<double>& v) { return norm_l2(v.data(), v.size()); }
inline double norm_linf(const std::vector<double>& v) { return norm_linf(v.data(), v.size()); }
inline size_t norm_l0(const std::vector<double>& v) { return norm_l0(v.data(), v.size()); }

}  // namespace perlearn
