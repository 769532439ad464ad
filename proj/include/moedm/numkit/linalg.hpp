#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "moedm/util.hpp"

namespace moedm::nk {

using Vec = std::vector<double>;

// Row-major dense matrix.
struct Mat {
    int rows = 0;
    int cols = 0;
    Vec a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

    std::span<double> row(int r) { return {a.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
    std::span<const double> row(int r) const {
        return {a.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }

    void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

inline double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double l2_dist(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double d = x[i] - y[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline double norm2(std::span<const double> x) {
    return std::sqrt(dot(x, x));
}

inline bool all_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

inline Vec concat(std::span<const double> x, std::span<const double> y) {
    Vec out;
    out.reserve(x.size() + y.size());
    out.insert(out.end(), x.begin(), x.end());
    out.insert(out.end(), y.begin(), y.end());
    return out;
}

} // namespace moedm::nk
