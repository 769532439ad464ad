#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "moedm/util.hpp"

namespace moedm::oracle {

// The tau-expectile of a sample is the root of
//   sum_k |tau - 1{x_k < v}| * (x_k - v) = 0,
// which is strictly decreasing in v, so bisection on [min, max] finds it.
inline double expectile_bisect(std::span<const double> xs, double tau, double tol = 1e-10) {
    MOEDM_REQUIRE(!xs.empty(), "expectile_bisect: empty sample");
    MOEDM_REQUIRE(tau > 0.0 && tau < 1.0, "expectile_bisect: tau outside (0,1)");
    auto residual = [&](double v) {
        double s = 0.0;
        for (double x : xs) s += std::fabs(tau - (x < v ? 1.0 : 0.0)) * (x - v);
        return s;
    };
    double lo = *std::min_element(xs.begin(), xs.end());
    double hi = *std::max_element(xs.begin(), xs.end());
    if (hi - lo < tol) return lo;
    for (int it = 0; it < 200 && hi - lo > tol; ++it) {
        double mid = 0.5 * (lo + hi);
        if (residual(mid) > 0.0)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace moedm::oracle
