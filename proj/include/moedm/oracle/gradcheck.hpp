#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "moedm/numkit/adam.hpp"

namespace moedm::oracle {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
};

// Central finite differences against analytic gradients. `loss` must be a pure
// re-evaluation (no RNG advance) so the two probes see the same function.
// Relative error is floored at scale 1 so near-zero gradients compare absolutely.
inline GradCheckResult grad_check(const std::function<double()>& loss,
                                  const std::vector<nk::ParamRef>& refs, double h = 1e-5) {
    GradCheckResult res;
    for (const auto& r : refs) {
        for (std::size_t k = 0; k < r.value->size(); ++k) {
            double saved = (*r.value)[k];
            (*r.value)[k] = saved + h;
            double up = loss();
            (*r.value)[k] = saved - h;
            double down = loss();
            (*r.value)[k] = saved;
            double fd = (up - down) / (2.0 * h);
            double an = (*r.grad)[k];
            double err = std::fabs(fd - an) / std::max({1.0, std::fabs(fd), std::fabs(an)});
            if (err > res.max_rel_err) {
                res.max_rel_err = err;
                res.worst_param = r.name;
                res.worst_index = k;
            }
        }
    }
    return res;
}

// Finite-difference gradient of a scalar function of a vector.
inline nk::Vec fd_grad(const std::function<double(const nk::Vec&)>& f, nk::Vec x, double h = 1e-5) {
    nk::Vec g(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        double saved = x[k];
        x[k] = saved + h;
        double up = f(x);
        x[k] = saved - h;
        double down = f(x);
        x[k] = saved;
        g[k] = (up - down) / (2.0 * h);
    }
    return g;
}

} // namespace moedm::oracle
