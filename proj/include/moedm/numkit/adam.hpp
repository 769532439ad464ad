#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "moedm/numkit/net.hpp"

namespace moedm::nk {

// Named view over one parameter array and its gradient buffer.
struct ParamRef {
    std::string name;
    Vec* value = nullptr;
    Vec* grad = nullptr;
};

inline void collect_params(DenseNet& net, NetGrads& grads, const std::string& prefix,
                           std::vector<ParamRef>& out) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        out.push_back({prefix + ".w" + std::to_string(i), &net.layers[i].w.a, &grads.layers[i].w.a});
        out.push_back({prefix + ".b" + std::to_string(i), &net.layers[i].b, &grads.layers[i].b});
    }
}

// Adam with bias correction. One instance owns the moments for a fixed group
// of parameter arrays; the step counter covers the whole group.
struct Adam {
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long t = 0;

    std::vector<Vec> m, v;

    void step(const std::vector<ParamRef>& refs) {
        if (m.empty()) {
            for (const auto& r : refs) {
                m.emplace_back(r.value->size(), 0.0);
                v.emplace_back(r.value->size(), 0.0);
            }
        }
        MOEDM_REQUIRE(m.size() == refs.size(), "opt_step: parameter group changed shape");
        ++t;
        double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < refs.size(); ++i) {
            Vec& p = *refs[i].value;
            const Vec& g = *refs[i].grad;
            MOEDM_REQUIRE(p.size() == g.size() && p.size() == m[i].size(),
                          "opt_step: shape mismatch in " + refs[i].name);
            for (std::size_t k = 0; k < p.size(); ++k) {
                if (!std::isfinite(g[k]))
                    throw training_error("non-finite gradient in " + refs[i].name);
                m[i][k] = beta1 * m[i][k] + (1.0 - beta1) * g[k];
                v[i][k] = beta2 * v[i][k] + (1.0 - beta2) * g[k] * g[k];
                double mh = m[i][k] / c1;
                double vh = v[i][k] / c2;
                p[k] -= lr * mh / (std::sqrt(vh) + eps);
            }
        }
    }
};

// target <- (1 - rho) * target + rho * online
inline void polyak_update(DenseNet& target, const DenseNet& online, double rho) {
    MOEDM_REQUIRE(target.layers.size() == online.layers.size(), "polyak: net shape mismatch");
    for (std::size_t li = 0; li < target.layers.size(); ++li) {
        auto& tw = target.layers[li].w.a;
        const auto& ow = online.layers[li].w.a;
        for (std::size_t k = 0; k < tw.size(); ++k) tw[k] = (1.0 - rho) * tw[k] + rho * ow[k];
        auto& tb = target.layers[li].b;
        const auto& ob = online.layers[li].b;
        for (std::size_t k = 0; k < tb.size(); ++k) tb[k] = (1.0 - rho) * tb[k] + rho * ob[k];
    }
}

} // namespace moedm::nk
