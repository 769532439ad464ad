#pragma once

#include <cmath>
#include <numbers>

#include "moedm/numkit/adam.hpp"
#include "moedm/numkit/net.hpp"
#include "moedm/numkit/rng.hpp"

namespace moedm::nk {

inline constexpr double kSigmaMin = 1e-3;
inline constexpr double kSigmaMax = 5.0;

// sigma = sigma_min + softplus(raw), capped at sigma_max (zero slope past the cap).
inline double sigma_from_raw(double raw) {
    double sp = raw > 30.0 ? raw : std::log1p(std::exp(raw));
    double s = kSigmaMin + sp;
    return s > kSigmaMax ? kSigmaMax : s;
}

inline double sigma_raw_deriv(double raw) {
    double s = kSigmaMin + (raw > 30.0 ? raw : std::log1p(std::exp(raw)));
    if (s > kSigmaMax) return 0.0;
    return 1.0 / (1.0 + std::exp(-raw));
}

struct DiagGaussian {
    Vec mu;
    Vec sigma;

    int dim() const { return static_cast<int>(mu.size()); }
};

inline double gauss_logpdf(const DiagGaussian& g, std::span<const double> x) {
    MOEDM_REQUIRE(x.size() == g.mu.size(), "gauss_logpdf: dim mismatch");
    constexpr double half_log_2pi = 0.9189385332046727;
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        double d = (x[k] - g.mu[k]) / g.sigma[k];
        s += -half_log_2pi - std::log(g.sigma[k]) - 0.5 * d * d;
    }
    return s;
}

// d logpdf / d mu and d logpdf / d sigma.
inline void gauss_logpdf_grad(const DiagGaussian& g, std::span<const double> x, Vec& dmu, Vec& dsigma) {
    dmu.assign(g.mu.size(), 0.0);
    dsigma.assign(g.mu.size(), 0.0);
    for (std::size_t k = 0; k < g.mu.size(); ++k) {
        double d = x[k] - g.mu[k];
        double s2 = g.sigma[k] * g.sigma[k];
        dmu[k] = d / s2;
        dsigma[k] = d * d / (s2 * g.sigma[k]) - 1.0 / g.sigma[k];
    }
}

// KL(p || q) for diagonal Gaussians, closed form.
inline double gauss_kl(const DiagGaussian& p, const DiagGaussian& q) {
    MOEDM_REQUIRE(p.mu.size() == q.mu.size(), "gauss_kl: dim mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < p.mu.size(); ++k) {
        double d = p.mu[k] - q.mu[k];
        double vp = p.sigma[k] * p.sigma[k];
        double vq = q.sigma[k] * q.sigma[k];
        s += std::log(q.sigma[k] / p.sigma[k]) + (vp + d * d) / (2.0 * vq) - 0.5;
    }
    return s < 0.0 ? 0.0 : s;
}

struct GaussKlGrads {
    Vec dmu_p, dsigma_p, dmu_q, dsigma_q;
};

inline GaussKlGrads gauss_kl_grad(const DiagGaussian& p, const DiagGaussian& q) {
    GaussKlGrads g;
    std::size_t n = p.mu.size();
    g.dmu_p.assign(n, 0.0);
    g.dsigma_p.assign(n, 0.0);
    g.dmu_q.assign(n, 0.0);
    g.dsigma_q.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double d = p.mu[k] - q.mu[k];
        double vq = q.sigma[k] * q.sigma[k];
        g.dmu_p[k] = d / vq;
        g.dmu_q[k] = -d / vq;
        g.dsigma_p[k] = p.sigma[k] / vq - 1.0 / p.sigma[k];
        g.dsigma_q[k] = 1.0 / q.sigma[k] - (p.sigma[k] * p.sigma[k] + d * d) / (vq * q.sigma[k]);
    }
    return g;
}

// Pathwise sample: z = mu + sigma * eps. Holding eps, dz/dmu = I and
// dz/dsigma = diag(eps), which is how gradients reach the head nets.
struct ReparamSample {
    Vec z;
    Vec eps;
};

inline ReparamSample reparam_sample(const DiagGaussian& g, Rng& rng) {
    ReparamSample s;
    s.eps.resize(g.mu.size());
    s.z.resize(g.mu.size());
    for (std::size_t k = 0; k < g.mu.size(); ++k) {
        // at the clamp floor the distribution degenerates to its mean
        s.eps[k] = g.sigma[k] <= kSigmaMin + 1e-12 ? 0.0 : rng.normal();
        s.z[k] = g.mu[k] + g.sigma[k] * s.eps[k];
    }
    return s;
}

// Two nets mapping a conditioning vector to (mu, raw sigma). The latent
// experts, the posterior and the RL actor all share this shape.
struct GaussianHead {
    DenseNet mu_net;
    DenseNet sigma_net;

    struct Cache {
        DenseNet::Cache mu, sigma;
        Vec raw;
    };

    DiagGaussian operator()(std::span<const double> x) const {
        DiagGaussian g;
        g.mu = mu_net.forward(x);
        Vec raw = sigma_net.forward(x);
        g.sigma.resize(raw.size());
        for (std::size_t k = 0; k < raw.size(); ++k) g.sigma[k] = sigma_from_raw(raw[k]);
        return g;
    }

    DiagGaussian forward(std::span<const double> x, Cache& cache) const {
        DiagGaussian g;
        g.mu = mu_net.forward(x, cache.mu);
        cache.raw = sigma_net.forward(x, cache.sigma);
        g.sigma.resize(cache.raw.size());
        for (std::size_t k = 0; k < cache.raw.size(); ++k) g.sigma[k] = sigma_from_raw(cache.raw[k]);
        return g;
    }

    struct Grads {
        NetGrads mu, sigma;

        void zero() {
            mu.zero();
            sigma.zero();
        }
    };

    // Pulls (dL/dmu, dL/dsigma) back through both nets; returns dL/dx.
    Vec backward(const Cache& cache, std::span<const double> dmu, std::span<const double> dsigma,
                 Grads& grads) const {
        Vec dx = mu_net.backward(cache.mu, Vec(dmu.begin(), dmu.end()), grads.mu);
        Vec draw(dsigma.size());
        for (std::size_t k = 0; k < dsigma.size(); ++k)
            draw[k] = dsigma[k] * sigma_raw_deriv(cache.raw[k]);
        Vec dx2 = sigma_net.backward(cache.sigma, std::move(draw), grads.sigma);
        for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += dx2[k];
        return dx;
    }

    Grads make_grads() const { return {mu_net.make_grads(), sigma_net.make_grads()}; }

    void collect(Grads& grads, const std::string& prefix, std::vector<ParamRef>& out) {
        collect_params(mu_net, grads.mu, prefix + ".mu", out);
        collect_params(sigma_net, grads.sigma, prefix + ".sigma", out);
    }
};

inline GaussianHead make_gaussian_head(int in, int hidden, int depth, int out, Rng& rng) {
    GaussianHead h;
    h.mu_net = make_mlp(in, hidden, depth, out, Act::tanh_, rng);
    h.sigma_net = make_mlp(in, hidden, depth, out, Act::tanh_, rng);
    return h;
}

} // namespace moedm::nk
