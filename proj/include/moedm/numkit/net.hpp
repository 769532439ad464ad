#pragma once

#include <cmath>
#include <string>

#include "moedm/numkit/linalg.hpp"
#include "moedm/numkit/rng.hpp"

namespace moedm::nk {

enum class Act { identity, relu, tanh_ };

inline double apply_act(Act a, double x) {
    switch (a) {
        case Act::identity: return x;
        case Act::relu: return x > 0.0 ? x : 0.0;
        case Act::tanh_: return std::tanh(x);
    }
    return x;
}

// Derivative expressed through the post-activation value.
inline double act_deriv(Act a, double post) {
    switch (a) {
        case Act::identity: return 1.0;
        case Act::relu: return post > 0.0 ? 1.0 : 0.0;
        case Act::tanh_: return 1.0 - post * post;
    }
    return 1.0;
}

inline const char* act_name(Act a) {
    switch (a) {
        case Act::identity: return "identity";
        case Act::relu: return "relu";
        case Act::tanh_: return "tanh";
    }
    return "identity";
}

inline Act act_from_name(const std::string& s) {
    if (s == "relu") return Act::relu;
    if (s == "tanh") return Act::tanh_;
    MOEDM_REQUIRE(s == "identity", "unknown activation tag '" + s + "'");
    return Act::identity;
}

struct Layer {
    Mat w; // out x in
    Vec b;
    Act act = Act::identity;

    int in() const { return w.cols; }
    int out() const { return w.rows; }
};

struct LayerGrads {
    Mat w;
    Vec b;
};

struct NetGrads {
    std::vector<LayerGrads> layers;

    void zero() {
        for (auto& l : layers) {
            l.w.zero();
            std::fill(l.b.begin(), l.b.end(), 0.0);
        }
    }
};

// Plain feed-forward net evaluated sample-by-sample. Backward is the exact
// reverse pass over a cached forward; parameter gradients accumulate so one
// grads buffer can sum over a batch.
struct DenseNet {
    std::vector<Layer> layers;

    int in_dim() const { return layers.front().in(); }
    int out_dim() const { return layers.back().out(); }

    struct Cache {
        Vec input;
        std::vector<Vec> post; // post-activation per layer
    };

    Vec forward(std::span<const double> x) const {
        MOEDM_REQUIRE(static_cast<int>(x.size()) == in_dim(), "forward: input dim mismatch");
        Vec cur(x.begin(), x.end());
        for (const auto& l : layers) {
            Vec next(static_cast<std::size_t>(l.out()));
            for (int r = 0; r < l.out(); ++r)
                next[static_cast<std::size_t>(r)] = apply_act(l.act, dot(l.w.row(r), cur) + l.b[static_cast<std::size_t>(r)]);
            cur = std::move(next);
        }
        return cur;
    }

    Vec forward(std::span<const double> x, Cache& cache) const {
        MOEDM_REQUIRE(static_cast<int>(x.size()) == in_dim(), "forward: input dim mismatch");
        cache.input.assign(x.begin(), x.end());
        cache.post.resize(layers.size());
        const Vec* cur = &cache.input;
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const auto& l = layers[li];
            Vec& next = cache.post[li];
            next.assign(static_cast<std::size_t>(l.out()), 0.0);
            for (int r = 0; r < l.out(); ++r)
                next[static_cast<std::size_t>(r)] = apply_act(l.act, dot(l.w.row(r), *cur) + l.b[static_cast<std::size_t>(r)]);
            cur = &next;
        }
        return cache.post.back();
    }

    // Returns dL/dinput, accumulates dL/dparams into grads.
    Vec backward(const Cache& cache, Vec dout, NetGrads& grads) const {
        MOEDM_REQUIRE(cache.post.size() == layers.size(), "backward: missing forward cache");
        MOEDM_REQUIRE(dout.size() == cache.post.back().size(), "backward: adjoint dim mismatch");
        for (int li = static_cast<int>(layers.size()) - 1; li >= 0; --li) {
            const auto& l = layers[static_cast<std::size_t>(li)];
            auto& g = grads.layers[static_cast<std::size_t>(li)];
            const Vec& in = li == 0 ? cache.input : cache.post[static_cast<std::size_t>(li) - 1];
            const Vec& out = cache.post[static_cast<std::size_t>(li)];
            Vec din(in.size(), 0.0);
            for (int r = 0; r < l.out(); ++r) {
                double d = dout[static_cast<std::size_t>(r)] * act_deriv(l.act, out[static_cast<std::size_t>(r)]);
                if (d == 0.0) continue;
                g.b[static_cast<std::size_t>(r)] += d;
                auto wrow = l.w.row(r);
                auto grow = g.w.row(r);
                for (std::size_t c = 0; c < in.size(); ++c) {
                    grow[c] += d * in[c];
                    din[c] += d * wrow[c];
                }
            }
            dout = std::move(din);
        }
        return dout;
    }

    // Evaluation with one Bernoulli dropout mask over hidden activations
    // (inverted scaling). The output layer is never masked.
    Vec forward_dropout(std::span<const double> x, double rate, Rng& rng) const {
        MOEDM_REQUIRE(static_cast<int>(x.size()) == in_dim(), "forward: input dim mismatch");
        double keep = 1.0 - rate;
        Vec cur(x.begin(), x.end());
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const auto& l = layers[li];
            Vec next(static_cast<std::size_t>(l.out()));
            for (int r = 0; r < l.out(); ++r)
                next[static_cast<std::size_t>(r)] = apply_act(l.act, dot(l.w.row(r), cur) + l.b[static_cast<std::size_t>(r)]);
            if (li + 1 < layers.size() && rate > 0.0) {
                for (auto& v : next) v = rng.uniform() < keep ? v / keep : 0.0;
            }
            cur = std::move(next);
        }
        return cur;
    }

    NetGrads make_grads() const {
        NetGrads g;
        g.layers.reserve(layers.size());
        for (const auto& l : layers)
            g.layers.push_back({Mat(l.out(), l.in()), Vec(static_cast<std::size_t>(l.out()), 0.0)});
        return g;
    }
};

// He/Xavier-style scaled init.
inline DenseNet make_net(const std::vector<int>& dims, const std::vector<Act>& acts, Rng& rng) {
    MOEDM_REQUIRE(dims.size() >= 2 && acts.size() == dims.size() - 1, "make_net: bad shape spec");
    DenseNet net;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Layer l;
        l.w = Mat(dims[i + 1], dims[i]);
        l.b.assign(static_cast<std::size_t>(dims[i + 1]), 0.0);
        l.act = acts[i];
        double scale = std::sqrt(2.0 / (dims[i] + dims[i + 1]));
        for (auto& v : l.w.a) v = scale * rng.normal();
        net.layers.push_back(std::move(l));
    }
    return net;
}

inline DenseNet make_mlp(int in, int hidden, int depth, int out, Act hidden_act, Rng& rng) {
    std::vector<int> dims{in};
    std::vector<Act> acts;
    for (int i = 0; i < depth; ++i) {
        dims.push_back(hidden);
        acts.push_back(hidden_act);
    }
    dims.push_back(out);
    acts.push_back(Act::identity);
    return make_net(dims, acts, rng);
}

} // namespace moedm::nk
