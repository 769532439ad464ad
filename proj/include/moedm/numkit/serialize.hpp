#pragma once

#include <json.hpp>

#include "moedm/numkit/gaussian.hpp"
#include "moedm/numkit/net.hpp"

namespace moedm::nk {

using json = nlohmann::json;

inline constexpr const char* kNetFormat = "numkit-v1";

inline json net_to_json(const DenseNet& net) {
    json layers = json::array();
    for (const auto& l : net.layers) {
        layers.push_back({{"in", l.in()},
                          {"out", l.out()},
                          {"act", act_name(l.act)},
                          {"w", pack_doubles(l.w.a)},
                          {"b", pack_doubles(l.b)}});
    }
    return {{"format", kNetFormat}, {"layers", layers}};
}

inline DenseNet net_from_json(const json& j) {
    MOEDM_REQUIRE(j.at("format").get<std::string>() == kNetFormat, "checkpoint: unexpected net format tag");
    DenseNet net;
    for (const auto& lj : j.at("layers")) {
        Layer l;
        int in = lj.at("in").get<int>();
        int out = lj.at("out").get<int>();
        l.w = Mat(out, in);
        l.w.a = unpack_doubles(lj.at("w").get<std::string>());
        l.b = unpack_doubles(lj.at("b").get<std::string>());
        MOEDM_REQUIRE(static_cast<int>(l.w.a.size()) == in * out && static_cast<int>(l.b.size()) == out,
                      "checkpoint: layer payload size mismatch");
        l.act = act_from_name(lj.at("act").get<std::string>());
        net.layers.push_back(std::move(l));
    }
    MOEDM_REQUIRE(!net.layers.empty(), "checkpoint: empty net");
    return net;
}

inline json mat_to_json(const Mat& m) {
    return {{"rows", m.rows}, {"cols", m.cols}, {"data", pack_doubles(m.a)}};
}

inline Mat mat_from_json(const json& j) {
    Mat m(j.at("rows").get<int>(), j.at("cols").get<int>());
    m.a = unpack_doubles(j.at("data").get<std::string>());
    MOEDM_REQUIRE(static_cast<int>(m.a.size()) == m.rows * m.cols, "checkpoint: matrix payload size mismatch");
    return m;
}

inline json head_to_json(const GaussianHead& h) {
    return {{"mu", net_to_json(h.mu_net)}, {"sigma", net_to_json(h.sigma_net)}};
}

inline GaussianHead head_from_json(const json& j) {
    GaussianHead h;
    h.mu_net = net_from_json(j.at("mu"));
    h.sigma_net = net_from_json(j.at("sigma"));
    return h;
}

inline std::uint64_t net_hash(const DenseNet& net) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& l : net.layers) {
        h = fnv1a(l.w.a.data(), l.w.a.size() * sizeof(double), h);
        h = fnv1a(l.b.data(), l.b.size() * sizeof(double), h);
    }
    return h;
}

} // namespace moedm::nk
