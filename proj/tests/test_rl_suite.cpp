#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "moedm/oracle/expectile.hpp"
#include "moedm/oracle/gradcheck.hpp"
#include "moedm/rl/dm_policy.hpp"

using namespace moedm;
using data::LatentTransition;
using nk::Vec;

namespace {

Vec onehot(int i, int n) {
    Vec v(static_cast<std::size_t>(n), 0.0);
    v[static_cast<std::size_t>(i)] = 1.0;
    return v;
}

LatentTransition make_tr(Vec z, Vec z_a, double r, Vec z_next, bool terminal = false) {
    LatentTransition t;
    t.z = std::move(z);
    t.z_a = std::move(z_a);
    t.r = r;
    t.z_next = std::move(z_next);
    t.terminal = terminal;
    return t;
}

std::vector<const LatentTransition*> all_of(const std::vector<LatentTransition>& data) {
    std::vector<const LatentTransition*> out;
    for (const auto& t : data) out.push_back(&t);
    return out;
}

// Plant exact values into a linear critic head: net(x) = w . x.
void plant_linear(nk::DenseNet& net, const Vec& w, double b = 0.0) {
    auto& l = net.layers[0];
    std::copy(w.begin(), w.end(), l.w.a.begin());
    l.b[0] = b;
}

} // namespace

TEST_CASE("expectile_loss: pinned values and the tau=0.5 identity") {
    CHECK(rl::expectile_loss(0.0, 0.3) == doctest::Approx(0.0));
    CHECK(rl::expectile_loss(2.0, 0.5) == doctest::Approx(2.0));
    CHECK(rl::expectile_loss(-1.5, 0.9) == doctest::Approx(0.1 * 2.25));

    nk::Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        double u = rng.uniform(-3.0, 3.0);
        CHECK(rl::expectile_loss(u, 0.5) == doctest::Approx(0.5 * u * u).epsilon(1e-12));
    }
}

TEST_CASE("expectile_loss: gradient-descent minimizer agrees with the bisection oracle") {
    std::vector<double> q{1.0, 2.0, 4.0};
    double v = 2.0;
    for (int it = 0; it < 60000; ++it) {
        double g = 0.0;
        for (double x : q) g += -rl::expectile_loss_grad(x - v, 0.9);
        v -= 1e-3 * g;
    }
    CHECK(v == doctest::Approx(oracle::expectile_bisect(q, 0.9)).epsilon(1e-5));
}

TEST_CASE("q_step: gamma zero with a pre-fit critic leaves everything in place") {
    nk::Rng rng(5);
    auto c = rl::CriticSet::make_linear(3, false, rng);
    // Q(z_a) = r by construction: z_a = onehot(s), rewards planted as weights
    Vec rewards{0.3, -0.2, 0.7};
    plant_linear(c.q1, rewards);
    auto before = c.q1.layers[0].w.a;

    std::vector<LatentTransition> data;
    for (int s = 0; s < 3; ++s)
        data.push_back(make_tr(onehot(s, 3), onehot(s, 3), rewards[static_cast<std::size_t>(s)],
                               onehot((s + 1) % 3, 3)));
    auto batch = all_of(data);
    double loss = rl::q_step(c, batch, 0.0, rng);
    CHECK(loss == doctest::Approx(0.0));
    CHECK(c.q1.layers[0].w.a == before);
}

TEST_CASE("q_step: converges to r + gamma * V_tar on one-hot features") {
    nk::Rng rng(7);
    auto c = rl::CriticSet::make_linear(3, false, rng);
    Vec v_tar_vals{0.5, -1.0, 2.0};
    plant_linear(c.v_tar, v_tar_vals);
    plant_linear(c.v, v_tar_vals); // hold V fixed; only q_step runs

    std::vector<LatentTransition> data;
    Vec rewards{0.2, 0.0, -0.4};
    for (int s = 0; s < 3; ++s)
        data.push_back(make_tr(onehot(s, 3), onehot(s, 3), rewards[static_cast<std::size_t>(s)],
                               onehot((s + 1) % 3, 3)));
    auto batch = all_of(data);
    for (int it = 0; it < 5000; ++it) rl::q_step(c, batch, 0.8, rng);
    for (int s = 0; s < 3; ++s) {
        double want = rewards[static_cast<std::size_t>(s)] + 0.8 * v_tar_vals[static_cast<std::size_t>((s + 1) % 3)];
        CHECK(c.q1.forward(onehot(s, 3))[0] == doctest::Approx(want).epsilon(1e-3));
    }
}

TEST_CASE("q_step: terminal transitions regress to the reward alone") {
    nk::Rng rng(9);
    auto c = rl::CriticSet::make_linear(2, false, rng);
    plant_linear(c.v_tar, Vec{100.0, 100.0}); // must be ignored on terminals
    std::vector<LatentTransition> data{make_tr(onehot(0, 2), onehot(0, 2), 0.6, onehot(1, 2), true)};
    auto batch = all_of(data);
    for (int it = 0; it < 4000; ++it) rl::q_step(c, batch, 0.8, rng);
    CHECK(c.q1.forward(onehot(0, 2))[0] == doctest::Approx(0.6).epsilon(1e-3));
}

TEST_CASE("iql_v_step: tau=0.5 is half the plain squared error, batch for batch") {
    nk::Rng rng(11);
    auto c = rl::CriticSet::make_linear(4, false, rng);
    std::vector<LatentTransition> data;
    for (int i = 0; i < 32; ++i) {
        Vec z(4), za(4);
        for (auto& x : z) x = rng.normal();
        for (auto& x : za) x = rng.normal();
        data.push_back(make_tr(z, za, rng.uniform(-1.0, 1.0), z));
    }
    auto batch = all_of(data);

    // plain squared error, computed independently before the step mutates V
    double plain = 0.0;
    for (const auto* tr : batch) {
        double u = c.q1_tar.forward(tr->z_a)[0] - c.v.forward(tr->z)[0];
        plain += u * u / static_cast<double>(batch.size());
    }
    double loss = rl::iql_v_step(c, batch, 0.5, rng);
    CHECK(loss == doctest::Approx(0.5 * plain).epsilon(1e-9));
}

TEST_CASE("iql_v_step: tau=0.5 converges to the mean target Q per state") {
    nk::Rng rng(13);
    auto c = rl::CriticSet::make_linear(2, false, rng);
    // state 0 visited with two different actions whose target Qs are +-1
    plant_linear(c.q1_tar, Vec{1.0, -1.0});
    std::vector<LatentTransition> data{make_tr(onehot(0, 2), onehot(0, 2), 0.0, onehot(0, 2)),
                                       make_tr(onehot(0, 2), onehot(1, 2), 0.0, onehot(0, 2))};
    auto batch = all_of(data);
    for (int it = 0; it < 6000; ++it) rl::iql_v_step(c, batch, 0.5, rng);
    CHECK(c.v.forward(onehot(0, 2))[0] == doctest::Approx(0.0).epsilon(1e-3));
}

TEST_CASE("saiql_v_step: degenerate candidates reproduce iql_v_step exactly") {
    nk::Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        auto ca = rl::CriticSet::make_linear(4, false, rng);
        auto cb = ca; // identical critics, separate optimizers
        std::vector<LatentTransition> data;
        for (int i = 0; i < 16; ++i) {
            Vec z(4), za(4);
            for (auto& x : z) x = rng.normal();
            for (auto& x : za) x = rng.normal();
            auto tr = make_tr(z, za, rng.uniform(-1.0, 1.0), z);
            tr.candidates.assign(10, tr.z_a); // every expert "proposes" the logged action
            data.push_back(std::move(tr));
        }
        auto batch = all_of(data);
        nk::Rng ra(100 + static_cast<std::uint64_t>(trial)), rb(100 + static_cast<std::uint64_t>(trial));
        double la = rl::iql_v_step(ca, batch, 0.7, ra);
        double lb = rl::saiql_v_step(cb, batch, 0.7, rb);
        CHECK(la == doctest::Approx(lb).epsilon(1e-9));
        for (std::size_t k = 0; k < ca.v.layers[0].w.a.size(); ++k)
            CHECK(ca.v.layers[0].w.a[k] == doctest::Approx(cb.v.layers[0].w.a[k]).epsilon(1e-9));
    }
}

TEST_CASE("saiql_v_step: V converges to the tau-expectile of the candidate targets") {
    nk::Rng rng(19);
    auto c = rl::CriticSet::make_linear(3, false, rng);
    plant_linear(c.q1_tar, Vec{1.0, 2.0, 4.0});
    auto tr = make_tr(onehot(0, 3), onehot(0, 3), 0.0, onehot(0, 3));
    tr.candidates = {onehot(0, 3), onehot(1, 3), onehot(2, 3)}; // target Qs {1, 2, 4}
    std::vector<LatentTransition> data{tr};
    auto batch = all_of(data);
    double tau = 0.9;
    for (int it = 0; it < 20000; ++it) rl::saiql_v_step(c, batch, tau, rng);
    double want = oracle::expectile_bisect(std::vector<double>{1.0, 2.0, 4.0}, tau);
    CHECK(c.v.forward(onehot(0, 3))[0] == doctest::Approx(want).epsilon(1e-3));
}

TEST_CASE("sac_v_step: zero temperature regresses V onto the target Q at logged actions") {
    nk::Rng rng(23);
    auto c = rl::CriticSet::make_linear(2, false, rng);
    c.alpha = 0.0;
    plant_linear(c.q1_tar, Vec{0.8, -0.3});
    auto g0 = nk::make_gaussian_head(2, 4, 1, 2, rng);
    auto policy = rl::LatentPolicy::from_head(g0);
    std::vector<LatentTransition> data{make_tr(onehot(0, 2), onehot(0, 2), 0.0, onehot(0, 2)),
                                       make_tr(onehot(1, 2), onehot(1, 2), 0.0, onehot(1, 2))};
    auto batch = all_of(data);
    rl::SacContext ctx; // teacher forcing on
    for (int it = 0; it < 6000; ++it) rl::sac_v_step(c, policy, g0, ctx, batch, rng);
    CHECK(c.v.forward(onehot(0, 2))[0] == doctest::Approx(0.8).epsilon(1e-3));
    CHECK(c.v.forward(onehot(1, 2))[0] == doctest::Approx(-0.3).epsilon(1e-3));
}

TEST_CASE("entropy regularizer: KL mode vanishes when the policy equals the primitive") {
    nk::Rng rng(29);
    auto g0 = nk::make_gaussian_head(3, 4, 1, 3, rng);
    Vec z{0.1, -0.2, 0.4};
    auto g = g0(z);
    auto sample = nk::reparam_sample(g, rng);
    CHECK(rl::entropy_regularizer(g, g0(z), sample.z, rl::EntropyMode::kl) == doctest::Approx(0.0));
    CHECK(rl::entropy_regularizer(g, g0(z), sample.z, rl::EntropyMode::shannon) ==
          doctest::Approx(gauss_logpdf(g, sample.z)));
}

TEST_CASE("sac_actor_step: matches the hand-derived pathwise gradient for a linear critic") {
    nk::Rng rng(31);
    int d = 3;
    auto c = rl::CriticSet::make_linear(d, false, rng);
    Vec w{0.7, -1.2, 0.4};
    plant_linear(c.q1, w);
    c.alpha = 0.0;

    auto g0 = nk::make_gaussian_head(d, 4, 1, d, rng);
    // single-layer heads: the mu bias gradient is the accumulated d mu
    rl::LatentPolicy policy;
    {
        nk::Rng r(32);
        policy.head.mu_net = nk::make_net({d, d}, {nk::Act::identity}, r);
        policy.head.sigma_net = nk::make_net({d, d}, {nk::Act::identity}, r);
        policy.grads = policy.head.make_grads();
    }
    std::vector<LatentTransition> data{make_tr(Vec{0.2, 0.1, -0.3}, Vec{0.0, 0.0, 0.0}, 0.0, Vec{0.0, 0.0, 0.0})};
    auto batch = all_of(data);
    rl::SacContext ctx;
    nk::Rng step_rng(77);
    rl::sac_actor_step(c, policy, g0, ctx, batch, step_rng);
    // maximizing E[w . z'] gives dL/dmu = -w exactly, independent of the draw
    for (int k = 0; k < d; ++k)
        CHECK(policy.grads.mu.layers[0].b[static_cast<std::size_t>(k)] ==
              doctest::Approx(-w[static_cast<std::size_t>(k)]).epsilon(1e-10));
}

TEST_CASE("sac_actor_step: gradients match finite differences in both entropy modes") {
    for (auto mode : {rl::EntropyMode::shannon, rl::EntropyMode::kl}) {
        nk::Rng rng(41);
        int d = 2;
        auto c = rl::CriticSet::make(d, 6, 1, false, 0, rng);
        c.alpha = 0.3;
        auto g0 = nk::make_gaussian_head(d, 4, 1, d, rng);
        auto policy = rl::LatentPolicy::from_head(nk::make_gaussian_head(d, 4, 1, d, rng));

        std::vector<LatentTransition> data{make_tr(Vec{0.3, -0.1}, Vec{0.0, 0.0}, 0.0, Vec{0.0, 0.0}),
                                           make_tr(Vec{-0.5, 0.2}, Vec{0.0, 0.0}, 0.0, Vec{0.0, 0.0})};
        auto batch = all_of(data);
        rl::SacContext ctx;
        ctx.mode = mode;

        // pure re-evaluation with the same draws, for the finite differences
        auto loss_eval = [&] {
            nk::Rng r(123);
            double loss = 0.0;
            for (const auto* tr : batch) {
                auto g = policy.head(tr->z);
                auto s = nk::reparam_sample(g, r);
                double qv = c.q1.forward(s.z)[0];
                double reg = rl::entropy_regularizer(g, g0(tr->z), s.z, mode);
                loss += -(qv - c.alpha * reg) / static_cast<double>(batch.size());
            }
            return loss;
        };

        policy.grads.zero();
        // replicate the gradient accumulation of the step without the optimizer
        {
            nk::Rng r(123);
            double scale = 1.0 / static_cast<double>(batch.size());
            nk::NetGrads scratch = c.q1.make_grads();
            for (const auto* tr : batch) {
                nk::GaussianHead::Cache cache;
                auto g = policy.head.forward(tr->z, cache);
                auto s = nk::reparam_sample(g, r);
                auto g0_here = g0(tr->z);
                nk::DenseNet::Cache qc;
                c.q1.forward(s.z, qc);
                Vec dz = c.q1.backward(qc, Vec{-scale}, scratch);
                Vec dmu_g, dsigma_g, dmu0, dsigma0;
                nk::gauss_logpdf_grad(g, s.z, dmu_g, dsigma_g);
                Vec dxg(static_cast<std::size_t>(d));
                for (int k = 0; k < d; ++k) dxg[static_cast<std::size_t>(k)] = -dmu_g[static_cast<std::size_t>(k)];
                if (mode == rl::EntropyMode::kl) {
                    nk::gauss_logpdf_grad(g0_here, s.z, dmu0, dsigma0);
                    for (int k = 0; k < d; ++k) dxg[static_cast<std::size_t>(k)] += dmu0[static_cast<std::size_t>(k)];
                }
                for (int k = 0; k < d; ++k)
                    dz[static_cast<std::size_t>(k)] += scale * c.alpha * dxg[static_cast<std::size_t>(k)];
                Vec dmu(static_cast<std::size_t>(d)), dsigma(static_cast<std::size_t>(d));
                for (int k = 0; k < d; ++k) {
                    auto ks = static_cast<std::size_t>(k);
                    dmu[ks] = dz[ks] + scale * c.alpha * dmu_g[ks];
                    dsigma[ks] = dz[ks] * s.eps[ks] + scale * c.alpha * dsigma_g[ks];
                }
                policy.head.backward(cache, dmu, dsigma, policy.grads);
            }
        }
        auto res = oracle::grad_check(loss_eval, policy.params(), 1e-6);
        INFO("mode ", static_cast<int>(mode), " worst ", res.worst_param);
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("assign_expert: degenerate and tie cases") {
    nk::Rng rng(43);
    moe::ModelConfig cfg;
    cfg.emb_dim = 4;
    cfg.latent_dim = 3;
    cfg.hidden = 8;
    cfg.num_experts = 1;
    auto solo = moe::make_model(cfg, rng);
    toy::Utterance y;
    y.ids = {3, 4, toy::kEos};
    CHECK(rl::assign_expert(solo, Vec{0.1, 0.2, 0.3}, y) == 0);

    cfg.num_experts = 4;
    auto m = moe::make_model(cfg, rng);
    m.experts[2].head = m.experts[1].head; // duplicates: index 2 must never win
    for (int i = 0; i < 20; ++i) {
        Vec z{rng.normal(), rng.normal(), rng.normal()};
        auto u = moe::decode_sample(m.decoder, m.encoder.embed, z, 1.0, rng).utt;
        CHECK(rl::assign_expert(m, z, u) != 2);
    }
}

TEST_CASE("ftle_step: V gradients touch only the attributed head") {
    nk::Rng rng(47);
    auto mh = rl::MultiHeadCritic::make(3, 0, 0, 4, rng); // linear, heads = rows
    std::vector<LatentTransition> data;
    for (int i = 0; i < 6; ++i) {
        Vec z(3), za(3);
        for (auto& x : z) x = rng.normal();
        for (auto& x : za) x = rng.normal();
        data.push_back(make_tr(z, za, rng.uniform(-1.0, 1.0), z));
    }
    auto batch = all_of(data);
    std::vector<int> attribution(batch.size(), 2);
    rl::ftle_step(mh, batch, attribution, 0.8);
    for (int head = 0; head < 4; ++head) {
        auto row = mh.gv.layers[0].w.row(head);
        bool nonzero = false;
        for (double g : row) nonzero |= g != 0.0;
        CHECK(nonzero == (head == 2));
    }
}

TEST_CASE("ftle_step: gamma zero drives every Q head to the reward") {
    nk::Rng rng(53);
    auto mh = rl::MultiHeadCritic::make(2, 0, 0, 3, rng);
    std::vector<LatentTransition> data{make_tr(onehot(0, 2), onehot(0, 2), 0.5, onehot(1, 2)),
                                       make_tr(onehot(1, 2), onehot(1, 2), -0.7, onehot(0, 2))};
    auto batch = all_of(data);
    std::vector<int> attribution{0, 1};
    for (int it = 0; it < 6000; ++it) rl::ftle_step(mh, batch, attribution, 0.0);
    for (int head = 0; head < 3; ++head) {
        CHECK(mh.q.forward(onehot(0, 2))[static_cast<std::size_t>(head)] == doctest::Approx(0.5).epsilon(1e-2));
        CHECK(mh.q.forward(onehot(1, 2))[static_cast<std::size_t>(head)] == doctest::Approx(-0.7).epsilon(1e-2));
    }
}

TEST_CASE("moevrl_step: gamma zero regresses the attributed head to the reward") {
    nk::Rng rng(59);
    auto evf = rl::ExpertValueFn::make(2, 0, 0, 3, rng);
    std::vector<LatentTransition> data{make_tr(onehot(0, 2), onehot(0, 2), 0.9, onehot(1, 2))};
    auto batch = all_of(data);
    std::vector<int> attribution{1};
    for (int it = 0; it < 5000; ++it) rl::moevrl_step(evf, batch, attribution, 0.0);
    CHECK(evf.lambda.forward(onehot(0, 2))[1] == doctest::Approx(0.9).epsilon(1e-3));
}

TEST_CASE("moevrl_step: single head reduces to TD(0) policy evaluation") {
    // two-state chain under the only expert: fixed point V(s) = r(s) + g V(s')
    nk::Rng rng(61);
    auto evf = rl::ExpertValueFn::make(2, 0, 0, 1, rng);
    std::vector<LatentTransition> data{make_tr(onehot(0, 2), onehot(0, 2), 0.2, onehot(1, 2)),
                                       make_tr(onehot(1, 2), onehot(1, 2), 1.0, onehot(1, 2))};
    auto batch = all_of(data);
    std::vector<int> attribution{0, 0};
    for (int it = 0; it < 30000; ++it) {
        rl::moevrl_step(evf, batch, attribution, 0.8);
        evf.polyak_step();
    }
    // oracle: V(s1) = 1 / (1 - 0.8), V(s0) = 0.2 + 0.8 * V(s1)
    CHECK(evf.lambda.forward(onehot(1, 2))[0] == doctest::Approx(5.0).epsilon(2e-2));
    CHECK(evf.lambda.forward(onehot(0, 2))[0] == doctest::Approx(4.2).epsilon(2e-2));
}

TEST_CASE("bc_step: recovers the latent a peaked decoder prefers") {
    // micro model, d = 1: the decoder's likelihood of "A <eos>" peaks at z = 0.7
    const double c_peak = 0.7;
    nk::Rng rng(67);
    moe::ModelConfig cfg;
    cfg.vocab = 4; // pad, sos, eos, A
    cfg.emb_dim = 1;
    cfg.latent_dim = 1;
    cfg.hidden = 4;
    cfg.num_experts = 1;
    auto m = moe::make_model(cfg, rng);
    m.encoder.embed(toy::kSos, 0) = 0.0;
    m.encoder.embed(toy::kEos, 0) = 1.0;
    m.encoder.embed(3, 0) = 1.0;
    {
        nk::Rng r(68);
        m.decoder.net = nk::make_net({2, 3, 4}, {nk::Act::tanh_, nk::Act::identity}, r);
        auto& l1 = m.decoder.net.layers[0];
        l1.w.zero();
        std::fill(l1.b.begin(), l1.b.end(), 0.0);
        l1.w(0, 0) = 4.0;
        l1.b[0] = 4.0 * (0.5 - c_peak); // bump edge above the peak
        l1.w(1, 0) = 4.0;
        l1.b[1] = 4.0 * (-0.5 - c_peak); // bump edge below
        l1.w(2, 1) = 20.0;
        l1.b[2] = -5.0; // prefix flag: -1 at <sos>, +1 after any token
        auto& l2 = m.decoder.net.layers[1];
        l2.w.zero();
        std::fill(l2.b.begin(), l2.b.end(), 0.0);
        l2.w(3, 0) = 3.0;
        l2.w(3, 1) = -3.0; // logit_A = 3 * bump(z) at the first step
        l2.w(3, 2) = -8.0;
        l2.b[3] = -8.0; // and buried once the prefix is non-empty
        l2.w(toy::kEos, 2) = 4.0;
        l2.b[toy::kEos] = 4.0; // eos: level with A at step one, certain after
    }

    rl::LatentPolicy policy;
    {
        nk::Rng r(69);
        policy.head.mu_net = nk::make_net({1, 1}, {nk::Act::identity}, r);
        policy.head.sigma_net = nk::make_net({1, 1}, {nk::Act::identity}, r);
        policy.head.mu_net.layers[0].w.zero();
        policy.head.mu_net.layers[0].b[0] = 0.0;
        policy.head.sigma_net.layers[0].w.zero();
        policy.head.sigma_net.layers[0].b[0] = -1.0;
        policy.grads = policy.head.make_grads();
        policy.opt.lr = 1e-2;
    }

    toy::Utterance logged;
    logged.ids = {3, toy::kEos};
    std::vector<LatentTransition> data;
    auto tr = make_tr(Vec{0.0}, Vec{0.0}, 0.0, Vec{0.0});
    tr.action = logged;
    data.push_back(tr);
    auto batch = all_of(data);

    for (int it = 0; it < 2500; ++it) rl::bc_step(policy, m, batch, rng);
    double mu = policy.head(Vec{0.0}).mu[0];
    CHECK(std::fabs(mu - c_peak) < 0.05);
}

TEST_CASE("bandit_step: identical to q_step at gamma zero") {
    nk::Rng rng(71);
    auto ca = rl::CriticSet::make_linear(3, false, rng);
    auto cb = ca;
    std::vector<LatentTransition> data;
    for (int i = 0; i < 8; ++i) {
        Vec z(3), za(3);
        for (auto& x : z) x = rng.normal();
        for (auto& x : za) x = rng.normal();
        data.push_back(make_tr(z, za, rng.uniform(-1.0, 1.0), z));
    }
    auto batch = all_of(data);
    nk::Rng r1(7), r2(7);
    CHECK(rl::bandit_step(ca, batch, r1) == doctest::Approx(rl::q_step(cb, batch, 0.0, r2)).epsilon(1e-12));
    CHECK(ca.q1.layers[0].w.a == cb.q1.layers[0].w.a);
}

TEST_CASE("select_action: analytic softmax cases") {
    moe::Candidate a, b;
    rl::DMPolicy p;
    p.beta = 1.0;
    std::vector<double> scores;
    p.scorer = [&scores](const toy::ConversationHistory&, const Vec&, const moe::Candidate& c) {
        return scores[static_cast<std::size_t>(c.expert)];
    };
    a.expert = 0;
    b.expert = 1;
    std::vector<moe::Candidate> cands{a, b};
    toy::ConversationHistory x;
    Vec z;

    scores = {0.4, 0.4};
    nk::Rng rng(73);
    auto sel = rl::select_action(p, x, z, cands, rng);
    CHECK(sel.probs[0] == doctest::Approx(0.5));
    CHECK(sel.probs[1] == doctest::Approx(0.5));

    scores = {0.0, std::log(2.0)};
    sel = rl::select_action(p, x, z, cands, rng);
    CHECK(sel.probs[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(sel.probs[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    p.beta = 1e6;
    scores = {0.1, 0.2};
    sel = rl::select_action(p, x, z, cands, rng);
    CHECK(sel.probs[1] >= 1.0 - 1e-6);
}

TEST_CASE("select_action: shift invariance and beta-rescaling of the argmax") {
    nk::Rng rng(79);
    std::vector<double> base(12);
    for (auto& s : base) s = rng.uniform(-2.0, 2.0);
    auto p1 = rl::softmax(base, 7.0);
    auto shifted = base;
    for (auto& s : shifted) s += 123.456;
    auto p2 = rl::softmax(shifted, 7.0);
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-12));

    auto argmax = [](const std::vector<double>& v) {
        return std::distance(v.begin(), std::max_element(v.begin(), v.end()));
    };
    CHECK(argmax(rl::softmax(base, 1.0)) == argmax(rl::softmax(base, 250.0)));
}

TEST_CASE("target networks: the polyak contract holds exactly") {
    nk::Rng rng(83);
    auto c = rl::CriticSet::make(3, 8, 2, true, 0, rng);
    c.polyak = 0.005;
    // push the online nets away from the targets
    for (auto& v : c.q1.layers[0].w.a) v += 0.3;
    for (auto& v : c.v.layers[0].w.a) v -= 0.1;

    auto gap_before = [&](const nk::DenseNet& tar, const nk::DenseNet& online) {
        double s = 0.0;
        for (std::size_t li = 0; li < tar.layers.size(); ++li)
            for (std::size_t k = 0; k < tar.layers[li].w.a.size(); ++k) {
                double d = tar.layers[li].w.a[k] - online.layers[li].w.a[k];
                s += d * d;
            }
        return std::sqrt(s);
    };
    double before_q = gap_before(c.q1_tar, c.q1);
    double before_v = gap_before(c.v_tar, c.v);
    c.polyak_step();
    CHECK(gap_before(c.q1_tar, c.q1) == doctest::Approx((1.0 - 0.005) * before_q).epsilon(1e-9));
    CHECK(gap_before(c.v_tar, c.v) == doctest::Approx((1.0 - 0.005) * before_v).epsilon(1e-9));
}

TEST_CASE("dual pair: bootstrapped targets use the elementwise min") {
    nk::Rng rng(89);
    auto c = rl::CriticSet::make(3, 8, 1, true, 0, rng);
    Vec z{0.3, -0.2, 0.5};
    double got = c.q_target_eval(z, rng);
    CHECK(got == doctest::Approx(std::min(c.last_dual_q1, c.last_dual_q2)));
    CHECK(c.last_dual_q1 == doctest::Approx(c.q1_tar.forward(z)[0]));
    CHECK(c.last_dual_q2 == doctest::Approx(c.q2_tar.forward(z)[0]));
}

TEST_CASE("dropout ensemble: masked target never exceeds the clean evaluation mean") {
    nk::Rng rng(97);
    auto c = rl::CriticSet::make(4, 16, 2, false, 5, rng);
    Vec z{0.1, 0.4, -0.2, 0.3};
    // min over masks is at most the average of masked evaluations
    nk::Rng r2(5);
    double min_val = c.q_target_eval(z, r2);
    nk::Rng r3(5);
    double mean = 0.0;
    for (int k = 0; k < 5; ++k) mean += c.q1_tar.forward_dropout(z, 0.5, r3)[0] / 5.0;
    CHECK(min_val <= mean + 1e-12);
}

TEST_CASE("trainers are deterministic given seed and data") {
    nk::Rng mk(101);
    std::vector<LatentTransition> data;
    for (int i = 0; i < 64; ++i) {
        Vec z(4), za(4), zn(4);
        for (auto& x : z) x = mk.normal();
        for (auto& x : za) x = mk.normal();
        for (auto& x : zn) x = mk.normal();
        data.push_back(make_tr(z, za, mk.uniform(-1.0, 1.0), zn, i % 5 == 4));
    }
    auto run = [&] {
        nk::Rng rng(7);
        nk::Rng crng(8);
        auto c = rl::CriticSet::make(4, 16, 2, false, 3, crng);
        std::vector<double> losses;
        for (int it = 0; it < 50; ++it) {
            auto batch = rl::sample_batch(data, 16, rng);
            losses.push_back(rl::q_step(c, batch, 0.8, rng));
            losses.push_back(rl::iql_v_step(c, batch, 0.9, rng));
            c.polyak_step();
        }
        return losses;
    };
    CHECK(run() == run());
}

TEST_CASE("wiring table: mirrors the reference feature matrix") {
    auto j = rl::wiring_table_json();
    CHECK(j.at("format") == "moedm-wiring-v1");
    const auto& rows = j.at("rows");
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].at("method") == "iql");
    CHECK(rows[0].at("multiple_q") == false);
    CHECK(rows[0].at("dropout_q") == true);
    CHECK(rows[3].at("method") == "klc");
    CHECK(rows[3].at("target_v") == false);
    CHECK(rows[1].at("behavior_reg") == true); // sac row
}
