#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>

#include "moedm/env/user_sim.hpp"
#include "moedm/eval/metrics.hpp"
#include "moedm/eval/user_model.hpp"
#include "moedm/rl/dm_policy.hpp"

namespace moedm::eval {

// Model-based candidate scoring: the learned user model replaces the critic's
// Q; the value closure supplies each method's own state value.
inline rl::DMPolicy make_model_based_policy(const moe::MoeModel* model, const UserModel* um,
                                            std::function<double(const Vec&)> value, double gamma,
                                            int horizon, double beta) {
    rl::DMPolicy p;
    p.mode = rl::ScoringMode::model_based;
    p.beta = beta;
    p.scorer = [model, um, value = std::move(value), gamma, horizon](
                   const toy::ConversationHistory& x, const Vec&, const moe::Candidate& c) {
        bool last = x.turn >= horizon - 1;
        return score_model_based(*um, value, model->encode(x.with(c.utt)), gamma, last);
    };
    return p;
}

struct EvalConfig {
    int n_conversations = 100;
    int k_per_expert = 5;
    double candidate_temperature = 0.7;
    int workers = 1;
};

struct EvalRow {
    std::string method;
    std::string mode; // "mf" or "mb"
    double mean_return = 0.0;
    double stderr_return = 0.0;
    int n = 0;
    std::vector<long> expert_counts;
    double kl_uniform = 0.0;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<double> returns; // per-conversation, for reproducibility checks
};

// Shared evaluation machinery for both protocols: candidate generation and
// rollouts are identical, only the injected policy scorer differs.
inline EvalRow evaluate(const moe::MoeModel& model, const rl::DMPolicy& policy,
                        const std::string& method, const std::string& mode,
                        const env::EnvConfig& env_cfg, const toy::Lexicon& lex, const EvalConfig& cfg,
                        std::uint64_t seed) {
    EvalRow row;
    row.method = method;
    row.mode = mode;
    row.n = cfg.n_conversations;
    row.seed = seed;
    row.expert_counts.assign(static_cast<std::size_t>(model.num_experts()), 0);
    row.returns.assign(static_cast<std::size_t>(cfg.n_conversations), 0.0);

    std::vector<std::vector<long>> counts(static_cast<std::size_t>(cfg.n_conversations));
    parallel_for(static_cast<std::size_t>(cfg.n_conversations), cfg.workers, [&](std::size_t ep) {
        nk::Rng rng = nk::Rng::stream(seed, ep);
        env::Policy turn_policy = [&](const toy::ConversationHistory& x, nk::Rng& r) {
            auto candidates = moe::gen_candidates(model, x, cfg.k_per_expert, cfg.candidate_temperature, r);
            Vec z = model.encode(x);
            auto sel = rl::select_action(policy, x, z, candidates, r);
            const auto& chosen = candidates[static_cast<std::size_t>(sel.index)];
            return env::AgentChoice{chosen.utt, chosen.expert};
        };
        auto res = env::rollout(turn_policy, env_cfg, lex, rng, model.num_experts());
        row.returns[ep] = res.ret;
        counts[ep] = res.expert_counts;
    });

    double mean = 0.0;
    for (double r : row.returns) mean += r;
    mean /= row.n;
    double var = 0.0;
    for (double r : row.returns) var += (r - mean) * (r - mean);
    var = row.n > 1 ? var / (row.n - 1) : 0.0;
    row.mean_return = mean;
    row.stderr_return = std::sqrt(var) / std::sqrt(static_cast<double>(row.n));
    for (const auto& c : counts)
        for (std::size_t i = 0; i < c.size(); ++i) row.expert_counts[i] += c[i];
    row.kl_uniform = expert_histogram_kl(row.expert_counts).kl_uniform;
    return row;
}

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

// CSV body shaped like the result tables: one row per method x mode.
inline void write_report_csv(const std::string& path, std::span<const EvalRow> rows,
                             const std::string& config_hash, const std::string& revision) {
    std::ofstream out(path);
    MOEDM_REQUIRE(out.good(), "cannot open report file: " + path);
    out << "# config_hash=" << config_hash << " revision=" << revision << "\n";
    out << "method,mode,mean_return,stderr,n,kl_uniform,seed\n";
    for (const auto& r : rows)
        out << r.method << "," << r.mode << "," << fmt_double(r.mean_return) << ","
            << fmt_double(r.stderr_return) << "," << r.n << "," << fmt_double(r.kl_uniform) << ","
            << r.seed << "\n";
}

inline nlohmann::json report_to_json(std::span<const EvalRow> rows, const std::string& config_hash,
                                     const std::string& revision) {
    nlohmann::json jrows = nlohmann::json::array();
    for (const auto& r : rows) {
        auto hist = expert_histogram_kl(r.expert_counts);
        jrows.push_back({{"method", r.method},
                         {"mode", r.mode},
                         {"mean_return", r.mean_return},
                         {"stderr", r.stderr_return},
                         {"n", r.n},
                         {"expert_counts", r.expert_counts},
                         {"expert_freq", hist.freq},
                         {"kl_uniform", hist.kl_uniform},
                         {"seed", r.seed}});
    }
    return {{"format", "moedm-report-v1"},
            {"config_hash", config_hash},
            {"revision", revision},
            {"rows", jrows}};
}

// Synthesizes the best-of-first-experiment row: a per-column max over the
// general offline RL methods, one value per mode.
inline std::vector<EvalRow> with_best_of_experiment_one(std::span<const EvalRow> rows) {
    std::vector<EvalRow> out(rows.begin(), rows.end());
    for (const std::string& mode : {std::string("mf"), std::string("mb")}) {
        EvalRow best;
        best.method = "exp1*";
        best.mode = mode;
        bool found = false;
        for (const auto& r : rows) {
            if (r.mode != mode) continue;
            if (r.method != "iql" && r.method != "sac" && r.method != "ensq" && r.method != "klc")
                continue;
            if (!found || r.mean_return > best.mean_return) {
                best.mean_return = r.mean_return;
                best.stderr_return = r.stderr_return;
                best.n = r.n;
                best.expert_counts = r.expert_counts;
                best.kl_uniform = r.kl_uniform;
                best.seed = r.seed;
                found = true;
            }
        }
        if (found) out.push_back(best);
    }
    return out;
}

} // namespace moedm::eval
