// Command-line front end for the dialogue-management lab: corpus generation,
// MoE warm start, offline data collection, the RL trainers, the two
// evaluation protocols, report aggregation and the oracle verification suite.
//
// Exit codes: 0 success, 2 verification failure, 3 missing prerequisite,
// 4 configuration error.

#include <CLI11.hpp>

#include <chrono>
#include <iostream>

#include "moedm/pipeline.hpp"

using namespace moedm;

namespace {

constexpr int kExitVerify = 2;
constexpr int kExitMissing = 3;
constexpr int kExitConfig = 4;

struct MissingPrerequisite : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Ctx {
    ExperimentConfig cfg;
    pipeline::RunPaths paths;
    toy::Lexicon lexicon;
    bool force = false;

    std::ofstream log_stream;

    void log(const std::string& msg) {
        if (!log_stream.is_open()) {
            paths.ensure();
            log_stream.open(paths.log(), std::ios::app);
        }
        auto now = std::chrono::system_clock::now().time_since_epoch();
        log_stream << std::chrono::duration_cast<std::chrono::milliseconds>(now).count() << " " << msg
                   << "\n";
        std::cout << msg << "\n";
    }
};

nlohmann::json load_json(const std::filesystem::path& path, const std::string& producer) {
    std::ifstream in(path);
    if (!in.good())
        throw MissingPrerequisite("missing " + path.string() + "; run `moedm " + producer + "` first");
    nlohmann::json j;
    in >> j;
    return j;
}

void check_hash(const Ctx& ctx, const std::string& found, const std::string& what) {
    if (found == ctx.cfg.hash() || ctx.force) return;
    throw contract_error(what + " was produced under config " + found + " but the current config is " +
                         ctx.cfg.hash() + "; rerun upstream stages or pass --force");
}

moe::MoeModel load_model(Ctx& ctx) {
    auto j = load_json(ctx.paths.model(), "train-primitive");
    check_hash(ctx, j.at("config_hash").get<std::string>(), "model checkpoint");
    return moe::model_from_json(j.at("model"));
}

void save_model(Ctx& ctx, const moe::MoeModel& model) {
    std::ofstream out(ctx.paths.model());
    out << nlohmann::json{{"config_hash", ctx.cfg.hash()},
                          {"revision", kRevision},
                          {"seed", ctx.cfg.seed},
                          {"model", moe::model_to_json(model)}}
               .dump();
}

data::Dataset load_dataset(Ctx& ctx, bool augmented) {
    auto path = ctx.paths.dataset(augmented);
    if (!std::filesystem::exists(path))
        throw MissingPrerequisite("missing " + path.string() + "; run `moedm collect` first");
    auto ds = data::read_dataset(path.string());
    check_hash(ctx, ds.header.config_hash, "dataset");
    return ds;
}

eval::UserModel load_or_train_user_model(Ctx& ctx, const moe::MoeModel& model) {
    if (std::filesystem::exists(ctx.paths.user_model())) {
        auto j = load_json(ctx.paths.user_model(), "evaluate");
        check_hash(ctx, j.at("config_hash").get<std::string>(), "user model");
        eval::UserModel um;
        um.reward_head = nk::net_from_json(j.at("reward_head"));
        um.next_head = nk::net_from_json(j.at("next_head"));
        um.gr = um.reward_head.make_grads();
        um.gn = um.next_head.make_grads();
        return um;
    }
    auto ds = load_dataset(ctx, false);
    auto um = pipeline::train_user_model(model, ds.transitions, ctx.cfg, ctx.cfg.seed);
    std::ofstream out(ctx.paths.user_model());
    out << nlohmann::json{{"config_hash", ctx.cfg.hash()},
                          {"revision", kRevision},
                          {"reward_head", nk::net_to_json(um.reward_head)},
                          {"next_head", nk::net_to_json(um.next_head)}}
               .dump();
    return um;
}

int cmd_gen_data(Ctx& ctx) {
    ctx.paths.ensure();
    auto corpus = pipeline::gen_corpus(ctx.cfg, ctx.lexicon);
    pipeline::write_corpus(ctx.paths.corpus().string(), corpus, ctx.cfg.hash(), ctx.cfg.seed);
    ctx.log("gen-data: wrote " + std::to_string(corpus.size()) + " conversations to " +
            ctx.paths.corpus().string());
    return 0;
}

int cmd_train_primitive(Ctx& ctx) {
    ctx.paths.ensure();
    if (!std::filesystem::exists(ctx.paths.corpus()))
        throw MissingPrerequisite("missing " + ctx.paths.corpus().string() + "; run `moedm gen-data` first");
    auto corpus = pipeline::read_corpus(ctx.paths.corpus().string());
    check_hash(ctx, corpus.config_hash, "corpus");
    auto pairs = pipeline::corpus_pairs(corpus.conversations);

    nk::Rng init = nk::Rng::stream(ctx.cfg.seed, 0x40de1u);
    auto model = moe::make_model(ctx.cfg.model, init);
    auto curve = pipeline::train_primitive(model, pairs, ctx.cfg);
    pipeline::write_curve(ctx.paths.curve("primitive"), curve, "nll", "kl");
    save_model(ctx, model);
    ctx.log("train-primitive: " + std::to_string(ctx.cfg.primitive_steps) + " steps, final nll " +
            eval::fmt_double(curve.back().a));
    return 0;
}

int cmd_train_experts(Ctx& ctx) {
    auto model = load_model(ctx);
    auto corpus = pipeline::read_corpus(ctx.paths.corpus().string());
    check_hash(ctx, corpus.config_hash, "corpus");
    auto contexts = pipeline::corpus_contexts(corpus.conversations);
    auto curve = pipeline::train_experts(model, contexts, ctx.cfg, ctx.lexicon);
    pipeline::write_curve(ctx.paths.curve("experts"), curve, "mean_label", "baseline");
    save_model(ctx, model);
    ctx.log("train-experts: trained " + std::to_string(model.num_experts() - 1) + " experts");
    return 0;
}

int cmd_collect(Ctx& ctx) {
    auto model = load_model(ctx);
    data::BehaviorSpec spec;
    spec.temperature = ctx.cfg.behavior_temperature;
    spec.persistence = ctx.cfg.behavior_persistence;
    auto episodes = data::collect(model, spec, ctx.cfg.collect_episodes, ctx.cfg.env, ctx.lexicon,
                                  ctx.cfg.seed, ctx.cfg.workers);
    auto transitions = data::encode_dataset(episodes, model, ctx.lexicon, ctx.cfg.env.horizon);

    data::DatasetHeader header;
    header.d = model.latent_dim();
    header.m = model.num_experts() - 1;
    header.phi_hash = hex64(nk::net_hash(model.encoder.net));
    header.config_hash = ctx.cfg.hash();
    header.seed = ctx.cfg.seed;
    header.revision = kRevision;
    data::write_dataset(ctx.paths.dataset(false).string(), header, transitions);

    data::augment(transitions, model, ctx.cfg.augment_temperature, ctx.cfg.seed, ctx.cfg.workers);
    data::write_dataset(ctx.paths.dataset(true).string(), header, transitions);
    ctx.log("collect: " + std::to_string(episodes.size()) + " episodes, " +
            std::to_string(transitions.size()) + " transitions (plain + augmented)");
    return 0;
}

int cmd_train_rl(Ctx& ctx, const std::string& algo) {
    auto method = pipeline::method_from_name(algo);
    auto model = load_model(ctx);
    auto ds = load_dataset(ctx, pipeline::needs_augmented_data(method));
    auto art = pipeline::train_rl(method, model, ds.transitions, ctx.cfg, ctx.cfg.seed);
    pipeline::write_curve(ctx.paths.curve("rl_" + algo), art.curve, "loss_a", "loss_b");
    std::ofstream out(ctx.paths.rl(algo));
    out << pipeline::artifacts_to_json(art, ctx.cfg, ctx.cfg.seed).dump();
    ctx.log("train-rl " + algo + ": " + std::to_string(ctx.cfg.rl_steps) + " steps on " +
            std::to_string(ds.transitions.size()) + " transitions");
    return 0;
}

int cmd_evaluate(Ctx& ctx, const std::string& algo, const std::string& mode) {
    if (mode != "mf" && mode != "mb") throw contract_error("evaluate: mode must be mf or mb");
    auto method = pipeline::method_from_name(algo);
    auto model = load_model(ctx);
    auto rl_json = load_json(ctx.paths.rl(algo), "train-rl --algo " + algo);
    check_hash(ctx, rl_json.at("config_hash").get<std::string>(), "rl checkpoint " + algo);
    auto art = pipeline::artifacts_from_json(rl_json);

    // single-score methods span both result columns and are evaluated once
    bool spans_both = method == pipeline::Method::bc || method == pipeline::Method::bandit;
    std::string row_mode = spans_both ? "both" : mode;

    rl::DMPolicy policy;
    std::optional<eval::UserModel> um; // must outlive the policy closures
    if (!spans_both && mode == "mb") {
        um = load_or_train_user_model(ctx, model);
        policy = pipeline::model_based_policy(model, art, *um, ctx.cfg);
    } else {
        policy = pipeline::model_free_policy(model, art, ctx.cfg.beta, ctx.cfg.attribution_samples);
    }

    eval::EvalConfig ecfg;
    ecfg.n_conversations = ctx.cfg.n_eval;
    ecfg.k_per_expert = ctx.cfg.k_per_expert;
    ecfg.candidate_temperature = ctx.cfg.candidate_temperature;
    ecfg.workers = ctx.cfg.workers;
    auto row = eval::evaluate(model, policy, algo, row_mode, ctx.cfg.env, ctx.lexicon, ecfg, ctx.cfg.seed);
    row.config_hash = ctx.cfg.hash();

    std::ofstream out(ctx.paths.eval_row(algo, row_mode));
    out << eval::report_to_json(std::vector<eval::EvalRow>{row}, ctx.cfg.hash(), kRevision).dump();
    ctx.log("evaluate " + algo + " [" + row_mode + "]: return " + eval::fmt_double(row.mean_return) +
            " +- " + eval::fmt_double(row.stderr_return) + " over " + std::to_string(row.n));
    return 0;
}

int cmd_report(Ctx& ctx) {
    std::vector<eval::EvalRow> rows;
    int expected_m = -1;
    if (!std::filesystem::exists(ctx.paths.reports()))
        throw MissingPrerequisite("no evaluation rows found; run `moedm evaluate` first");
    for (const auto& entry : std::filesystem::directory_iterator(ctx.paths.reports())) {
        auto name = entry.path().filename().string();
        if (name.rfind("eval_", 0) != 0 || entry.path().extension() != ".json") continue;
        auto j = load_json(entry.path(), "evaluate");
        check_hash(ctx, j.at("config_hash").get<std::string>(), name);
        for (const auto& rj : j.at("rows")) {
            eval::EvalRow r;
            r.method = rj.at("method").get<std::string>();
            r.mode = rj.at("mode").get<std::string>();
            r.mean_return = rj.at("mean_return").get<double>();
            r.stderr_return = rj.at("stderr").get<double>();
            r.n = rj.at("n").get<int>();
            r.expert_counts = rj.at("expert_counts").get<std::vector<long>>();
            r.kl_uniform = rj.at("kl_uniform").get<double>();
            r.seed = rj.at("seed").get<std::uint64_t>();
            int m = static_cast<int>(r.expert_counts.size()) - 1;
            if (expected_m < 0) expected_m = m;
            if (m != expected_m)
                throw contract_error("report: refusing to aggregate rows with mismatched expert counts");
            rows.push_back(std::move(r));
        }
    }
    if (rows.empty()) throw MissingPrerequisite("no evaluation rows found; run `moedm evaluate` first");
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        return a.method == b.method ? a.mode < b.mode : a.method < b.method;
    });
    auto with_best = eval::with_best_of_experiment_one(rows);
    eval::write_report_csv(ctx.paths.report_csv().string(), with_best, ctx.cfg.hash(), kRevision);
    std::ofstream out(ctx.paths.report_json());
    out << eval::report_to_json(with_best, ctx.cfg.hash(), kRevision).dump(2);
    ctx.log("report: " + std::to_string(with_best.size()) + " rows -> " + ctx.paths.report_csv().string());
    return 0;
}

int cmd_verify(Ctx& ctx, bool write_fixtures) {
    auto res = pipeline::run_verify(ctx.cfg);
    for (const auto& line : res.lines) std::cout << line << "\n";
    if (write_fixtures) {
        ctx.paths.ensure();
        env::EnvConfig exact = ctx.cfg.env;
        exact.noise = 0.0;
        exact.exact_bands = true;
        auto mdp = oracle::build_tabular(exact);
        auto vi = oracle::value_iteration(mdp);
        std::ofstream out(ctx.paths.fixtures() / "tabular_oracle.json");
        out << nlohmann::json{{"config_hash", ctx.cfg.hash()},
                              {"mdp", oracle::mdp_to_json(mdp)},
                              {"v_star", vi.v},
                              {"policy", vi.policy}}
                   .dump(2);
        std::cout << "fixtures written to " << (ctx.paths.fixtures() / "tabular_oracle.json") << "\n";
    }
    std::cout << (res.failures == 0 ? "verify: all checks passed" : "verify: FAILURES") << "\n";
    return res.failures == 0 ? 0 : kExitVerify;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixture-of-expert dialogue management laboratory"};
    app.require_subcommand(1);

    std::string config_path, run_dir = "runs/default", algo = "iql", mode = "mf";
    bool force = false, write_fixtures = false;
    std::int64_t seed_override = -1;
    int workers_override = 0;

    app.add_option("--config", config_path, "experiment config file (sectioned key = value)");
    app.add_option("--run", run_dir, "run directory (default runs/default)");
    app.add_option("--seed", seed_override, "override the config seed");
    app.add_option("--workers", workers_override, "worker threads for rollouts and encoding");
    app.add_flag("--force", force, "ignore config-hash mismatches between stages");

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic conversation corpus");
    auto* prim = app.add_subcommand("train-primitive", "warm-start the encoder/decoder/posterior");
    auto* experts = app.add_subcommand("train-experts", "build the intent experts on the frozen base");
    auto* collect = app.add_subcommand("collect", "roll the behavior mixture and encode the dataset");
    auto* trainrl = app.add_subcommand("train-rl", "train one offline RL method");
    trainrl->add_option("--algo", algo, "sac|ensq|klc|iql|saiql|ftle|moevrl|bc|bandit")->required();
    auto* evaluate = app.add_subcommand("evaluate", "run the evaluation protocol for one method");
    evaluate->add_option("--algo", algo, "method to evaluate")->required();
    evaluate->add_option("--mode", mode, "mf (critic scores) or mb (learned user model)");
    auto* report = app.add_subcommand("report", "aggregate evaluation rows into the result tables");
    auto* verify = app.add_subcommand("verify", "run the oracle-equivalence suite");
    verify->add_flag("--write-fixtures", write_fixtures, "dump the tabular oracle as a JSON fixture");

    CLI11_PARSE(app, argc, argv);

    Ctx ctx;
    try {
        ConfigFile file;
        if (!config_path.empty()) file = ConfigFile::parse_file(config_path);
        ctx.cfg = ExperimentConfig::from_file(file);
        if (seed_override >= 0) ctx.cfg.seed = static_cast<std::uint64_t>(seed_override);
        if (workers_override > 0) ctx.cfg.workers = workers_override;
        ctx.paths.root = run_dir;
        ctx.force = force;
        ctx.lexicon = toy::load_lexicon(ctx.cfg.lexicon_path);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(ctx);
        if (prim->parsed()) return cmd_train_primitive(ctx);
        if (experts->parsed()) return cmd_train_experts(ctx);
        if (collect->parsed()) return cmd_collect(ctx);
        // the bandit trainer pins its discount to zero internally, whatever
        // the configured gamma says
        if (trainrl->parsed()) return cmd_train_rl(ctx, algo);
        if (evaluate->parsed()) return cmd_evaluate(ctx, algo, mode);
        if (report->parsed()) return cmd_report(ctx);
        if (verify->parsed()) return cmd_verify(ctx, write_fixtures);
    } catch (const MissingPrerequisite& e) {
        std::cerr << "missing prerequisite: " << e.what() << "\n";
        return kExitMissing;
    } catch (const contract_error& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
