#pragma once

#include <fstream>
#include <map>
#include <sstream>

#include "moedm/env/user_sim.hpp"
#include "moedm/moe/model.hpp"

namespace moedm {

inline constexpr const char* kRevision = "moedm-0.1.0";

// Flat key-value view of a sectioned plain-text config file:
//   [section]
//   key = value
// Values are numbers, booleans or bare/quoted strings.
struct ConfigFile {
    std::map<std::string, std::string> values; // "section.key" -> raw value

    static ConfigFile parse(std::istream& in) {
        ConfigFile cfg;
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto trim = [](std::string s) {
                auto b = s.find_first_not_of(" \t\r");
                auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                MOEDM_REQUIRE(line.back() == ']', "config line " + std::to_string(lineno) + ": unterminated section");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            auto eq = line.find('=');
            MOEDM_REQUIRE(eq != std::string::npos, "config line " + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
                value = value.substr(1, value.size() - 2);
            cfg.values[section.empty() ? key : section + "." + key] = value;
        }
        return cfg;
    }

    static ConfigFile parse_file(const std::string& path) {
        std::ifstream in(path);
        MOEDM_REQUIRE(in.good(), "config file not found: " + path);
        return parse(in);
    }

    bool has(const std::string& key) const { return values.count(key) > 0; }

    double number(const std::string& key, double fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        try {
            return std::stod(it->second);
        } catch (...) {
            throw contract_error("config key " + key + ": not a number: " + it->second);
        }
    }

    int integer(const std::string& key, int fallback) const {
        return static_cast<int>(number(key, fallback));
    }

    bool boolean(const std::string& key, bool fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        if (it->second == "true") return true;
        if (it->second == "false") return false;
        throw contract_error("config key " + key + ": not a boolean: " + it->second);
    }

    std::string text(const std::string& key, const std::string& fallback) const {
        auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }
};

struct ExperimentConfig {
    std::uint64_t seed = 7;

    moe::ModelConfig model; // latent_dim 16, hidden 64, 10 experts

    // corpus + primitive warm start
    int corpus_conversations = 400;
    int primitive_steps = 2500;
    int primitive_batch = 32;
    double kappa_kl = 0.1;
    double lr = 2e-3;

    // expert construction
    int expert_steps = 1200;
    int expert_batch = 8;
    int expert_samples = 4;
    double expert_temperature = 0.7;

    // offline collection
    int collect_episodes = 2000;
    double behavior_temperature = 1.0;
    double behavior_persistence = 0.0;
    double augment_temperature = 0.7;

    // offline RL
    int rl_steps = 4000;
    int rl_batch = 256;
    double gamma = 0.8;
    double tau = 0.9;
    double alpha = 0.1;
    double polyak = 0.005;
    int dropout_masks = 5;
    double dropout_rate = 0.5;
    int critic_hidden = 128;
    int critic_depth = 3;
    bool teacher_forcing = true;
    bool lr_decay = false;
    int attribution_samples = 0; // 0 = deterministic mean-latent probes

    // evaluation
    int n_eval = 100;
    int k_per_expert = 5;
    double beta = 20.0;
    double candidate_temperature = 0.7;
    int user_model_steps = 3000;

    int workers = 1;

    env::EnvConfig env;
    std::string lexicon_path;

    static ExperimentConfig from_file(const ConfigFile& f) {
        ExperimentConfig c;
        c.seed = static_cast<std::uint64_t>(f.number("seed", 7));
        c.workers = f.integer("workers", 1);

        c.model.latent_dim = f.integer("model.latent_dim", c.model.latent_dim);
        c.model.emb_dim = f.integer("model.emb_dim", c.model.emb_dim);
        c.model.hidden = f.integer("model.hidden", c.model.hidden);
        c.model.depth = f.integer("model.depth", c.model.depth);
        c.model.num_experts = f.integer("model.num_experts", c.model.num_experts);

        c.corpus_conversations = f.integer("corpus.conversations", c.corpus_conversations);
        c.primitive_steps = f.integer("train.primitive_steps", c.primitive_steps);
        c.primitive_batch = f.integer("train.primitive_batch", c.primitive_batch);
        c.kappa_kl = f.number("train.kappa_kl", c.kappa_kl);
        c.lr = f.number("train.lr", c.lr);
        c.expert_steps = f.integer("train.expert_steps", c.expert_steps);
        c.expert_batch = f.integer("train.expert_batch", c.expert_batch);
        c.expert_samples = f.integer("train.expert_samples", c.expert_samples);
        c.expert_temperature = f.number("train.expert_temperature", c.expert_temperature);

        c.collect_episodes = f.integer("collect.episodes", c.collect_episodes);
        c.behavior_temperature = f.number("collect.temperature", c.behavior_temperature);
        c.behavior_persistence = f.number("collect.persistence", c.behavior_persistence);
        c.augment_temperature = f.number("collect.augment_temperature", c.augment_temperature);

        c.rl_steps = f.integer("rl.steps", c.rl_steps);
        c.rl_batch = f.integer("rl.batch", c.rl_batch);
        c.gamma = f.number("rl.gamma", c.gamma);
        c.tau = f.number("rl.tau", c.tau);
        c.alpha = f.number("rl.alpha", c.alpha);
        c.polyak = f.number("rl.polyak", c.polyak);
        c.dropout_masks = f.integer("rl.dropout_masks", c.dropout_masks);
        c.dropout_rate = f.number("rl.dropout_rate", c.dropout_rate);
        c.critic_hidden = f.integer("rl.critic_hidden", c.critic_hidden);
        c.critic_depth = f.integer("rl.critic_depth", c.critic_depth);
        c.teacher_forcing = f.boolean("rl.teacher_forcing", c.teacher_forcing);
        c.lr_decay = f.boolean("rl.lr_decay", c.lr_decay);
        c.attribution_samples = f.integer("rl.attribution_samples", c.attribution_samples);

        c.n_eval = f.integer("eval.n_conversations", c.n_eval);
        c.k_per_expert = f.integer("eval.k_per_expert", c.k_per_expert);
        c.beta = f.number("eval.beta", c.beta);
        c.candidate_temperature = f.number("eval.candidate_temperature", c.candidate_temperature);
        c.user_model_steps = f.integer("eval.user_model_steps", c.user_model_steps);

        c.env.horizon = f.integer("env.horizon", c.env.horizon);
        c.env.gamma = f.number("env.gamma", c.env.gamma);
        c.gamma = c.env.gamma; // one discount for environment and trainers
        c.gamma = f.number("rl.gamma", c.gamma);
        c.env.noise = f.number("env.noise", c.env.noise);
        c.env.exact_bands = f.boolean("env.exact_bands", c.env.exact_bands);
        c.env.init_mood_mean = f.number("env.init_mood_mean", c.env.init_mood_mean);
        c.env.init_mood_sd = f.number("env.init_mood_sd", c.env.init_mood_sd);
        c.env.warmth_threshold = f.number("env.warmth_threshold", c.env.warmth_threshold);
        c.env.warmth_bonus = f.number("env.warmth_bonus", c.env.warmth_bonus);
        c.env.reply_cap = f.number("env.reply_cap", c.env.reply_cap);
        std::string table_path = f.text("env.table_path", "");
        if (!table_path.empty()) {
            std::ifstream in(table_path);
            MOEDM_REQUIRE(in.good(), "transition table file not found: " + table_path);
            nlohmann::json j;
            in >> j;
            c.env.table = env::table_from_json(j);
        }
        c.lexicon_path = f.text("lexicon_path", "");
        return c;
    }

    // Canonical dump that the hash and the reproducibility checks key on.
    std::string canonical() const {
        std::ostringstream os;
        os << "seed=" << seed << ";d=" << model.latent_dim << ";emb=" << model.emb_dim
           << ";hidden=" << model.hidden << ";depth=" << model.depth << ";experts=" << model.num_experts
           << ";conversations=" << corpus_conversations << ";psteps=" << primitive_steps
           << ";pbatch=" << primitive_batch << ";kappa=" << kappa_kl << ";lr=" << lr
           << ";esteps=" << expert_steps << ";ebatch=" << expert_batch << ";esamples=" << expert_samples
           << ";etemp=" << expert_temperature << ";episodes=" << collect_episodes
           << ";btemp=" << behavior_temperature << ";bpersist=" << behavior_persistence << ";augtemp=" << augment_temperature
           << ";rlsteps=" << rl_steps << ";rlbatch=" << rl_batch << ";gamma=" << gamma << ";tau=" << tau
           << ";alpha=" << alpha << ";polyak=" << polyak << ";masks=" << dropout_masks
           << ";drop=" << dropout_rate << ";chidden=" << critic_hidden << ";cdepth=" << critic_depth
           << ";tf=" << teacher_forcing << ";lrdecay=" << lr_decay << ";asamples=" << attribution_samples << ";neval=" << n_eval
           << ";k=" << k_per_expert << ";beta=" << beta << ";ctemp=" << candidate_temperature
           << ";umsteps=" << user_model_steps << ";horizon=" << env.horizon << ";envgamma=" << env.gamma
           << ";noise=" << env.noise << ";exact=" << env.exact_bands << ";mood0=" << env.init_mood_mean
           << ";moodsd=" << env.init_mood_sd << ";warmth=" << env.warmth_threshold << "/"
           << env.warmth_bonus << ";cap=" << env.reply_cap;
        return os.str();
    }

    std::string hash() const { return hex64(fnv1a(canonical())); }
};

} // namespace moedm
