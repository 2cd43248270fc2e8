#include "gridres/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

namespace gridres {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr const char* kCodeVersion = "gridres 0.1.0";

AttackerKind attacker_kind(PerturberKind p) {
    switch (p) {
        case PerturberKind::None: return AttackerKind::None;
        case PerturberKind::Rpa: return AttackerKind::Rpa;
        case PerturberKind::Gepa: return AttackerKind::Gepa;
        case PerturberKind::Rlpa: return AttackerKind::Rlpa;
    }
    return AttackerKind::None;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

void expect_keys(const json& j, std::initializer_list<const char*> allowed,
                 const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) ok |= (it.key() == k);
        if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
}

PerturberKind parse_perturber(const std::string& s) {
    if (s == "none") return PerturberKind::None;
    if (s == "rpa") return PerturberKind::Rpa;
    if (s == "gepa") return PerturberKind::Gepa;
    if (s == "rlpa") return PerturberKind::Rlpa;
    throw ConfigError("unknown perturber '" + s + "'");
}

std::string perturber_name(PerturberKind p) {
    switch (p) {
        case PerturberKind::None: return "none";
        case PerturberKind::Rpa: return "rpa";
        case PerturberKind::Gepa: return "gepa";
        case PerturberKind::Rlpa: return "rlpa";
    }
    return "none";
}

}  // namespace

CampaignConfig config_from_json(const json& j) {
    expect_keys(j,
                {"grid", "episodes", "max_steps", "seed", "out", "defender", "perturber", "rpa",
                 "gepa", "rlpa", "metrics"},
                "config");
    CampaignConfig c;
    c.grid_path = j.value("grid", c.grid_path);
    c.episodes = j.value("episodes", c.episodes);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out", c.out_dir);
    if (j.contains("defender")) {
        const auto& d = j["defender"];
        expect_keys(d, {"rho_act", "rho_safe"}, "defender");
        c.defender.rho_act = d.value("rho_act", c.defender.rho_act);
        c.defender.rho_safe = d.value("rho_safe", c.defender.rho_safe);
        if (!(0 < c.defender.rho_safe && c.defender.rho_safe < c.defender.rho_act))
            throw ConfigError("defender thresholds must satisfy 0 < rho_safe < rho_act");
    }
    if (j.contains("perturber")) c.perturber = parse_perturber(j["perturber"].get<std::string>());
    if (j.contains("rpa")) {
        const auto& r = j["rpa"];
        expect_keys(r, {"p", "sigma_gen", "sigma_load", "sigma_flow"}, "rpa");
        c.rpa.p = r.value("p", c.rpa.p);
        c.rpa.sigma_gen = r.value("sigma_gen", c.rpa.sigma_gen);
        c.rpa.sigma_load = r.value("sigma_load", c.rpa.sigma_load);
        c.rpa.sigma_flow = r.value("sigma_flow", c.rpa.sigma_flow);
        if (c.rpa.p < 0 || c.rpa.p > 1) throw ConfigError("rpa.p must be in [0,1]");
    }
    if (j.contains("gepa")) {
        const auto& g = j["gepa"];
        expect_keys(g, {"iterations", "step_size", "cap", "h_fd"}, "gepa");
        c.gepa.iterations = g.value("iterations", c.gepa.iterations);
        c.gepa.step_size = g.value("step_size", c.gepa.step_size);
        c.gepa.cap = g.value("cap", c.gepa.cap);
        c.gepa.h_fd = g.value("h_fd", c.gepa.h_fd);
        if (c.gepa.cap <= 0) throw ConfigError("gepa.cap must be > 0");
    }
    if (j.contains("rlpa")) {
        const auto& r = j["rlpa"];
        expect_keys(r,
                    {"q_file", "p_file", "episodes", "max_steps", "alpha", "epsilon", "gamma",
                     "xi", "terminal_bonus", "budget", "top_singles", "pool_size", "eval_epsilon"},
                    "rlpa");
        c.rlpa.q_path = r.value("q_file", c.rlpa.q_path);
        c.rlpa.p_path = r.value("p_file", c.rlpa.p_path);
        c.rlpa.train.episodes = r.value("episodes", c.rlpa.train.episodes);
        c.rlpa.train.max_steps = r.value("max_steps", c.rlpa.train.max_steps);
        c.rlpa.train.alpha = r.value("alpha", c.rlpa.train.alpha);
        c.rlpa.train.epsilon = r.value("epsilon", c.rlpa.train.epsilon);
        c.rlpa.train.gamma = r.value("gamma", c.rlpa.train.gamma);
        c.rlpa.train.xi = r.value("xi", c.rlpa.train.xi);
        c.rlpa.train.terminal_bonus = r.value("terminal_bonus", c.rlpa.train.terminal_bonus);
        c.rlpa.reduction.budget = r.value("budget", c.rlpa.reduction.budget);
        c.rlpa.reduction.top_singles = r.value("top_singles", c.rlpa.reduction.top_singles);
        c.rlpa.pool_size = r.value("pool_size", c.rlpa.pool_size);
        c.rlpa.eval_epsilon = r.value("eval_epsilon", c.rlpa.eval_epsilon);
        if (!(c.rlpa.train.alpha > 0 && c.rlpa.train.alpha <= 1) && c.rlpa.train.alpha != 0)
            throw ConfigError("rlpa.alpha must be in [0,1]");
        if (c.rlpa.train.gamma <= 0 || c.rlpa.train.gamma >= 1)
            throw ConfigError("rlpa.gamma must be in (0,1)");
    }
    if (j.contains("metrics")) {
        const auto& m = j["metrics"];
        expect_keys(m, {"window", "theta_reward", "theta_cosine"}, "metrics");
        c.metrics.window = m.value("window", c.metrics.window);
        c.metrics.theta_reward = m.value("theta_reward", c.metrics.theta_reward);
        c.metrics.theta_cosine = m.value("theta_cosine", c.metrics.theta_cosine);
    }
    if (c.episodes < 1) throw ConfigError("episodes must be >= 1");
    if (c.max_steps < 1) throw ConfigError("max_steps must be >= 1");
    return c;
}

json config_to_json(const CampaignConfig& c) {
    json j;
    j["grid"] = c.grid_path;
    j["episodes"] = c.episodes;
    j["max_steps"] = c.max_steps;
    j["seed"] = c.seed;
    j["out"] = c.out_dir;
    j["defender"] = {{"rho_act", c.defender.rho_act}, {"rho_safe", c.defender.rho_safe}};
    j["perturber"] = perturber_name(c.perturber);
    j["rpa"] = {{"p", c.rpa.p},
                {"sigma_gen", c.rpa.sigma_gen},
                {"sigma_load", c.rpa.sigma_load},
                {"sigma_flow", c.rpa.sigma_flow}};
    j["gepa"] = {{"iterations", c.gepa.iterations},
                 {"step_size", c.gepa.step_size},
                 {"cap", c.gepa.cap},
                 {"h_fd", c.gepa.h_fd}};
    j["rlpa"] = {{"q_file", c.rlpa.q_path},
                 {"p_file", c.rlpa.p_path},
                 {"episodes", c.rlpa.train.episodes},
                 {"max_steps", c.rlpa.train.max_steps},
                 {"alpha", c.rlpa.train.alpha},
                 {"epsilon", c.rlpa.train.epsilon},
                 {"gamma", c.rlpa.train.gamma},
                 {"xi", c.rlpa.train.xi},
                 {"terminal_bonus", c.rlpa.train.terminal_bonus},
                 {"budget", c.rlpa.reduction.budget},
                 {"top_singles", c.rlpa.reduction.top_singles},
                 {"pool_size", c.rlpa.pool_size},
                 {"eval_epsilon", c.rlpa.eval_epsilon}};
    j["metrics"] = {{"window", c.metrics.window},
                    {"theta_reward", c.metrics.theta_reward},
                    {"theta_cosine", c.metrics.theta_cosine}};
    return j;
}

CampaignConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error: " + std::string(e.what()));
    }
    try {
        return config_from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError("config error: " + std::string(e.what()));
    }
}

// ---------------------------------------------------------------------------
// Per-step attackers
// ---------------------------------------------------------------------------

namespace {

class StepAttacker {
  public:
    virtual ~StepAttacker() = default;
    // returns the observation handed to the defender; marks perturbed indices
    virtual Observation perturb(const Observation& obs, const Environment& env,
                                const Defender& defender, std::vector<char>& flags) = 0;
};

class RpaAttacker : public StepAttacker {
  public:
    RpaAttacker(RpaConfig cfg, Rng rng, ObsLayout lay) : cfg_(cfg), rng_(rng), lay_(lay) {}
    Observation perturb(const Observation& obs, const Environment&, const Defender&,
                        std::vector<char>& flags) override {
        return rpa_apply(cfg_, rng_, pp_, obs, lay_, &flags);
    }

  private:
    RpaConfig cfg_;
    Rng rng_;
    ObsLayout lay_;
    std::vector<PerturbationRecord> pp_;
};

class GepaAttacker : public StepAttacker {
  public:
    explicit GepaAttacker(GepaConfig cfg) : cfg_(cfg) {}
    Observation perturb(const Observation& obs, const Environment& env, const Defender& defender,
                        std::vector<char>& flags) override {
        int target = defender.chosen_action_id(obs, env);
        auto L = defender.score_fn(env, target);
        Observation adv;
        adv.values = gepa_attack(cfg_, L, obs.values);
        for (int i = 0; i < adv.values.size(); ++i)
            flags[i] = adv.values[i] != obs.values[i];
        return adv;
    }

  private:
    GepaConfig cfg_;
};

class RlpaAttacker : public StepAttacker {
  public:
    RlpaAttacker(const PerturbSpace& space, const QFunction& q, double xi, double epsilon, Rng rng)
        : space_(space), q_(q), xi_(xi), epsilon_(epsilon), rng_(rng) {}

    Observation perturb(const Observation& obs, const Environment& env, const Defender& defender,
                        std::vector<char>& flags) override {
        int s = attacker_state(env.model(), env.state());
        int idx = rlpa_act(q_, s, epsilon_, static_cast<int>(space_.actions.size()), rng_);
        const PerturbationAction& pa = space_.actions[idx];
        switch (pa.kind) {
            case PerturbationAction::Kind::DoNothing:
                return obs;
            case PerturbationAction::Kind::SetValues: {
                Observation adv = apply_set_values(pa, obs, space_.large_fill);
                for (int i : pa.indices) flags[i] = 1;
                return adv;
            }
            case PerturbationAction::Kind::AdversarialToward: {
                auto L = defender.score_fn(env, pa.target_action);
                Observation adv;
                adv.values = fgsm_attack(xi_, L, obs.values);
                for (int i = 0; i < adv.values.size(); ++i)
                    flags[i] = adv.values[i] != obs.values[i];
                return adv;
            }
        }
        return obs;
    }

  private:
    const PerturbSpace& space_;
    const QFunction& q_;
    double xi_;
    double epsilon_;
    Rng rng_;
};

std::unique_ptr<StepAttacker> make_attacker(const CampaignConfig& cfg, const GridModel& model,
                                            int episode_index, const PerturbSpace* space,
                                            const QFunction* q) {
    switch (cfg.perturber) {
        case PerturberKind::None:
            return nullptr;
        case PerturberKind::Rpa:
            return std::make_unique<RpaAttacker>(
                cfg.rpa, make_rng(cfg.seed, episode_index, "attacker"), ObsLayout::of(model));
        case PerturberKind::Gepa:
            return std::make_unique<GepaAttacker>(cfg.gepa);
        case PerturberKind::Rlpa:
            return std::make_unique<RlpaAttacker>(*space, *q, cfg.rlpa.train.xi,
                                                  cfg.rlpa.eval_epsilon,
                                                  make_rng(cfg.seed, episode_index, "attacker"));
    }
    return nullptr;
}

}  // namespace

// ---------------------------------------------------------------------------
// Paired episode
// ---------------------------------------------------------------------------

EpisodeTrace run_paired_episode(const GridModel& model, const CampaignConfig& cfg,
                                int episode_index, const PerturbSpace* space, const QFunction* q) {
    const int n = model.obs_size();
    Chronics chronics =
        generate_chronics(model, cfg.max_steps + 1, derive_seed(cfg.seed, episode_index, "chronics"));
    Defender defender(cfg.defender);
    EpisodeTrace t;

    // unperturbed member
    {
        Environment env(model, chronics);
        std::vector<Eigen::VectorXd> states;
        for (int k = 0; k < cfg.max_steps; ++k) {
            Observation obs = env.observe();
            Action a = defender.act(obs, env);
            StepResult res = env.step(a);
            t.reward_u.push_back(res.reward);
            t.acted_u.push_back(!a.is_do_nothing());
            t.legal_u.push_back(res.legal);
            states.push_back(res.obs.values);
            if (res.done) break;
        }
        t.state_u.resize(static_cast<int>(states.size()), n);
        for (size_t k = 0; k < states.size(); ++k) t.state_u.row(static_cast<int>(k)) = states[k];
    }

    // perturbed member: same grid, same chronics, independent attacker stream
    {
        Environment env(model, chronics);
        auto attacker = make_attacker(cfg, model, episode_index, space, q);
        std::vector<Eigen::VectorXd> states, deltas;
        for (int k = 0; k < cfg.max_steps; ++k) {
            Observation obs = env.observe();
            std::vector<char> flags(n, 0);
            Observation adv = attacker ? attacker->perturb(obs, env, defender, flags) : obs;
            Action a_adv = defender.act(adv, env);
            Action a_cf = attacker ? defender.act(obs, env) : a_adv;
            StepResult res = env.step(a_adv);
            t.reward_p.push_back(res.reward);
            t.action_adv.push_back(a_adv);
            t.action_cf.push_back(a_cf);
            t.legal_p.push_back(res.legal);
            states.push_back(res.obs.values);
            deltas.push_back(adv.values - obs.values);
            t.perturbed_idx.push_back(flags);
            bool any = std::count(flags.begin(), flags.end(), char(1)) > 0 ||
                       deltas.back().cwiseAbs().maxCoeff() > 0.0;
            if (any && t.h_p < 0) t.h_p = k;
            if (res.done) break;
        }
        t.state_p.resize(static_cast<int>(states.size()), n);
        t.obs_delta.resize(static_cast<int>(deltas.size()), n);
        for (size_t k = 0; k < states.size(); ++k) {
            t.state_p.row(static_cast<int>(k)) = states[k];
            t.obs_delta.row(static_cast<int>(k)) = deltas[k];
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// RLPA training workflow
// ---------------------------------------------------------------------------

namespace {

class GridAttackEnv : public AttackEnv {
  public:
    GridAttackEnv(const GridModel& model, const CampaignConfig& cfg, const PerturbSpace& space)
        : model_(model), cfg_(cfg), space_(space), defender_(cfg.defender) {}

    int reset() override {
        Chronics ch = generate_chronics(model_, cfg_.rlpa.train.max_steps + 1,
                                        derive_seed(cfg_.seed, episode_++, "rlpa-train"));
        env_.emplace(model_, std::move(ch));
        return attacker_state(model_, env_->state());
    }

    Outcome step(int action_index) override {
        const PerturbationAction& pa = space_.actions[action_index];
        Observation obs = env_->observe();
        Observation adv = obs;
        if (pa.kind == PerturbationAction::Kind::SetValues) {
            adv = apply_set_values(pa, obs, space_.large_fill);
        } else if (pa.kind == PerturbationAction::Kind::AdversarialToward) {
            auto L = defender_.score_fn(*env_, pa.target_action);
            adv.values = fgsm_attack(cfg_.rlpa.train.xi, L, obs.values);
        }
        Action a = defender_.act(adv, *env_);
        StepResult res = env_->step(a);
        double reward = -res.reward;
        if (res.done && !res.legal) reward += cfg_.rlpa.train.terminal_bonus;
        return {attacker_state(model_, env_->state()), reward, res.done};
    }

  private:
    const GridModel& model_;
    const CampaignConfig& cfg_;
    const PerturbSpace& space_;
    Defender defender_;
    std::optional<Environment> env_;
    int episode_ = 0;
};

std::pair<PerturbSpace, QFunction> train_rlpa_in_memory(const CampaignConfig& cfg,
                                                        const GridModel& model) {
    Defender defender(cfg.defender);

    // observation pool from an unperturbed rollout
    std::vector<Observation> pool;
    {
        Chronics ch = generate_chronics(model, cfg.max_steps + 1,
                                        derive_seed(cfg.seed, 0, "rlpa-pool"));
        Environment env(model, ch);
        int stride = std::max(1, cfg.max_steps / std::max(1, cfg.rlpa.pool_size));
        for (int k = 0; k < cfg.max_steps; ++k) {
            Observation obs = env.observe();
            if (k % stride == 0 && static_cast<int>(pool.size()) < cfg.rlpa.pool_size)
                pool.push_back(obs);
            StepResult res = env.step(defender.act(obs, env));
            if (res.done) break;
        }
        if (pool.empty()) pool.push_back(env.observe());
    }

    Chronics ch0 = generate_chronics(model, 2, derive_seed(cfg.seed, 0, "rlpa-pool"));
    Environment env0(model, ch0);
    DefenderOracle oracle{
        [&](const Observation& o) { return defender.chosen_action_id(o, env0); },
        [&](const Observation& o, int id) { return defender.action_score(o, env0, id); }};
    PerturbSpace space = reduce_action_space(cfg.rlpa.reduction, pool, oracle, env0.actions());

    GridAttackEnv attack_env(model, cfg, space);
    Rng rng = make_rng(cfg.seed, 0, "rlpa-qlearn");
    QFunction q = rlpa_train(cfg.rlpa.train, attack_env, static_cast<int>(space.actions.size()), rng);
    return {std::move(space), std::move(q)};
}

}  // namespace

void train_rlpa(const CampaignConfig& cfg, const std::string& q_out, const std::string& p_out) {
    GridModel model = load_grid(cfg.grid_path);
    auto [space, q] = train_rlpa_in_memory(cfg, model);
    save_perturb_space(space, p_out);
    q.save(q_out);
}

// ---------------------------------------------------------------------------
// Campaign
// ---------------------------------------------------------------------------

CampaignResult run_campaign(const CampaignConfig& cfg) {
    GridModel model = load_grid(cfg.grid_path);

    PerturbSpace space;
    QFunction q;
    if (cfg.perturber == PerturberKind::Rlpa) {
        if (!cfg.rlpa.q_path.empty() && !cfg.rlpa.p_path.empty()) {
            q = QFunction::load(cfg.rlpa.q_path);
            space = load_perturb_space(cfg.rlpa.p_path);
        } else {
            std::tie(space, q) = train_rlpa_in_memory(cfg, model);
        }
    }

    CampaignResult result;
    result.config = cfg;
    for (int ep = 0; ep < cfg.episodes; ++ep) {
        try {
            result.traces.push_back(run_paired_episode(model, cfg, ep, &space, &q));
        } catch (const std::exception& e) {
            std::cerr << "episode " << ep << " failed: " << e.what() << "\n";
        }
    }
    if (result.traces.empty()) throw std::runtime_error("all episodes failed");
    result.robustness = build_robustness_report(model, result.traces, attacker_kind(cfg.perturber));
    result.resilience = build_resilience_report(result.traces, cfg.metrics);
    return result;
}

// ---------------------------------------------------------------------------
// Trace persistence
// ---------------------------------------------------------------------------

namespace {

json action_to_json(const Action& a) {
    json j;
    j["kind"] = static_cast<int>(a.kind);
    j["substation"] = a.substation;
    j["line"] = a.line;
    j["id"] = a.id;
    json ch = json::array();
    for (const auto& c : a.changes)
        ch.push_back({static_cast<int>(c.attr), c.element, c.target});
    j["changes"] = std::move(ch);
    return j;
}

Action action_from_json(const json& j) {
    Action a;
    a.kind = static_cast<ActionKind>(j.at("kind").get<int>());
    a.substation = j.at("substation").get<int>();
    a.line = j.at("line").get<int>();
    a.id = j.at("id").get<int>();
    for (const auto& c : j.at("changes"))
        a.changes.push_back({static_cast<ElementAttr>(c[0].get<int>()), c[1].get<int>(),
                             c[2].get<int>()});
    return a;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (int r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, int cols) {
    Eigen::MatrixXd m(static_cast<int>(j.size()), cols);
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
    return m;
}

}  // namespace

void save_trace(const EpisodeTrace& t, const std::string& path) {
    json j;
    j["reward_u"] = t.reward_u;
    j["acted_u"] = std::vector<int>(t.acted_u.begin(), t.acted_u.end());
    j["legal_u"] = std::vector<int>(t.legal_u.begin(), t.legal_u.end());
    j["state_u"] = matrix_to_json(t.state_u);
    j["reward_p"] = t.reward_p;
    json cf = json::array(), adv = json::array();
    for (const auto& a : t.action_cf) cf.push_back(action_to_json(a));
    for (const auto& a : t.action_adv) adv.push_back(action_to_json(a));
    j["action_cf"] = std::move(cf);
    j["action_adv"] = std::move(adv);
    j["legal_p"] = std::vector<int>(t.legal_p.begin(), t.legal_p.end());
    j["state_p"] = matrix_to_json(t.state_p);
    j["obs_delta"] = matrix_to_json(t.obs_delta);
    json flags = json::array();
    for (const auto& row : t.perturbed_idx) flags.push_back(std::vector<int>(row.begin(), row.end()));
    j["perturbed_idx"] = std::move(flags);
    j["h_p"] = t.h_p;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write trace: " + path);
    out << j.dump() << "\n";
}

EpisodeTrace load_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace: " + path);
    json j;
    in >> j;
    EpisodeTrace t;
    t.reward_u = j.at("reward_u").get<std::vector<double>>();
    for (int v : j.at("acted_u").get<std::vector<int>>()) t.acted_u.push_back(static_cast<char>(v));
    for (int v : j.at("legal_u").get<std::vector<int>>()) t.legal_u.push_back(static_cast<char>(v));
    t.reward_p = j.at("reward_p").get<std::vector<double>>();
    for (const auto& a : j.at("action_cf")) t.action_cf.push_back(action_from_json(a));
    for (const auto& a : j.at("action_adv")) t.action_adv.push_back(action_from_json(a));
    for (int v : j.at("legal_p").get<std::vector<int>>()) t.legal_p.push_back(static_cast<char>(v));
    int cols = j.at("state_u").empty() ? 0 : static_cast<int>(j.at("state_u")[0].size());
    t.state_u = matrix_from_json(j.at("state_u"), cols);
    t.state_p = matrix_from_json(j.at("state_p"), cols);
    t.obs_delta = matrix_from_json(j.at("obs_delta"), cols);
    for (const auto& row : j.at("perturbed_idx")) {
        std::vector<char> r;
        for (int v : row.get<std::vector<int>>()) r.push_back(static_cast<char>(v));
        t.perturbed_idx.push_back(std::move(r));
    }
    t.h_p = j.at("h_p").get<int>();
    return t;
}

// ---------------------------------------------------------------------------
// Outputs
// ---------------------------------------------------------------------------

namespace {

json opt_to_json(const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
}

json robustness_to_json(const RobustnessReport& r) {
    json j;
    j["episodes"] = r.episodes;
    j["total_reward_delta"] = r.mean_total_reward_delta;
    j["total_reward_unperturbed"] = r.mean_total_reward_u;
    j["total_reward_perturbed"] = r.mean_total_reward_p;
    j["action_changes"] = r.mean_action_changes;
    j["action_changes_per_1000"] = r.action_changes_per_1000;
    j["similarity_per_changed_action"] = opt_to_json(r.similarity_per_changed_action);
    j["episodes_with_changes"] = r.episodes_with_changes;
    j["survival_unperturbed"] = r.mean_survival_u;
    j["survival_perturbed"] = r.mean_survival_p;
    j["reward_per_action_unperturbed"] = opt_to_json(r.reward_per_action_u);
    j["reward_per_action_perturbed"] = opt_to_json(r.reward_per_action_p);
    j["episodes_with_actions_unperturbed"] = r.episodes_with_actions_u;
    j["episodes_with_actions_perturbed"] = r.episodes_with_actions_p;
    json ws = json::array();
    for (const auto& v : r.weak_spot) ws.push_back(opt_to_json(v));
    j["weak_spot"] = std::move(ws);
    return j;
}

json series_resilience_to_json(const SeriesResilience& s) {
    json j;
    j["events"] = s.total_events;
    j["events_per_1000"] = s.events_per_1000;
    j["degradation_time"] = opt_to_json(s.mean_degradation_time);
    j["restorative_time"] = opt_to_json(s.mean_restorative_time);
    j["series_min"] = opt_to_json(s.mean_series_min);
    j["series_max"] = opt_to_json(s.mean_series_max);
    return j;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::fixed << v;
    return os.str();
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "n/a"; }

}  // namespace

void emit_outputs(const CampaignResult& result) {
    const CampaignConfig& cfg = result.config;
    fs::create_directories(cfg.out_dir);
    fs::create_directories(cfg.out_dir + "/traces");
    GridModel model = load_grid(cfg.grid_path);
    ObsLayout lay = ObsLayout::of(model);

    {
        json j;
        j["code_version"] = kCodeVersion;
        j["config"] = config_to_json(cfg);
        j["robustness"] = robustness_to_json(result.robustness);
        std::ofstream out(cfg.out_dir + "/robustness.json");
        out << j.dump(2) << "\n";
    }
    {
        json j;
        j["code_version"] = kCodeVersion;
        j["config"] = config_to_json(cfg);
        j["reward_gap_area"] = result.resilience.mean_reward_gap_area;
        j["reward_gap_area_per_1000"] = result.resilience.reward_gap_area_per_1000;
        j["reward_series"] = series_resilience_to_json(result.resilience.reward);
        j["cosine_series"] = series_resilience_to_json(result.resilience.cosine);
        std::ofstream out(cfg.out_dir + "/resilience.json");
        out << j.dump(2) << "\n";
    }
    {
        const auto& rb = result.robustness;
        const auto& rs = result.resilience;
        std::ofstream out(cfg.out_dir + "/tables.txt");
        out << "Robustness\n";
        out << "  Actions changed per 1000 steps      " << fmt(rb.action_changes_per_1000) << "\n";
        out << "  Similarity score per changed action " << fmt_opt(rb.similarity_per_changed_action)
            << "\n";
        out << "  Total reward delta                  " << fmt(rb.mean_total_reward_delta) << "\n";
        out << "  Survival steps (pert/unpert)        " << fmt(rb.mean_survival_p) << " / "
            << fmt(rb.mean_survival_u) << "\n";
        out << "  Reward per action (pert/unpert)     " << fmt_opt(rb.reward_per_action_p) << " / "
            << fmt_opt(rb.reward_per_action_u) << "\n";
        out << "Resilience (reward delta)\n";
        out << "  Degr. time                          " << fmt_opt(rs.reward.mean_degradation_time)
            << "\n";
        out << "  Rest. time                          " << fmt_opt(rs.reward.mean_restorative_time)
            << "\n";
        out << "  max(dR)                             " << fmt_opt(rs.reward.mean_series_max) << "\n";
        out << "  min(dR)                             " << fmt_opt(rs.reward.mean_series_min) << "\n";
        out << "  # degr. per 1000 steps              " << fmt(rs.reward.events_per_1000) << "\n";
        out << "  Area per 1000 steps                 " << fmt(rs.reward_gap_area_per_1000) << "\n";
        out << "Resilience (state similarity)\n";
        out << "  Degr. time                          " << fmt_opt(rs.cosine.mean_degradation_time)
            << "\n";
        out << "  Rest. time                          " << fmt_opt(rs.cosine.mean_restorative_time)
            << "\n";
        out << "  max(sim)                            " << fmt_opt(rs.cosine.mean_series_max) << "\n";
        out << "  min(sim)                            " << fmt_opt(rs.cosine.mean_series_min) << "\n";
        out << "  # degr. per 1000 steps              " << fmt(rs.cosine.events_per_1000) << "\n";
    }
    {
        std::ofstream out(cfg.out_dir + "/weakmap.csv");
        out << "index,group,element,score\n";
        const char* names[3] = {"gen", "load", "flow"};
        for (int i = 0; i < lay.size(); ++i) {
            out << i << "," << names[lay.group(i)] << "," << lay.element(i) << ",";
            if (i < static_cast<int>(result.robustness.weak_spot.size()) &&
                result.robustness.weak_spot[i])
                out << *result.robustness.weak_spot[i];
            out << "\n";
        }
    }
    for (size_t e = 0; e < result.traces.size(); ++e) {
        const EpisodeTrace& t = result.traces[e];
        auto cos = cosine_series(t);
        std::ofstream out(cfg.out_dir + "/series_ep" + std::to_string(e) + ".csv");
        out << "step,R_u,R_p,delta\n";
        int n = std::min(t.steps_u(), t.steps_p());
        out.precision(17);
        for (int k = 0; k < n; ++k)
            out << k << "," << t.reward_u[k] << "," << t.reward_p[k] << ","
                << t.reward_p[k] - t.reward_u[k] << "\n";
        std::ofstream cout_(cfg.out_dir + "/cosine_ep" + std::to_string(e) + ".csv");
        cout_ << "step,cosine\n";
        cout_.precision(17);
        for (int k = 0; k < n; ++k) cout_ << k << "," << cos[k] << "\n";
        save_trace(t, cfg.out_dir + "/traces/ep" + std::to_string(e) + ".json");
    }
}

CampaignResult recompute_from_traces(const CampaignConfig& cfg) {
    GridModel model = load_grid(cfg.grid_path);
    CampaignResult result;
    result.config = cfg;
    for (int e = 0;; ++e) {
        std::string path = cfg.out_dir + "/traces/ep" + std::to_string(e) + ".json";
        if (!fs::exists(path)) break;
        result.traces.push_back(load_trace(path));
    }
    if (result.traces.empty()) throw std::runtime_error("no traces under " + cfg.out_dir + "/traces");
    result.robustness = build_robustness_report(model, result.traces, attacker_kind(cfg.perturber));
    result.resilience = build_resilience_report(result.traces, cfg.metrics);
    return result;
}

}  // namespace gridres
