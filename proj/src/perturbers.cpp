#include "gridres/perturbers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace gridres {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// RPA
// ---------------------------------------------------------------------------

Observation rpa_apply(const RpaConfig& cfg, Rng& rng, std::vector<PerturbationRecord>& pp,
                      const Observation& obs, const ObsLayout& lay, std::vector<char>* applied) {
    Observation out = obs;
    if (applied) applied->assign(lay.size(), 0);
    for (const auto& rec : pp) {
        out.values[rec.index] = rec.zero ? 0.0 : obs.values[rec.index] * rec.factor;
        if (applied) (*applied)[rec.index] = 1;
    }

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (unif(rng) < cfg.p) {
        std::uniform_int_distribution<int> pick(0, lay.size() - 1);
        int i = pick(rng);
        PerturbationRecord rec;
        rec.index = i;
        if (unif(rng) < 0.2) {
            rec.zero = true;
        } else {
            double sigma = lay.group(i) == 0 ? cfg.sigma_gen
                                             : (lay.group(i) == 1 ? cfg.sigma_load : cfg.sigma_flow);
            std::lognormal_distribution<double> lognorm(0.0, sigma);
            rec.factor = lognorm(rng);
        }
        std::geometric_distribution<int> geom(1.0 / 6.0);
        rec.remaining = geom(rng) + 1;  // support >= 1, mean 6
        out.values[i] = rec.zero ? 0.0 : obs.values[i] * rec.factor;
        if (applied) (*applied)[i] = 1;
        // a fresh record on an already-perturbed index replaces the old one
        std::erase_if(pp, [i](const PerturbationRecord& r) { return r.index == i; });
        pp.push_back(rec);
    }

    for (auto& rec : pp) --rec.remaining;
    std::erase_if(pp, [](const PerturbationRecord& r) { return r.remaining <= 0; });
    return out;
}

// ---------------------------------------------------------------------------
// Gradient estimation, PGD, FGSM
// ---------------------------------------------------------------------------

Eigen::VectorXd estimate_gradient(const ScalarFn& L, const Eigen::VectorXd& s, double h_fd) {
    Eigen::VectorXd g(s.size());
    Eigen::VectorXd probe = s;
    for (int i = 0; i < s.size(); ++i) {
        probe[i] = s[i] + h_fd;
        double up = L(probe);
        probe[i] = s[i] - h_fd;
        double dn = L(probe);
        probe[i] = s[i];
        if (!std::isfinite(up) || !std::isfinite(dn))
            throw std::runtime_error("non-finite objective value at index " + std::to_string(i));
        g[i] = (up - dn) / (2.0 * h_fd);
    }
    return g;
}

namespace {
inline double sgn(double x) { return (x > 0.0) - (x < 0.0); }
}

Eigen::VectorXd gepa_attack(const GepaConfig& cfg, const ScalarFn& L, const Eigen::VectorXd& s) {
    Eigen::VectorXd lo(s.size()), hi(s.size());
    for (int i = 0; i < s.size(); ++i) {
        double a = s[i] * (1.0 - cfg.cap), b = s[i] * (1.0 + cfg.cap);
        lo[i] = std::min(a, b);
        hi[i] = std::max(a, b);
    }
    Eigen::VectorXd adv = s;
    for (int w = 0; w < cfg.iterations; ++w) {
        Eigen::VectorXd g = estimate_gradient(L, adv, cfg.h_fd);
        for (int i = 0; i < s.size(); ++i) {
            // descent: the target score is to be minimized
            adv[i] *= 1.0 - cfg.step_size * sgn(g[i]);
            adv[i] = std::clamp(adv[i], lo[i], hi[i]);
        }
    }
    return adv;
}

Eigen::VectorXd fgsm_attack(double xi, const ScalarFn& L_target, const Eigen::VectorXd& s,
                            double h_fd) {
    Eigen::VectorXd g = estimate_gradient(L_target, s, h_fd);
    Eigen::VectorXd adv = s;
    for (int i = 0; i < s.size(); ++i) adv[i] += xi * std::abs(s[i]) * sgn(g[i]);
    return adv;
}

// ---------------------------------------------------------------------------
// RLPA
// ---------------------------------------------------------------------------

Observation apply_set_values(const PerturbationAction& a, const Observation& obs,
                             const Eigen::VectorXd& large_fill) {
    Observation out = obs;
    for (int i : a.indices)
        out.values[i] = a.fill == PerturbationAction::Fill::Zero ? 0.0 : large_fill[i];
    return out;
}

int attacker_state(const GridModel& m, const GridState& s) {
    double mx = 0.0;
    int overloaded = 0;
    for (int l = 0; l < m.n_lines(); ++l) {
        mx = std::max(mx, s.rho[l]);
        overloaded += s.rho[l] > 1.0;
    }
    int rb = mx < 0.8 ? 0 : mx < 0.9 ? 1 : mx < 1.0 ? 2 : mx < 1.2 ? 3 : 4;
    int cb = overloaded == 0 ? 0 : overloaded == 1 ? 1 : 2;
    int quarter = (s.k % 288) / 72;
    return (rb * 3 + cb) * 4 + quarter;
}

std::vector<double>& QFunction::row(int state) {
    auto it = table_.find(state);
    if (it == table_.end()) it = table_.emplace(state, std::vector<double>(n_actions_, 0.0)).first;
    return it->second;
}

double QFunction::value(int state, int action) const {
    auto it = table_.find(state);
    return it == table_.end() ? 0.0 : it->second[action];
}

double QFunction::max_value(int state) const {
    auto it = table_.find(state);
    if (it == table_.end()) return 0.0;
    return *std::max_element(it->second.begin(), it->second.end());
}

void QFunction::update(int state, int action, double target_delta) {
    row(state)[action] += target_delta;
}

void QFunction::set(int state, int action, double v) { row(state)[action] = v; }

int QFunction::greedy(int state) const {
    auto it = table_.find(state);
    if (it == table_.end()) return 0;
    int best = 0;
    for (int a = 1; a < n_actions_; ++a)
        if (it->second[a] > it->second[best]) best = a;
    return best;
}

void QFunction::save(const std::string& path) const {
    json j;
    j["n_actions"] = n_actions_;
    json t = json::object();
    for (const auto& [s, vals] : table_) t[std::to_string(s)] = vals;
    j["table"] = std::move(t);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write Q file: " + path);
    out << j.dump(2) << "\n";
}

QFunction QFunction::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open Q file: " + path);
    json j;
    in >> j;
    QFunction q(j.at("n_actions").get<int>());
    for (auto it = j.at("table").begin(); it != j.at("table").end(); ++it)
        q.table_[std::stoi(it.key())] = it.value().get<std::vector<double>>();
    return q;
}

int rlpa_act(const QFunction& q, int state, double epsilon, int n_actions, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (unif(rng) < epsilon) {
        std::uniform_int_distribution<int> pick(0, n_actions - 1);
        return pick(rng);
    }
    return q.greedy(state);
}

QFunction rlpa_train(const RlpaConfig& cfg, AttackEnv& env, int n_actions, Rng& rng) {
    QFunction q(n_actions);
    for (int h = 0; h < cfg.episodes; ++h) {
        int s = env.reset();
        for (int k = 0; k < cfg.max_steps; ++k) {
            int a = rlpa_act(q, s, cfg.epsilon, n_actions, rng);
            auto out = env.step(a);
            double boot = out.done ? 0.0 : cfg.gamma * q.max_value(out.next_state);
            q.update(s, a, cfg.alpha * (out.reward + boot - q.value(s, a)));
            s = out.next_state;
            if (out.done) break;
        }
    }
    return q;
}

// ---------------------------------------------------------------------------
// Action-space reduction
// ---------------------------------------------------------------------------

namespace {

double mean_harm(const PerturbationAction& cand, const std::vector<Observation>& pool,
                 const std::vector<int>& base_choice, const DefenderOracle& defender,
                 const Eigen::VectorXd& large_fill) {
    double acc = 0.0;
    for (size_t k = 0; k < pool.size(); ++k) {
        int forced = defender.choose(apply_set_values(cand, pool[k], large_fill));
        if (forced == base_choice[k]) continue;
        double gap = defender.score(pool[k], base_choice[k]) - defender.score(pool[k], forced);
        acc += std::max(gap, kFlipFloor);
    }
    return acc / static_cast<double>(pool.size());
}

}  // namespace

PerturbSpace reduce_action_space(const ReductionConfig& cfg, const std::vector<Observation>& pool,
                                 const DefenderOracle& defender,
                                 const std::vector<Action>& defender_actions) {
    if (pool.empty()) throw std::invalid_argument("empty observation pool");
    const int n = static_cast<int>(pool.front().values.size());

    PerturbSpace space;
    space.large_fill = Eigen::VectorXd::Zero(n);
    for (const auto& o : pool)
        space.large_fill = space.large_fill.cwiseMax(o.values.cwiseAbs());
    space.large_fill *= 10.0;

    std::vector<int> base_choice(pool.size());
    for (size_t k = 0; k < pool.size(); ++k) base_choice[k] = defender.choose(pool[k]);

    struct Scored {
        PerturbationAction act;
        double drop;
    };
    auto better = [](const Scored& a, const Scored& b) {
        if (a.drop != b.drop) return a.drop > b.drop;
        if (a.act.indices.size() != b.act.indices.size())
            return a.act.indices.size() < b.act.indices.size();
        return a.act.indices < b.act.indices;
    };

    std::vector<Scored> singles;
    for (int i = 0; i < n; ++i) {
        for (auto fill : {PerturbationAction::Fill::Zero, PerturbationAction::Fill::Large}) {
            PerturbationAction a{PerturbationAction::Kind::SetValues, {i}, fill, -1};
            singles.push_back({a, mean_harm(a, pool, base_choice, defender, space.large_fill)});
        }
    }
    std::sort(singles.begin(), singles.end(), better);

    std::vector<Scored> all = singles;
    int t = std::min<int>(cfg.top_singles, static_cast<int>(singles.size()));

    // greedy extension: top singles -> pairs -> triples, same fill only
    std::vector<Scored> pairs;
    for (int a = 0; a < t; ++a) {
        for (int b = a + 1; b < t; ++b) {
            if (singles[a].act.fill != singles[b].act.fill) continue;
            if (singles[a].act.indices[0] == singles[b].act.indices[0]) continue;
            PerturbationAction p = singles[a].act;
            p.indices.push_back(singles[b].act.indices[0]);
            std::sort(p.indices.begin(), p.indices.end());
            pairs.push_back({p, mean_harm(p, pool, base_choice, defender, space.large_fill)});
        }
    }
    std::sort(pairs.begin(), pairs.end(), better);
    all.insert(all.end(), pairs.begin(), pairs.end());

    int tp = std::min<int>(cfg.top_singles, static_cast<int>(pairs.size()));
    for (int a = 0; a < tp; ++a) {
        for (int b = 0; b < t; ++b) {
            if (pairs[a].act.fill != singles[b].act.fill) continue;
            int idx = singles[b].act.indices[0];
            if (std::count(pairs[a].act.indices.begin(), pairs[a].act.indices.end(), idx)) continue;
            PerturbationAction p = pairs[a].act;
            p.indices.push_back(idx);
            std::sort(p.indices.begin(), p.indices.end());
            all.push_back({p, mean_harm(p, pool, base_choice, defender, space.large_fill)});
        }
    }
    std::sort(all.begin(), all.end(), better);
    all.erase(std::unique(all.begin(), all.end(),
                          [](const Scored& a, const Scored& b) {
                              return a.act.indices == b.act.indices && a.act.fill == b.act.fill;
                          }),
              all.end());

    space.actions.push_back({});  // DoNothing
    for (int i = 0; i < std::min<int>(cfg.budget, static_cast<int>(all.size())); ++i)
        space.actions.push_back(all[i].act);

    // one adversarial-example target per substation cluster
    std::map<int, int> rep;  // substation -> lowest action id
    for (const auto& a : defender_actions)
        if (a.kind == ActionKind::SetBusbars && !rep.count(a.substation)) rep[a.substation] = a.id;
    for (const auto& [sub, id] : rep) {
        PerturbationAction a;
        a.kind = PerturbationAction::Kind::AdversarialToward;
        a.target_action = id;
        space.actions.push_back(a);
    }
    return space;
}

void save_perturb_space(const PerturbSpace& p, const std::string& path) {
    json j;
    j["large_fill"] = std::vector<double>(p.large_fill.begin(), p.large_fill.end());
    json acts = json::array();
    for (const auto& a : p.actions) {
        json ja;
        ja["kind"] = a.kind == PerturbationAction::Kind::DoNothing        ? "nothing"
                     : a.kind == PerturbationAction::Kind::SetValues      ? "set"
                                                                          : "toward";
        ja["indices"] = a.indices;
        ja["fill"] = a.fill == PerturbationAction::Fill::Zero ? "zero" : "large";
        ja["target"] = a.target_action;
        acts.push_back(std::move(ja));
    }
    j["actions"] = std::move(acts);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write perturbation set: " + path);
    out << j.dump(2) << "\n";
}

PerturbSpace load_perturb_space(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open perturbation set: " + path);
    json j;
    in >> j;
    PerturbSpace p;
    auto lf = j.at("large_fill").get<std::vector<double>>();
    p.large_fill = Eigen::Map<Eigen::VectorXd>(lf.data(), static_cast<int>(lf.size()));
    for (const auto& ja : j.at("actions")) {
        PerturbationAction a;
        std::string kind = ja.at("kind").get<std::string>();
        a.kind = kind == "nothing" ? PerturbationAction::Kind::DoNothing
                 : kind == "set"   ? PerturbationAction::Kind::SetValues
                                   : PerturbationAction::Kind::AdversarialToward;
        a.indices = ja.at("indices").get<std::vector<int>>();
        a.fill = ja.at("fill").get<std::string>() == "zero" ? PerturbationAction::Fill::Zero
                                                            : PerturbationAction::Fill::Large;
        a.target_action = ja.at("target").get<int>();
        p.actions.push_back(std::move(a));
    }
    return p;
}

}  // namespace gridres
