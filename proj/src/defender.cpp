#include "gridres/defender.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace gridres {

double Defender::max_rho_reading(const GridModel& m, const Observation& obs) {
    ObsLayout lay = ObsLayout::of(m);
    double mx = 0.0;
    for (int l = 0; l < lay.n_flow; ++l)
        mx = std::max(mx, std::abs(obs.values[lay.flow_offset() + l]) / m.lines[l].limit_mw);
    return mx;
}

namespace {

void split_injections(const GridModel& m, const Observation& obs, Eigen::VectorXd& gen_p,
                      Eigen::VectorXd& load_p) {
    ObsLayout lay = ObsLayout::of(m);
    gen_p = obs.values.segment(lay.gen_offset(), lay.n_gen);
    load_p = obs.values.segment(lay.load_offset(), lay.n_load);
}

}  // namespace

namespace {

double loading_score(const Eigen::VectorXd& rho, double congestion_weight) {
    return 1.0 - rho.maxCoeff() - congestion_weight * rho.mean();
}

}  // namespace

double Defender::action_score(const Observation& obs, const Environment& env, int action_id) const {
    Eigen::VectorXd gen_p, load_p;
    split_injections(env.model(), obs, gen_p, load_p);
    auto rho = env.lookahead_rhos(env.actions()[action_id], gen_p, load_p);
    return rho ? loading_score(*rho, cfg_.congestion_weight) : kUnsimulableScore;
}

PolicyScores Defender::policy_scores(const Observation& obs, const Environment& env) const {
    Eigen::VectorXd gen_p, load_p;
    split_injections(env.model(), obs, gen_p, load_p);
    const auto& actions = env.actions();
    PolicyScores ps;
    ps.scores.resize(static_cast<int>(actions.size()));
    for (size_t i = 0; i < actions.size(); ++i) {
        auto rho = env.lookahead_rhos(actions[i], gen_p, load_p);
        ps.scores[static_cast<int>(i)] =
            rho ? loading_score(*rho, cfg_.congestion_weight) : kUnsimulableScore;
    }
    if (max_rho_reading(env.model(), obs) < cfg_.rho_act) {
        ps.argmax = 0;  // gated: keep hands off a quiet grid
    } else {
        ps.argmax = 0;
        for (int i = 1; i < ps.scores.size(); ++i)
            if (ps.scores[i] > ps.scores[ps.argmax]) ps.argmax = i;
    }
    return ps;
}

int Defender::chosen_action_id(const Observation& obs, const Environment& env) const {
    if (max_rho_reading(env.model(), obs) < cfg_.rho_act) return 0;
    return policy_scores(obs, env).argmax;
}

Action Defender::restore_step(const Environment& env) const {
    const GridModel& m = env.model();
    const GridState& s = env.state();
    for (int l = 0; l < m.n_lines(); ++l) {
        if (s.topo.line_in_service[l]) continue;
        Action a = make_reconnect(m, l);
        if (env.action_legal(a)) return a;
    }
    Topology ref = Topology::reference(m);
    for (int sub = 0; sub < m.n_subs; ++sub) {
        bool differs = false;
        for (int l = 0; l < m.n_lines(); ++l) {
            if (m.lines[l].from_sub == sub && s.topo.line_or_bus[l] != 1) differs = true;
            if (m.lines[l].to_sub == sub && s.topo.line_ex_bus[l] != 1) differs = true;
        }
        for (int g = 0; g < m.n_gens(); ++g)
            if (m.gens[g].sub == sub && s.topo.gen_bus[g] != 1) differs = true;
        for (int l = 0; l < m.n_loads(); ++l)
            if (m.loads[l].sub == sub && s.topo.load_bus[l] != 1) differs = true;
        if (!differs) continue;
        std::vector<Change> assignment;
        for (int l = 0; l < m.n_lines(); ++l) {
            if (m.lines[l].from_sub == sub) assignment.push_back({ElementAttr::LineOrigin, l, 1});
            if (m.lines[l].to_sub == sub) assignment.push_back({ElementAttr::LineExt, l, 1});
        }
        for (int g = 0; g < m.n_gens(); ++g)
            if (m.gens[g].sub == sub) assignment.push_back({ElementAttr::Gen, g, 1});
        for (int l = 0; l < m.n_loads(); ++l)
            if (m.loads[l].sub == sub) assignment.push_back({ElementAttr::Load, l, 1});
        Action a = make_set_busbars(m, sub, assignment);
        a.id = -1;  // not part of the enumerated table
        if (env.action_legal(a)) return a;
    }
    return Action::do_nothing();
}

Action Defender::act(const Observation& obs, const Environment& env) const {
    double reading = max_rho_reading(env.model(), obs);
    if (reading < cfg_.rho_act) {
        bool at_reference = env.state().topo == Topology::reference(env.model());
        if (!at_reference && reading < cfg_.rho_safe) return restore_step(env);
        return Action::do_nothing();
    }
    return env.actions()[policy_scores(obs, env).argmax];
}

std::function<double(const Eigen::VectorXd&)> Defender::score_fn(const Environment& env,
                                                                 int action_id) const {
    const GridModel& m = env.model();
    const Action& a = env.actions()[action_id];
    if (!env.action_legal(a))
        return [](const Eigen::VectorXd&) { return kUnsimulableScore; };
    Topology topo = with_action(m, env.state().topo, a);
    auto solver = std::make_shared<FlowSolver>(m, topo);
    if (!solver->solvable() || !solver->all_loads_connected())
        return [](const Eigen::VectorXd&) { return kUnsimulableScore; };
    std::vector<char> in_service = topo.line_in_service;
    ObsLayout lay = ObsLayout::of(m);
    double w = cfg_.congestion_weight;
    return [&m, solver, in_service, lay, w](const Eigen::VectorXd& s) {
        Eigen::VectorXd gen_p = s.segment(lay.gen_offset(), lay.n_gen);
        Eigen::VectorXd load_p = s.segment(lay.load_offset(), lay.n_load);
        Eigen::VectorXd f = solver->flows(gen_p, load_p);
        Eigen::VectorXd rho = Eigen::VectorXd::Zero(m.n_lines());
        for (int l = 0; l < m.n_lines(); ++l)
            if (in_service[l]) rho[l] = std::abs(f[l]) / m.lines[l].limit_mw;
        return loading_score(rho, w);
    };
}

}  // namespace gridres
