#include "gridres/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gridres {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// GridModel
// ---------------------------------------------------------------------------

int GridModel::slack_gen() const {
    for (int g = 0; g < n_gens(); ++g)
        if (gens[g].sub == slack_sub) return g;
    return -1;
}

int GridModel::elements_at(int sub) const {
    int n = 0;
    for (const auto& l : lines) n += (l.from_sub == sub) + (l.to_sub == sub);
    for (const auto& g : gens) n += (g.sub == sub);
    for (const auto& l : loads) n += (l.sub == sub);
    return n;
}

void GridModel::validate() const {
    if (n_subs <= 0) throw ValidationError("grid has no substations");
    if (slack_sub < 0 || slack_sub >= n_subs) throw ValidationError("slack substation out of range");
    if (slack_gen() < 0) throw ValidationError("no generator at the slack substation");
    for (int i = 0; i < n_lines(); ++i) {
        const auto& l = lines[i];
        if (l.from_sub < 0 || l.from_sub >= n_subs || l.to_sub < 0 || l.to_sub >= n_subs)
            throw ValidationError("line " + std::to_string(i) + " endpoint out of range");
        if (!(l.reactance > 0.0))
            throw ValidationError("line " + std::to_string(i) + " reactance must be > 0");
        if (!(l.limit_mw > 0.0))
            throw ValidationError("line " + std::to_string(i) + " thermal limit must be > 0");
    }
    for (const auto& g : gens)
        if (g.sub < 0 || g.sub >= n_subs) throw ValidationError("generator substation out of range");
    for (const auto& l : loads)
        if (l.sub < 0 || l.sub >= n_subs) throw ValidationError("load substation out of range");

    // reference topology must be connected
    std::vector<std::vector<int>> adj(n_subs);
    for (const auto& l : lines) {
        adj[l.from_sub].push_back(l.to_sub);
        adj[l.to_sub].push_back(l.from_sub);
    }
    std::vector<char> seen(n_subs, 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (int v : adj[u])
            if (!seen[v]) {
                seen[v] = 1;
                q.push(v);
            }
    }
    if (std::count(seen.begin(), seen.end(), char(1)) != n_subs)
        throw ValidationError("reference topology is not connected");
}

// ---------------------------------------------------------------------------
// Grid file
// ---------------------------------------------------------------------------

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) ok |= (it.key() == k);
        if (!ok) throw ValidationError("unknown key '" + it.key() + "' in " + where);
    }
}

GridModel parse_grid_json(const json& j) {
    reject_unknown_keys(j, {"name", "substations", "slack", "lines", "generators", "loads"}, "grid file");
    GridModel m;
    m.name = j.value("name", "grid");
    m.n_subs = j.at("substations").get<int>();
    m.slack_sub = j.at("slack").get<int>() - 1;
    for (const auto& jl : j.at("lines")) {
        reject_unknown_keys(jl, {"from", "to", "x", "limit"}, "line");
        m.lines.push_back({jl.at("from").get<int>() - 1, jl.at("to").get<int>() - 1,
                           jl.at("x").get<double>(), jl.at("limit").get<double>()});
    }
    for (const auto& jg : j.at("generators")) {
        reject_unknown_keys(jg, {"sub", "pmax", "renewable"}, "generator");
        m.gens.push_back({jg.at("sub").get<int>() - 1, jg.at("pmax").get<double>(),
                          jg.value("renewable", false)});
    }
    for (const auto& jl : j.at("loads")) {
        reject_unknown_keys(jl, {"sub", "base"}, "load");
        m.loads.push_back({jl.at("sub").get<int>() - 1, jl.at("base").get<double>()});
    }
    m.validate();
    return m;
}

}  // namespace

GridModel load_grid(const std::string& path) {
    if (path == "ieee14") return builtin_ieee14();
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open grid file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("grid file parse error: " + std::string(e.what()));
    }
    return parse_grid_json(j);
}

GridModel builtin_ieee14() {
    GridModel m;
    m.name = "ieee14";
    m.n_subs = 14;
    m.slack_sub = 0;
    // from, to (0-based), reactance (pu), thermal limit (MW)
    const double x[20] = {0.05917, 0.22304, 0.19797, 0.17632, 0.17388, 0.17103, 0.04211,
                          0.20912, 0.55618, 0.25202, 0.19890, 0.25581, 0.13027, 0.17615,
                          0.11001, 0.08450, 0.27038, 0.19207, 0.19988, 0.34802};
    const int from[20] = {1, 1, 2, 2, 2, 3, 4, 4, 4, 5, 6, 6, 6, 7, 7, 9, 9, 10, 12, 13};
    const int to[20] = {2, 5, 3, 4, 5, 4, 5, 7, 9, 6, 11, 12, 13, 8, 9, 10, 14, 11, 13, 14};
    // Limits sized from reference-topology flows at base load so the quiet
    // grid sits around rho 0.4-0.8 with headroom for contingencies.
    const double lim[20] = {124.0, 64.0, 74.0, 55.0, 39.0, 29.5, 69.0, 23.0, 13.0, 22.0,
                            15.0,  14.0, 30.0, 55.0, 55.0, 9.0,  13.0, 10.0, 6.0,  11.5};
    for (int i = 0; i < 20; ++i)
        m.lines.push_back({from[i] - 1, to[i] - 1, x[i], lim[i]});
    m.gens = {{0, 332.4, false}, {1, 140.0, false}, {2, 100.0, false}, {5, 100.0, true}, {7, 100.0, false}};
    m.loads = {{1, 21.7}, {2, 94.2}, {3, 47.8}, {4, 7.6},  {5, 11.2}, {8, 29.5},
               {9, 9.0},  {10, 3.5}, {11, 6.1}, {12, 13.5}, {13, 14.9}};
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// Topology, actions
// ---------------------------------------------------------------------------

Topology Topology::reference(const GridModel& m) {
    Topology t;
    t.line_or_bus.assign(m.n_lines(), 1);
    t.line_ex_bus.assign(m.n_lines(), 1);
    t.gen_bus.assign(m.n_gens(), 1);
    t.load_bus.assign(m.n_loads(), 1);
    t.line_in_service.assign(m.n_lines(), 1);
    return t;
}

namespace {
std::vector<int> line_action_subs(const GridModel& m, int line) {
    int a = m.lines[line].from_sub, b = m.lines[line].to_sub;
    if (a > b) std::swap(a, b);
    return a == b ? std::vector<int>{a} : std::vector<int>{a, b};
}
}  // namespace

Topology with_action(const GridModel&, const Topology& t, const Action& a) {
    Topology out = t;
    switch (a.kind) {
        case ActionKind::DoNothing:
            break;
        case ActionKind::SetBusbars:
            for (const auto& c : a.changes) {
                switch (c.attr) {
                    case ElementAttr::LineOrigin: out.line_or_bus[c.element] = c.target; break;
                    case ElementAttr::LineExt: out.line_ex_bus[c.element] = c.target; break;
                    case ElementAttr::Gen: out.gen_bus[c.element] = c.target; break;
                    case ElementAttr::Load: out.load_bus[c.element] = c.target; break;
                    case ElementAttr::LineStatus: break;
                }
            }
            break;
        case ActionKind::ReconnectLine:
            out.line_in_service[a.line] = 1;
            break;
        case ActionKind::DisconnectLine:
            out.line_in_service[a.line] = 0;
            break;
    }
    return out;
}

Action make_set_busbars(const GridModel&, int sub, const std::vector<Change>& assignment) {
    Action a;
    a.kind = ActionKind::SetBusbars;
    a.substation = sub;
    a.changes = assignment;
    std::sort(a.changes.begin(), a.changes.end());
    return a;
}

Action make_reconnect(const GridModel&, int line) {
    Action a;
    a.kind = ActionKind::ReconnectLine;
    a.line = line;
    a.changes = {{ElementAttr::LineStatus, line, 1}};
    return a;
}

Action make_disconnect(const GridModel&, int line) {
    Action a;
    a.kind = ActionKind::DisconnectLine;
    a.line = line;
    a.changes = {{ElementAttr::LineStatus, line, 0}};
    return a;
}

std::vector<int> action_substations(const GridModel& m, const Action& a) {
    if (a.kind == ActionKind::DoNothing) return {};
    if (a.kind == ActionKind::SetBusbars) {
        if (a.changes.empty()) return {a.substation};
        // the affected set follows the change-set, which may span substations
        std::set<int> subs;
        for (const auto& c : a.changes) {
            switch (c.attr) {
                case ElementAttr::LineOrigin: subs.insert(m.lines[c.element].from_sub); break;
                case ElementAttr::LineExt: subs.insert(m.lines[c.element].to_sub); break;
                case ElementAttr::Gen: subs.insert(m.gens[c.element].sub); break;
                case ElementAttr::Load: subs.insert(m.loads[c.element].sub); break;
                case ElementAttr::LineStatus:
                    subs.insert(m.lines[c.element].from_sub);
                    subs.insert(m.lines[c.element].to_sub);
                    break;
            }
        }
        return {subs.begin(), subs.end()};
    }
    return line_action_subs(m, a.line);
}

namespace {

struct SubElement {
    ElementAttr attr;
    int element;
    bool is_line_end;
};

std::vector<SubElement> sub_elements(const GridModel& m, int sub) {
    std::vector<SubElement> es;
    for (int l = 0; l < m.n_lines(); ++l) {
        if (m.lines[l].from_sub == sub) es.push_back({ElementAttr::LineOrigin, l, true});
        if (m.lines[l].to_sub == sub) es.push_back({ElementAttr::LineExt, l, true});
    }
    for (int g = 0; g < m.n_gens(); ++g)
        if (m.gens[g].sub == sub) es.push_back({ElementAttr::Gen, g, false});
    for (int l = 0; l < m.n_loads(); ++l)
        if (m.loads[l].sub == sub) es.push_back({ElementAttr::Load, l, false});
    return es;
}

}  // namespace

std::vector<Action> enumerate_actions(const GridModel& m, int cap) {
    std::vector<Action> splits;
    for (int sub = 0; sub < m.n_subs; ++sub) {
        auto es = sub_elements(m, sub);
        int n = static_cast<int>(es.size());
        if (n < 4) continue;
        // first element pinned to busbar 1 to mod out busbar symmetry
        for (unsigned mask = 1; mask < (1u << (n - 1)); ++mask) {
            int side2 = 0, lines1 = 0, lines2 = 0;
            for (int i = 0; i < n; ++i) {
                bool on2 = i > 0 && (mask >> (i - 1)) & 1u;
                side2 += on2;
                if (es[i].is_line_end) (on2 ? lines2 : lines1)++;
            }
            int side1 = n - side2;
            // both sides must stay electrically meaningful
            if (side1 < 2 || side2 < 2 || lines1 < 1 || lines2 < 1) continue;
            std::vector<Change> assignment;
            for (int i = 0; i < n; ++i) {
                bool on2 = i > 0 && (mask >> (i - 1)) & 1u;
                assignment.push_back({es[i].attr, es[i].element, on2 ? 2 : 1});
            }
            splits.push_back(make_set_busbars(m, sub, assignment));
        }
    }
    // Vet candidate splits against the base case: a remedial action that
    // overloads the healthy grid has no place in the table.
    {
        Eigen::VectorXd load_p(m.n_loads()), gen_p(m.n_gens());
        double total = 0.0;
        for (int i = 0; i < m.n_loads(); ++i) {
            load_p[i] = m.loads[i].base_mw;
            total += load_p[i];
        }
        double pmax_total = 0.0;
        for (const auto& g : m.gens) pmax_total += g.p_max;
        for (int i = 0; i < m.n_gens(); ++i) gen_p[i] = total * m.gens[i].p_max / pmax_total;

        Topology ref = Topology::reference(m);
        std::erase_if(splits, [&](const Action& a) {
            FlowResult r = dc_power_flow(m, with_action(m, ref, a), gen_p, load_p);
            if (!r.converged || !r.all_loads_connected) return true;
            for (int l = 0; l < m.n_lines(); ++l)
                if (std::abs(r.flows[l]) > 0.9 * m.lines[l].limit_mw) return true;
            return false;
        });
    }

    int budget = cap - 1 - m.n_lines();
    if (budget < 0) budget = 0;
    if (static_cast<int>(splits.size()) > budget) splits.resize(budget);

    std::vector<Action> out;
    out.push_back(Action::do_nothing());
    for (auto& a : splits) out.push_back(std::move(a));
    for (int l = 0; l < m.n_lines(); ++l) out.push_back(make_reconnect(m, l));
    for (int i = 0; i < static_cast<int>(out.size()); ++i) out[i].id = i;
    return out;
}

// ---------------------------------------------------------------------------
// Chronics
// ---------------------------------------------------------------------------

Chronics generate_chronics(const GridModel& m, int steps, std::uint64_t seed) {
    Chronics c;
    c.seed = seed;
    c.load_mw.resize(steps, m.n_loads());
    c.gen_mw.resize(steps, m.n_gens());

    const double ar_rho = 0.9;
    const double sigma_load = 0.05;
    const double sigma_res = 0.10;
    const int steps_per_day = 288;  // 5-minute resolution

    Rng rng(mix64(seed));
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<double> load_state(m.n_loads(), 0.0);
    double res_state = 0.0;
    const double innov_l = sigma_load * std::sqrt(1.0 - ar_rho * ar_rho);
    const double innov_r = sigma_res * std::sqrt(1.0 - ar_rho * ar_rho);

    double pmax_total = 0.0;
    for (const auto& g : m.gens) pmax_total += g.p_max;

    for (int k = 0; k < steps; ++k) {
        double phase = 2.0 * M_PI * (k % steps_per_day) / steps_per_day;
        // evening peak around 18:00, overnight trough
        double daily = 1.0 - 0.22 * std::cos(phase - 2.0 * M_PI * 18.0 / 24.0);
        double total = 0.0;
        for (int j = 0; j < m.n_loads(); ++j) {
            load_state[j] = ar_rho * load_state[j] + innov_l * normal(rng);
            double v = m.loads[j].base_mw * daily * std::exp(load_state[j]);
            c.load_mw(k, j) = v;
            total += v;
        }
        res_state = ar_rho * res_state + innov_r * normal(rng);
        for (int g = 0; g < m.n_gens(); ++g) {
            double v = total * m.gens[g].p_max / pmax_total;
            if (m.gens[g].renewable) v *= std::exp(res_state);
            c.gen_mw(k, g) = v;
        }
    }
    return c;
}

Chronics load_chronics_csv(const std::string& path, const GridModel& m) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open chronics file: " + path);
    std::string header;
    std::getline(in, header);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (static_cast<int>(row.size()) != m.n_loads() + m.n_gens())
            throw ValidationError("chronics row has wrong column count");
        rows.push_back(std::move(row));
    }
    Chronics c;
    c.load_mw.resize(rows.size(), m.n_loads());
    c.gen_mw.resize(rows.size(), m.n_gens());
    for (size_t k = 0; k < rows.size(); ++k) {
        for (int j = 0; j < m.n_loads(); ++j) c.load_mw(k, j) = rows[k][j];
        for (int g = 0; g < m.n_gens(); ++g) c.gen_mw(k, g) = rows[k][m.n_loads() + g];
        double d = c.load_mw.row(k).sum(), a = c.gen_mw.row(k).sum();
        if (d < -1e-9) throw ValidationError("negative demand in chronics");
        if (a + 1e-9 < d) throw ValidationError("available generation below demand in chronics");
    }
    return c;
}

// ---------------------------------------------------------------------------
// FlowSolver
// ---------------------------------------------------------------------------

FlowSolver::FlowSolver(const GridModel& m, const Topology& t) : model_(&m) {
    const int S = m.n_subs;
    auto node_key = [S](int sub, int busbar) { return sub + (busbar - 1) * S; };
    std::vector<int> node_id(2 * S, -1);
    auto touch = [&](int sub, int busbar) {
        int k = node_key(sub, busbar);
        if (node_id[k] < 0) node_id[k] = n_nodes_++;
        return node_id[k];
    };

    gen_node_.resize(m.n_gens());
    load_node_.resize(m.n_loads());
    line_from_.assign(m.n_lines(), -1);
    line_to_.assign(m.n_lines(), -1);
    line_b_.assign(m.n_lines(), 0.0);

    for (int g = 0; g < m.n_gens(); ++g) gen_node_[g] = touch(m.gens[g].sub, t.gen_bus[g]);
    for (int l = 0; l < m.n_loads(); ++l) load_node_[l] = touch(m.loads[l].sub, t.load_bus[l]);
    for (int l = 0; l < m.n_lines(); ++l) {
        if (!t.line_in_service[l]) continue;
        line_from_[l] = touch(m.lines[l].from_sub, t.line_or_bus[l]);
        line_to_[l] = touch(m.lines[l].to_sub, t.line_ex_bus[l]);
        line_b_[l] = 1.0 / m.lines[l].reactance;
    }

    slack_node_ = gen_node_[m.slack_gen()];

    // slack island
    std::vector<std::vector<int>> adj(n_nodes_);
    for (int l = 0; l < m.n_lines(); ++l) {
        if (line_from_[l] < 0) continue;
        adj[line_from_[l]].push_back(line_to_[l]);
        adj[line_to_[l]].push_back(line_from_[l]);
    }
    std::vector<char> on_island(n_nodes_, 0);
    std::queue<int> q;
    q.push(slack_node_);
    on_island[slack_node_] = 1;
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (int v : adj[u])
            if (!on_island[v]) {
                on_island[v] = 1;
                q.push(v);
            }
    }

    all_loads_connected_ = true;
    for (int l = 0; l < m.n_loads(); ++l)
        if (!on_island[load_node_[l]]) all_loads_connected_ = false;
    for (int g = 0; g < m.n_gens(); ++g)
        if (!on_island[gen_node_[g]]) gen_node_[g] = -1;
    for (int l = 0; l < m.n_loads(); ++l)
        if (!on_island[load_node_[l]]) load_node_[l] = -1;
    for (int l = 0; l < m.n_lines(); ++l)
        if (line_from_[l] >= 0 && !on_island[line_from_[l]]) line_from_[l] = line_to_[l] = -1;

    // compact island numbering, slack last (reduced system drops it)
    island_index_.assign(n_nodes_, -1);
    int ni = 0;
    for (int v = 0; v < n_nodes_; ++v)
        if (on_island[v] && v != slack_node_) island_index_[v] = ni++;
    island_index_[slack_node_] = ni;  // not part of the reduced system
    n_reduced_ = ni;

    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n_reduced_, n_reduced_);
    for (int l = 0; l < m.n_lines(); ++l) {
        if (line_from_[l] < 0) continue;
        int a = island_index_[line_from_[l]], b = island_index_[line_to_[l]];
        double y = line_b_[l];
        if (a < n_reduced_) B(a, a) += y;
        if (b < n_reduced_) B(b, b) += y;
        if (a < n_reduced_ && b < n_reduced_) {
            B(a, b) -= y;
            B(b, a) -= y;
        }
    }
    lu_.compute(B);
    solvable_ = (n_reduced_ == 0) || lu_.isInvertible();
}

Eigen::VectorXd FlowSolver::flows(const Eigen::VectorXd& gen_p, const Eigen::VectorXd& load_p) const {
    const GridModel& m = *model_;
    Eigen::VectorXd p = Eigen::VectorXd::Zero(n_reduced_ + 1);
    int sg = m.slack_gen();
    for (int g = 0; g < m.n_gens(); ++g)
        if (g != sg && gen_node_[g] >= 0) p[island_index_[gen_node_[g]]] += gen_p[g];
    for (int l = 0; l < m.n_loads(); ++l)
        if (load_node_[l] >= 0) p[island_index_[load_node_[l]]] -= load_p[l];
    // slack generator absorbs the island residual
    double residual = p.head(n_reduced_ + 1).sum();
    p[island_index_[slack_node_]] -= residual;

    Eigen::VectorXd theta_red = n_reduced_ > 0 ? lu_.solve(p.head(n_reduced_)).eval()
                                               : Eigen::VectorXd();
    auto theta = [&](int node) {
        int i = island_index_[node];
        return i < n_reduced_ ? theta_red[i] : 0.0;
    };
    Eigen::VectorXd f = Eigen::VectorXd::Zero(m.n_lines());
    for (int l = 0; l < m.n_lines(); ++l)
        if (line_from_[l] >= 0) f[l] = line_b_[l] * (theta(line_from_[l]) - theta(line_to_[l]));
    return f;
}

FlowResult dc_power_flow(const GridModel& m, const Topology& t, const Eigen::VectorXd& gen_p,
                         const Eigen::VectorXd& load_p) {
    FlowSolver fs(m, t);
    FlowResult r;
    r.converged = fs.solvable();
    r.all_loads_connected = fs.all_loads_connected();
    r.flows = r.converged ? fs.flows(gen_p, load_p) : Eigen::VectorXd::Zero(m.n_lines());
    return r;
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

double line_margin_reward(const GridModel& m, const Eigen::VectorXd& rho,
                          const std::vector<char>& in_service) {
    double s = 0.0;
    for (int l = 0; l < m.n_lines(); ++l)
        if (in_service[l]) s += std::max(0.0, 1.0 - rho[l] * rho[l]);
    return s / m.n_lines();
}

Environment::Environment(GridModel model, Chronics chronics)
    : model_(std::move(model)), chronics_(std::move(chronics)) {
    actions_ = enumerate_actions(model_);
    reset();
}

void Environment::reset() {
    GridState s;
    s.topo = Topology::reference(model_);
    s.overload_steps.assign(model_.n_lines(), 0);
    s.line_cooldown.assign(model_.n_lines(), 0);
    s.sub_cooldown.assign(model_.n_subs, 0);
    s.gen_p = chronics_.gen_mw.row(0).transpose();
    s.load_p = chronics_.load_mw.row(0).transpose();
    state_ = std::move(s);
    FlowSolver fs(model_, state_.topo);
    state_.flow_mw = fs.flows(state_.gen_p, state_.load_p);
    state_.rho.resize(model_.n_lines());
    for (int l = 0; l < model_.n_lines(); ++l)
        state_.rho[l] = std::abs(state_.flow_mw[l]) / model_.lines[l].limit_mw;
}

Observation Environment::observe(const GridModel& m, const GridState& s) {
    Observation o;
    o.values.resize(m.obs_size());
    o.values << s.gen_p, s.load_p, s.flow_mw;
    return o;
}

Observation Environment::observe() const { return observe(model_, state_); }

bool Environment::action_legal(const Action& a) const { return action_legal_in(state_, a); }

namespace {

void apply_action(const GridModel& m, GridState& s, const Action& a) {
    switch (a.kind) {
        case ActionKind::DoNothing:
            break;
        case ActionKind::SetBusbars:
            for (const auto& c : a.changes) {
                switch (c.attr) {
                    case ElementAttr::LineOrigin: s.topo.line_or_bus[c.element] = c.target; break;
                    case ElementAttr::LineExt: s.topo.line_ex_bus[c.element] = c.target; break;
                    case ElementAttr::Gen: s.topo.gen_bus[c.element] = c.target; break;
                    case ElementAttr::Load: s.topo.load_bus[c.element] = c.target; break;
                    case ElementAttr::LineStatus: break;
                }
            }
            s.sub_cooldown[a.substation] = 3;
            break;
        case ActionKind::ReconnectLine:
            s.topo.line_in_service[a.line] = 1;
            s.line_cooldown[a.line] = 3;
            break;
        case ActionKind::DisconnectLine:
            s.topo.line_in_service[a.line] = 0;
            s.line_cooldown[a.line] = 3;
            break;
    }
    (void)m;
}

}  // namespace

StepResult Environment::advance(GridState& s, const Action& action, bool use_chronics) const {
    if (s.done) throw std::logic_error("step on finished episode");

    StepResult r;
    for (int& c : s.line_cooldown)
        if (c > 0) --c;
    for (int& c : s.sub_cooldown)
        if (c > 0) --c;

    Action a = action;
    if (!action_legal_in(s, a)) {
        r.action_rejected = true;
        a = Action::do_nothing();
    }
    apply_action(model_, s, a);

    if (use_chronics) {
        if (s.k + 1 >= chronics_.n_steps()) throw std::out_of_range("chronics exhausted");
        ++s.k;
        s.gen_p = chronics_.gen_mw.row(s.k).transpose();
        s.load_p = chronics_.load_mw.row(s.k).transpose();
    }

    // power flow + trip cascade; soft overload counters update once per step
    bool soft_pending = true;
    bool failed = false;
    for (int iter = 0; iter <= 2 * model_.n_lines() + 2; ++iter) {
        FlowSolver fs(model_, s.topo);
        if (!fs.solvable() || !fs.all_loads_connected()) {
            failed = true;
            break;
        }
        s.flow_mw = fs.flows(s.gen_p, s.load_p);
        for (int l = 0; l < model_.n_lines(); ++l)
            s.rho[l] = s.topo.line_in_service[l]
                           ? std::abs(s.flow_mw[l]) / model_.lines[l].limit_mw
                           : 0.0;
        bool tripped = false;
        for (int l = 0; l < model_.n_lines(); ++l) {
            if (s.topo.line_in_service[l] && s.rho[l] >= 2.0) {
                s.topo.line_in_service[l] = 0;
                s.line_cooldown[l] = std::max(s.line_cooldown[l], 10);
                s.overload_steps[l] = 0;
                r.tripped_lines.push_back(l);
                tripped = true;
            }
        }
        if (tripped) continue;
        if (soft_pending) {
            soft_pending = false;
            for (int l = 0; l < model_.n_lines(); ++l) {
                if (!s.topo.line_in_service[l]) continue;
                s.overload_steps[l] = s.rho[l] > 1.0 ? s.overload_steps[l] + 1 : 0;
                if (s.overload_steps[l] >= 3) {
                    s.topo.line_in_service[l] = 0;
                    s.line_cooldown[l] = std::max(s.line_cooldown[l], 10);
                    s.overload_steps[l] = 0;
                    r.tripped_lines.push_back(l);
                    tripped = true;
                }
            }
            if (tripped) continue;
        }
        break;
    }

    if (failed) {
        s.done = true;
        s.legal = false;
        s.flow_mw.setZero();
        s.rho.setZero();
        r.reward = 0.0;
    } else {
        r.reward = line_margin_reward(model_, s.rho, s.topo.line_in_service);
    }
    r.done = s.done;
    r.legal = s.legal;
    r.obs = observe(model_, s);
    return r;
}

bool Environment::action_legal_in(const GridState& s, const Action& a) const {
    switch (a.kind) {
        case ActionKind::DoNothing:
            return true;
        case ActionKind::SetBusbars:
            return a.substation >= 0 && a.substation < model_.n_subs &&
                   s.sub_cooldown[a.substation] == 0;
        case ActionKind::ReconnectLine:
            return a.line >= 0 && a.line < model_.n_lines() && s.line_cooldown[a.line] == 0 &&
                   !s.topo.line_in_service[a.line];
        case ActionKind::DisconnectLine:
            return a.line >= 0 && a.line < model_.n_lines() && s.line_cooldown[a.line] == 0 &&
                   static_cast<bool>(s.topo.line_in_service[a.line]);
    }
    return false;
}

StepResult Environment::step(const Action& a) { return advance(state_, a, true); }

StepResult Environment::simulate(const Action& a) const {
    GridState copy = state_;
    return advance(copy, a, false);
}

std::optional<double> Environment::lookahead_max_rho(const Action& a, const Eigen::VectorXd& gen_p,
                                                     const Eigen::VectorXd& load_p) const {
    auto rhos = lookahead_rhos(a, gen_p, load_p);
    if (!rhos) return std::nullopt;
    return rhos->maxCoeff();
}

std::optional<Eigen::VectorXd> Environment::lookahead_rhos(const Action& a,
                                                           const Eigen::VectorXd& gen_p,
                                                           const Eigen::VectorXd& load_p) const {
    GridState copy = state_;
    if (!action_legal_in(copy, a)) return std::nullopt;
    apply_action(model_, copy, a);
    FlowSolver fs(model_, copy.topo);
    if (!fs.solvable() || !fs.all_loads_connected()) return std::nullopt;
    Eigen::VectorXd f = fs.flows(gen_p, load_p);
    Eigen::VectorXd rho = Eigen::VectorXd::Zero(model_.n_lines());
    for (int l = 0; l < model_.n_lines(); ++l)
        if (copy.topo.line_in_service[l]) rho[l] = std::abs(f[l]) / model_.lines[l].limit_mw;
    return rho;
}

}  // namespace gridres
