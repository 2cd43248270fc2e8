#ifndef GRIDRES_GRID_HPP
#define GRIDRES_GRID_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridres/rng.hpp"

namespace gridres {

// ---------------------------------------------------------------------------
// Static network description
// ---------------------------------------------------------------------------

struct LineSpec {
    int from_sub = -1;
    int to_sub = -1;
    double reactance = 0.0;  // per-unit, > 0
    double limit_mw = 0.0;   // thermal limit, > 0
};

struct GenSpec {
    int sub = -1;
    double p_max = 0.0;  // MW
    bool renewable = false;
};

struct LoadSpec {
    int sub = -1;
    double base_mw = 0.0;
};

struct GridModel {
    std::string name;
    int n_subs = 0;
    std::vector<LineSpec> lines;
    std::vector<GenSpec> gens;
    std::vector<LoadSpec> loads;
    int slack_sub = -1;

    int n_lines() const { return static_cast<int>(lines.size()); }
    int n_gens() const { return static_cast<int>(gens.size()); }
    int n_loads() const { return static_cast<int>(loads.size()); }
    int obs_size() const { return n_gens() + n_loads() + n_lines(); }
    int slack_gen() const;  // index of the generator at the slack substation

    // Elements connected to a substation, as (attribute key, element index).
    int elements_at(int sub) const;

    void validate() const;  // throws std::invalid_argument naming the violation
};

struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

GridModel load_grid(const std::string& path);
GridModel builtin_ieee14();

// ---------------------------------------------------------------------------
// Topology, actions
// ---------------------------------------------------------------------------

// Element endpoints that can be reassigned between the two busbars of a
// substation, plus the line in-service status attribute. Encoded as a single
// integer key so change-sets are plain sorted vectors.
enum class ElementAttr { LineOrigin, LineExt, Gen, Load, LineStatus };

struct Change {
    ElementAttr attr;
    int element;  // line/gen/load index
    int target;   // busbar 1 or 2; for LineStatus 0=off, 1=on

    bool same_slot(const Change& o) const { return attr == o.attr && element == o.element; }
    auto operator<=>(const Change&) const = default;
};

struct Topology {
    std::vector<int> line_or_bus;  // busbar of each line origin (1 or 2)
    std::vector<int> line_ex_bus;
    std::vector<int> gen_bus;
    std::vector<int> load_bus;
    std::vector<char> line_in_service;

    static Topology reference(const GridModel& m);
    bool operator==(const Topology&) const = default;
};

enum class ActionKind { DoNothing, SetBusbars, ReconnectLine, DisconnectLine };

struct Action {
    ActionKind kind = ActionKind::DoNothing;
    int substation = -1;               // SetBusbars
    std::vector<Change> changes;       // change-set c^a (sorted)
    int line = -1;                     // line actions
    int id = 0;                        // index in the enumerated action table

    static Action do_nothing() { return Action{}; }
    bool is_do_nothing() const { return kind == ActionKind::DoNothing; }
    bool operator==(const Action&) const = default;
};

// Affected-substation set v^a.
std::vector<int> action_substations(const GridModel& m, const Action& a);

// Topology after applying `a` (statuses and busbar assignments only).
Topology with_action(const GridModel& m, const Topology& t, const Action& a);

Action make_set_busbars(const GridModel& m, int sub, const std::vector<Change>& assignment);
Action make_reconnect(const GridModel& m, int line);
Action make_disconnect(const GridModel& m, int line);

// All two-busbar splits (modulo busbar symmetry, both sides kept electrically
// meaningful) for substations with >= 4 elements, plus line reconnections and
// the do-nothing action. Do-nothing is always id 0.
std::vector<Action> enumerate_actions(const GridModel& m, int cap = 150);

// ---------------------------------------------------------------------------
// Chronics
// ---------------------------------------------------------------------------

struct Chronics {
    Eigen::MatrixXd load_mw;  // steps x n_loads
    Eigen::MatrixXd gen_mw;   // steps x n_gens, available generation
    std::uint64_t seed = 0;

    int n_steps() const { return static_cast<int>(load_mw.rows()); }
};

Chronics generate_chronics(const GridModel& m, int steps, std::uint64_t seed);
Chronics load_chronics_csv(const std::string& path, const GridModel& m);

// ---------------------------------------------------------------------------
// Power flow
// ---------------------------------------------------------------------------

// DC power flow for one fixed topology. Nodes are the occupied (substation,
// busbar) pairs; only the slack island is solved. Injections map linearly to
// flows, so repeated solves with new injections are a single back-substitution.
class FlowSolver {
  public:
    FlowSolver(const GridModel& m, const Topology& t);

    bool solvable() const { return solvable_; }
    bool all_loads_connected() const { return all_loads_connected_; }

    // Dispatch per generator and demand per load, in MW. The slack generator
    // absorbs the island-wide residual. Out-of-service and off-island lines
    // report zero flow.
    Eigen::VectorXd flows(const Eigen::VectorXd& gen_p, const Eigen::VectorXd& load_p) const;

  private:
    const GridModel* model_;
    int n_nodes_ = 0;
    int slack_node_ = -1;
    std::vector<int> gen_node_, load_node_;      // -1 when off-island
    std::vector<int> line_from_, line_to_;       // node ids, -1 when inactive
    std::vector<double> line_b_;                 // 1/x
    std::vector<int> island_index_;              // node -> reduced index, slack maps past the end
    int n_reduced_ = 0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu_;       // reduced susceptance matrix
    bool solvable_ = false;
    bool all_loads_connected_ = false;
};

// One-shot convenience wrapper around FlowSolver.
struct FlowResult {
    Eigen::VectorXd flows;
    bool converged = false;
    bool all_loads_connected = false;
};
FlowResult dc_power_flow(const GridModel& m, const Topology& t,
                         const Eigen::VectorXd& gen_p, const Eigen::VectorXd& load_p);

// ---------------------------------------------------------------------------
// Dynamic state, environment
// ---------------------------------------------------------------------------

struct ObsLayout {
    int n_gen = 0, n_load = 0, n_flow = 0;
    int size() const { return n_gen + n_load + n_flow; }
    int gen_offset() const { return 0; }
    int load_offset() const { return n_gen; }
    int flow_offset() const { return n_gen + n_load; }
    // group 0=gen, 1=load, 2=flow
    int group(int i) const { return i < n_gen ? 0 : (i < n_gen + n_load ? 1 : 2); }
    int element(int i) const { return i < n_gen ? i : (i < n_gen + n_load ? i - n_gen : i - n_gen - n_load); }
    static ObsLayout of(const GridModel& m) { return {m.n_gens(), m.n_loads(), m.n_lines()}; }
};

struct Observation {
    Eigen::VectorXd values;  // [gen | load | flow], MW
};

struct GridState {
    int k = 0;
    Topology topo;
    std::vector<int> overload_steps;  // consecutive steps with rho > 1, per line
    std::vector<int> line_cooldown;
    std::vector<int> sub_cooldown;
    Eigen::VectorXd gen_p, load_p;  // MW
    Eigen::VectorXd flow_mw;
    Eigen::VectorXd rho;
    bool done = false;
    bool legal = true;
};

struct StepResult {
    Observation obs;
    double reward = 0.0;
    bool done = false;
    bool legal = true;
    bool action_rejected = false;
    std::vector<int> tripped_lines;
};

class Environment {
  public:
    Environment(GridModel model, Chronics chronics);

    void reset();
    const GridModel& model() const { return model_; }
    const GridState& state() const { return state_; }
    const Chronics& chronics() const { return chronics_; }
    const std::vector<Action>& actions() const { return actions_; }

    Observation observe() const;
    static Observation observe(const GridModel& m, const GridState& s);

    bool action_legal(const Action& a) const;
    StepResult step(const Action& a);
    // Persistence-forecast lookahead: same rules as step, current injections,
    // no state mutation.
    StepResult simulate(const Action& a) const;

    // Lookahead max line loading under the given injections after applying
    // `a` to the current topology. Returns nullopt when the resulting grid is
    // unsolvable or drops a load.
    std::optional<double> lookahead_max_rho(const Action& a, const Eigen::VectorXd& gen_p,
                                            const Eigen::VectorXd& load_p) const;
    // Per-line loadings for the same lookahead; out-of-service lines report 0.
    std::optional<Eigen::VectorXd> lookahead_rhos(const Action& a, const Eigen::VectorXd& gen_p,
                                                  const Eigen::VectorXd& load_p) const;

  private:
    StepResult advance(GridState& s, const Action& a, bool use_chronics) const;
    bool action_legal_in(const GridState& s, const Action& a) const;

    GridModel model_;
    Chronics chronics_;
    std::vector<Action> actions_;
    GridState state_;
};

double line_margin_reward(const GridModel& m, const Eigen::VectorXd& rho,
                          const std::vector<char>& in_service);

}  // namespace gridres

#endif
