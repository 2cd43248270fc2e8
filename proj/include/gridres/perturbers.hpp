#ifndef GRIDRES_PERTURBERS_HPP
#define GRIDRES_PERTURBERS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gridres/grid.hpp"
#include "gridres/rng.hpp"

namespace gridres {

// ---------------------------------------------------------------------------
// Random perturbation agent
// ---------------------------------------------------------------------------

struct PerturbationRecord {
    int index = -1;  // observation index
    bool zero = false;
    double factor = 1.0;  // multiplicative, when not zeroed
    int remaining = 0;    // steps left; dropped at 0
};

struct RpaConfig {
    double p = 0.2;
    double sigma_gen = 0.3;
    double sigma_load = 0.3;
    double sigma_flow = 0.3;
};

// One step of the random perturber: applies the active records, then with
// probability p draws a fresh perturbation (zero w.p. 0.2, else a lognormal
// scale factor), applies it and keeps it alive for Geometric(1/6) steps.
// The true state is never touched; only the returned copy differs.
// `applied`, when given, is resized to the observation length and marks the
// indices perturbed this step.
Observation rpa_apply(const RpaConfig& cfg, Rng& rng, std::vector<PerturbationRecord>& pp,
                      const Observation& obs, const ObsLayout& lay,
                      std::vector<char>* applied = nullptr);

// ---------------------------------------------------------------------------
// Gradient estimation / PGD
// ---------------------------------------------------------------------------

struct GepaConfig {
    int iterations = 10;    // W
    double step_size = 0.02;  // zeta
    double cap = 0.10;        // xi, elementwise relative budget
    double h_fd = 0.01;       // central-difference half-step
};

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;

// Central differences with fixed half-step: g_i = (L(s+h e_i) - L(s-h e_i)) / 2h.
Eigen::VectorXd estimate_gradient(const ScalarFn& L, const Eigen::VectorXd& s, double h_fd = 0.01);

// Projected gradient descent on L (the score of the defender's current best
// action); every element stays within the relative cap of its true value.
Eigen::VectorXd gepa_attack(const GepaConfig& cfg, const ScalarFn& L, const Eigen::VectorXd& s);

// One-shot FGSM toward a target action: maximizes L_target, step eta_i = xi*|s_i|.
Eigen::VectorXd fgsm_attack(double xi, const ScalarFn& L_target, const Eigen::VectorXd& s,
                            double h_fd = 0.01);

// ---------------------------------------------------------------------------
// RL-based perturbation agent
// ---------------------------------------------------------------------------

struct PerturbationAction {
    enum class Kind { DoNothing, SetValues, AdversarialToward };
    enum class Fill { Zero, Large };
    Kind kind = Kind::DoNothing;
    std::vector<int> indices;  // SetValues targets, at most 3
    Fill fill = Fill::Zero;
    int target_action = -1;  // defender action id for AdversarialToward
};

struct PerturbSpace {
    std::vector<PerturbationAction> actions;  // index 0 is DoNothing
    Eigen::VectorXd large_fill;               // per observation index
};

struct RlpaConfig {
    int episodes = 40;       // H
    int max_steps = 2016;    // K
    double alpha = 0.1;
    double epsilon = 0.1;
    double gamma = 0.95;
    double xi = 0.10;
    double terminal_bonus = 100.0;  // attacker bonus when the grid fails
};

Observation apply_set_values(const PerturbationAction& a, const Observation& obs,
                             const Eigen::VectorXd& large_fill);

// Discretized attacker-state features: max-rho bucket x overloaded-line count
// bucket x time-of-day quarter. 60 states.
int attacker_state(const GridModel& m, const GridState& s);
inline constexpr int kAttackerStates = 60;

class QFunction {
  public:
    explicit QFunction(int n_actions = 0) : n_actions_(n_actions) {}

    int n_actions() const { return n_actions_; }
    bool empty() const { return table_.empty(); }
    double value(int state, int action) const;
    double max_value(int state) const;
    void update(int state, int action, double target_delta);
    // ties prefer DoNothing (action 0), then the lowest action id
    int greedy(int state) const;

    const std::map<int, std::vector<double>>& table() const { return table_; }
    void set(int state, int action, double v);

    void save(const std::string& path) const;
    static QFunction load(const std::string& path);

  private:
    std::vector<double>& row(int state);
    int n_actions_;
    std::map<int, std::vector<double>> table_;
};

// Minimal episodic interface for Q-learning; the production adapter wraps the
// grid environment and the defender, tests plug in toy problems.
class AttackEnv {
  public:
    virtual ~AttackEnv() = default;
    virtual int reset() = 0;
    struct Outcome {
        int next_state;
        double reward;
        bool done;
    };
    virtual Outcome step(int action_index) = 0;
};

// Epsilon-greedy pick over the reduced action set.
int rlpa_act(const QFunction& q, int state, double epsilon, int n_actions, Rng& rng);

// Tabular Q-learning over the reduced perturbation set.
QFunction rlpa_train(const RlpaConfig& cfg, AttackEnv& env, int n_actions, Rng& rng);

// ---------------------------------------------------------------------------
// Greedy action-space reduction
// ---------------------------------------------------------------------------

struct ReductionConfig {
    int budget = 8;       // SetValues actions kept
    int top_singles = 6;  // singles extended to pairs/triples
};

// Defender access for the reduction: the gated chosen-action id under an
// arbitrary observation, and the score of a given action under an observation.
struct DefenderOracle {
    std::function<int(const Observation&)> choose;
    std::function<double(const Observation&, int)> score;
};

// Any perturbation that leaves the decision unchanged is harmless; a flipped
// decision is worth at least this much when ranking candidates.
inline constexpr double kFlipFloor = 1e-3;

// Candidates are ranked by mean decision harm over the pool: zero when the
// perturbed observation leaves the chosen action unchanged, otherwise the
// true-observation score gap between the counterfactual and the forced action
// (floored at kFlipFloor so every flip outranks every non-flip).
PerturbSpace reduce_action_space(const ReductionConfig& cfg,
                                 const std::vector<Observation>& pool,
                                 const DefenderOracle& defender,
                                 const std::vector<Action>& defender_actions);

void save_perturb_space(const PerturbSpace& p, const std::string& path);
PerturbSpace load_perturb_space(const std::string& path);

}  // namespace gridres

#endif
