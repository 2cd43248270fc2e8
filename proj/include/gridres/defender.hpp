#ifndef GRIDRES_DEFENDER_HPP
#define GRIDRES_DEFENDER_HPP

#include <Eigen/Dense>
#include <functional>

#include "gridres/grid.hpp"

namespace gridres {

struct DefenderConfig {
    double rho_act = 0.95;   // activation threshold on the max line-loading reading
    double rho_safe = 0.80;  // below this, restore the reference topology
    // Weight of the mean-loading term in the action score. It separates
    // actions that address the binding overload from unrelated ones whose max
    // loading merely ties, so near-ties in the argmax are meaningful.
    double congestion_weight = 0.05;
};

struct PolicyScores {
    Eigen::VectorXd scores;  // one per action in the environment's action table
    int argmax = 0;          // gated: do-nothing wins while the grid reads quiet
};

// Greedy one-step-lookahead agent. It reconstructs its world model from the
// observation verbatim (generation and load readings become the injections it
// simulates with), so a perturbed observation changes its scores.
class Defender {
  public:
    explicit Defender(DefenderConfig cfg = {}) : cfg_(cfg) {}

    const DefenderConfig& config() const { return cfg_; }

    // Max line-loading as read from the observation's flow entries.
    static double max_rho_reading(const GridModel& m, const Observation& obs);

    // score(a) = 1 - max_l rho_hat(a) under the observation-implied injections.
    PolicyScores policy_scores(const Observation& obs, const Environment& env) const;
    double action_score(const Observation& obs, const Environment& env, int action_id) const;

    // Gated chosen action id: do-nothing unless the readings cross rho_act.
    int chosen_action_id(const Observation& obs, const Environment& env) const;
    Action act(const Observation& obs, const Environment& env) const;

    // Repeated scoring of one fixed action with varying observations; the
    // per-topology power-flow factorization is computed once.
    std::function<double(const Eigen::VectorXd&)> score_fn(const Environment& env,
                                                           int action_id) const;

  private:
    Action restore_step(const Environment& env) const;  // first legal reference-restoring action

    DefenderConfig cfg_;
};

inline constexpr double kUnsimulableScore = -1e9;

}  // namespace gridres

#endif
