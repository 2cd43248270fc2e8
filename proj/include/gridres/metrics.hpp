#ifndef GRIDRES_METRICS_HPP
#define GRIDRES_METRICS_HPP

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "gridres/grid.hpp"

namespace gridres {

// Per-step paired record of one unperturbed/perturbed episode pair. Every
// metric below is a pure function of this data.
struct EpisodeTrace {
    // unperturbed member
    std::vector<double> reward_u;
    std::vector<char> acted_u;  // executed action != do-nothing
    std::vector<char> legal_u;
    Eigen::MatrixXd state_u;  // step x obs size, true sensor vectors

    // perturbed member
    std::vector<double> reward_p;
    std::vector<Action> action_cf;   // counterfactual: defender queried on true obs
    std::vector<Action> action_adv;  // executed: defender on the perturbed obs
    std::vector<char> legal_p;
    Eigen::MatrixXd state_p;
    Eigen::MatrixXd obs_delta;                      // perturbed minus true, per step
    std::vector<std::vector<char>> perturbed_idx;  // step x obs index

    int h_p = -1;  // first step with any altered observation value, -1 if none

    int steps_u() const { return static_cast<int>(reward_u.size()); }
    int steps_p() const { return static_cast<int>(reward_p.size()); }
};

// sum of unperturbed rewards minus sum of perturbed rewards, each over its
// own run length
double total_reward_delta(const EpisodeTrace& t);

// number of perturbed-run steps where the executed action differs from the
// counterfactual one
int action_change_count(const EpisodeTrace& t);

// Change-set / substation-set similarity in [0,1]. Do-nothing pairs score 1
// against each other and 0 against any real action.
double action_similarity(const GridModel& m, const Action& a1, const Action& a2);

// mean similarity over steps where the executed action differs from the
// counterfactual; nullopt when no action changed
std::optional<double> mean_similarity_per_changed_action(const GridModel& m,
                                                         const EpisodeTrace& t);

int survival_steps(const EpisodeTrace& t);

std::optional<double> reward_per_action(const std::vector<double>& rewards,
                                        const std::vector<char>& acted);

enum class AttackerKind { None, Rpa, Gepa, Rlpa };

// Per-index proportion of perturbed steps that changed the action. For GEPA,
// "perturbed" means the per-index change falls outside mu_i +/- sigma_i taken
// over the whole campaign; for the others the recorded flags are used.
// Indices never perturbed map to nullopt.
std::vector<std::optional<double>> weak_spot_map(const std::vector<EpisodeTrace>& traces,
                                                 AttackerKind kind);

// trapezoidal integral of R_p - R_u over [h_p, min(K_u, K_p))
double reward_gap_area(const EpisodeTrace& t);
double trapezoid(const std::vector<double>& delta, int first, int last);

double cosine_series_value(const Eigen::VectorXd& a, const Eigen::VectorXd& b);  // nan on zero vec
std::optional<double> cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// per-step cosine similarity between the paired runs, truncated to the
// shorter run
std::vector<double> cosine_series(const EpisodeTrace& t);
std::vector<double> reward_delta_series(const EpisodeTrace& t);  // R_p - R_u

struct SegmentationParams {
    int window = 50;            // centered moving-average width
    double open_threshold = 0;  // event opens when the smoothed series drops below
};

struct DegradationEvent {
    int start = 0;     // h_p of the event: first smoothed sample below threshold
    int trough = 0;    // h_min
    int recovery = 0;  // h_max
    double series_min = 0.0;  // raw extrema on [start, recovery]
    double series_max = 0.0;

    int degradation_time() const { return trough - start; }
    int restorative_time() const { return recovery - trough; }
};

std::vector<double> moving_average(const std::vector<double>& series, int window);
std::vector<DegradationEvent> degradation_segments(const std::vector<double>& series, int h_p,
                                                   const SegmentationParams& params);

// ---------------------------------------------------------------------------
// Aggregated reports
// ---------------------------------------------------------------------------

struct MetricParams {
    int window = 50;
    double theta_reward = 0.05;  // reward-delta event threshold
    double theta_cosine = 0.02;  // cosine event threshold (below 1 - theta)
};

struct RobustnessReport {
    int episodes = 0;
    double mean_total_reward_delta = 0.0;
    double mean_total_reward_u = 0.0;
    double mean_total_reward_p = 0.0;
    double mean_action_changes = 0.0;
    double action_changes_per_1000 = 0.0;
    std::optional<double> similarity_per_changed_action;
    int episodes_with_changes = 0;
    double mean_survival_u = 0.0;
    double mean_survival_p = 0.0;
    std::optional<double> reward_per_action_u;
    std::optional<double> reward_per_action_p;
    int episodes_with_actions_u = 0;
    int episodes_with_actions_p = 0;
    std::vector<std::optional<double>> weak_spot;
};

struct SeriesResilience {
    int total_events = 0;
    double events_per_1000 = 0.0;
    std::optional<double> mean_degradation_time;
    std::optional<double> mean_restorative_time;
    std::optional<double> mean_series_min;
    std::optional<double> mean_series_max;
};

struct ResilienceReport {
    double mean_reward_gap_area = 0.0;
    double reward_gap_area_per_1000 = 0.0;
    SeriesResilience reward;  // on the reward-delta series
    SeriesResilience cosine;  // on the state-similarity series
};

RobustnessReport build_robustness_report(const GridModel& m,
                                         const std::vector<EpisodeTrace>& traces,
                                         AttackerKind kind);
ResilienceReport build_resilience_report(const std::vector<EpisodeTrace>& traces,
                                         const MetricParams& params);

}  // namespace gridres

#endif
