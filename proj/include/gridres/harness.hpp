#ifndef GRIDRES_HARNESS_HPP
#define GRIDRES_HARNESS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "gridres/defender.hpp"
#include "gridres/grid.hpp"
#include "gridres/metrics.hpp"
#include "gridres/perturbers.hpp"

namespace gridres {

enum class PerturberKind { None, Rpa, Gepa, Rlpa };

struct RlpaRunConfig {
    std::string q_path;  // persisted Q table; trained in-process when empty
    std::string p_path;  // persisted perturbation set
    RlpaConfig train;
    ReductionConfig reduction;
    int pool_size = 50;
    double eval_epsilon = 0.0;  // pure greedy at evaluation
};

struct CampaignConfig {
    std::string grid_path = "ieee14";
    int episodes = 10;
    int max_steps = 2016;
    std::uint64_t seed = 1;
    DefenderConfig defender;
    PerturberKind perturber = PerturberKind::None;
    RpaConfig rpa;
    GepaConfig gepa;
    RlpaRunConfig rlpa;
    MetricParams metrics;
    std::string out_dir = "out";
};

// Strict parser: unknown keys are rejected.
CampaignConfig load_config(const std::string& path);
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CampaignResult {
    CampaignConfig config;
    std::vector<EpisodeTrace> traces;
    RobustnessReport robustness;
    ResilienceReport resilience;
};

// Runs the unperturbed and the perturbed member on the same chronics and
// seeds; only the attacker stream differs between campaigns.
EpisodeTrace run_paired_episode(const GridModel& model, const CampaignConfig& cfg,
                                int episode_index, const PerturbSpace* space, const QFunction* q);

CampaignResult run_campaign(const CampaignConfig& cfg);

// Builds the observation pool, reduces the perturbation space, trains the
// tabular Q attacker, and persists both files.
void train_rlpa(const CampaignConfig& cfg, const std::string& q_out, const std::string& p_out);

void emit_outputs(const CampaignResult& result);

void save_trace(const EpisodeTrace& t, const std::string& path);
EpisodeTrace load_trace(const std::string& path);

// Recompute aggregate reports from persisted traces.
CampaignResult recompute_from_traces(const CampaignConfig& cfg);

AttackerKind attacker_kind(PerturberKind p);

}  // namespace gridres

#endif
