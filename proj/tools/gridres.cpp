#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gridres/harness.hpp"

namespace {

struct Overrides {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<int> episodes;
    std::optional<int> max_steps;
    std::optional<std::string> out;
    std::optional<std::string> perturber;
    std::optional<double> p, sigma_gen, sigma_load, sigma_flow;
    std::optional<int> w;
    std::optional<double> zeta, xi;
    std::optional<double> alpha, epsilon, gamma;
};

void add_common(CLI::App* sub, Overrides& o) {
    sub->add_option("--config", o.config, "campaign config file (JSON)");
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--episodes", o.episodes, "episodes per campaign");
    sub->add_option("--max-steps", o.max_steps, "steps per episode");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--perturber", o.perturber, "none|rpa|gepa|rlpa");
    sub->add_option("--p", o.p, "random perturber firing probability");
    sub->add_option("--sigma-gen", o.sigma_gen, "random perturber sigma, generator readings");
    sub->add_option("--sigma-load", o.sigma_load, "random perturber sigma, load readings");
    sub->add_option("--sigma-flow", o.sigma_flow, "random perturber sigma, flow readings");
    sub->add_option("--w", o.w, "gradient attack iterations");
    sub->add_option("--zeta", o.zeta, "gradient attack step size");
    sub->add_option("--xi", o.xi, "relative perturbation budget");
    sub->add_option("--alpha", o.alpha, "Q-learning rate");
    sub->add_option("--epsilon", o.epsilon, "Q-learning exploration rate");
    sub->add_option("--gamma", o.gamma, "Q-learning discount");
}

gridres::CampaignConfig build_config(const Overrides& o) {
    gridres::CampaignConfig cfg;
    if (o.config) cfg = gridres::load_config(*o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.episodes) cfg.episodes = *o.episodes;
    if (o.max_steps) cfg.max_steps = *o.max_steps;
    if (o.out) cfg.out_dir = *o.out;
    if (o.perturber) {
        const std::string& s = *o.perturber;
        if (s == "none") cfg.perturber = gridres::PerturberKind::None;
        else if (s == "rpa") cfg.perturber = gridres::PerturberKind::Rpa;
        else if (s == "gepa") cfg.perturber = gridres::PerturberKind::Gepa;
        else if (s == "rlpa") cfg.perturber = gridres::PerturberKind::Rlpa;
        else throw gridres::ConfigError("unknown perturber '" + s + "'");
    }
    if (o.p) cfg.rpa.p = *o.p;
    if (o.sigma_gen) cfg.rpa.sigma_gen = *o.sigma_gen;
    if (o.sigma_load) cfg.rpa.sigma_load = *o.sigma_load;
    if (o.sigma_flow) cfg.rpa.sigma_flow = *o.sigma_flow;
    if (o.w) cfg.gepa.iterations = *o.w;
    if (o.zeta) cfg.gepa.step_size = *o.zeta;
    if (o.xi) {
        cfg.gepa.cap = *o.xi;
        cfg.rlpa.train.xi = *o.xi;
    }
    if (o.alpha) cfg.rlpa.train.alpha = *o.alpha;
    if (o.epsilon) cfg.rlpa.train.epsilon = *o.epsilon;
    if (o.gamma) cfg.rlpa.train.gamma = *o.gamma;
    return cfg;
}

void print_summary(const gridres::CampaignResult& r) {
    std::cout << "episodes: " << r.robustness.episodes << "\n"
              << "total reward delta (mean): " << r.robustness.mean_total_reward_delta << "\n"
              << "action changes per 1000 steps: " << r.robustness.action_changes_per_1000 << "\n"
              << "survival perturbed/unperturbed: " << r.robustness.mean_survival_p << " / "
              << r.robustness.mean_survival_u << "\n";
}

void write_weakmap(const gridres::CampaignResult& r, const std::string& path) {
    gridres::GridModel model = gridres::load_grid(r.config.grid_path);
    gridres::ObsLayout lay = gridres::ObsLayout::of(model);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "index,group,element,score\n";
    const char* names[3] = {"gen", "load", "flow"};
    for (int i = 0; i < lay.size(); ++i) {
        out << i << "," << names[lay.group(i)] << "," << lay.element(i) << ",";
        if (i < static_cast<int>(r.robustness.weak_spot.size()) && r.robustness.weak_spot[i])
            out << *r.robustness.weak_spot[i];
        out << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"robustness and resilience evaluation of a grid-operating agent"};
    app.require_subcommand(1);

    Overrides o;
    CLI::App* run = app.add_subcommand("run", "run a perturbation campaign");
    CLI::App* train = app.add_subcommand("train-rlpa", "train the RL perturber and persist it");
    CLI::App* report = app.add_subcommand("report", "recompute metrics from persisted traces");
    CLI::App* weakmap = app.add_subcommand("weakmap", "emit per-index vulnerability scores");
    std::string q_out = "q.json", p_out = "pset.json";
    train->add_option("--q-out", q_out, "Q-table output file");
    train->add_option("--p-out", p_out, "perturbation-set output file");
    for (CLI::App* sub : {run, train, report, weakmap}) add_common(sub, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        gridres::CampaignConfig cfg = build_config(o);
        if (run->parsed()) {
            gridres::CampaignResult result = gridres::run_campaign(cfg);
            gridres::emit_outputs(result);
            print_summary(result);
        } else if (train->parsed()) {
            gridres::train_rlpa(cfg, q_out, p_out);
            std::cout << "wrote " << q_out << " and " << p_out << "\n";
        } else if (report->parsed()) {
            gridres::CampaignResult result = gridres::recompute_from_traces(cfg);
            gridres::emit_outputs(result);
            print_summary(result);
        } else if (weakmap->parsed()) {
            gridres::CampaignResult result = gridres::recompute_from_traces(cfg);
            std::filesystem::create_directories(cfg.out_dir);
            write_weakmap(result, cfg.out_dir + "/weakmap.csv");
            std::cout << "wrote " << cfg.out_dir + "/weakmap.csv" << "\n";
        }
    } catch (const gridres::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
