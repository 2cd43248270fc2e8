#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>

#include "gridres/defender.hpp"
#include "gridres/grid.hpp"

using namespace gridres;

namespace {

Environment make_env(std::uint64_t seed, int steps = 60) {
    GridModel m = builtin_ieee14();
    return Environment(m, generate_chronics(m, steps + 1, seed));
}

}  // namespace

TEST_CASE("max loading reading comes from the flow segment only") {
    Environment env = make_env(1);
    const GridModel& m = env.model();
    Observation obs = env.observe();
    double expect = 0.0;
    for (int l = 0; l < m.n_lines(); ++l)
        expect = std::max(expect, std::abs(obs.values[16 + l]) / m.lines[l].limit_mw);
    CHECK(Defender::max_rho_reading(m, obs) == doctest::Approx(expect).epsilon(1e-12));

    // inflating a generator reading does not move the loading readout
    Observation tweaked = obs;
    tweaked.values[0] *= 100.0;
    CHECK(Defender::max_rho_reading(m, tweaked) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("quiet readings gate the policy to do-nothing") {
    Environment env = make_env(1);
    Defender d;
    Observation obs = env.observe();
    REQUIRE(Defender::max_rho_reading(env.model(), obs) < d.config().rho_act);
    Action a = d.act(obs, env);
    CHECK(a.is_do_nothing());
    CHECK(d.chosen_action_id(obs, env) == 0);
}

TEST_CASE("a loud flow reading with flat injections picks the lowest id on ties") {
    Environment env = make_env(1);
    Defender d;
    // zero injections: every simulable action scores identically
    Observation obs;
    obs.values = Eigen::VectorXd::Zero(env.model().obs_size());
    obs.values[16] = 2.0 * env.model().lines[0].limit_mw;  // loud flow reading opens the gate
    REQUIRE(Defender::max_rho_reading(env.model(), obs) > d.config().rho_act);
    PolicyScores ps = d.policy_scores(obs, env);
    double top = ps.scores.maxCoeff();
    int ties = 0;
    for (int i = 0; i < ps.scores.size(); ++i) ties += (ps.scores[i] == top);
    REQUIRE(ties > 1);
    CHECK(ps.argmax == 0);
    CHECK(d.chosen_action_id(obs, env) == 0);
}

TEST_CASE("scores follow the observation-implied injections, not the true state") {
    Environment env = make_env(2);
    Defender d;
    Observation obs = env.observe();
    double base = d.action_score(obs, env, 0);
    // scale the injection readings: the do-nothing score must drop
    Observation hot = obs;
    hot.values.head(16) *= 1.6;
    double stressed = d.action_score(hot, env, 0);
    CHECK(stressed < base);
    // flow readings carry no weight in the score
    Observation noisy = obs;
    noisy.values.tail(20) *= 3.0;
    CHECK(d.action_score(noisy, env, 0) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("action score equals one minus max loading minus weighted mean loading") {
    Environment env = make_env(3);
    DefenderConfig cfg;
    Defender d(cfg);
    Observation obs = env.observe();
    for (int id : {0, 1, 2}) {
        if (id >= static_cast<int>(env.actions().size())) continue;
        auto rhos = env.lookahead_rhos(env.actions()[id], obs.values.head(5),
                                       obs.values.segment(5, 11));
        REQUIRE(rhos.has_value());
        double expect = 1.0 - rhos->maxCoeff() - cfg.congestion_weight * rhos->mean();
        CHECK(d.action_score(obs, env, id) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("unsimulable actions are scored out of contention") {
    GridModel m;
    m.name = "star";
    m.n_subs = 4;
    m.lines = {{0, 1, 0.1, 10}, {0, 2, 0.1, 10}, {0, 3, 0.1, 10}, {1, 2, 0.1, 10}};
    m.gens = {{0, 5.0, false}};
    m.loads = {{1, 1.0}, {2, 1.0}, {3, 1.0}};
    m.slack_sub = 0;
    Chronics c;
    c.load_mw = Eigen::MatrixXd::Constant(5, 3, 1.0);
    c.gen_mw = Eigen::MatrixXd::Constant(5, 1, 3.0);
    Environment env(m, c);
    Defender d;
    Observation obs = env.observe();
    // disconnecting the only feeder of load 3 islands it
    Action iso = make_disconnect(m, 2);
    auto rhos = env.lookahead_rhos(iso, obs.values.head(1), obs.values.segment(1, 3));
    REQUIRE(!rhos.has_value());
}

TEST_CASE("the defender acts under load stress and its pick beats waiting") {
    GridModel m = builtin_ieee14();
    Chronics ch = generate_chronics(m, 2017, 1);
    ch.load_mw *= 1.25;  // push the grid toward congestion
    Environment env(m, ch);
    Defender d;
    int real_actions = 0;
    for (int k = 0; k < 2016 && !env.state().done; ++k) {
        Observation obs = env.observe();
        Action a = d.act(obs, env);
        if (!a.is_do_nothing() && a.kind == ActionKind::SetBusbars) {
            ++real_actions;
            // the selected action must strictly outscore doing nothing
            CHECK(d.action_score(obs, env, a.id) > d.action_score(obs, env, 0));
        }
        env.step(a);
    }
    CHECK(real_actions > 0);
}

TEST_CASE("restoration: reference topology is re-established when the grid is quiet") {
    Environment env = make_env(4, 40);
    Defender d;
    Topology ref = Topology::reference(env.model());
    const Action* split = nullptr;
    for (const auto& a : env.actions())
        if (a.kind == ActionKind::SetBusbars) {
            split = &a;
            break;
        }
    REQUIRE(split != nullptr);
    env.step(*split);
    REQUIRE(env.state().topo != ref);
    // wait out the substation cooldown
    env.step(Action::do_nothing());
    env.step(Action::do_nothing());
    env.step(Action::do_nothing());

    Observation obs = env.observe();
    REQUIRE(Defender::max_rho_reading(env.model(), obs) < d.config().rho_safe);
    Action r = d.act(obs, env);
    CHECK(!r.is_do_nothing());
    env.step(r);
    CHECK(env.state().topo == ref);

    // once at reference, quiet readings produce no further moves
    Observation again = env.observe();
    CHECK(d.act(again, env).is_do_nothing());
}

TEST_CASE("the policy is a pure function of the observation") {
    Environment env = make_env(5);
    Defender d;
    Observation obs = env.observe();
    Action a1 = d.act(obs, env);
    Action a2 = d.act(obs, env);
    CHECK(a1 == a2);
    PolicyScores p1 = d.policy_scores(obs, env);
    PolicyScores p2 = d.policy_scores(obs, env);
    CHECK(p1.scores == p2.scores);
    CHECK(p1.argmax == p2.argmax);
}

TEST_CASE("the cached scorer agrees with direct action scoring") {
    Environment env = make_env(6);
    Defender d;
    Observation obs = env.observe();
    for (int id : {0, 1, 5}) {
        if (id >= static_cast<int>(env.actions().size())) continue;
        auto fn = d.score_fn(env, id);
        CHECK(fn(obs.values) == doctest::Approx(d.action_score(obs, env, id)).epsilon(1e-12));
        // and under a modified observation as well
        Eigen::VectorXd v = obs.values;
        v.head(16) *= 1.1;
        Observation mod{v};
        CHECK(fn(v) == doctest::Approx(d.action_score(mod, env, id)).epsilon(1e-12));
    }
}
