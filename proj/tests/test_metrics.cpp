#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>

#include "gridres/grid.hpp"
#include "gridres/metrics.hpp"

using namespace gridres;

namespace {

Action split_action(const GridModel& m, std::vector<Change> changes, int id = 1) {
    Action a;
    a.kind = ActionKind::SetBusbars;
    std::sort(changes.begin(), changes.end());
    a.changes = std::move(changes);
    a.id = id;
    a.substation = m.lines.empty() ? 0 : m.lines[a.changes.front().element].from_sub;
    return a;
}

EpisodeTrace minimal_trace(int steps, int n_obs) {
    EpisodeTrace t;
    t.reward_u.assign(steps, 1.0);
    t.reward_p.assign(steps, 1.0);
    t.acted_u.assign(steps, 0);
    t.legal_u.assign(steps, 1);
    t.legal_p.assign(steps, 1);
    t.action_cf.assign(steps, Action::do_nothing());
    t.action_adv.assign(steps, Action::do_nothing());
    t.state_u = Eigen::MatrixXd::Ones(steps, n_obs);
    t.state_p = Eigen::MatrixXd::Ones(steps, n_obs);
    t.obs_delta = Eigen::MatrixXd::Zero(steps, n_obs);
    t.perturbed_idx.assign(steps, std::vector<char>(n_obs, 0));
    t.h_p = -1;
    return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Robustness metrics
// ---------------------------------------------------------------------------

TEST_CASE("total reward delta is the paired-run difference of sums") {
    EpisodeTrace t = minimal_trace(4, 2);
    CHECK(total_reward_delta(t) == 0.0);
    t.reward_p = {0.5, 0.5, 0.5, 0.5};
    CHECK(total_reward_delta(t) == doctest::Approx(2.0));
    // runs of unequal length are each summed over their own horizon
    t.reward_p = {0.5, 0.5};
    CHECK(total_reward_delta(t) == doctest::Approx(3.0));
}

TEST_CASE("action change count compares executed vs counterfactual actions") {
    GridModel m = builtin_ieee14();
    EpisodeTrace t = minimal_trace(3, 2);
    CHECK(action_change_count(t) == 0);
    t.action_adv[1] = split_action(m, {{ElementAttr::LineOrigin, 0, 2}});
    CHECK(action_change_count(t) == 1);
    t.action_adv[2] = split_action(m, {{ElementAttr::LineOrigin, 3, 2}});
    t.action_cf[2] = t.action_adv[2];
    CHECK(action_change_count(t) == 1);  // identical actions do not count
}

TEST_CASE("similarity hand fixture: one shared change across two substations") {
    GridModel m = builtin_ieee14();
    // a1 touches line 1's origin at its substation and line 2's extremity at
    // another; a2 repeats only the first change
    Action a1 = split_action(m, {{ElementAttr::LineOrigin, 1, 1}, {ElementAttr::LineExt, 2, 2}});
    Action a2 = split_action(m, {{ElementAttr::LineOrigin, 1, 1}}, 2);
    REQUIRE(m.lines[1].from_sub != m.lines[2].to_sub);  // two distinct substations in a1
    // C = 1/2 (1 + 0/2)(1/2 + 1/1) = 0.75; V = 1/2 (1/2 + 1/1) = 0.75
    CHECK(action_similarity(m, a1, a2) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(action_similarity(m, a2, a1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("similarity credits half weight to same-slot different-busbar changes") {
    GridModel m = builtin_ieee14();
    Action a1 = split_action(m, {{ElementAttr::LineOrigin, 1, 2}});
    Action a2 = split_action(m, {{ElementAttr::LineOrigin, 1, 1}}, 2);
    // C = 1/2 (0 + 1/2)(1 + 1) = 0.5; V = 1 -> combined 0.75
    CHECK(action_similarity(m, a1, a2) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("similarity conventions for the null action and disjoint actions") {
    GridModel m = builtin_ieee14();
    Action dn = Action::do_nothing();
    Action real = split_action(m, {{ElementAttr::LineOrigin, 0, 2}});
    CHECK(action_similarity(m, dn, dn) == 1.0);
    CHECK(action_similarity(m, dn, real) == 0.0);
    CHECK(action_similarity(m, real, dn) == 0.0);
    Action other = split_action(m, {{ElementAttr::LineExt, 14, 2}}, 3);
    other.substation = m.lines[14].to_sub;
    REQUIRE(m.lines[0].from_sub != m.lines[14].to_sub);
    CHECK(action_similarity(m, real, other) == 0.0);
}

TEST_CASE("similarity is symmetric, bounded and reflexive on the action table") {
    GridModel m = builtin_ieee14();
    auto actions = enumerate_actions(m);
    REQUIRE(actions.size() >= 12);
    Rng rng(13);
    std::uniform_int_distribution<size_t> pick(1, actions.size() - 1);
    for (int trial = 0; trial < 20; ++trial) {
        const Action& a = actions[pick(rng)];
        const Action& b = actions[pick(rng)];
        double sab = action_similarity(m, a, b);
        CHECK(sab >= 0.0);
        CHECK(sab <= 1.0);
        CHECK(sab == doctest::Approx(action_similarity(m, b, a)).epsilon(1e-12));
        CHECK(action_similarity(m, a, a) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("mean similarity is averaged over changed steps only") {
    GridModel m = builtin_ieee14();
    EpisodeTrace t = minimal_trace(4, 2);
    CHECK(!mean_similarity_per_changed_action(m, t).has_value());
    Action a1 = split_action(m, {{ElementAttr::LineOrigin, 1, 1}, {ElementAttr::LineExt, 2, 2}});
    Action a2 = split_action(m, {{ElementAttr::LineOrigin, 1, 1}}, 2);
    t.action_cf[1] = a1;
    t.action_adv[1] = a2;  // similarity 0.75
    t.action_cf[3] = a1;
    t.action_adv[3] = Action::do_nothing();  // similarity 0
    auto v = mean_similarity_per_changed_action(m, t);
    REQUIRE(v.has_value());
    CHECK(*v == doctest::Approx(0.375).epsilon(1e-12));
}

TEST_CASE("survival counts legal steps") {
    EpisodeTrace t = minimal_trace(5, 2);
    CHECK(survival_steps(t) == 5);
    t.legal_p[4] = 0;
    CHECK(survival_steps(t) == 4);
    t.legal_p.assign(5, 0);
    CHECK(survival_steps(t) == 0);
}

TEST_CASE("reward per action divides by executed real actions") {
    std::vector<double> rewards = {1.0, 1.0};
    std::vector<char> acted = {1, 0};
    auto v = reward_per_action(rewards, acted);
    REQUIRE(v.has_value());
    CHECK(*v == doctest::Approx(2.0));
    CHECK(!reward_per_action(rewards, {0, 0}).has_value());
}

TEST_CASE("weak-spot map from recorded flags") {
    GridModel m = builtin_ieee14();
    EpisodeTrace t = minimal_trace(2, 3);
    t.perturbed_idx[0][0] = 1;
    t.perturbed_idx[1][0] = 1;
    t.perturbed_idx[1][1] = 1;
    t.action_adv[0] = split_action(m, {{ElementAttr::LineOrigin, 0, 2}});  // changed at step 0
    auto w = weak_spot_map({t}, AttackerKind::Rpa);
    REQUIRE(w.size() == 3);
    REQUIRE(w[0].has_value());
    CHECK(*w[0] == doctest::Approx(0.5));  // one hit over two perturbed steps
    REQUIRE(w[1].has_value());
    CHECK(*w[1] == 0.0);
    CHECK(!w[2].has_value());  // never perturbed
}

TEST_CASE("weak-spot map flags gradient attacks by outlier changes") {
    GridModel m = builtin_ieee14();
    EpisodeTrace t = minimal_trace(10, 2);
    // index 0: one large spike among zeros -> only that step is an outlier
    t.obs_delta(9, 0) = 10.0;
    t.action_adv[9] = split_action(m, {{ElementAttr::LineOrigin, 0, 2}});
    // index 1: constant change, zero spread -> never outside the band
    for (int k = 0; k < 10; ++k) t.obs_delta(k, 1) = 2.0;
    auto w = weak_spot_map({t}, AttackerKind::Gepa);
    REQUIRE(w.size() == 2);
    REQUIRE(w[0].has_value());
    CHECK(*w[0] == doctest::Approx(1.0));
    CHECK(!w[1].has_value());
}

// ---------------------------------------------------------------------------
// Resilience metrics
// ---------------------------------------------------------------------------

TEST_CASE("trapezoid oracle on hand series") {
    CHECK(trapezoid({0.0, 0.0, 0.0}, 0, 2) == 0.0);
    CHECK(trapezoid({0.0, -1.0, -2.0, -1.0, 0.0}, 0, 4) == doctest::Approx(-4.0).epsilon(1e-12));
    CHECK(trapezoid({5.0}, 0, 0) == 0.0);
}

TEST_CASE("gap area on a linear ramp matches the analytic integral") {
    for (int n = 2; n <= 100; ++n) {
        for (double scale : {1.0, 2.5}) {
            EpisodeTrace t = minimal_trace(n, 1);
            for (int k = 0; k < n; ++k)
                t.reward_p[k] = t.reward_u[k] - scale * k / (n - 1);  // delta: 0 down to -scale
            t.h_p = 0;
            double area = reward_gap_area(t);
            REQUIRE(std::abs(area - (-scale * (n - 1) / 2.0)) < 1e-12);
        }
    }
}

TEST_CASE("gap area starts at the perturbation onset") {
    EpisodeTrace t = minimal_trace(6, 1);
    for (int k = 0; k < 6; ++k) t.reward_p[k] = 0.0;  // delta = -1 everywhere
    t.h_p = 3;
    CHECK(reward_gap_area(t) == doctest::Approx(-2.0).epsilon(1e-12));  // [3,5] trapezoid
    t.h_p = -1;  // never perturbed
    CHECK(reward_gap_area(t) == 0.0);
}

TEST_CASE("cosine similarity basics") {
    Eigen::VectorXd a(2), b(2), z(2);
    a << 1.0, 0.0;
    b << 0.0, 2.0;
    z << 0.0, 0.0;
    CHECK(cosine_series_value(a, b) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(cosine_series_value(a, 3.0 * a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::isnan(cosine_series_value(a, z)));
    CHECK(!cosine_similarity(a, z).has_value());
    auto v = cosine_similarity(a, b);
    REQUIRE(v.has_value());
    CHECK(*v == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("cosine series compares paired states step by step") {
    EpisodeTrace t = minimal_trace(3, 2);
    t.state_p.row(1) << 1.0, -1.0;  // orthogonal to (1,1)
    auto series = cosine_series(t);
    REQUIRE(series.size() == 3);
    CHECK(series[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(series[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(series[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("moving average: identity at window one, constant series fixed point") {
    std::vector<double> series = {1.0, 2.0, 3.0, 4.0};
    CHECK(moving_average(series, 1) == series);
    std::vector<double> flat(20, 2.5);
    auto sm = moving_average(flat, 7);
    for (double v : sm) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));
}

namespace {

// piecewise-linear dip: flat zero, down to -1 at the trough, back up, flat
std::vector<double> dip_series(int start, int trough, int recovery, int length) {
    std::vector<double> s(length, 0.0);
    for (int k = start; k < length; ++k) {
        if (k <= trough)
            s[k] = -static_cast<double>(k - start) / (trough - start);
        else if (k <= recovery)
            s[k] = -1.0 + static_cast<double>(k - trough) / (recovery - trough);
        else
            s[k] = 0.0;
    }
    return s;
}

}  // namespace

TEST_CASE("segmentation with no smoothing recovers exact dip landmarks") {
    auto series = dip_series(100, 290, 400, 600);
    auto events = degradation_segments(series, 0, {1, -0.05});
    REQUIRE(events.size() == 1);
    const auto& e = events[0];
    // first sample strictly below -0.05 on the way down / at or above on the way up
    CHECK(e.start == 110);
    CHECK(e.trough == 290);
    CHECK(e.recovery == 395);
    CHECK(e.degradation_time() == 180);
    CHECK(e.restorative_time() == 105);
    CHECK(e.series_min == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("segmentation at the reporting window stays near the dip landmarks") {
    const int w = 50;
    auto series = dip_series(100, 290, 400, 600);
    auto events = degradation_segments(series, 0, {w, -0.05});
    REQUIRE(events.size() == 1);
    const auto& e = events[0];
    CHECK(std::abs(e.degradation_time() - 190) <= w / 2);
    CHECK(std::abs(e.restorative_time() - 110) <= w / 2);
    CHECK(e.series_min == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("two separated dips segment into exactly two events") {
    auto a = dip_series(100, 290, 400, 600);
    auto b = dip_series(700, 800, 900, 1200);
    std::vector<double> series(1200, 0.0);
    for (int k = 0; k < 600; ++k) series[k] = a[k];
    for (int k = 600; k < 1200; ++k) series[k] = b[k];
    auto events = degradation_segments(series, 0, {50, -0.05});
    REQUIRE(events.size() == 2);
    CHECK(events[0].trough < 600);
    CHECK(events[1].trough > 600);
}

TEST_CASE("a flat series yields no events, and onset masks earlier samples") {
    std::vector<double> flat(300, 0.0);
    CHECK(degradation_segments(flat, 0, {50, -0.05}).empty());
    auto series = dip_series(100, 290, 400, 600);
    // starting the scan after the dip has recovered finds nothing
    CHECK(degradation_segments(series, 450, {1, -0.05}).empty());
}

// ---------------------------------------------------------------------------
// Aggregated reports
// ---------------------------------------------------------------------------

TEST_CASE("reports aggregate per-episode metrics and normalize per 1000 steps") {
    GridModel m = builtin_ieee14();
    EpisodeTrace t1 = minimal_trace(100, 3);
    EpisodeTrace t2 = minimal_trace(100, 3);
    t2.reward_p.assign(100, 0.5);
    t2.action_adv[7] = split_action(m, {{ElementAttr::LineOrigin, 0, 2}});
    t2.perturbed_idx[7][1] = 1;
    t2.h_p = 7;
    t2.acted_u[3] = 1;

    RobustnessReport r = build_robustness_report(m, {t1, t2}, AttackerKind::Rpa);
    CHECK(r.episodes == 2);
    CHECK(r.mean_total_reward_delta == doctest::Approx(25.0));
    CHECK(r.mean_action_changes == doctest::Approx(0.5));
    CHECK(r.action_changes_per_1000 == doctest::Approx(0.5 / 100.0 * 1000.0));
    CHECK(r.episodes_with_changes == 1);
    CHECK(r.mean_survival_p == doctest::Approx(100.0));
    REQUIRE(r.reward_per_action_u.has_value());
    bool sim_ok = !r.similarity_per_changed_action.has_value() ||
                  *r.similarity_per_changed_action == 0.0;
    CHECK(sim_ok);
    REQUIRE(r.weak_spot.size() == 3);
    CHECK(r.weak_spot[1].has_value());

    ResilienceReport res = build_resilience_report({t1, t2}, MetricParams{});
    CHECK(res.mean_reward_gap_area < 0.0);
    CHECK(res.reward.total_events >= 1);
}
