#include "gridres/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace gridres {

double total_reward_delta(const EpisodeTrace& t) {
    double u = 0.0, p = 0.0;
    for (double r : t.reward_u) u += r;
    for (double r : t.reward_p) p += r;
    return u - p;
}

int action_change_count(const EpisodeTrace& t) {
    int n = 0;
    for (size_t k = 0; k < t.action_adv.size(); ++k)
        n += !(t.action_adv[k].kind == t.action_cf[k].kind &&
               t.action_adv[k].changes == t.action_cf[k].changes);
    return n;
}

namespace {
bool same_action(const Action& a, const Action& b) {
    return a.kind == b.kind && a.changes == b.changes;
}
}  // namespace

double action_similarity(const GridModel& m, const Action& a1, const Action& a2) {
    bool n1 = a1.is_do_nothing(), n2 = a2.is_do_nothing();
    if (n1 && n2) return 1.0;
    if (n1 || n2) return 0.0;

    const auto& c1 = a1.changes;
    const auto& c2 = a2.changes;
    int exact = 0, near = 0;
    for (const auto& ch : c1) {
        for (const auto& ch2 : c2) {
            if (!ch.same_slot(ch2)) continue;
            (ch.target == ch2.target ? exact : near)++;
        }
    }
    double C = 0.5 * (exact + 0.5 * near) *
               (1.0 / static_cast<double>(c1.size()) + 1.0 / static_cast<double>(c2.size()));

    auto v1 = action_substations(m, a1);
    auto v2 = action_substations(m, a2);
    std::set<int> s1(v1.begin(), v1.end()), s2(v2.begin(), v2.end());
    int common = 0;
    for (int s : s1) common += s2.count(s);
    double V = s1.empty() || s2.empty()
                   ? 0.0
                   : 0.5 * (common / static_cast<double>(s1.size()) +
                            common / static_cast<double>(s2.size()));
    return 0.5 * (C + V);
}

std::optional<double> mean_similarity_per_changed_action(const GridModel& m,
                                                         const EpisodeTrace& t) {
    double acc = 0.0;
    int n = 0;
    for (size_t k = 0; k < t.action_adv.size(); ++k) {
        if (same_action(t.action_adv[k], t.action_cf[k])) continue;
        acc += action_similarity(m, t.action_adv[k], t.action_cf[k]);
        ++n;
    }
    if (n == 0) return std::nullopt;
    return acc / n;
}

int survival_steps(const EpisodeTrace& t) {
    int n = 0;
    for (char c : t.legal_p) n += (c != 0);
    return n;
}

std::optional<double> reward_per_action(const std::vector<double>& rewards,
                                        const std::vector<char>& acted) {
    int n = 0;
    for (char c : acted) n += (c != 0);
    if (n == 0) return std::nullopt;
    double acc = 0.0;
    for (double r : rewards) acc += r;
    return acc / n;
}

std::vector<std::optional<double>> weak_spot_map(const std::vector<EpisodeTrace>& traces,
                                                 AttackerKind kind) {
    if (traces.empty()) return {};
    const int n = static_cast<int>(traces.front().obs_delta.cols());
    std::vector<double> mu(n, 0.0), sd(n, 0.0);
    if (kind == AttackerKind::Gepa) {
        // campaign-wide mean and std of the per-index changes
        std::vector<double> sum(n, 0.0), sum2(n, 0.0);
        long total = 0;
        for (const auto& t : traces) {
            for (int k = 0; k < t.steps_p(); ++k)
                for (int i = 0; i < n; ++i) {
                    double d = t.obs_delta(k, i);
                    sum[i] += d;
                    sum2[i] += d * d;
                }
            total += t.steps_p();
        }
        for (int i = 0; i < n; ++i) {
            mu[i] = sum[i] / total;
            double var = sum2[i] / total - mu[i] * mu[i];
            sd[i] = var > 0 ? std::sqrt(var) : 0.0;
        }
    }

    std::vector<long> hits(n, 0), perturbed(n, 0);
    for (const auto& t : traces) {
        for (int k = 0; k < t.steps_p(); ++k) {
            bool changed = !same_action(t.action_adv[k], t.action_cf[k]);
            for (int i = 0; i < n; ++i) {
                bool pert;
                if (kind == AttackerKind::Gepa) {
                    double d = t.obs_delta(k, i);
                    pert = d < mu[i] - sd[i] || d > mu[i] + sd[i];
                } else {
                    pert = t.perturbed_idx[k][i] != 0;
                }
                if (pert) {
                    ++perturbed[i];
                    hits[i] += changed;
                }
            }
        }
    }
    std::vector<std::optional<double>> out(n);
    for (int i = 0; i < n; ++i)
        if (perturbed[i] > 0) out[i] = static_cast<double>(hits[i]) / perturbed[i];
    return out;
}

double trapezoid(const std::vector<double>& delta, int first, int last) {
    if (last - first < 1) return 0.0;
    double acc = 0.5 * (delta[first] + delta[last]);
    for (int k = first + 1; k < last; ++k) acc += delta[k];
    return acc;
}

std::vector<double> reward_delta_series(const EpisodeTrace& t) {
    int n = std::min(t.steps_u(), t.steps_p());
    std::vector<double> d(n);
    for (int k = 0; k < n; ++k) d[k] = t.reward_p[k] - t.reward_u[k];
    return d;
}

double reward_gap_area(const EpisodeTrace& t) {
    if (t.h_p < 0) return 0.0;
    auto d = reward_delta_series(t);
    int last = static_cast<int>(d.size()) - 1;
    if (t.h_p >= last) return 0.0;
    return trapezoid(d, t.h_p, last);
}

double cosine_series_value(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return std::nan("");
    return a.dot(b) / (na * nb);
}

std::optional<double> cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    double v = cosine_series_value(a, b);
    if (std::isnan(v)) return std::nullopt;
    return v;
}

std::vector<double> cosine_series(const EpisodeTrace& t) {
    int n = std::min(t.steps_u(), t.steps_p());
    std::vector<double> out(n);
    for (int k = 0; k < n; ++k) {
        double v = cosine_series_value(t.state_p.row(k).transpose(), t.state_u.row(k).transpose());
        out[k] = std::isnan(v) ? 1.0 : v;  // both runs dead: states identical
    }
    return out;
}

std::vector<double> moving_average(const std::vector<double>& series, int window) {
    const int n = static_cast<int>(series.size());
    const int half = window / 2;
    std::vector<double> out(n, 0.0);
    for (int i = 0; i < n; ++i) {
        int lo = std::max(0, i - half), hi = std::min(n - 1, i + half);
        double acc = 0.0;
        for (int j = lo; j <= hi; ++j) acc += series[j];
        out[i] = acc / (hi - lo + 1);
    }
    return out;
}

std::vector<DegradationEvent> degradation_segments(const std::vector<double>& series, int h_p,
                                                   const SegmentationParams& params) {
    std::vector<DegradationEvent> events;
    const int n = static_cast<int>(series.size());
    if (n == 0) return events;
    auto smooth = moving_average(series, params.window);

    int i = std::max(h_p, 0);
    while (i < n) {
        if (smooth[i] >= params.open_threshold) {
            ++i;
            continue;
        }
        DegradationEvent e;
        e.start = i;
        // recross: first smoothed sample back at the recovered level
        int recross = i;
        while (recross < n && smooth[recross] < params.open_threshold) ++recross;
        int search_end = std::min(recross, n - 1);
        e.trough = e.start;
        for (int j = e.start; j <= search_end; ++j)
            if (smooth[j] < smooth[e.trough]) e.trough = j;
        e.recovery = std::min(recross, n - 1);
        e.series_min = series[e.start];
        e.series_max = series[e.start];
        for (int j = e.start; j <= e.recovery; ++j) {
            e.series_min = std::min(e.series_min, series[j]);
            e.series_max = std::max(e.series_max, series[j]);
        }
        events.push_back(e);
        i = e.recovery + 1;
    }
    return events;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

RobustnessReport build_robustness_report(const GridModel& m,
                                         const std::vector<EpisodeTrace>& traces,
                                         AttackerKind kind) {
    if (traces.empty()) throw std::invalid_argument("no traces");
    RobustnessReport r;
    r.episodes = static_cast<int>(traces.size());
    double sim_acc = 0.0;
    double rpa_u_acc = 0.0, rpa_p_acc = 0.0;
    long steps_p_total = 0;
    long changes_total = 0;
    for (const auto& t : traces) {
        r.mean_total_reward_delta += total_reward_delta(t);
        for (double v : t.reward_u) r.mean_total_reward_u += v;
        for (double v : t.reward_p) r.mean_total_reward_p += v;
        changes_total += action_change_count(t);
        steps_p_total += t.steps_p();
        if (auto s = mean_similarity_per_changed_action(m, t)) {
            sim_acc += *s;
            ++r.episodes_with_changes;
        }
        r.mean_survival_u += static_cast<double>(
            std::count(t.legal_u.begin(), t.legal_u.end(), char(1)));
        r.mean_survival_p += survival_steps(t);
        std::vector<char> acted_p(t.action_adv.size());
        for (size_t k = 0; k < t.action_adv.size(); ++k)
            acted_p[k] = !t.action_adv[k].is_do_nothing();
        if (auto v = reward_per_action(t.reward_p, acted_p)) {
            rpa_p_acc += *v;
            ++r.episodes_with_actions_p;
        }
        if (auto v = reward_per_action(t.reward_u, t.acted_u)) {
            rpa_u_acc += *v;
            ++r.episodes_with_actions_u;
        }
    }
    r.mean_total_reward_delta /= r.episodes;
    r.mean_total_reward_u /= r.episodes;
    r.mean_total_reward_p /= r.episodes;
    r.mean_action_changes = static_cast<double>(changes_total) / r.episodes;
    r.action_changes_per_1000 =
        steps_p_total > 0 ? 1000.0 * changes_total / static_cast<double>(steps_p_total) : 0.0;
    if (r.episodes_with_changes > 0) r.similarity_per_changed_action = sim_acc / r.episodes_with_changes;
    r.mean_survival_u /= r.episodes;
    r.mean_survival_p /= r.episodes;
    if (r.episodes_with_actions_u > 0) r.reward_per_action_u = rpa_u_acc / r.episodes_with_actions_u;
    if (r.episodes_with_actions_p > 0) r.reward_per_action_p = rpa_p_acc / r.episodes_with_actions_p;
    r.weak_spot = weak_spot_map(traces, kind);
    return r;
}

namespace {

SeriesResilience summarize_events(const std::vector<std::vector<DegradationEvent>>& per_episode,
                                  long total_steps) {
    SeriesResilience s;
    double dt = 0.0, rt = 0.0, mn = 0.0, mx = 0.0;
    for (const auto& evs : per_episode) {
        for (const auto& e : evs) {
            ++s.total_events;
            dt += e.degradation_time();
            rt += e.restorative_time();
            mn += e.series_min;
            mx += e.series_max;
        }
    }
    if (total_steps > 0) s.events_per_1000 = 1000.0 * s.total_events / static_cast<double>(total_steps);
    if (s.total_events > 0) {
        s.mean_degradation_time = dt / s.total_events;
        s.mean_restorative_time = rt / s.total_events;
        s.mean_series_min = mn / s.total_events;
        s.mean_series_max = mx / s.total_events;
    }
    return s;
}

}  // namespace

ResilienceReport build_resilience_report(const std::vector<EpisodeTrace>& traces,
                                         const MetricParams& params) {
    if (traces.empty()) throw std::invalid_argument("no traces");
    ResilienceReport r;
    std::vector<std::vector<DegradationEvent>> reward_events, cosine_events;
    long aligned_total = 0;
    for (const auto& t : traces) {
        r.mean_reward_gap_area += reward_gap_area(t);
        auto d = reward_delta_series(t);
        aligned_total += static_cast<long>(d.size());
        reward_events.push_back(
            degradation_segments(d, t.h_p, {params.window, -params.theta_reward}));
        cosine_events.push_back(
            degradation_segments(cosine_series(t), t.h_p, {params.window, 1.0 - params.theta_cosine}));
    }
    double total_area = r.mean_reward_gap_area;
    r.mean_reward_gap_area /= static_cast<double>(traces.size());
    r.reward_gap_area_per_1000 =
        aligned_total > 0 ? 1000.0 * total_area / static_cast<double>(aligned_total) : 0.0;
    r.reward = summarize_events(reward_events, aligned_total);
    r.cosine = summarize_events(cosine_events, aligned_total);
    return r;
}

}  // namespace gridres
