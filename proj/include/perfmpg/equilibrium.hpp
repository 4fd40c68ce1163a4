#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "perfmpg/game.hpp"
#include "perfmpg/response.hpp"

namespace perfmpg {

/// Best-response diagnostics for every agent against a fixed joint policy.
struct GapReport {
    std::vector<double> best_response_values;        // BR_i
    std::vector<double> agent_gaps;                  // BR_i - V_i
    double max_gap = 0.0;
    int argmax_agent = 0;
    std::vector<std::vector<int>> best_response_policies; // [agent][s] action
    std::optional<double> grid_resolution;                // ne_gap only
    double grid_slack = 0.0;                              // ne_gap only

    nlohmann::json to_json() const {
        nlohmann::json doc;
        doc["agent_gaps"] = agent_gaps;
        doc["max_gap"] = max_gap;
        doc["argmax_agent"] = argmax_agent;
        if (grid_resolution) doc["grid_resolution"] = *grid_resolution;
        return doc;
    }
};

namespace detail {

/// Single-agent MDP obtained by fixing the opponents' policies: reward and
/// kernel marginalized over a_{-i}.
struct SingleAgentMdp {
    int num_states = 0;
    int num_actions = 0;
    double discount = 0.0;
    std::vector<double> reward; // [s * A_i + a]
    std::vector<double> kernel; // [(s * A_i + a) * S + s']

    double r(int s, int a) const { return reward[static_cast<std::size_t>(s) * num_actions + a]; }
    std::span<const double> row(int s, int a) const {
        return {kernel.data() +
                    (static_cast<std::size_t>(s) * num_actions + a) * num_states,
                static_cast<std::size_t>(num_states)};
    }
};

inline SingleAgentMdp marginalize_for_agent(const TabularGame& game,
                                            const JointPolicy& pi, int agent) {
    SingleAgentMdp mdp;
    mdp.num_states = game.num_states;
    mdp.num_actions = game.num_actions[agent];
    mdp.discount = game.discount;
    mdp.reward.assign(static_cast<std::size_t>(mdp.num_states) * mdp.num_actions, 0.0);
    mdp.kernel.assign(static_cast<std::size_t>(mdp.num_states) * mdp.num_actions *
                          mdp.num_states,
                      0.0);
    for (int s = 0; s < game.num_states; ++s) {
        for_each_joint_action(
            game.actions, pi, s,
            [&](std::size_t j, std::span<const int> a, double, std::span<const double> opp) {
                const double w = opp[agent];
                if (w == 0.0) return;
                const std::size_t cell =
                    static_cast<std::size_t>(s) * mdp.num_actions + a[agent];
                mdp.reward[cell] += w * game.reward(agent, s, j);
                auto row = game.transition_row(s, j);
                for (int t = 0; t < game.num_states; ++t)
                    mdp.kernel[cell * game.num_states + t] += w * row[t];
            });
    }
    return mdp;
}

/// Exact evaluation of a deterministic policy on a single-agent MDP.
inline Eigen::VectorXd evaluate_deterministic(const SingleAgentMdp& mdp,
                                              const std::vector<int>& choice) {
    const int S = mdp.num_states;
    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(S, S);
    Eigen::VectorXd b(S);
    for (int s = 0; s < S; ++s) {
        auto row = mdp.row(s, choice[s]);
        for (int t = 0; t < S; ++t) system(s, t) -= mdp.discount * row[t];
        b(s) = mdp.r(s, choice[s]);
    }
    Eigen::VectorXd v = system.partialPivLu().solve(b);
    if (!v.allFinite()) throw SolveFailure("best-response evaluation is singular");
    return v;
}

} // namespace detail

/// Optimal response of one agent with the others held fixed, solved exactly by
/// policy iteration on the marginalized single-agent MDP. Ties break toward
/// the lowest action index, so the result is deterministic.
inline std::pair<std::vector<int>, double> best_response(const TabularGame& game,
                                                         const JointPolicy& pi,
                                                         int agent) {
    require_shape_match(game.shape(), pi.shape());
    auto mdp = detail::marginalize_for_agent(game, pi, agent);
    const int S = mdp.num_states;
    std::vector<int> choice(S, 0);
    Eigen::VectorXd v = detail::evaluate_deterministic(mdp, choice);
    for (int iter = 0; iter < 1000; ++iter) {
        bool changed = false;
        for (int s = 0; s < S; ++s) {
            double best_q = -std::numeric_limits<double>::infinity();
            int best_a = 0;
            double cur_q = 0.0;
            for (int a = 0; a < mdp.num_actions; ++a) {
                double q = mdp.r(s, a);
                auto row = mdp.row(s, a);
                for (int t = 0; t < S; ++t) q += mdp.discount * row[t] * v(t);
                if (q > best_q) {
                    best_q = q;
                    best_a = a;
                }
                if (a == choice[s]) cur_q = q;
            }
            if (best_a != choice[s] && best_q > cur_q) {
                choice[s] = best_a;
                changed = true;
            }
        }
        if (!changed) break;
        v = detail::evaluate_deterministic(mdp, choice);
    }
    double value = 0.0;
    for (int s = 0; s < S; ++s) value += game.init_dist[s] * v(s);
    return {choice, value};
}

/// PSE gap: deploys G(pi) once, then measures every agent's best-response
/// improvement with the game held fixed. pi is an eps-PSE iff max_gap <= eps.
inline GapReport pse_gap(const ResponseMap& map, const JointPolicy& pi) {
    auto game = deploy(map, pi);
    EvalResult eval = policy_evaluation(*game, pi);
    GapReport report;
    const int n = game->num_agents;
    report.best_response_values.resize(n);
    report.agent_gaps.resize(n);
    report.best_response_policies.resize(n);
    for (int i = 0; i < n; ++i) {
        auto [choice, value] = best_response(*game, pi, i);
        report.best_response_policies[i] = std::move(choice);
        report.best_response_values[i] = value;
        report.agent_gaps[i] = value - eval.value_at(i, game->init_dist);
    }
    report.argmax_agent = 0;
    report.max_gap = report.agent_gaps[0];
    for (int i = 1; i < n; ++i) {
        if (report.agent_gaps[i] > report.max_gap) {
            report.max_gap = report.agent_gaps[i];
            report.argmax_agent = i;
        }
    }
    return report;
}

namespace detail {

/// All per-state probability rows on the simplex grid with entries k/m,
/// m = 1/resolution. resolution == 0 yields the deterministic rows only.
inline std::vector<std::vector<double>> simplex_grid_rows(int num_actions,
                                                          double resolution) {
    std::vector<std::vector<double>> rows;
    if (resolution <= 0.0) {
        for (int a = 0; a < num_actions; ++a) {
            std::vector<double> row(num_actions, 0.0);
            row[a] = 1.0;
            rows.push_back(std::move(row));
        }
        return rows;
    }
    const int m = static_cast<int>(std::lround(1.0 / resolution));
    if (std::abs(m * resolution - 1.0) > 1e-9)
        throw ConfigError("grid resolution must divide 1");
    std::vector<int> counts(num_actions, 0);
    std::function<void(int, int)> rec = [&](int pos, int remaining) {
        if (pos == num_actions - 1) {
            counts[pos] = remaining;
            std::vector<double> row(num_actions);
            for (int a = 0; a < num_actions; ++a)
                row[a] = static_cast<double>(counts[a]) / m;
            rows.push_back(std::move(row));
            return;
        }
        for (int k = remaining; k >= 0; --k) {
            counts[pos] = k;
            rec(pos + 1, remaining - k);
        }
    };
    rec(0, m);
    return rows;
}

/// Per-agent deviation candidates: all deterministic policies plus, when a
/// positive resolution is given, the full product grid over states.
inline std::vector<std::vector<double>> deviation_candidates(int num_states,
                                                             int num_actions,
                                                             double resolution,
                                                             std::size_t max_candidates) {
    std::vector<std::vector<double>> per_state = simplex_grid_rows(num_actions, resolution);
    if (resolution > 0.0) {
        // Deterministic rows are grid members only when resolution divides 1
        // into integer steps, which it does; they are included already.
        bool have_det = false;
        for (const auto& row : per_state)
            if (row[0] == 1.0) have_det = true;
        if (!have_det)
            for (int a = 0; a < num_actions; ++a) {
                std::vector<double> row(num_actions, 0.0);
                row[a] = 1.0;
                per_state.push_back(std::move(row));
            }
    }
    double count = 1.0;
    for (int s = 0; s < num_states; ++s) count *= static_cast<double>(per_state.size());
    if (count > static_cast<double>(max_candidates))
        throw TooLarge("deviation grid exceeds the enumeration bound");
    std::vector<std::vector<double>> out;
    out.reserve(static_cast<std::size_t>(count));
    std::vector<std::size_t> idx(num_states, 0);
    while (true) {
        std::vector<double> flat(static_cast<std::size_t>(num_states) * num_actions);
        for (int s = 0; s < num_states; ++s)
            for (int a = 0; a < num_actions; ++a)
                flat[static_cast<std::size_t>(s) * num_actions + a] = per_state[idx[s]][a];
        out.push_back(std::move(flat));
        int pos = num_states - 1;
        while (pos >= 0) {
            if (++idx[pos] < per_state.size()) break;
            idx[pos] = 0;
            --pos;
        }
        if (pos < 0) break;
    }
    return out;
}

} // namespace detail

/// NE gap where each deviation re-deploys the game. The inner maximization has
/// no closed form; it is lower-bounded by a sweep over all deterministic
/// deviations plus an optional simplex grid, and the report records the
/// resolution used. grid_slack is a measured Lipschitz estimate of the sweep's
/// discretization error, not a certified bound.
inline GapReport ne_gap(const ResponseMap& map, const JointPolicy& pi,
                        double grid_resolution = 0.0,
                        std::size_t max_candidates = 200000) {
    auto current_game = deploy(map, pi);
    EvalResult current = policy_evaluation(*current_game, pi);
    GapReport report;
    report.grid_resolution = grid_resolution;
    const int n = map.base().num_agents;
    report.best_response_values.resize(n);
    report.agent_gaps.resize(n);
    report.best_response_policies.assign(n, {});
    double max_slope = 0.0;
    for (int i = 0; i < n; ++i) {
        auto candidates = detail::deviation_candidates(
            pi.num_states, pi.num_actions[i], grid_resolution, max_candidates);
        double best = -std::numeric_limits<double>::infinity();
        double prev_value = 0.0;
        bool have_prev = false;
        std::vector<double> prev_candidate;
        for (const auto& candidate : candidates) {
            JointPolicy deviated = pi;
            deviated.probs[i] = candidate;
            auto deployed = deploy(map, deviated);
            EvalResult eval = policy_evaluation(*deployed, deviated);
            double value = eval.value_at(i, deployed->init_dist);
            best = std::max(best, value);
            if (have_prev) {
                double dist = 0.0;
                for (std::size_t k = 0; k < candidate.size(); ++k) {
                    double diff = candidate[k] - prev_candidate[k];
                    dist += diff * diff;
                }
                dist = std::sqrt(dist);
                if (dist > 1e-12)
                    max_slope = std::max(max_slope, std::abs(value - prev_value) / dist);
            }
            prev_value = value;
            prev_candidate = candidate;
            have_prev = true;
        }
        report.best_response_values[i] = best;
        report.agent_gaps[i] = best - current.value_at(i, current_game->init_dist);
    }
    report.argmax_agent = 0;
    report.max_gap = report.agent_gaps[0];
    for (int i = 1; i < n; ++i) {
        if (report.agent_gaps[i] > report.max_gap) {
            report.max_gap = report.agent_gaps[i];
            report.argmax_agent = i;
        }
    }
    report.grid_slack =
        grid_resolution > 0.0
            ? max_slope * grid_resolution * std::sqrt(2.0 * pi.num_states)
            : 0.0;
    return report;
}

/// One recorded learning round.
struct RoundRecord {
    int round = 0; // 1-based
    JointPolicy policy;
    std::vector<double> values; // V_i(rho) in the deployed game
    double pse_gap = 0.0;
    double policy_distance = 0.0;
    double min_normalizer = 1.0; // min Z_i(s) of the step taken this round
    double wall_ms = 0.0;
};

/// Per-round policies and metrics of one learning run.
struct RunHistory {
    std::vector<RoundRecord> rounds;
    nlohmann::json config_snapshot;
    std::uint64_t seed = 0;
};

/// PReg(T): running average of the per-round worst-agent best-response gaps in
/// each round's deployed game (the stored pse_gap values).
inline double performative_regret(const RunHistory& history) {
    if (history.rounds.empty()) throw EmptyHistory("performative regret needs rounds");
    double total = 0.0;
    for (const auto& r : history.rounds) total += r.pse_gap;
    return total / static_cast<double>(history.rounds.size());
}

/// Distance from each round's policy to the mean of the run's final `window`
/// policies: (1/n) sum_i ||pi_i^t - pi_i^last||_2, flattened per agent.
inline std::vector<double> policy_distance(const RunHistory& history, int window = 10) {
    if (window < 1) throw ConfigError("policy distance window must be >= 1");
    if (history.rounds.empty()) throw EmptyHistory("policy distance needs rounds");
    const int n = history.rounds.front().policy.num_agents();
    const std::size_t T = history.rounds.size();
    const std::size_t w = std::min<std::size_t>(window, T);
    JointPolicy mean = history.rounds.front().policy;
    for (int i = 0; i < n; ++i)
        std::fill(mean.probs[i].begin(), mean.probs[i].end(), 0.0);
    for (std::size_t t = T - w; t < T; ++t)
        for (int i = 0; i < n; ++i)
            for (std::size_t k = 0; k < mean.probs[i].size(); ++k)
                mean.probs[i][k] += history.rounds[t].policy.probs[i][k] / w;
    std::vector<double> out(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            double sq = 0.0;
            for (std::size_t k = 0; k < mean.probs[i].size(); ++k) {
                double diff = history.rounds[t].policy.probs[i][k] - mean.probs[i][k];
                sq += diff * diff;
            }
            acc += std::sqrt(sq);
        }
        out[t] = acc / n;
    }
    return out;
}

/// Evaluator of a potential function Phi(game, policy, state distribution).
using PotentialEval = std::function<double(const TabularGame&, const JointPolicy&,
                                           std::span<const double>)>;

/// Potential for common-payoff games: the shared value function.
inline PotentialEval common_payoff_potential(int agent = 0) {
    return [agent](const TabularGame& game, const JointPolicy& pi,
                   std::span<const double> dist) {
        EvalResult eval = policy_evaluation(game, pi);
        return eval.value_at(agent, dist);
    };
}

/// |(Phi^pi - Phi^{pi_i'}) - (V_i^pi - V_i^{pi_i'})| at rho, for one unilateral
/// deviation in a fixed game. Zero (up to solver residual) certifies the
/// potential identity for this deviation.
inline double verify_mpg_identity(const TabularGame& game,
                                  const PotentialEval& potential,
                                  const JointPolicy& pi, int agent,
                                  const std::vector<double>& deviation_row_table) {
    JointPolicy deviated = pi;
    deviated.probs[agent] = deviation_row_table;
    validate_policy(deviated);
    double phi_before = potential(game, pi, game.init_dist);
    double phi_after = potential(game, deviated, game.init_dist);
    EvalResult before = policy_evaluation(game, pi);
    EvalResult after = policy_evaluation(game, deviated);
    double dv = before.value_at(agent, game.init_dist) -
                after.value_at(agent, game.init_dist);
    return std::abs((phi_before - phi_after) - dv);
}

} // namespace perfmpg
