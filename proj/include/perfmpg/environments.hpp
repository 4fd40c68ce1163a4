#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "perfmpg/equilibrium.hpp"
#include "perfmpg/game.hpp"
#include "perfmpg/response.hpp"
#include "perfmpg/rng.hpp"

namespace perfmpg {

/// Two-state activity-selection game: every agent picks one of four weighted
/// activities; overcrowding an activity sends everyone to a penalized
/// distancing state until the group spreads out again.
struct SafeDistancingParams {
    int num_agents = 8;
    int num_activities = 4;
    std::vector<double> weights = {4.0, 3.0, 2.0, 1.0};
    double penalty = 100.0;
    double alpha = 0.15; // intervention probability
    double discount = 0.99;

    double crowd_threshold() const { return num_agents / 2.0; }  // crowd when count > this
    double return_threshold() const { return num_agents / 4.0; } // return when all counts <= this

    void validate() const {
        if (num_agents < 1) throw ConfigError("need at least one agent");
        if (num_activities < 2) throw ConfigError("need at least two activities");
        if (static_cast<int>(weights.size()) != num_activities)
            throw ConfigError("weights must match the activity count");
        for (std::size_t k = 0; k + 1 < weights.size(); ++k)
            if (!(weights[k] > weights[k + 1]))
                throw ConfigError("weights must be strictly decreasing");
        if (alpha < 0.0 || alpha > 1.0)
            throw ConfigError("intervention probability must lie in [0, 1]");
        if (!(discount >= 0.0 && discount < 1.0))
            throw ConfigError("discount must satisfy 0 <= gamma < 1");
    }

    nlohmann::json to_json() const {
        return {{"num_agents", num_agents},   {"num_activities", num_activities},
                {"weights", weights},         {"penalty", penalty},
                {"alpha", alpha},             {"discount", discount}};
    }
};

/// Five-state wrap-around congestion game with a co-count reward schedule and
/// linear performative shifts of strength (omega_r, omega_p) around the
/// uniform anchor policy.
struct CongestionParams {
    int num_agents = 4;
    std::vector<double> schedule = {50.0, 15.0, 5.0, 1.0}; // reward by co-count
    double omega_r = 0.03;
    double omega_p = 0.03;
    double discount = 0.99;

    void validate() const {
        if (num_agents < 1) throw ConfigError("need at least one agent");
        if (static_cast<int>(schedule.size()) != num_agents)
            throw ConfigError("schedule must have one entry per possible co-count");
        for (std::size_t k = 0; k + 1 < schedule.size(); ++k)
            if (!(schedule[k] > schedule[k + 1]))
                throw ConfigError("schedule must be strictly decreasing");
        if (omega_r < 0.0 || omega_p < 0.0)
            throw ConfigError("shift strengths must be >= 0");
        if (!(discount >= 0.0 && discount < 1.0))
            throw ConfigError("discount must satisfy 0 <= gamma < 1");
    }

    nlohmann::json to_json() const {
        return {{"num_agents", num_agents}, {"schedule", schedule},
                {"omega_r", omega_r},       {"omega_p", omega_p},
                {"discount", discount}};
    }
};

namespace detail {

/// P(exists k: N_k >= threshold) for independent categorical agents, where
/// N_k counts agents landing on activity k and agent j lands on k with
/// probability probs[j][k]. Inclusion-exclusion over activity subsets; each
/// term is a capped-count DP over agents. Subsets needing more agents than
/// exist contribute zero and are skipped.
inline double prob_any_count_at_least(const std::vector<std::vector<double>>& probs,
                                      int num_activities, int threshold) {
    const int n = static_cast<int>(probs.size());
    if (threshold <= 0) return 1.0;
    if (threshold > n) return 0.0;
    double total = 0.0;
    for (unsigned mask = 1; mask < (1u << num_activities); ++mask) {
        std::vector<int> members;
        for (int k = 0; k < num_activities; ++k)
            if (mask & (1u << k)) members.push_back(k);
        const int m = static_cast<int>(members.size());
        if (static_cast<long long>(m) * threshold > n) continue;
        // DP over agents; state = counts capped at `threshold` per member.
        int states = 1;
        for (int d = 0; d < m; ++d) states *= threshold + 1;
        std::vector<double> dist(states, 0.0), next(states);
        dist[0] = 1.0;
        for (int j = 0; j < n; ++j) {
            std::fill(next.begin(), next.end(), 0.0);
            double stay = 1.0;
            for (int d = 0; d < m; ++d) stay -= probs[j][members[d]];
            for (int code = 0; code < states; ++code) {
                const double p = dist[code];
                if (p == 0.0) continue;
                next[code] += stay * p;
                int base = 1;
                for (int d = 0; d < m; ++d) {
                    const int count = (code / base) % (threshold + 1);
                    const int bumped = count < threshold ? code + base : code;
                    next[bumped] += probs[j][members[d]] * p;
                    base *= threshold + 1;
                }
            }
            dist.swap(next);
        }
        total += (m % 2 == 1 ? 1.0 : -1.0) * dist[states - 1];
    }
    return std::min(std::max(total, 0.0), 1.0);
}

/// Optimal Q-values of one agent's single-agent MDP (others fixed at pi) on
/// the given game; used by the safe-distancing influencer.
inline std::vector<double> optimal_q_values(const TabularGame& game,
                                            const JointPolicy& pi, int agent) {
    auto mdp = marginalize_for_agent(game, pi, agent);
    const int S = mdp.num_states;
    std::vector<int> choice(S, 0);
    Eigen::VectorXd v = evaluate_deterministic(mdp, choice);
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
        v = evaluate_deterministic(mdp, choice);
    }
    std::vector<double> q(static_cast<std::size_t>(S) * mdp.num_actions);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < mdp.num_actions; ++a) {
            double val = mdp.r(s, a);
            auto row = mdp.row(s, a);
            for (int t = 0; t < S; ++t) val += mdp.discount * row[t] * v(t);
            q[static_cast<std::size_t>(s) * mdp.num_actions + a] = val;
        }
    return q;
}

inline std::vector<double> softmax(std::span<const double> values) {
    double shift = -std::numeric_limits<double>::infinity();
    for (double v : values) shift = std::max(shift, v);
    std::vector<double> out(values.size());
    double total = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) {
        out[k] = std::exp(values[k] - shift);
        total += out[k];
    }
    for (double& v : out) v /= total;
    return out;
}

} // namespace detail

/// Base safe-distancing game: state 0 is "safe", state 1 is "distancing".
/// Rewards are w_k times the number of agents on activity k, minus the penalty
/// in the distancing state. Crowding any activity beyond N/2 moves everyone to
/// distancing; spreading out to at most N/4 per activity moves everyone back.
inline TabularGame make_safe_distancing_base(const SafeDistancingParams& p) {
    p.validate();
    const int n = p.num_agents;
    const int K = p.num_activities;
    TabularGame g = make_zero_game(n, 2, std::vector<int>(n, K), p.discount);
    g.init_dist = {1.0, 0.0};
    const std::size_t A = g.actions.total();
    std::vector<int> a(n);
    std::vector<int> count(K);
    for (std::size_t j = 0; j < A; ++j) {
        g.actions.decode(j, a);
        std::fill(count.begin(), count.end(), 0);
        for (int i = 0; i < n; ++i) ++count[a[i]];
        int max_count = *std::max_element(count.begin(), count.end());
        for (int s = 0; s < 2; ++s) {
            for (int i = 0; i < n; ++i)
                g.reward(i, s, j) =
                    p.weights[a[i]] * count[a[i]] - (s == 1 ? p.penalty : 0.0);
        }
        bool crowd = max_count > p.crowd_threshold();
        bool spread = max_count <= p.return_threshold();
        g.transition(0, j, crowd ? 1 : 0) = 1.0;
        g.transition(1, j, spread ? 0 : 1) = 1.0;
    }
    refresh_reward_bound(g);
    return g;
}

/// Safe-distancing environment with influencer overrides: deploying pi makes
/// each agent's declared action stick with probability 1-alpha and otherwise
/// be replaced by a draw from a softmax over that agent's optimal Q-values
/// against pi_{-i} in the base game. The deployed reward and kernel
/// marginalize this substitution exactly: rewards are linear in activity
/// counts, and the crowd/spread events reduce to capped count DPs.
inline ResponseMap make_safe_distancing(const SafeDistancingParams& p) {
    p.validate();
    TabularGame base = make_safe_distancing_base(p);
    auto respond = [p, base](const JointPolicy& pi) -> TabularGame {
        if (p.alpha == 0.0) return base;
        const int n = p.num_agents;
        const int K = p.num_activities;
        TabularGame out = base;
        // Influencer policies sigma_i(.|s), one per agent.
        std::vector<std::vector<double>> sigma(n);
        for (int i = 0; i < n; ++i) {
            std::vector<double> q = detail::optimal_q_values(base, pi, i);
            sigma[i].resize(static_cast<std::size_t>(2) * K);
            for (int s = 0; s < 2; ++s) {
                auto row = detail::softmax(
                    std::span<const double>(q.data() + static_cast<std::size_t>(s) * K, K));
                std::copy(row.begin(), row.end(),
                          sigma[i].begin() + static_cast<std::size_t>(s) * K);
            }
        }
        // Effective activity distribution of agent i declaring a_i in state s.
        auto mix = [&](int i, int s, int declared, int k) {
            return (1.0 - p.alpha) * (declared == k ? 1.0 : 0.0) +
                   p.alpha * sigma[i][static_cast<std::size_t>(s) * K + k];
        };
        const std::size_t A = base.actions.total();
        const int crowd_min =
            static_cast<int>(std::floor(p.crowd_threshold())) + 1; // count > N/2
        const int spread_violation =
            static_cast<int>(std::floor(p.return_threshold())) + 1; // count > N/4
        std::vector<int> a(n);
        std::vector<std::vector<double>> probs(n, std::vector<double>(K));
        std::vector<double> mean_count(K);
        for (int s = 0; s < 2; ++s) {
            for (std::size_t j = 0; j < A; ++j) {
                base.actions.decode(j, a);
                for (int i = 0; i < n; ++i)
                    for (int k = 0; k < K; ++k) probs[i][k] = mix(i, s, a[i], k);
                // Rewards: E[w_b (1 + #others on b)] with independent draws.
                for (int k = 0; k < K; ++k) {
                    mean_count[k] = 0.0;
                    for (int i = 0; i < n; ++i) mean_count[k] += probs[i][k];
                }
                for (int i = 0; i < n; ++i) {
                    double r = 0.0;
                    for (int k = 0; k < K; ++k)
                        r += probs[i][k] * p.weights[k] *
                             (1.0 + mean_count[k] - probs[i][k]);
                    out.reward(i, s, j) = r - (s == 1 ? p.penalty : 0.0);
                }
                // Kernel: crowd / spread events over the effective counts.
                if (s == 0) {
                    double crowd = detail::prob_any_count_at_least(probs, K, crowd_min);
                    out.transition(0, j, 0) = 1.0 - crowd;
                    out.transition(0, j, 1) = crowd;
                } else {
                    double stay =
                        detail::prob_any_count_at_least(probs, K, spread_violation);
                    out.transition(1, j, 0) = 1.0 - stay;
                    out.transition(1, j, 1) = stay;
                }
            }
        }
        refresh_reward_bound(out);
        return out;
    };
    return ResponseMap(std::move(base), respond, "safe_distancing", p.to_json(),
                       /*common_payoff=*/false);
}

/// Base congestion game on the wrap-around graph
/// s0 -> {s1, s2} -> {s3, s4} -> s0. Action 0/1 selects the first/second
/// outgoing edge; the next state is drawn proportionally to how many agents
/// chose each edge, and each agent's reward is schedule[co-count - 1] for its
/// own (state, action) cell.
inline TabularGame make_congestion_base(const CongestionParams& p) {
    p.validate();
    const int n = p.num_agents;
    const int S = 5;
    TabularGame g = make_zero_game(n, S, std::vector<int>(n, 2), p.discount);
    g.init_dist = {1.0, 0.0, 0.0, 0.0, 0.0};
    const std::vector<std::vector<int>> successors = {{1, 2}, {3, 4}, {3, 4}, {0}, {0}};
    const std::size_t A = g.actions.total();
    std::vector<int> a(n);
    for (int s = 0; s < S; ++s) {
        for (std::size_t j = 0; j < A; ++j) {
            g.actions.decode(j, a);
            int chose_second = 0;
            for (int i = 0; i < n; ++i) chose_second += a[i];
            for (int i = 0; i < n; ++i) {
                int same = 0;
                for (int l = 0; l < n; ++l)
                    if (a[l] == a[i]) ++same;
                g.reward(i, s, j) = p.schedule[same - 1];
            }
            const auto& succ = successors[s];
            if (succ.size() == 1) {
                g.transition(s, j, succ[0]) = 1.0;
            } else {
                g.transition(s, j, succ[0]) =
                    static_cast<double>(n - chose_second) / n;
                g.transition(s, j, succ[1]) = static_cast<double>(chose_second) / n;
            }
        }
    }
    refresh_reward_bound(g);
    return g;
}

/// Congestion environment with linear shifts around the uniform anchor pi_0:
/// deploying pi' adds omega_r/((1-gamma) sqrt(S A_i)) (pi'_i - pi_0,i)(a_i|s)
/// to agent i's reward at (s, a), and shifts each kernel row by the agent-mean
/// policy difference scaled by omega_p/((1-gamma) sqrt(S A_i) S) on its
/// in-support successors, clipping to [0, 1] and renormalizing.
inline ResponseMap make_congestion(const CongestionParams& p) {
    p.validate();
    TabularGame base = make_congestion_base(p);
    JointPolicy anchor = uniform_policy(base.shape());
    auto respond = [p, base, anchor](const JointPolicy& pi) -> TabularGame {
        if (p.omega_r == 0.0 && p.omega_p == 0.0) return base;
        TabularGame out = base;
        const int n = base.num_agents;
        const int S = base.num_states;
        const std::size_t A = base.actions.total();
        const double unit =
            1.0 / ((1.0 - p.discount) * std::sqrt(static_cast<double>(S) * 2.0));
        const double reward_scale = p.omega_r * unit;
        const double kernel_scale = p.omega_p * unit / S;
        std::vector<int> a(n);
        for (int s = 0; s < S; ++s) {
            for (std::size_t j = 0; j < A; ++j) {
                base.actions.decode(j, a);
                double mean_diff = 0.0;
                for (int i = 0; i < n; ++i) {
                    double diff = pi.at(i, s, a[i]) - anchor.at(i, s, a[i]);
                    out.reward(i, s, j) += reward_scale * diff;
                    mean_diff += diff / n;
                }
                const double shift = kernel_scale * mean_diff;
                if (shift != 0.0) {
                    double total = 0.0;
                    for (int t = 0; t < S; ++t) {
                        double v = out.transition(s, j, t);
                        if (v > 0.0) v = std::min(std::max(v + shift, 0.0), 1.0);
                        out.transition(s, j, t) = v;
                        total += v;
                    }
                    if (total <= 0.0)
                        throw InvalidResponse("kernel row lost all mass");
                    for (int t = 0; t < S; ++t) out.transition(s, j, t) /= total;
                }
            }
        }
        refresh_reward_bound(out);
        return out;
    };
    return ResponseMap(std::move(base), respond, "congestion", p.to_json(),
                       /*common_payoff=*/false);
}

/// Oracle fixture description: small games with optional common payoffs,
/// agent-independent kernels and linear performative shifts.
struct TestGameSpec {
    int num_states = 1;
    int num_agents = 2;
    std::vector<int> num_actions = {2, 2};
    double discount = 0.9;
    bool common_payoff = false;
    bool agent_independent = false;
    bool coordination = false; // matching payoff, overrides random rewards
    double omega_r = 0.0;
    double omega_p = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_states < 1 || num_states > 3)
            throw ConfigError("test games allow 1..3 states");
        if (num_agents < 1 || num_agents > 2)
            throw ConfigError("test games allow 1..2 agents");
        if (static_cast<int>(num_actions.size()) != num_agents)
            throw ConfigError("action list must match the agent count");
        for (int a : num_actions)
            if (a < 1 || a > 3) throw ConfigError("test games allow 1..3 actions");
        if (!(discount >= 0.0 && discount < 1.0))
            throw ConfigError("discount must satisfy 0 <= gamma < 1");
        if (omega_r < 0.0 || omega_p < 0.0)
            throw ConfigError("shift strengths must be >= 0");
    }

    nlohmann::json to_json() const {
        return {{"num_states", num_states},
                {"num_agents", num_agents},
                {"num_actions", num_actions},
                {"discount", discount},
                {"common_payoff", common_payoff},
                {"agent_independent", agent_independent},
                {"coordination", coordination},
                {"omega_r", omega_r},
                {"omega_p", omega_p},
                {"seed", seed}};
    }
};

inline TabularGame make_test_game_base(const TestGameSpec& spec) {
    spec.validate();
    TabularGame g = make_zero_game(spec.num_agents, spec.num_states, spec.num_actions,
                                   spec.discount);
    Rng rng(derive_seed(spec.seed, 0xf1f2));
    const std::size_t A = g.actions.total();
    std::vector<int> a(spec.num_agents);
    if (spec.coordination) {
        for (std::size_t j = 0; j < A; ++j) {
            g.actions.decode(j, a);
            bool match = true;
            for (int i = 1; i < spec.num_agents; ++i)
                if (a[i] != a[0]) match = false;
            for (int s = 0; s < spec.num_states; ++s)
                for (int i = 0; i < spec.num_agents; ++i)
                    g.reward(i, s, j) = match ? 1.0 : 0.0;
        }
    } else {
        for (int i = 0; i < spec.num_agents; ++i)
            for (auto& r : g.rewards[i]) r = rng.next_double();
        if (spec.common_payoff)
            for (int i = 1; i < spec.num_agents; ++i) g.rewards[i] = g.rewards[0];
    }
    // Kernel rows: random interior, shared across joint actions when the
    // fixture must be agent independent.
    auto random_row = [&](std::span<double> row) {
        double total = 0.0;
        for (auto& v : row) {
            v = 0.2 + rng.next_double();
            total += v;
        }
        for (auto& v : row) v /= total;
    };
    for (int s = 0; s < spec.num_states; ++s) {
        if (spec.agent_independent) {
            std::vector<double> row(spec.num_states);
            random_row(row);
            for (std::size_t j = 0; j < A; ++j)
                for (int t = 0; t < spec.num_states; ++t)
                    g.transition(s, j, t) = row[t];
        } else {
            for (std::size_t j = 0; j < A; ++j) {
                std::vector<double> row(spec.num_states);
                random_row(row);
                for (int t = 0; t < spec.num_states; ++t)
                    g.transition(s, j, t) = row[t];
            }
        }
    }
    std::vector<double> rho(spec.num_states);
    double total = 0.0;
    for (auto& v : rho) {
        v = 0.2 + rng.next_double();
        total += v;
    }
    for (auto& v : rho) v /= total;
    g.init_dist = rho;
    refresh_reward_bound(g);
    return g;
}

/// Oracle-fixture environment. Zero shift strengths give a constant response;
/// otherwise rewards shift per agent as in the congestion game and the kernel
/// shifts by a state-level amount, which keeps agent-independent fixtures
/// agent independent.
inline ResponseMap make_test_game(const TestGameSpec& spec) {
    spec.validate();
    TabularGame base = make_test_game_base(spec);
    JointPolicy anchor = uniform_policy(base.shape());
    const bool common = spec.common_payoff || spec.coordination ||
                        spec.num_agents == 1;
    auto respond = [spec, base, anchor](const JointPolicy& pi) -> TabularGame {
        if (spec.omega_r == 0.0 && spec.omega_p == 0.0) return base;
        TabularGame out = base;
        const int n = base.num_agents;
        const int S = base.num_states;
        const std::size_t A = base.actions.total();
        const double gamma = base.discount;
        std::vector<int> a(n);
        std::vector<double> reward_scale(n);
        for (int i = 0; i < n; ++i)
            reward_scale[i] =
                spec.omega_r /
                ((1.0 - gamma) * std::sqrt(static_cast<double>(S) * base.num_actions[i]));
        const int a_max =
            *std::max_element(base.num_actions.begin(), base.num_actions.end());
        const double kernel_scale =
            spec.omega_p /
            ((1.0 - gamma) * std::sqrt(static_cast<double>(S) * a_max) * S);
        // State-level shift keeps P(s'|s,a) = P(s'|s) fixtures agent independent.
        std::vector<double> state_shift(S, 0.0);
        for (int s = 0; s < S; ++s) {
            double mean = 0.0;
            for (int i = 0; i < n; ++i)
                mean += (pi.at(i, s, 0) - anchor.at(i, s, 0)) / n;
            state_shift[s] = kernel_scale * mean;
        }
        for (int s = 0; s < S; ++s) {
            for (std::size_t j = 0; j < A; ++j) {
                base.actions.decode(j, a);
                for (int i = 0; i < n; ++i) {
                    double diff = pi.at(i, s, a[i]) - anchor.at(i, s, a[i]);
                    out.reward(i, s, j) += reward_scale[i] * diff;
                }
                double shift =
                    spec.agent_independent
                        ? state_shift[s]
                        : [&] {
                              double mean = 0.0;
                              for (int i = 0; i < n; ++i)
                                  mean += (pi.at(i, s, a[i]) - anchor.at(i, s, a[i])) / n;
                              return kernel_scale * mean;
                          }();
                if (shift != 0.0 && S > 1) {
                    double total = 0.0;
                    for (int t = 0; t < S; ++t) {
                        double v = out.transition(s, j, t);
                        if (v > 0.0) v = std::min(std::max(v + shift, 0.0), 1.0);
                        out.transition(s, j, t) = v;
                        total += v;
                    }
                    if (total <= 0.0)
                        throw InvalidResponse("kernel row lost all mass");
                    for (int t = 0; t < S; ++t) out.transition(s, j, t) /= total;
                }
            }
        }
        refresh_reward_bound(out);
        return out;
    };
    return ResponseMap(std::move(base), respond, "test", spec.to_json(), common);
}

} // namespace perfmpg
