// Test-only oracles, independent of the implementation paths they check:
// Monte-Carlo evaluation, iterative (fixed-point) policy evaluation, and
// brute-force enumeration helpers.
#pragma once

#include <cmath>
#include <vector>

#include "perfmpg/game.hpp"
#include "perfmpg/rng.hpp"

namespace oracles {

using perfmpg::JointPolicy;
using perfmpg::Rng;
using perfmpg::TabularGame;

// Average truncated discounted return of agent `i` over `episodes` rollouts.
inline double mc_value(const TabularGame& game, const JointPolicy& pi, int agent,
                       int episodes, int horizon, std::uint64_t seed) {
    Rng rng(seed);
    const int n = game.num_agents;
    std::vector<int> actions(n);
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
        int s = rng.categorical(game.init_dist);
        double ret = 0.0;
        double discount = 1.0;
        for (int h = 0; h < horizon; ++h) {
            for (int i = 0; i < n; ++i) actions[i] = rng.categorical(pi.row(i, s));
            const std::size_t joint = game.actions.index(actions);
            ret += discount * game.reward(agent, s, joint);
            discount *= game.discount;
            s = rng.categorical(game.transition_row(s, joint));
        }
        total += ret;
    }
    return total / episodes;
}

// Monte-Carlo visitation via geometric stopping: d(s) = P(s_H = s), H ~
// Geom(1 - gamma). Unbiased without truncation error.
inline std::vector<double> mc_visitation(const TabularGame& game, const JointPolicy& pi,
                                         int samples, std::uint64_t seed) {
    Rng rng(seed);
    const int n = game.num_agents;
    std::vector<int> actions(n);
    std::vector<double> counts(game.num_states, 0.0);
    for (int e = 0; e < samples; ++e) {
        const int stop = rng.geometric(game.discount);
        int s = rng.categorical(game.init_dist);
        for (int h = 0; h < stop; ++h) {
            for (int i = 0; i < n; ++i) actions[i] = rng.categorical(pi.row(i, s));
            s = rng.categorical(game.transition_row(s, game.actions.index(actions)));
        }
        counts[s] += 1.0;
    }
    for (double& c : counts) c /= samples;
    return counts;
}

// Iterative policy evaluation: V <- r^pi + gamma P^pi V until the update stops
// moving. Cross-check for the direct linear solve.
inline std::vector<double> iterative_value(const TabularGame& game,
                                           const JointPolicy& pi, int agent,
                                           double tol = 1e-13) {
    const int S = game.num_states;
    std::vector<double> reward(S, 0.0);
    std::vector<double> kernel(static_cast<std::size_t>(S) * S, 0.0);
    for (int s = 0; s < S; ++s) {
        perfmpg::detail::for_each_joint_action(
            game.actions, pi, s,
            [&](std::size_t j, std::span<const int>, double w, std::span<const double>) {
                reward[s] += w * game.reward(agent, s, j);
                auto row = game.transition_row(s, j);
                for (int t = 0; t < S; ++t)
                    kernel[static_cast<std::size_t>(s) * S + t] += w * row[t];
            });
    }
    std::vector<double> v(S, 0.0), next(S, 0.0);
    for (int iter = 0; iter < 1000000; ++iter) {
        double change = 0.0;
        for (int s = 0; s < S; ++s) {
            double acc = reward[s];
            for (int t = 0; t < S; ++t)
                acc += game.discount * kernel[static_cast<std::size_t>(s) * S + t] * v[t];
            change = std::max(change, std::abs(acc - v[s]));
            next[s] = acc;
        }
        v.swap(next);
        if (change <= tol) break;
    }
    return v;
}

inline double dot_init(const TabularGame& game, const std::vector<double>& per_state) {
    double total = 0.0;
    for (int s = 0; s < game.num_states; ++s)
        total += game.init_dist[s] * per_state[s];
    return total;
}

// All deterministic policies of one agent (A_i^S of them), lexicographic.
inline std::vector<std::vector<int>> deterministic_choices(int num_states,
                                                           int num_actions) {
    std::vector<std::vector<int>> out;
    std::vector<int> choice(num_states, 0);
    while (true) {
        out.push_back(choice);
        int s = num_states - 1;
        while (s >= 0) {
            if (++choice[s] < num_actions) break;
            choice[s] = 0;
            --s;
        }
        if (s < 0) break;
    }
    return out;
}

// Random interior policy (rows bounded away from zero).
inline JointPolicy random_policy(const perfmpg::GameShape& shape, Rng& rng) {
    JointPolicy pi = perfmpg::uniform_policy(shape);
    for (int i = 0; i < shape.num_agents; ++i)
        for (int s = 0; s < shape.num_states; ++s) {
            auto row = pi.row(i, s);
            double total = 0.0;
            for (auto& p : row) {
                p = 0.05 + rng.next_double();
                total += p;
            }
            for (auto& p : row) p /= total;
        }
    return pi;
}

// Simple random game: dense random rewards in [0, 1], random interior kernel
// rows, random interior initial distribution.
inline TabularGame random_game(int agents, int states, std::vector<int> actions,
                               double discount, Rng& rng, bool common_payoff = false) {
    TabularGame g = perfmpg::make_zero_game(agents, states, std::move(actions), discount);
    for (int i = 0; i < agents; ++i)
        for (auto& r : g.rewards[i]) r = rng.next_double();
    if (common_payoff)
        for (int i = 1; i < agents; ++i) g.rewards[i] = g.rewards[0];
    const std::size_t A = g.actions.total();
    for (int s = 0; s < states; ++s) {
        for (std::size_t j = 0; j < A; ++j) {
            double total = 0.0;
            std::vector<double> row(states);
            for (auto& p : row) {
                p = 0.1 + rng.next_double();
                total += p;
            }
            for (int t = 0; t < states; ++t) g.transition(s, j, t) = row[t] / total;
        }
    }
    double total = 0.0;
    for (auto& p : g.init_dist) {
        p = 0.1 + rng.next_double();
        total += p;
    }
    for (auto& p : g.init_dist) p /= total;
    perfmpg::refresh_reward_bound(g);
    return g;
}

} // namespace oracles
