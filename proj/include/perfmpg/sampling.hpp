#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "perfmpg/game.hpp"
#include "perfmpg/rng.hpp"

namespace perfmpg {

/// One rollout: the visited state sequence plus, per agent, the geometric
/// offsets (h_i, h_i'), the anchor pair (s^{h_i}, a_i^{h_i}) and the
/// undiscounted partial-sum return R_i = sum_{h=h_i}^{h_i+h_i'-1} r_i^h.
/// Full action/reward sequences are kept only on request; the estimators need
/// states, anchors and returns.
struct EpisodeRecord {
    std::vector<int> states;            // length H + 1
    std::vector<int> offset_start;      // h_i per agent
    std::vector<int> offset_len;        // h_i' per agent
    std::vector<int> anchor_state;      // s^{h_i}
    std::vector<int> anchor_action;     // a_i^{h_i}
    std::vector<double> return_sample;  // R_i
    std::vector<std::vector<int>> full_actions;     // [step][agent], optional
    std::vector<std::vector<double>> full_rewards;  // [step][agent], optional
};

struct TrajectoryBatch {
    GameShape shape;
    double discount = 0.0;
    std::vector<EpisodeRecord> episodes;
    int horizon_cap = 0;
    int cap_hits = 0; // episodes whose geometric draws were truncated
};

inline int horizon_cap_for(double gamma) {
    return static_cast<int>(std::ceil(50.0 / (1.0 - gamma)));
}

/// Rolls out K episodes of pi in the given game. Anchor offsets h_i are
/// geometric on {0, 1, ...} with parameter (1-gamma), so anchors follow the
/// discounted visitation; window lengths h_i' are geometric on {1, 2, ...},
/// which makes the undiscounted window sum an unbiased estimate of Qbar at
/// the anchor (P(h' >= k+1) = gamma^k supplies the discounting).
/// H = max_i(h_i + h_i'), truncated at ceil(50/(1-gamma)) with the truncation
/// counted. Episodes are independently seeded from (seed, episode index), so
/// the batch is reproducible regardless of generation order.
inline TrajectoryBatch sample_batch(const TabularGame& game, const JointPolicy& pi,
                                    int num_episodes, std::uint64_t seed,
                                    bool keep_full = false) {
    require_shape_match(game.shape(), pi.shape());
    if (num_episodes < 1) throw ConfigError("need at least one episode");
    TrajectoryBatch batch;
    batch.shape = game.shape();
    batch.discount = game.discount;
    batch.horizon_cap = horizon_cap_for(game.discount);
    batch.episodes.reserve(static_cast<std::size_t>(num_episodes));
    const int n = game.num_agents;
    std::vector<int> actions(n);

    for (int k = 0; k < num_episodes; ++k) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k) + 1));
        EpisodeRecord ep;
        ep.offset_start.resize(n);
        ep.offset_len.resize(n);
        ep.anchor_state.resize(n);
        ep.anchor_action.resize(n);
        ep.return_sample.assign(n, 0.0);
        bool truncated = false;
        int horizon = 0;
        for (int i = 0; i < n; ++i) {
            int h = rng.geometric(game.discount);
            int len = 1 + rng.geometric(game.discount);
            if (h > batch.horizon_cap) {
                h = batch.horizon_cap;
                len = 0;
                truncated = true;
            } else if (h + len > batch.horizon_cap) {
                len = batch.horizon_cap - h;
                truncated = true;
            }
            ep.offset_start[i] = h;
            ep.offset_len[i] = len;
            horizon = std::max(horizon, h + len);
        }
        if (truncated) ++batch.cap_hits;

        int state = rng.categorical(game.init_dist);
        for (int step = 0; step <= horizon; ++step) {
            ep.states.push_back(state);
            for (int i = 0; i < n; ++i) actions[i] = rng.categorical(pi.row(i, state));
            const std::size_t joint = game.actions.index(actions);
            for (int i = 0; i < n; ++i) {
                if (step == ep.offset_start[i]) {
                    ep.anchor_state[i] = state;
                    ep.anchor_action[i] = actions[i];
                }
                if (step >= ep.offset_start[i] &&
                    step < ep.offset_start[i] + ep.offset_len[i])
                    ep.return_sample[i] += game.reward(i, state, joint);
            }
            if (keep_full) {
                ep.full_actions.push_back(actions);
                std::vector<double> rewards(n);
                for (int i = 0; i < n; ++i) rewards[i] = game.reward(i, state, joint);
                ep.full_rewards.push_back(std::move(rewards));
            }
            state = rng.categorical(game.transition_row(state, joint));
        }
        batch.episodes.push_back(std::move(ep));
    }
    return batch;
}

/// Tabular least-squares estimate of Qbar: the per-(anchor state, anchor
/// action) sample mean of the return samples, with empty cells left at 0 (the
/// minimum-norm completion) and the whole per-agent table radially clipped to
/// the ball ||Q||_2 <= r_max sqrt(S * A_i) / (1 - gamma). The r_max factor
/// generalizes the unit-reward constraint to the reward bound the game
/// actually carries.
inline std::vector<std::vector<double>> estimate_qbar(const TrajectoryBatch& batch,
                                                      const GameShape& shape,
                                                      double gamma,
                                                      double reward_bound = 1.0) {
    if (batch.episodes.empty()) throw EmptyHistory("batch has no episodes");
    const int n = shape.num_agents;
    std::vector<std::vector<double>> sums(n), out(n);
    std::vector<std::vector<int>> counts(n);
    for (int i = 0; i < n; ++i) {
        const std::size_t cells =
            static_cast<std::size_t>(shape.num_states) * shape.num_actions[i];
        sums[i].assign(cells, 0.0);
        counts[i].assign(cells, 0);
    }
    for (const auto& ep : batch.episodes) {
        for (int i = 0; i < n; ++i) {
            const std::size_t cell =
                static_cast<std::size_t>(ep.anchor_state[i]) * shape.num_actions[i] +
                ep.anchor_action[i];
            sums[i][cell] += ep.return_sample[i];
            counts[i][cell] += 1;
        }
    }
    for (int i = 0; i < n; ++i) {
        out[i].assign(sums[i].size(), 0.0);
        for (std::size_t c = 0; c < sums[i].size(); ++c)
            if (counts[i][c] > 0) out[i][c] = sums[i][c] / counts[i][c];
        const double radius =
            std::max(reward_bound, 1.0) *
            std::sqrt(static_cast<double>(shape.num_states) * shape.num_actions[i]) /
            (1.0 - gamma);
        double norm_sq = 0.0;
        for (double q : out[i]) norm_sq += q * q;
        const double norm = std::sqrt(norm_sq);
        if (norm > radius)
            for (double& q : out[i]) q *= radius / norm;
    }
    return out;
}

/// Normalized discounted empirical state frequencies over the batch: the
/// anchor states already sit at geometric offsets, so their pooled empirical
/// distribution is an unbiased estimate of the discounted visitation (a
/// fixed-window discounted average would carry truncation bias instead).
inline std::vector<double> estimate_visitation(const TrajectoryBatch& batch,
                                               double /*gamma*/) {
    if (batch.episodes.empty()) throw EmptyHistory("batch has no episodes");
    std::vector<double> weight(batch.shape.num_states, 0.0);
    double total = 0.0;
    for (const auto& ep : batch.episodes) {
        for (int state : ep.anchor_state) {
            weight[state] += 1.0;
            total += 1.0;
        }
    }
    for (double& w : weight) w /= total;
    return weight;
}

} // namespace perfmpg
