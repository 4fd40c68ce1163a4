#pragma once

#include <chrono>

#include "perfmpg/equilibrium.hpp"
#include "perfmpg/learners.hpp"
#include "perfmpg/occupancy_opt.hpp"
#include "perfmpg/sampling.hpp"

namespace perfmpg {

struct RunOptions {
    int policy_distance_window = 10;
    bool record_gaps = true; // pse_gap per round (needs exact best responses)
};

namespace detail {

/// Evaluation quantities reconstructed from rollout estimates: Qbar from the
/// constrained regression, V as its policy average (so the advantage identity
/// holds by construction), d from empirical visitation.
inline EvalResult eval_from_samples(const TabularGame& game, const JointPolicy& pi,
                                    const TrajectoryBatch& batch) {
    EvalResult out;
    const int n = game.num_agents;
    out.q_marg = estimate_qbar(batch, game.shape(), game.discount, game.reward_bound);
    out.visitation = estimate_visitation(batch, game.discount);
    out.value.assign(n, std::vector<double>(game.num_states, 0.0));
    out.adv_marg.resize(n);
    for (int i = 0; i < n; ++i) {
        const int A = game.num_actions[i];
        for (int s = 0; s < game.num_states; ++s) {
            double v = 0.0;
            for (int a = 0; a < A; ++a)
                v += pi.at(i, s, a) * out.q_marg[i][static_cast<std::size_t>(s) * A + a];
            out.value[i][s] = v;
        }
        out.adv_marg[i] = out.q_marg[i];
        for (int s = 0; s < game.num_states; ++s)
            for (int a = 0; a < A; ++a)
                out.adv_marg[i][static_cast<std::size_t>(s) * A + a] -= out.value[i][s];
    }
    out.solve_residual = 0.0;
    return out;
}

inline RunHistory run_occupancy(const ResponseMap& map, const AlgoConfig& cfg,
                                const RunOptions& opts) {
    RepeatedOptResult result = run_repeated(map, cfg.occupancy_reg, cfg.rounds,
                                            /*tol=*/0.0); // run all T rounds
    result.history.seed = cfg.seed;
    result.history.config_snapshot = cfg.to_json();
    std::vector<double> distances =
        policy_distance(result.history, opts.policy_distance_window);
    for (std::size_t t = 0; t < result.history.rounds.size(); ++t)
        result.history.rounds[t].policy_distance = distances[t];
    return std::move(result.history);
}

} // namespace detail

/// The learning protocol: initialize uniform, then per round deploy the
/// current policy, evaluate it in the induced game (exactly, or from rollouts
/// in sampled mode), take the configured step simultaneously across agents,
/// and record metrics. Deterministic given the seed; exact mode draws nothing.
inline RunHistory run(const ResponseMap& map, const AlgoConfig& cfg,
                      const RunOptions& opts = {}) {
    cfg.validate();
    if (cfg.algorithm == Algorithm::OccOpt) {
        if (!check_agent_independent(map.base()))
            throw ConfigError("OCC_OPT requires agent-independent transitions");
        return detail::run_occupancy(map, cfg, opts);
    }
    RunHistory history;
    history.seed = cfg.seed;
    history.config_snapshot = cfg.to_json();
    JointPolicy pi = uniform_policy(map.base().shape());
    const double gamma = map.base().discount;
    for (int t = 1; t <= cfg.rounds; ++t) {
        auto start = std::chrono::steady_clock::now();
        auto game = deploy(map, pi);
        EvalResult exact = policy_evaluation(*game, pi);
        EvalResult step_eval =
            cfg.gradient_mode == GradientMode::Exact
                ? exact
                : detail::eval_from_samples(
                      *game, pi,
                      sample_batch(*game, pi, cfg.episodes_per_round,
                                   derive_seed(cfg.seed, static_cast<std::uint64_t>(t))));

        RoundRecord record;
        record.round = t;
        record.policy = pi;
        record.values.resize(game->num_agents);
        for (int i = 0; i < game->num_agents; ++i)
            record.values[i] = exact.value_at(i, game->init_dist);
        if (opts.record_gaps) {
            GapReport gap = pse_gap(map, pi);
            record.pse_gap = gap.max_gap;
        }

        StepDiagnostics diag;
        JointPolicy next = pi;
        switch (cfg.algorithm) {
            case Algorithm::IpgaL:
            case Algorithm::IpgaD: {
                auto variant =
                    cfg.algorithm == Algorithm::IpgaL ? IpgaVariant::L : IpgaVariant::D;
                next = ipga_step(pi, step_eval, cfg.step_size, variant);
                if (cfg.gradient_mode == GradientMode::Sampled &&
                    cfg.exploration_floor > 0.0)
                    next = xi_greedy(next, cfg.exploration_floor);
                break;
            }
            case Algorithm::Inpg:
                next = inpg_step(pi, step_eval, cfg.step_size, gamma, &diag);
                break;
            case Algorithm::InpgReg:
                next = inpg_reg_step(pi, step_eval, cfg.step_size, cfg.barrier_weight,
                                     gamma, cfg.visitation_floor, &diag);
                break;
            case Algorithm::OccOpt:
                break; // handled above
        }
        record.min_normalizer =
            std::isfinite(diag.min_normalizer) ? diag.min_normalizer : 1.0;
        record.wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - start)
                             .count();
        history.rounds.push_back(std::move(record));
        pi = std::move(next);
    }
    std::vector<double> distances = policy_distance(history, opts.policy_distance_window);
    for (std::size_t t = 0; t < history.rounds.size(); ++t)
        history.rounds[t].policy_distance = distances[t];
    return history;
}

} // namespace perfmpg
