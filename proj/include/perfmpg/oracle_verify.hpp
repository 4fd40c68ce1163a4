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

/// delta_{r,p}: the value-difference bound between two deployed games,
/// (1/(1-gamma)) (omega_r + gamma omega_p sqrt(S) / (1-gamma)).
inline double delta_rp(double omega_r, double omega_p, double gamma, int num_states) {
    if (omega_r < 0.0 || omega_p < 0.0) throw ConfigError("sensitivities must be >= 0");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    return (omega_r + gamma * omega_p * std::sqrt(static_cast<double>(num_states)) /
                          (1.0 - gamma)) /
           (1.0 - gamma);
}

/// Empirical sensitivity estimates. The omega values are max-over-samples
/// ratios, so they under-estimate the true Lipschitz constants; bound checks
/// built on them apply a 1.5x inflation, recorded alongside.
struct SensitivityParams {
    double omega_r = 0.0;  // reward sensitivity in policy space
    double omega_p = 0.0;  // kernel sensitivity in policy space
    double zeta_r = 0.0;   // reward sensitivity in occupancy space
    double zeta_p = 0.0;   // kernel sensitivity in occupancy space
    double beta = 0.0;     // potential-gradient smoothness (common payoff only)
    int sample_count = 0;
    double delta = 0.0;    // delta_{r,p} from (omega_r, omega_p)
    double inflation = 1.5;

    double inflated_delta(double gamma, int num_states) const {
        return delta_rp(inflation * omega_r, inflation * omega_p, gamma, num_states);
    }

    nlohmann::json to_json() const {
        return {{"omega_r", omega_r}, {"omega_p", omega_p}, {"zeta_r", zeta_r},
                {"zeta_p", zeta_p},   {"beta", beta},       {"sample_count", sample_count},
                {"delta_rp", delta},  {"inflation", inflation}};
    }
};

namespace detail {

inline JointPolicy random_interior_policy(const GameShape& shape, Rng& rng) {
    JointPolicy pi = uniform_policy(shape);
    for (int i = 0; i < shape.num_agents; ++i) {
        for (int s = 0; s < shape.num_states; ++s) {
            auto row = pi.row(i, s);
            double total = 0.0;
            for (auto& p : row) {
                p = 0.05 + rng.next_double();
                total += p;
            }
            for (auto& p : row) p /= total;
        }
    }
    return pi;
}

inline double policy_l2_distance(const JointPolicy& a, const JointPolicy& b) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.probs.size(); ++i)
        for (std::size_t k = 0; k < a.probs[i].size(); ++k) {
            double diff = a.probs[i][k] - b.probs[i][k];
            sq += diff * diff;
        }
    return std::sqrt(sq);
}

inline double table_l2_distance(const std::vector<double>& a,
                                const std::vector<double>& b) {
    double sq = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        double diff = a[k] - b[k];
        sq += diff * diff;
    }
    return std::sqrt(sq);
}

inline double occupancy_l2_distance(const OccupancyMeasure& a,
                                    const OccupancyMeasure& b) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.mu.size(); ++i)
        for (std::size_t k = 0; k < a.mu[i].size(); ++k) {
            double diff = a.mu[i][k] - b.mu[i][k];
            sq += diff * diff;
        }
    return std::sqrt(sq);
}

/// Stacked analytic policy gradient of agent values in a fixed game:
/// dV_i / dpi_i(a|s) = d(s) Qbar_i(s,a) / (1-gamma). For common-payoff games
/// this is the gradient of the potential.
inline std::vector<double> stacked_policy_gradient(const TabularGame& game,
                                                   const JointPolicy& pi) {
    EvalResult eval = policy_evaluation(game, pi);
    std::vector<double> grad;
    for (int i = 0; i < game.num_agents; ++i) {
        const int A = game.num_actions[i];
        for (int s = 0; s < game.num_states; ++s)
            for (int a = 0; a < A; ++a)
                grad.push_back(eval.visitation[s] *
                               eval.q_marg[i][static_cast<std::size_t>(s) * A + a] /
                               (1.0 - game.discount));
    }
    return grad;
}

} // namespace detail

/// Samples policy pairs at several mixing scales, deploys both, and records
/// the worst observed response ratios in policy space (omega), occupancy space
/// (zeta), and the potential-gradient smoothness (beta, common-payoff maps
/// only, measured in the base game).
inline SensitivityParams estimate_sensitivity(const ResponseMap& map, int num_pairs,
                                              std::uint64_t seed) {
    if (num_pairs < 1) throw ConfigError("need at least one sample pair");
    Rng rng(derive_seed(seed, 0x5e5e));
    SensitivityParams out;
    out.sample_count = num_pairs;
    const GameShape shape = map.base().shape();
    const double mixes[] = {1.0, 0.5, 0.1, 0.01};
    for (int pair = 0; pair < num_pairs; ++pair) {
        JointPolicy x = detail::random_interior_policy(shape, rng);
        JointPolicy other = detail::random_interior_policy(shape, rng);
        const double beta_mix = mixes[pair % 4];
        JointPolicy y = x;
        for (std::size_t i = 0; i < y.probs.size(); ++i)
            for (std::size_t k = 0; k < y.probs[i].size(); ++k)
                y.probs[i][k] = (1.0 - beta_mix) * x.probs[i][k] +
                                beta_mix * other.probs[i][k];
        const double dist = detail::policy_l2_distance(x, y);
        if (dist < 1e-12) continue;
        auto gx = deploy(map, x);
        auto gy = deploy(map, y);
        double reward_diff = 0.0;
        for (int i = 0; i < shape.num_agents; ++i)
            reward_diff = std::max(
                reward_diff, detail::table_l2_distance(gx->rewards[i], gy->rewards[i]));
        double kernel_diff = detail::table_l2_distance(gx->kernel, gy->kernel);
        out.omega_r = std::max(out.omega_r, reward_diff / dist);
        out.omega_p = std::max(out.omega_p, kernel_diff / dist);

        OccupancyMeasure mu_x = occupancy_from_policy(*gx, x);
        OccupancyMeasure mu_y = occupancy_from_policy(*gy, y);
        const double occ_dist = detail::occupancy_l2_distance(mu_x, mu_y);
        if (occ_dist > 1e-12) {
            out.zeta_r = std::max(out.zeta_r, reward_diff / occ_dist);
            out.zeta_p = std::max(out.zeta_p, kernel_diff / occ_dist);
        }
        if (map.common_payoff()) {
            auto grad_x = detail::stacked_policy_gradient(map.base(), x);
            auto grad_y = detail::stacked_policy_gradient(map.base(), y);
            out.beta =
                std::max(out.beta, detail::table_l2_distance(grad_x, grad_y) / dist);
        }
    }
    out.delta = delta_rp(out.omega_r, out.omega_p, map.base().discount,
                         map.base().num_states);
    return out;
}

/// One grid-search witness: a product policy and its measured PSE gap.
struct PseCandidate {
    JointPolicy policy;
    double gap = 0.0;
};

/// Enumerates every product policy on the per-agent, per-state simplex grid
/// (resolution 0 keeps the deterministic profiles only), measures each PSE
/// gap, and returns the candidates with gap <= eps sorted by gap. Enumeration
/// order is lexicographic over grid indices, so output order is canonical.
inline std::vector<PseCandidate> brute_force_pse(const ResponseMap& map,
                                                 double grid_resolution, double eps,
                                                 std::size_t enumeration_bound = 1000000) {
    const GameShape shape = map.base().shape();
    std::vector<std::vector<std::vector<double>>> rows(shape.num_agents);
    double total = 1.0;
    for (int i = 0; i < shape.num_agents; ++i) {
        rows[i] = detail::simplex_grid_rows(shape.num_actions[i], grid_resolution);
        for (int s = 0; s < shape.num_states; ++s)
            total *= static_cast<double>(rows[i].size());
    }
    if (total > static_cast<double>(enumeration_bound))
        throw TooLarge("policy grid exceeds the enumeration bound");

    // One grid index per (agent, state) cell, odometer order.
    const int cells = shape.num_agents * shape.num_states;
    std::vector<std::size_t> idx(cells, 0);
    std::vector<PseCandidate> found;
    while (true) {
        JointPolicy pi = uniform_policy(shape);
        for (int i = 0; i < shape.num_agents; ++i)
            for (int s = 0; s < shape.num_states; ++s) {
                const auto& row = rows[i][idx[i * shape.num_states + s]];
                std::copy(row.begin(), row.end(), pi.row(i, s).begin());
            }
        GapReport report = pse_gap(map, pi);
        if (report.max_gap <= eps) found.push_back({std::move(pi), report.max_gap});
        int pos = cells - 1;
        while (pos >= 0) {
            const int agent = pos / shape.num_states;
            if (++idx[pos] < rows[agent].size()) break;
            idx[pos] = 0;
            --pos;
        }
        if (pos < 0) break;
    }
    std::stable_sort(found.begin(), found.end(),
                     [](const PseCandidate& a, const PseCandidate& b) {
                         return a.gap < b.gap;
                     });
    return found;
}

/// Compares the analytic policy gradient of V_i against central differences
/// along paired simplex directions (+h on one action, -h on another) in a
/// fixed game. Returns the largest absolute discrepancy.
inline double finite_diff_check(const TabularGame& game, const JointPolicy& pi,
                                int agent, double h = 1e-5) {
    if (h < 1e-7 || h > 1e-3) throw ConfigError("h must lie in [1e-7, 1e-3]");
    EvalResult eval = policy_evaluation(game, pi);
    const int A = game.num_actions[agent];
    double worst = 0.0;
    for (int s = 0; s < game.num_states; ++s) {
        double min_entry = std::numeric_limits<double>::infinity();
        for (int a = 0; a < A; ++a) min_entry = std::min(min_entry, pi.at(agent, s, a));
        if (!(min_entry > 0.0))
            throw BoundaryPolicy("finite differences need an interior policy");
        const double step = std::min(h, 0.5 * min_entry);
        for (int a = 0; a < A; ++a) {
            for (int b = a + 1; b < A; ++b) {
                auto perturbed = [&](double sign) {
                    JointPolicy q = pi;
                    q.at(agent, s, a) += sign * step;
                    q.at(agent, s, b) -= sign * step;
                    EvalResult e = policy_evaluation(game, q);
                    return e.value_at(agent, game.init_dist);
                };
                const double numeric = (perturbed(1.0) - perturbed(-1.0)) / (2.0 * step);
                const double analytic =
                    eval.visitation[s] *
                    (eval.q_marg[agent][static_cast<std::size_t>(s) * A + a] -
                     eval.q_marg[agent][static_cast<std::size_t>(s) * A + b]) /
                    (1.0 - game.discount);
                worst = std::max(worst, std::abs(numeric - analytic));
            }
        }
    }
    return worst;
}

} // namespace perfmpg
