#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "perfmpg/equilibrium.hpp"
#include "perfmpg/game.hpp"
#include "perfmpg/response.hpp"

namespace perfmpg {

/// Occupancy-space gradient of agent i's value: the marginalized instantaneous
/// reward g_i(s, a_i) = E_{a_-i ~ pi_-i}[r_i(s, a_i, a_-i)]. Under
/// agent-independent transitions V_i = <mu_i, g_i> is linear in the agent's
/// own occupancy, so this is the exact partial derivative.
inline std::vector<std::vector<double>> occ_gradient(const TabularGame& game,
                                                     const JointPolicy& pi) {
    if (!check_agent_independent(game))
        throw NotAgentIndependent("occupancy gradient needs P(s'|s,a) = P(s'|s)");
    require_shape_match(game.shape(), pi.shape());
    std::vector<std::vector<double>> g(game.num_agents);
    for (int i = 0; i < game.num_agents; ++i)
        g[i].assign(static_cast<std::size_t>(game.num_states) * game.num_actions[i], 0.0);
    for (int s = 0; s < game.num_states; ++s) {
        detail::for_each_joint_action(
            game.actions, pi, s,
            [&](std::size_t j, std::span<const int> a, double, std::span<const double> opp) {
                for (int i = 0; i < game.num_agents; ++i)
                    g[i][static_cast<std::size_t>(s) * game.num_actions[i] + a[i]] +=
                        opp[i] * game.reward(i, s, j);
            });
    }
    return g;
}

/// Policy recovery pi_i(a_i|s) = mu_i(s,a_i) / sum_a mu_i(s,a); states with no
/// occupancy mass fall back to the uniform row.
inline JointPolicy policy_from_occupancy(const OccupancyMeasure& mu) {
    JointPolicy pi;
    pi.num_states = mu.num_states;
    pi.num_actions = mu.num_actions;
    pi.probs.resize(mu.num_actions.size());
    for (std::size_t i = 0; i < mu.num_actions.size(); ++i) {
        const int A = mu.num_actions[i];
        pi.probs[i].assign(static_cast<std::size_t>(mu.num_states) * A, 0.0);
        for (int s = 0; s < mu.num_states; ++s) {
            double mass = 0.0;
            for (int a = 0; a < A; ++a) {
                double m = mu.at(static_cast<int>(i), s, a);
                if (m < 0.0) throw ValidationError("occupancy entries must be >= 0");
                mass += m;
            }
            for (int a = 0; a < A; ++a)
                pi.at(static_cast<int>(i), s, a) =
                    mass > 0.0 ? mu.at(static_cast<int>(i), s, a) / mass : 1.0 / A;
        }
    }
    return pi;
}

namespace detail {

/// The feasible occupancy polytope of one agent under an agent-independent
/// kernel: {mu >= 0, sum_a mu(s,a) = rho(s) + gamma sum_s' P(s|s') sum_a mu(s',a)}.
/// Projection onto the flow-equality subspace uses a prefactored normal
/// system; the full projection alternates it with the nonnegative orthant via
/// Dykstra's algorithm.
class FlowPolytope {
  public:
    FlowPolytope(const TabularGame& game, int agent) : num_states_(game.num_states) {
        num_actions_ = game.num_actions[agent];
        const int S = num_states_;
        // Agent-independent kernel: any joint action gives the same row.
        Eigen::MatrixXd kernel(S, S);
        for (int s = 0; s < S; ++s) {
            auto row = game.transition_row(s, 0);
            for (int t = 0; t < S; ++t) kernel(s, t) = row[t];
        }
        // Constraints: B alpha = rho with B = I - gamma P^T, alpha the state
        // marginals. The constraint matrix over mu is A = B R with R summing
        // actions per state, so A A^T = A_i * B B^T.
        b_matrix_ = Eigen::MatrixXd::Identity(S, S) - game.discount * kernel.transpose();
        rho_ = Eigen::VectorXd(S);
        for (int s = 0; s < S; ++s) rho_(s) = game.init_dist[s];
        normal_lu_.compute(static_cast<double>(num_actions_) * b_matrix_ *
                           b_matrix_.transpose());
    }

    int num_states() const { return num_states_; }
    int num_actions() const { return num_actions_; }

    /// Max-norm violation of the flow equalities.
    double constraint_violation(const std::vector<double>& mu) const {
        Eigen::VectorXd alpha = marginals(mu);
        return (b_matrix_ * alpha - rho_).cwiseAbs().maxCoeff();
    }

    /// Euclidean projection onto the affine flow subspace.
    void project_affine(std::vector<double>& mu) const {
        Eigen::VectorXd alpha = marginals(mu);
        Eigen::VectorXd resid = b_matrix_ * alpha - rho_;
        Eigen::VectorXd z = normal_lu_.solve(resid);
        Eigen::VectorXd correction = b_matrix_.transpose() * z;
        for (int s = 0; s < num_states_; ++s)
            for (int a = 0; a < num_actions_; ++a)
                mu[static_cast<std::size_t>(s) * num_actions_ + a] -= correction(s);
    }

    /// Dykstra projection onto {flow equalities} intersect {mu >= 0}.
    /// Returns the number of sweeps used; `converged` reports whether the
    /// change fell below tol before the iteration cap.
    int project(std::vector<double>& mu, double tol, int max_iterations,
                bool& converged) const {
        std::vector<double> increment(mu.size(), 0.0); // correction for the orthant
        std::vector<double> previous;
        int sweep = 0;
        converged = false;
        for (; sweep < max_iterations; ++sweep) {
            previous = mu;
            project_affine(mu);
            double change = 0.0;
            for (std::size_t k = 0; k < mu.size(); ++k) {
                double with_increment = mu[k] + increment[k];
                double clipped = std::max(with_increment, 0.0);
                increment[k] = with_increment - clipped;
                change = std::max(change, std::abs(clipped - previous[k]));
                mu[k] = clipped;
            }
            if (change <= tol && constraint_violation(mu) <= tol * 10.0) {
                converged = true;
                ++sweep;
                break;
            }
        }
        return sweep;
    }

  private:
    Eigen::VectorXd marginals(const std::vector<double>& mu) const {
        Eigen::VectorXd alpha = Eigen::VectorXd::Zero(num_states_);
        for (int s = 0; s < num_states_; ++s)
            for (int a = 0; a < num_actions_; ++a)
                alpha(s) += mu[static_cast<std::size_t>(s) * num_actions_ + a];
        return alpha;
    }

    int num_states_;
    int num_actions_;
    Eigen::MatrixXd b_matrix_;
    Eigen::VectorXd rho_;
    Eigen::PartialPivLU<Eigen::MatrixXd> normal_lu_;
};

} // namespace detail

/// State of the repeated occupancy optimization.
struct OccOptState {
    OccupancyMeasure mu;
    JointPolicy policy;
    double lambda = 0.0;
    double step_residual = 0.0;          // ||mu^{t+1} - mu^t||_2
    double inner_kkt_residual = 0.0;     // gradient-mapping norm of the last solve
    bool inner_converged = true;         // false marks an InnerSolveStall
    int inner_iterations = 0;
};

inline OccOptState make_occ_state(const ResponseMap& map, double lambda) {
    if (!(lambda > 0.0)) throw ConfigError("occupancy regularizer must be positive");
    OccOptState state;
    state.lambda = lambda;
    state.policy = uniform_policy(map.base().shape());
    auto game = deploy(map, state.policy);
    state.mu = occupancy_from_policy(*game, state.policy);
    return state;
}

/// One round of the repeated optimization: deploy G(pi^t), then solve, per
/// agent, max_{mu_i in D_i} <g_i, mu_i> - (lambda/2)||mu_i||^2. The maximizer
/// is the Euclidean projection of g_i / lambda onto the flow polytope, reached
/// by projected ascent with the exact step 1/lambda; Dykstra supplies the
/// projection. Failure to reach tolerance is recorded, not fatal.
inline OccOptState repeated_opt_step(const ResponseMap& map, const OccOptState& state,
                                     double inner_tol = 1e-10,
                                     int max_inner_iterations = 10000) {
    auto game = deploy(map, state.policy);
    if (!check_agent_independent(*game))
        throw NotAgentIndependent("deployed game lost agent-independent transitions");
    auto gradient = occ_gradient(*game, state.policy);
    OccOptState next = state;
    next.inner_iterations = 0;
    next.inner_converged = true;
    next.inner_kkt_residual = 0.0;
    double residual_sq = 0.0;
    for (int i = 0; i < game->num_agents; ++i) {
        detail::FlowPolytope polytope(*game, i);
        std::vector<double> target(gradient[i].size());
        for (std::size_t k = 0; k < target.size(); ++k)
            target[k] = gradient[i][k] / state.lambda;
        std::vector<double> solution = target;
        bool converged = false;
        next.inner_iterations +=
            polytope.project(solution, inner_tol, max_inner_iterations, converged);
        if (!converged) next.inner_converged = false;
        // Gradient mapping at the solution: one ascent step followed by a
        // fresh projection must return (numerically) the same point.
        std::vector<double> check(solution.size());
        for (std::size_t k = 0; k < solution.size(); ++k)
            check[k] = solution[k] +
                       (gradient[i][k] - state.lambda * solution[k]) / state.lambda;
        bool check_converged = false;
        polytope.project(check, inner_tol, max_inner_iterations, check_converged);
        double mapping_sq = 0.0;
        for (std::size_t k = 0; k < solution.size(); ++k) {
            double diff = state.lambda * (check[k] - solution[k]);
            mapping_sq += diff * diff;
        }
        next.inner_kkt_residual =
            std::max(next.inner_kkt_residual, std::sqrt(mapping_sq));
        for (std::size_t k = 0; k < solution.size(); ++k) {
            double diff = solution[k] - state.mu.mu[i][k];
            residual_sq += diff * diff;
        }
        next.mu.mu[i] = std::move(solution);
    }
    next.step_residual = std::sqrt(residual_sq);
    next.policy = policy_from_occupancy(next.mu);
    return next;
}

/// Termination report of run_repeated, serializable for external checks.
struct FixedPointReport {
    int rounds = 0;
    double final_residual = 0.0;
    double final_pse_gap = 0.0;
    double bound_value = 0.0; // kappa/(min alpha (1-gamma)) (sqrt(A_max) delta + lambda/(2(1-gamma)))
    double lambda = 0.0;
    bool converged = false;
    bool gap_within_bound = false;

    nlohmann::json to_json() const {
        nlohmann::json doc;
        doc["rounds"] = rounds;
        doc["final_residual"] = final_residual;
        doc["final_pse_gap"] = final_pse_gap;
        doc["theorem6_bound"] = bound_value;
        doc["lambda"] = lambda;
        doc["converged"] = converged;
        doc["gap_within_bound"] = gap_within_bound;
        return doc;
    }
};

struct RepeatedOptResult {
    RunHistory history;
    FixedPointReport report;
    OccOptState final_state;
};

/// Drives repeated_opt_step for T rounds or until the iterate change falls
/// below tol, then evaluates the fixed-point suboptimality bound from measured
/// quantities (single-policy mismatch estimate, final state marginals, final
/// iterate change).
inline RepeatedOptResult run_repeated(const ResponseMap& map, double lambda, int rounds,
                                      double tol = 1e-6) {
    if (!check_agent_independent(map.base()))
        throw NotAgentIndependent("repeated optimization needs agent-independent base");
    if (rounds < 1) throw ConfigError("round count must be >= 1");
    RepeatedOptResult out;
    out.history.seed = 0;
    out.history.config_snapshot = {{"algorithm", "OCC_OPT"},
                                   {"lambda_occ", lambda},
                                   {"rounds", rounds},
                                   {"tol", tol}};
    OccOptState state = make_occ_state(map, lambda);
    int t = 0;
    for (t = 1; t <= rounds; ++t) {
        state = repeated_opt_step(map, state);
        RoundRecord record;
        record.round = t;
        record.policy = state.policy;
        auto game = deploy(map, state.policy);
        EvalResult eval = policy_evaluation(*game, state.policy);
        record.values.resize(game->num_agents);
        for (int i = 0; i < game->num_agents; ++i)
            record.values[i] = eval.value_at(i, game->init_dist);
        GapReport gap = pse_gap(map, state.policy);
        record.pse_gap = gap.max_gap;
        out.history.rounds.push_back(std::move(record));
        if (state.step_residual <= tol) break;
    }
    out.report.rounds = static_cast<int>(out.history.rounds.size());
    out.report.lambda = lambda;
    out.report.final_residual = state.step_residual;
    out.report.final_pse_gap = out.history.rounds.back().pse_gap;
    out.report.converged = state.step_residual <= tol;

    auto final_game = deploy(map, state.policy);
    MismatchDiagnostics mismatch =
        mismatch_diagnostics(*final_game, state.policy, final_game->init_dist);
    double min_alpha = std::numeric_limits<double>::infinity();
    for (int i = 0; i < final_game->num_agents; ++i) {
        auto alpha = state.mu.state_marginal(i);
        for (double a : alpha) min_alpha = std::min(min_alpha, a);
    }
    int a_max = *std::max_element(final_game->num_actions.begin(),
                                  final_game->num_actions.end());
    const double gamma = final_game->discount;
    out.report.bound_value = mismatch.kappa_hat / (min_alpha * (1.0 - gamma)) *
                             (std::sqrt(static_cast<double>(a_max)) * state.step_residual +
                              lambda / (2.0 * (1.0 - gamma)));
    out.report.gap_within_bound =
        out.report.final_pse_gap <= out.report.bound_value + 1e-6;
    out.final_state = std::move(state);

    std::vector<double> distances = policy_distance(out.history, 10);
    for (std::size_t k = 0; k < out.history.rounds.size(); ++k)
        out.history.rounds[k].policy_distance = distances[k];
    return out;
}

} // namespace perfmpg
